use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::Label;
use crate::error::{Error, Result};

/// Brute-force K-nearest-neighbour store with uniform majority voting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub dim: usize,
    /// Row-major training vectors.
    pub data: Vec<f64>,
    pub labels: Vec<Label>,
    pub indices: Vec<u64>,
}

impl KnnModel {
    pub fn fit(rows: &[Vec<f64>], labels: &[Label], indices: &[u64], k: usize) -> Result<Self> {
        let n = rows.len();
        if labels.len() != n || indices.len() != n {
            return Err(Error::InvalidInput(
                "rows, labels and indices must have equal length".into(),
            ));
        }
        if k == 0 || k > n {
            return Err(Error::InvalidInput(format!(
                "K={k} must lie in 1..={n} (training set size)"
            )));
        }
        let dim = rows[0].len();
        let mut data = Vec::with_capacity(n * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: r.len(),
                });
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput("training vector is not finite".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            k,
            dim,
            data,
            labels: labels.to_vec(),
            indices: indices.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Majority label of the K nearest samples under Euclidean distance.
    /// Neighbours are ranked by `(distance, sample_index)`; an even split
    /// votes NON_EVENT.
    pub fn predict(&self, v: &[f64]) -> Result<Label> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        let mut scored: Vec<(f64, u64, Label)> = self
            .data
            .chunks_exact(self.dim)
            .zip(self.indices.iter().zip(&self.labels))
            .map(|(row, (&idx, &label))| {
                let d2: f64 = row.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, idx, label)
            })
            .collect();
        let cmp = |a: &(f64, u64, Label), b: &(f64, u64, Label)| -> Ordering {
            a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
        };
        if self.k < scored.len() {
            scored.select_nth_unstable_by(self.k - 1, cmp);
        }
        let events = scored[..self.k]
            .iter()
            .filter(|s| s.2 == Label::Event)
            .count();
        Ok(if 2 * events > self.k {
            Label::Event
        } else {
            Label::NonEvent
        })
    }
}
