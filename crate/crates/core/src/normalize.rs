//! Feature-space normalization fitted on training rows and replayed on
//! everything else.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    None,
    MinMax,
    Variance,
}

impl NormKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::None => "none",
            NormKind::MinMax => "minmax",
            NormKind::Variance => "variance",
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(NormKind::None),
            "minmax" => Ok(NormKind::MinMax),
            "variance" => Ok(NormKind::Variance),
            _ => Err(format!("unknown normalization {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NormalizationParams {
    None { dim: usize },
    MinMax { min: Vec<f64>, max: Vec<f64> },
    /// Population standard deviation.
    Variance { mean: Vec<f64>, std: Vec<f64> },
}

impl NormalizationParams {
    pub fn kind(&self) -> NormKind {
        match self {
            NormalizationParams::None { .. } => NormKind::None,
            NormalizationParams::MinMax { .. } => NormKind::MinMax,
            NormalizationParams::Variance { .. } => NormKind::Variance,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            NormalizationParams::None { dim } => *dim,
            NormalizationParams::MinMax { min, .. } => min.len(),
            NormalizationParams::Variance { mean, .. } => mean.len(),
        }
    }

    /// Fits per-dimension statistics on the rows of a feature matrix.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R], kind: NormKind) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "normalization needs at least 2 rows, got {}",
                rows.len()
            )));
        }
        let dim = rows[0].as_ref().len();
        if let Some(r) = rows.iter().find(|r| r.as_ref().len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: r.as_ref().len(),
            });
        }
        Ok(match kind {
            NormKind::None => NormalizationParams::None { dim },
            NormKind::MinMax => {
                let mut min = vec![f64::INFINITY; dim];
                let mut max = vec![f64::NEG_INFINITY; dim];
                for r in rows {
                    for (d, &x) in r.as_ref().iter().enumerate() {
                        min[d] = min[d].min(x);
                        max[d] = max[d].max(x);
                    }
                }
                NormalizationParams::MinMax { min, max }
            }
            NormKind::Variance => {
                let n = rows.len() as f64;
                let mut mean = vec![0.0; dim];
                for r in rows {
                    for (m, &x) in mean.iter_mut().zip(r.as_ref()) {
                        *m += x;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = vec![0.0; dim];
                for r in rows {
                    for ((v, &m), &x) in var.iter_mut().zip(&mean).zip(r.as_ref()) {
                        *v += (x - m) * (x - m);
                    }
                }
                let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
                NormalizationParams::Variance { mean, std }
            }
        })
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: v.len(),
            });
        }
        Ok(())
    }

    /// Constant training dimensions map to 0.
    pub fn transform(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v)?;
        Ok(match self {
            NormalizationParams::None { .. } => v.to_vec(),
            NormalizationParams::MinMax { min, max } => v
                .iter()
                .zip(min.iter().zip(max))
                .map(|(&x, (&lo, &hi))| {
                    if hi > lo {
                        2.0 * (x - lo) / (hi - lo) - 1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
            NormalizationParams::Variance { mean, std } => v
                .iter()
                .zip(mean.iter().zip(std))
                .map(|(&x, (&m, &s))| if s > 0.0 { (x - m) / s } else { 0.0 })
                .collect(),
        })
    }

    /// Inverse of [`transform`](Self::transform) on non-constant dimensions;
    /// constant dimensions come back as their training value.
    pub fn inverse_transform(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v)?;
        Ok(match self {
            NormalizationParams::None { .. } => v.to_vec(),
            NormalizationParams::MinMax { min, max } => v
                .iter()
                .zip(min.iter().zip(max))
                .map(|(&y, (&lo, &hi))| {
                    if hi > lo {
                        (y + 1.0) / 2.0 * (hi - lo) + lo
                    } else {
                        lo
                    }
                })
                .collect(),
            NormalizationParams::Variance { mean, std } => v
                .iter()
                .zip(mean.iter().zip(std))
                .map(|(&y, (&m, &s))| if s > 0.0 { y * s + m } else { m })
                .collect(),
        })
    }
}
