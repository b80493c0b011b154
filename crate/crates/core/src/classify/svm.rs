//! Soft-margin RBF support vector machine trained by sequential minimal
//! optimization on the dual.
//!
//! Working pairs are the maximal violating pair. Kernel columns are computed
//! on demand and kept in a least-recently-used cache bounded by a byte
//! budget.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::Label;
use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub gamma: f64,
    /// Stop once the maximal KKT violation is at most this.
    pub tolerance: f64,
    pub max_iterations: u64,
    pub cache_bytes: usize,
}

impl SvmParams {
    pub fn new(c: f64, gamma: f64) -> Self {
        Self {
            c,
            gamma,
            ..Self::default()
        }
    }
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            gamma: 1.0,
            tolerance: 1e-3,
            max_iterations: 1_000_000,
            cache_bytes: 64 << 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub c: f64,
    pub gamma: f64,
    pub dim: usize,
    /// Row-major support vectors.
    pub support: Vec<f64>,
    /// `alpha_i * y_i` per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub converged: bool,
    pub iterations: u64,
    /// Maximal KKT violation when the solver stopped.
    pub kkt_gap: f64,
}

pub(crate) fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

impl SvmModel {
    pub fn n_support(&self) -> usize {
        self.coef.len()
    }

    /// `sum_i coef_i * k(sv_i, v) + bias`.
    pub fn decision(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        let sum: f64 = self
            .support
            .chunks_exact(self.dim.max(1))
            .zip(&self.coef)
            .map(|(sv, &c)| c * rbf(self.gamma, sv, v))
            .sum();
        Ok(sum + self.bias)
    }

    /// Positive decision values are events; exactly zero is not.
    pub fn predict(&self, v: &[f64]) -> Result<Label> {
        Ok(if self.decision(v)? > 0.0 {
            Label::Event
        } else {
            Label::NonEvent
        })
    }
}

/// Solver output with the dual objective after every pair update when
/// requested.
#[derive(Debug, Clone)]
pub struct SvmFit {
    pub model: SvmModel,
    pub alpha: Vec<f64>,
    pub objective_trace: Vec<f64>,
}

struct KernelCache<'a> {
    rows: &'a [Vec<f64>],
    gamma: f64,
    columns: HashMap<usize, (Rc<[f64]>, u64)>,
    recency: BTreeMap<u64, usize>,
    tick: u64,
    capacity: usize,
}

impl<'a> KernelCache<'a> {
    fn new(rows: &'a [Vec<f64>], gamma: f64, bytes: usize) -> Self {
        let col_bytes = rows.len() * std::mem::size_of::<f64>();
        Self {
            rows,
            gamma,
            columns: HashMap::new(),
            recency: BTreeMap::new(),
            tick: 0,
            capacity: (bytes / col_bytes.max(1)).max(2),
        }
    }

    fn column(&mut self, i: usize) -> Result<Rc<[f64]>> {
        self.tick += 1;
        if let Some((col, stamp)) = self.columns.get_mut(&i) {
            self.recency.remove(stamp);
            *stamp = self.tick;
            self.recency.insert(self.tick, i);
            return Ok(col.clone());
        }
        let xi = &self.rows[i];
        let col: Rc<[f64]> = self.rows.iter().map(|xt| rbf(self.gamma, xt, xi)).collect();
        if col.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite kernel value in column {i}"
            )));
        }
        if self.columns.len() >= self.capacity {
            if let Some((_, victim)) = self.recency.pop_first() {
                self.columns.remove(&victim);
            }
        }
        self.columns.insert(i, (col.clone(), self.tick));
        self.recency.insert(self.tick, i);
        Ok(col)
    }
}

fn dual_objective(alpha: &[f64], grad: &[f64]) -> f64 {
    -0.5 * alpha.iter().zip(grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>()
}

/// Trains on normalized rows. Reaching the iteration cap is not an error;
/// the model is flagged `converged = false`.
pub fn svm_train(rows: &[Vec<f64>], labels: &[Label], params: &SvmParams) -> Result<SvmModel> {
    svm_train_traced(rows, labels, params, false).map(|f| f.model)
}

pub fn svm_train_traced(
    rows: &[Vec<f64>],
    labels: &[Label],
    params: &SvmParams,
    trace: bool,
) -> Result<SvmFit> {
    let n = rows.len();
    if labels.len() != n {
        return Err(Error::InvalidInput("rows and labels differ in length".into()));
    }
    if !(params.c.is_finite() && params.c > 0.0 && params.gamma.is_finite() && params.gamma > 0.0)
    {
        return Err(Error::InvalidInput(format!(
            "C and gamma must be positive and finite, got C={} gamma={}",
            params.c, params.gamma
        )));
    }
    let events = labels.iter().filter(|&&l| l == Label::Event).count();
    if events == 0 || events == n {
        return Err(Error::SingleClass {
            events,
            non_events: n - events,
        });
    }
    let dim = rows[0].len();
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
    }

    let c = params.c;
    let y: Vec<f64> = labels.iter().map(|l| l.sign()).collect();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut cache = KernelCache::new(rows, params.gamma, params.cache_bytes);
    let mut objective_trace = Vec::new();

    let in_up = |t: usize, a: &[f64]| (y[t] > 0.0 && a[t] < c) || (y[t] < 0.0 && a[t] > 0.0);
    let in_low = |t: usize, a: &[f64]| (y[t] > 0.0 && a[t] > 0.0) || (y[t] < 0.0 && a[t] < c);

    let mut iterations = 0u64;
    let (converged, kkt_gap) = loop {
        let mut i = usize::MAX;
        let mut j = usize::MAX;
        let mut g_max = f64::NEG_INFINITY;
        let mut g_min = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(t, &alpha) && v > g_max {
                g_max = v;
                i = t;
            }
            if in_low(t, &alpha) && v < g_min {
                g_min = v;
                j = t;
            }
        }
        let gap = g_max - g_min;
        if i == usize::MAX || j == usize::MAX || gap <= params.tolerance {
            break (true, gap.max(0.0));
        }
        if iterations >= params.max_iterations {
            break (false, gap);
        }

        let ki = cache.column(i)?;
        let kj = cache.column(j)?;
        let q_ij = y[i] * y[j] * ki[j];
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        if y[i] != y[j] {
            let quad = (ki[i] + kj[j] + 2.0 * q_ij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let quad = (ki[i] + kj[j] - 2.0 * q_ij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
        iterations += 1;
        if trace {
            objective_trace.push(dual_objective(&alpha, &grad));
        }
    };

    // Threshold from free vectors, else the midpoint of the feasible range.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };

    let mut support = Vec::new();
    let mut coef = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            support.extend_from_slice(&rows[t]);
            coef.push(alpha[t] * y[t]);
        }
    }
    Ok(SvmFit {
        model: SvmModel {
            c,
            gamma: params.gamma,
            dim,
            support,
            coef,
            bias: -rho,
            converged,
            iterations,
            kkt_gap,
        },
        alpha,
        objective_trace,
    })
}
