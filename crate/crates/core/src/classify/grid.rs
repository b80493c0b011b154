use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::svm::{svm_train, SvmParams};
use super::Label;
use crate::error::{Error, Result};
use crate::eval::{score, MatchResult};

/// `2^-5, 2^-3, ..., 2^15`.
pub fn default_c_grid() -> Vec<f64> {
    (-5..=15).step_by(2).map(|e| 2f64.powi(e)).collect()
}

/// `2^-15, 2^-13, ..., 2^9`.
pub fn default_gamma_grid() -> Vec<f64> {
    (-15..=9).step_by(2).map(|e| 2f64.powi(e)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub c: f64,
    pub gamma: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub c: f64,
    pub gamma: f64,
    pub cv_score: f64,
    pub cells: Vec<GridCell>,
}

/// Fold id per sample: each class is dealt round-robin in input order.
/// Errors when some fold would lack a class.
pub fn stratified_folds(labels: &[Label], folds: usize) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {folds}")));
    }
    let mut next = [0usize; 2];
    let assignment: Vec<usize> = labels
        .iter()
        .map(|&l| {
            let slot = &mut next[(l == Label::Event) as usize];
            let f = *slot % folds;
            *slot += 1;
            f
        })
        .collect();
    if next.iter().any(|&n| n < folds) {
        return Err(Error::InvalidInput(format!(
            "degenerate folds: {} events and {} non-events cannot fill {folds} folds with both classes",
            next[1], next[0]
        )));
    }
    Ok(assignment)
}

fn cv_score(
    rows: &[Vec<f64>],
    labels: &[Label],
    assignment: &[usize],
    folds: usize,
    params: &SvmParams,
) -> Result<f64> {
    let mut m = MatchResult::default();
    for f in 0..folds {
        let (mut tr_rows, mut tr_labels) = (Vec::new(), Vec::new());
        for ((r, &l), &a) in rows.iter().zip(labels).zip(assignment) {
            if a != f {
                tr_rows.push(r.clone());
                tr_labels.push(l);
            }
        }
        let model = svm_train(&tr_rows, &tr_labels, params)?;
        for ((r, &l), &a) in rows.iter().zip(labels).zip(assignment) {
            if a == f {
                match (model.predict(r)?, l) {
                    (Label::Event, Label::Event) => m.tp += 1,
                    (Label::Event, Label::NonEvent) => m.fp += 1,
                    (Label::NonEvent, Label::Event) => m.fn_ += 1,
                    (Label::NonEvent, Label::NonEvent) => {}
                }
            }
        }
    }
    Ok(score(&m).fscore)
}

/// Exhaustive search of `c_grid × gamma_grid` by cross-validated F-score.
/// Ties go to the smaller C, then the smaller gamma.
pub fn grid_search(
    rows: &[Vec<f64>],
    labels: &[Label],
    c_grid: &[f64],
    gamma_grid: &[f64],
    folds: usize,
    base: &SvmParams,
) -> Result<GridResult> {
    if c_grid.is_empty() || gamma_grid.is_empty() {
        return Err(Error::InvalidInput("grid search needs non-empty grids".into()));
    }
    let assignment = stratified_folds(labels, folds)?;
    let mut cs = c_grid.to_vec();
    let mut gs = gamma_grid.to_vec();
    cs.sort_by(f64::total_cmp);
    gs.sort_by(f64::total_cmp);
    let pairs: Vec<(f64, f64)> = cs
        .iter()
        .flat_map(|&c| gs.iter().map(move |&g| (c, g)))
        .collect();
    let cells = pairs
        .par_iter()
        .map(|&(c, gamma)| {
            let params = SvmParams { c, gamma, ..*base };
            cv_score(rows, labels, &assignment, folds, &params).map(|score| GridCell { c, gamma, score })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = cells
        .iter()
        .fold(None::<&GridCell>, |best, cell| match best {
            Some(b) if b.score >= cell.score => Some(b),
            _ => Some(cell),
        })
        .copied()
        .expect("grid is non-empty");
    Ok(GridResult {
        c: best.c,
        gamma: best.gamma,
        cv_score: best.score,
        cells,
    })
}
