//! Matching, scoring and time-block cross-validation.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{detect_in_table, PeriodTable};
use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;
use crate::signal::{GroundTruth, RawRecording};
use crate::training::{adaptive_train, build_training_set, AdaptiveOutcome, RoundStats, TrainingArea};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `(detection index, label index)`.
    pub pairs: Vec<(usize, usize)>,
}

/// Greedy one-to-one matching: repeatedly pairs the closest unpaired
/// (detection, label) couple with `|dt| <= tol_s`. Ties go to the lower
/// detection index, then the lower label index.
///
/// Greedy is not always maximum-cardinality: labels {0, 1.1} against
/// detections {0.6, 2.05} at tol 1 pair 0.6 with 1.1 first and leave both
/// others unmatched.
pub fn match_detections(dets: &[f64], labels: &[f64], tol_s: f64) -> MatchResult {
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    let mut lo = 0;
    for (i, &d) in dets.iter().enumerate() {
        while lo < labels.len() && labels[lo] < d - tol_s {
            lo += 1;
        }
        for (j, &l) in labels.iter().enumerate().skip(lo) {
            if l > d + tol_s {
                break;
            }
            let dt = (d - l).abs();
            if dt <= tol_s {
                cand.push((dt, i, j));
            }
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut det_used = vec![false; dets.len()];
    let mut lab_used = vec![false; labels.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in cand {
        if !det_used[i] && !lab_used[j] {
            det_used[i] = true;
            lab_used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    MatchResult {
        tp: pairs.len(),
        fp: dets.len() - pairs.len(),
        fn_: labels.len() - pairs.len(),
        pairs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

/// Precision is 1 with no detections and nothing missed, 0 with no
/// detections but missed labels. Recall is 1 when there is nothing to find.
pub fn score_counts(tp: usize, fp: usize, fn_: usize) -> Scores {
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else if fn_ == 0 {
        1.0
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        1.0
    };
    let fscore = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Scores {
        precision,
        recall,
        fscore,
    }
}

pub fn score(m: &MatchResult) -> Scores {
    score_counts(m.tp, m.fp, m.fn_)
}

/// One test block and the training spans around it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub test: (f64, f64),
    pub train: Vec<(f64, f64)>,
}

/// Splits `[0, duration_s)` into `k` contiguous blocks holding
/// `round(i*n/k)..round((i+1)*n/k)` of the sorted label times; boundaries
/// sit halfway between the neighbouring labels of adjacent blocks.
pub fn time_block_folds(times: &[f64], duration_s: f64, k: usize) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("cross-validation needs k >= 2, got {k}")));
    }
    let n = times.len();
    if n < k {
        return Err(Error::InvalidInput(format!(
            "cannot give each of {k} folds a label with only {n} labels"
        )));
    }
    let split = |i: usize| ((i * n) as f64 / k as f64).round() as usize;
    let mut bounds = vec![0.0];
    for i in 1..k {
        let s = split(i);
        let b = 0.5 * (times[s - 1] + times[s]);
        if b <= *bounds.last().unwrap() || times[s - 1] == times[s] {
            return Err(Error::InvalidInput(format!(
                "labels at {} s cannot be separated into {k} time blocks",
                times[s]
            )));
        }
        bounds.push(b);
    }
    bounds.push(duration_s);
    Ok((0..k)
        .map(|i| {
            let test = (bounds[i], bounds[i + 1]);
            let mut train = Vec::new();
            if i > 0 {
                train.push((0.0, bounds[i]));
            }
            if i + 1 < k {
                train.push((bounds[i + 1], duration_s));
            }
            Fold { index: i, test, train }
        })
        .collect())
}

fn labels_in(gt: &GroundTruth, spans: &[(f64, f64)]) -> Result<GroundTruth> {
    let labels = gt
        .labels()
        .iter()
        .filter(|l| spans.iter().any(|&(a, b)| l.time_s >= a && l.time_s < b))
        .cloned()
        .collect();
    GroundTruth::new(labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_start_s: f64,
    pub test_end_s: f64,
    pub labels: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub train_events: usize,
    pub train_non_events: usize,
    pub rounds: Vec<RoundStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub folds: Vec<FoldReport>,
}

impl EvalReport {
    /// Pooled (micro-averaged) report over `folds`.
    pub fn pooled(folds: Vec<FoldReport>) -> Self {
        let tp = folds.iter().map(|f| f.tp).sum();
        let fp = folds.iter().map(|f| f.fp).sum();
        let fn_ = folds.iter().map(|f| f.fn_).sum();
        let s = score_counts(tp, fp, fn_);
        Self {
            tp,
            fp,
            fn_,
            precision: s.precision,
            recall: s.recall,
            fscore: s.fscore,
            folds,
        }
    }

    pub fn single(m: &MatchResult) -> Self {
        let s = score(m);
        Self {
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            precision: s.precision,
            recall: s.recall,
            fscore: s.fscore,
            folds: Vec::new(),
        }
    }

    /// One row per fold plus a final `all` row.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["fold", "test_start_s", "test_end_s", "labels", "tp", "fp", "fn", "precision", "recall", "fscore"])?;
        for f in &self.folds {
            w.write_record([
                f.fold.to_string(),
                f.test_start_s.to_string(),
                f.test_end_s.to_string(),
                f.labels.to_string(),
                f.tp.to_string(),
                f.fp.to_string(),
                f.fn_.to_string(),
                f.precision.to_string(),
                f.recall.to_string(),
                f.fscore.to_string(),
            ])?;
        }
        w.write_record([
            "all".to_string(),
            String::new(),
            String::new(),
            (self.tp + self.fn_).to_string(),
            self.tp.to_string(),
            self.fp.to_string(),
            self.fn_.to_string(),
            self.precision.to_string(),
            self.recall.to_string(),
            self.fscore.to_string(),
        ])?;
        w.flush()
    }
}

/// Trains on everything outside `fold.test` and returns the outcome.
pub fn train_fold(
    rec: &RawRecording,
    table: &PeriodTable,
    gt: &GroundTruth,
    fold: &Fold,
    cfg: &PipelineConfig,
) -> Result<AdaptiveOutcome> {
    let area = TrainingArea {
        spans: fold.train.clone(),
        gt: labels_in(gt, &fold.train)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.detector.rng_seed);
    rng.set_stream(fold.index as u64);
    let base = build_training_set(rec, &area, cfg, &mut rng)?;
    adaptive_train(rec, table, &area, base, cfg)
}

fn run_fold(
    rec: &RawRecording,
    table: &PeriodTable,
    gt: &GroundTruth,
    fold: &Fold,
    cfg: &PipelineConfig,
) -> Result<FoldReport> {
    let out = train_fold(rec, table, gt, fold, cfg)?;
    let (a, b) = fold.test;
    let dets = detect_in_table(table, &out.model, &cfg.detector, a, b)?;
    let det_times: Vec<f64> = dets.iter().map(|d| d.time_s).collect();
    let test_times = labels_in(gt, &[fold.test])?.times();
    let m = match_detections(&det_times, &test_times, cfg.detector.match_tol_s);
    let s = score(&m);
    Ok(FoldReport {
        fold: fold.index,
        test_start_s: a,
        test_end_s: b,
        labels: test_times.len(),
        tp: m.tp,
        fp: m.fp,
        fn_: m.fn_,
        precision: s.precision,
        recall: s.recall,
        fscore: s.fscore,
        train_events: out.set.count(crate::classify::Label::Event),
        train_non_events: out.set.count(crate::classify::Label::NonEvent),
        rounds: out.stats,
    })
}

/// k-fold time-block cross-validation of the full pipeline. Folds run in
/// parallel; counts are pooled before scoring.
pub fn cross_validate(rec: &RawRecording, gt: &GroundTruth, cfg: &PipelineConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let folds = time_block_folds(&gt.times(), rec.duration_s(), cfg.folds)?;
    let table = PeriodTable::build(rec, cfg.feature)?;
    let reports = folds
        .par_iter()
        .map(|f| run_fold(rec, &table, gt, f, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::pooled(reports))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn exact_detections_match_everything() {
        let t = [1.0, 5.0, 9.5];
        let m = match_detections(&t, &t, 1.0);
        assert_eq!((m.tp, m.fp, m.fn_), (3, 0, 0));
        assert_eq!(m.pairs, vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn one_detection_two_labels() {
        let m = match_detections(&[10.0], &[9.5, 10.8], 1.0);
        assert_eq!((m.tp, m.fp, m.fn_), (1, 0, 1));
        assert_eq!(m.pairs, vec![(0, 0)]);
    }

    #[test]
    fn nothing_pairs_across_tolerance() {
        let m = match_detections(&[0.0, 10.0], &[1.0001, 8.5], 1.0);
        assert_eq!((m.tp, m.fp, m.fn_), (0, 2, 2));
        let m = match_detections(&[0.0], &[1.0], 1.0);
        assert_eq!(m.tp, 1);
    }

    #[test]
    fn greedy_can_miss_the_maximum_matching() {
        let m = match_detections(&[0.6, 2.05], &[0.0, 1.1], 1.0);
        assert_eq!(m.tp, 1);
        assert_eq!(max_matching(&[0.6, 2.05], &[0.0, 1.1], 1.0), 2);
    }

    fn max_matching(dets: &[f64], labels: &[f64], tol: f64) -> usize {
        fn go(i: usize, dets: &[f64], labels: &[f64], used: &mut Vec<bool>, tol: f64) -> usize {
            if i == dets.len() {
                return 0;
            }
            let mut best = go(i + 1, dets, labels, used, tol);
            for j in 0..labels.len() {
                if !used[j] && (dets[i] - labels[j]).abs() <= tol {
                    used[j] = true;
                    best = best.max(1 + go(i + 1, dets, labels, used, tol));
                    used[j] = false;
                }
            }
            best
        }
        go(0, dets, labels, &mut vec![false; labels.len()], tol)
    }

    fn sorted_times() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..10.0, 0..=8).prop_map(|mut v| {
            v.sort_by(f64::total_cmp);
            v
        })
    }

    proptest! {
        #[test]
        fn greedy_against_brute_force(dets in sorted_times(), labels in sorted_times()) {
            let m = match_detections(&dets, &labels, 1.0);
            let best = max_matching(&dets, &labels, 1.0);
            // greedy is maximal, hence at least half of the optimum
            prop_assert!(m.tp <= best && 2 * m.tp >= best);
            prop_assert_eq!(m.tp + m.fn_, labels.len());
            prop_assert_eq!(m.tp + m.fp, dets.len());
            for &(i, j) in &m.pairs {
                prop_assert!((dets[i] - labels[j]).abs() <= 1.0);
            }
        }

        #[test]
        fn swapping_roles_swaps_fp_and_fn(dets in sorted_times(), labels in sorted_times()) {
            let a = match_detections(&dets, &labels, 1.0);
            let b = match_detections(&labels, &dets, 1.0);
            prop_assert_eq!((a.tp, a.fp, a.fn_), (b.tp, b.fn_, b.fp));
        }

        #[test]
        fn scores_are_harmonic(tp in 0usize..500, fp in 0usize..500, fn_ in 0usize..500) {
            let s = score_counts(tp, fp, fn_);
            for v in [s.precision, s.recall, s.fscore] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if s.precision + s.recall > 0.0 {
                let h = 2.0 * s.precision * s.recall / (s.precision + s.recall);
                prop_assert!((s.fscore - h).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn score_examples() {
        let s = score_counts(1175, 260, 402);
        assert!((s.precision - 0.819).abs() < 5e-4);
        assert!((s.recall - 0.745).abs() < 5e-4);
        assert!((s.fscore - 0.780).abs() < 1e-3);
        assert_eq!(score_counts(0, 10, 5).fscore, 0.0);
        assert_eq!(score_counts(0, 0, 5).precision, 0.0);
        let p = score_counts(7, 0, 0);
        assert_eq!((p.precision, p.recall, p.fscore), (1.0, 1.0, 1.0));
        assert_eq!(score_counts(0, 0, 0).fscore, 1.0);
    }

    #[test]
    fn folds_partition_the_timeline() {
        let times: Vec<f64> = (0..100).map(|i| 30.0 + 70.0 * i as f64).collect();
        let folds = time_block_folds(&times, 7200.0, 5).unwrap();
        assert_eq!(folds.len(), 5);
        assert_eq!(folds[0].test.0, 0.0);
        assert_eq!(folds[4].test.1, 7200.0);
        for w in folds.windows(2) {
            assert_eq!(w[0].test.1, w[1].test.0);
        }
        for f in &folds {
            let n = times.iter().filter(|&&t| t >= f.test.0 && t < f.test.1).count();
            assert_eq!(n, 20);
            let train: f64 = f.train.iter().map(|(a, b)| b - a).sum();
            assert!((train + f.test.1 - f.test.0 - 7200.0).abs() < 1e-9);
            for &(a, b) in &f.train {
                assert!(b <= f.test.0 || a >= f.test.1);
            }
        }
        // labels 2k and 2k+1 are 70 s apart, so boundaries are at midpoints
        assert_eq!(folds[1].test.0, 0.5 * (times[19] + times[20]));
    }

    #[test]
    fn fold_errors() {
        assert!(time_block_folds(&[1.0, 2.0], 10.0, 3).is_err());
        assert!(time_block_folds(&[1.0, 2.0], 10.0, 1).is_err());
        assert!(time_block_folds(&[1.0, 1.0, 1.0, 1.0], 10.0, 2).is_err());
    }

    #[test]
    fn report_csv_has_pooled_row() {
        let r = EvalReport::single(&MatchResult { tp: 3, fp: 1, fn_: 0, pairs: vec![] });
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().last().unwrap(), "all,,,3,3,1,0,0.75,1,0.8571428571428571");
    }
}
