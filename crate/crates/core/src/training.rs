//! Training-set construction and adaptive training.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{train_model, FeatureSetup, Label, LabeledSample, Origin, TrainedModel};
use crate::detector::{detect_in_table, sample_non_events_in, Detection, PeriodTable};
use crate::error::{Error, Result};
use crate::eval::match_detections;
use crate::features::extract_feature;
use crate::pipeline::PipelineConfig;
use crate::signal::{slice_window, GroundTruth, RawRecording};

/// Adaptive round counts offered as presets (`adaptive`, `adaptive 3x`,
/// `adaptive 5x`).
pub const ADAPTIVE_PRESETS: [usize; 3] = [1, 3, 5];

const SPAN_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub samples: Vec<LabeledSample>,
    pub round: usize,
}

impl TrainingSet {
    pub fn count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    fn push(&mut self, vector: Vec<f64>, label: Label, origin: Origin, center_s: f64) {
        let sample_index = self.samples.len() as u64;
        self.samples.push(LabeledSample {
            vector,
            label,
            origin,
            sample_index,
            center_s,
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: usize,
    pub train_tp: usize,
    pub train_fp: usize,
    pub set_size_event: usize,
    pub set_size_nonevent: usize,
}

pub const ROUND_STATS_HEADER: [&str; 5] = ["round", "train_tp", "train_fp", "set_size_event", "set_size_nonevent"];

pub fn write_round_stats<W: Write>(stats: &[RoundStats], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ROUND_STATS_HEADER)?;
    for s in stats {
        w.write_record([
            s.round.to_string(),
            s.train_tp.to_string(),
            s.train_fp.to_string(),
            s.set_size_event.to_string(),
            s.set_size_nonevent.to_string(),
        ])?;
    }
    w.flush()
}

/// The part of a recording a model may learn from: disjoint time spans
/// plus the labels falling inside them.
#[derive(Debug, Clone)]
pub struct TrainingArea {
    pub spans: Vec<(f64, f64)>,
    pub gt: GroundTruth,
}

impl TrainingArea {
    pub fn whole(rec: &RawRecording, gt: &GroundTruth) -> Self {
        Self {
            spans: vec![(0.0, rec.duration_s())],
            gt: gt.clone(),
        }
    }

    /// True when a window of `window_s` centered on `t` fits in one span.
    pub fn holds_window(&self, t: f64, window_s: f64) -> bool {
        let h = window_s / 2.0;
        self.spans
            .iter()
            .any(|&(a, b)| t - h >= a - SPAN_EPS && t + h <= b + SPAN_EPS)
    }
}

fn feature_at(rec: &RawRecording, t: f64, cfg: &PipelineConfig) -> Result<Vec<f64>> {
    let seg = slice_window(rec, t, cfg.detector.window_s)?;
    Ok(extract_feature(&seg, cfg.feature)?.values)
}

/// One EVENT sample per label whose window fits in the area, plus
/// `round(non_event_ratio * events)` random non-event windows.
pub fn build_training_set(
    rec: &RawRecording,
    area: &TrainingArea,
    cfg: &PipelineConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingSet> {
    if area.gt.is_empty() {
        return Err(Error::InvalidInput("training area holds no ground-truth events".into()));
    }
    let mut set = TrainingSet {
        samples: Vec::new(),
        round: 0,
    };
    for l in area.gt.labels() {
        if area.holds_window(l.time_s, cfg.detector.window_s) {
            set.push(feature_at(rec, l.time_s, cfg)?, Label::Event, Origin::GroundTruthEvent, l.time_s);
        }
    }
    let events = set.samples.len();
    if events == 0 {
        return Err(Error::InvalidInput(
            "no ground-truth event has a full window inside the training area".into(),
        ));
    }
    let n_non = (cfg.non_event_ratio * events as f64).round() as usize;
    for t in sample_non_events_in(&area.gt, &area.spans, n_non, &cfg.detector, rng)? {
        set.push(feature_at(rec, t, cfg)?, Label::NonEvent, Origin::RandomNonEvent, t);
    }
    Ok(set)
}

pub fn build_training_set_seeded(rec: &RawRecording, gt: &GroundTruth, cfg: &PipelineConfig) -> Result<TrainingSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.detector.rng_seed);
    build_training_set(rec, &TrainingArea::whole(rec, gt), cfg, &mut rng)
}

pub fn fit(rec: &RawRecording, set: &TrainingSet, cfg: &PipelineConfig) -> Result<TrainedModel> {
    let setup = FeatureSetup {
        feature: cfg.feature,
        fs: rec.fs,
        mains_hz: rec.mains_hz,
        window_s: cfg.detector.window_s,
    };
    train_model(&set.samples, cfg.norm, &cfg.classifier, setup)
}

fn detect_area(table: &PeriodTable, model: &TrainedModel, area: &TrainingArea, cfg: &PipelineConfig) -> Result<Vec<Detection>> {
    let mut dets = Vec::new();
    for &(a, b) in &area.spans {
        dets.extend(detect_in_table(table, model, &cfg.detector, a, b)?);
    }
    Ok(dets)
}

#[derive(Debug, Clone)]
pub struct AdaptiveOutcome {
    pub model: TrainedModel,
    pub set: TrainingSet,
    pub stats: Vec<RoundStats>,
}

/// Trains on `base`, then for up to `cfg.adaptive_rounds` rounds detects on
/// the training area and appends every detection with no label within
/// `match_tol_s` as an ADAPTIVE_FP non-event before retraining. Stops early
/// once a round finds no false positives.
pub fn adaptive_train(
    rec: &RawRecording,
    table: &PeriodTable,
    area: &TrainingArea,
    base: TrainingSet,
    cfg: &PipelineConfig,
) -> Result<AdaptiveOutcome> {
    let tol = cfg.detector.match_tol_s;
    let times = area.gt.times();
    let mut set = base;
    set.round = 0;
    let mut model = fit(rec, &set, cfg)?;
    let mut stats = Vec::new();
    for round in 0..=cfg.adaptive_rounds {
        let dets = detect_area(table, &model, area, cfg)?;
        let det_times: Vec<f64> = dets.iter().map(|d| d.time_s).collect();
        let m = match_detections(&det_times, &times, tol);
        stats.push(RoundStats {
            round,
            train_tp: m.tp,
            train_fp: m.fp,
            set_size_event: set.count(Label::Event),
            set_size_nonevent: set.count(Label::NonEvent),
        });
        if round == cfg.adaptive_rounds {
            break;
        }
        let before = set.samples.len();
        for &t in &det_times {
            let i = times.partition_point(|&x| x < t);
            let near = |j: usize| times.get(j).is_some_and(|&x| (x - t).abs() <= tol);
            if near(i) || (i > 0 && near(i - 1)) || !area.holds_window(t, cfg.detector.window_s) {
                continue;
            }
            set.push(feature_at(rec, t, cfg)?, Label::NonEvent, Origin::AdaptiveFp, t);
        }
        if set.samples.len() == before {
            break;
        }
        set.round = round + 1;
        model = fit(rec, &set, cfg)?;
    }
    Ok(AdaptiveOutcome { model, set, stats })
}

/// Builds the base set on the whole recording and runs adaptive training.
pub fn train_on_recording(rec: &RawRecording, gt: &GroundTruth, cfg: &PipelineConfig) -> Result<AdaptiveOutcome> {
    cfg.validate()?;
    let base = build_training_set_seeded(rec, gt, cfg)?;
    let table = PeriodTable::build(rec, cfg.feature)?;
    adaptive_train(rec, &table, &TrainingArea::whole(rec, gt), base, cfg)
}
