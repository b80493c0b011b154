//! Sliding-window event detection.
//!
//! Windows start every `step_periods` mains periods on a grid anchored at
//! sample 0. Per-period metrics are computed once for the whole recording,
//! so a window's feature is assembled from a slice of that table instead of
//! re-reading raw samples.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{Label, TrainedModel};
use crate::error::{Error, Result};
use crate::features::{assemble, feature_dim, FeatureKind, FlatnessPlan, U_FLOOR_V};
use crate::signal::{GroundTruth, RawRecording, WINDOW_S};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub step_periods: usize,
    pub window_s: f64,
    pub merge_gap_s: f64,
    pub match_tol_s: f64,
    pub non_event_min_dist_s: f64,
    pub rng_seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            step_periods: 30,
            window_s: WINDOW_S,
            merge_gap_s: 5.0,
            match_tol_s: 1.0,
            non_event_min_dist_s: 10.0,
            rng_seed: 1,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.step_periods == 0 {
            return bad("step_periods must be at least 1");
        }
        if !(self.window_s > 0.0 && self.window_s.is_finite()) {
            return bad("window_s must be positive");
        }
        if !(self.merge_gap_s >= 0.0 && self.merge_gap_s <= self.window_s) {
            return bad("merge_gap_s must lie in [0, window_s]");
        }
        if !(self.match_tol_s > 0.0 && self.match_tol_s.is_finite()) {
            return bad("match_tol_s must be positive");
        }
        if !(self.non_event_min_dist_s >= 0.0 && self.non_event_min_dist_s.is_finite()) {
            return bad("non_event_min_dist_s must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub time_s: f64,
    pub first_s: f64,
    pub last_s: f64,
    pub window_count: usize,
}

/// Verdict for one window, identified by its center time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowVerdict {
    pub center_s: f64,
    pub label: Label,
}

/// Per-period metrics of a whole recording for one feature kind.
#[derive(Debug, Clone)]
pub struct PeriodTable {
    pub kind: FeatureKind,
    pub fs: u32,
    pub mains_hz: u32,
    pub i_rms: Vec<f64>,
    pub u_rms: Option<Vec<f64>>,
    pub spf: Option<Vec<f64>>,
}

const TABLE_CHUNK: usize = 4096;

fn rms(p: &[f32]) -> f64 {
    let sq: f64 = p.iter().map(|&x| {
        let x = x as f64;
        x * x
    }).sum();
    (sq / p.len() as f64).sqrt()
}

impl PeriodTable {
    pub fn build(rec: &RawRecording, kind: FeatureKind) -> Result<Self> {
        let n = rec.samples_per_period();
        let periods = rec.n_periods();
        let usable = periods * n;
        let per_chunk = |samples: &[f32], f: &(dyn Fn(&[f32]) -> f64 + Sync)| -> Vec<f64> {
            samples[..usable]
                .par_chunks(TABLE_CHUNK * n)
                .flat_map_iter(|c| c.chunks_exact(n).map(f).collect::<Vec<_>>())
                .collect()
        };
        let i_rms = per_chunk(&rec.current, &rms);
        let u_rms = kind.needs_voltage().then(|| per_chunk(&rec.voltage, &rms));
        let spf = if kind.needs_spectrum() {
            FlatnessPlan::new(n)?;
            Some(
                rec.current[..usable]
                    .par_chunks(TABLE_CHUNK * n)
                    .flat_map_iter(|c| {
                        let plan = FlatnessPlan::new(n).expect("checked above");
                        let mut buf = Vec::with_capacity(n);
                        c.chunks_exact(n).map(|p| plan.flatness(p, &mut buf)).collect::<Vec<_>>()
                    })
                    .collect(),
            )
        } else {
            None
        };
        Ok(Self {
            kind,
            fs: rec.fs,
            mains_hz: rec.mains_hz,
            i_rms,
            u_rms,
            spf,
        })
    }

    pub fn n_periods(&self) -> usize {
        self.i_rms.len()
    }

    /// Feature of the window covering periods `[start, start + len)`.
    pub fn window_feature(&self, start: usize, len: usize) -> Result<Vec<f64>> {
        let r = start..start + len;
        if let Some(u) = &self.u_rms {
            if let Some(p) = u[r.clone()].iter().position(|&v| v <= U_FLOOR_V) {
                return Err(Error::DeadVoltage {
                    period: start + p,
                    value: u[start + p],
                    floor: U_FLOOR_V,
                });
            }
        }
        Ok(assemble(
            self.kind,
            &self.i_rms[r.clone()],
            self.u_rms.as_ref().map(|u| &u[r.clone()]),
            self.spf.as_ref().map(|s| &s[r]),
        )?
        .values)
    }
}

fn check_model(rec_fs: u32, rec_f0: u32, model: &TrainedModel) -> Result<()> {
    if model.fs != rec_fs || model.mains_hz != rec_f0 {
        return Err(Error::RateMismatch {
            model_fs: model.fs,
            model_f0: model.mains_hz,
            rec_fs,
            rec_f0,
        });
    }
    Ok(())
}

/// Classifies every grid window lying entirely inside `[start_s, end_s]`.
pub fn classify_windows(
    table: &PeriodTable,
    model: &TrainedModel,
    cfg: &DetectorConfig,
    start_s: f64,
    end_s: f64,
) -> Result<Vec<WindowVerdict>> {
    cfg.validate()?;
    check_model(table.fs, table.mains_hz, model)?;
    if table.kind != model.feature {
        return Err(Error::InvalidInput(format!(
            "period table holds {} metrics but the model uses {}",
            table.kind, model.feature
        )));
    }
    let f0 = table.mains_hz as f64;
    let win = feature_dim(table.mains_hz, cfg.window_s);
    if win != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: win,
        });
    }
    if table.n_periods() < win {
        return Ok(Vec::new());
    }
    let step = cfg.step_periods;
    let last_start = table.n_periods() - win;
    // first grid window whose start >= start_s, last whose end <= end_s
    let lo = (start_s.max(0.0) * f0 - 1e-9).ceil().max(0.0) as usize;
    let first = lo.div_ceil(step);
    let hi = ((end_s * f0 + 1e-9).floor() as i64 - win as i64).min(last_start as i64);
    if hi < 0 || first * step > hi as usize {
        return Ok(Vec::new());
    }
    let last = hi as usize / step;
    (first..=last)
        .into_par_iter()
        .map(|w| {
            let p = w * step;
            let v = table.window_feature(p, win)?;
            Ok(WindowVerdict {
                center_s: (p as f64 + win as f64 / 2.0) / f0,
                label: model.predict(&v)?,
            })
        })
        .collect()
}

/// Collapses runs of positive windows whose neighbouring centers are less
/// than `merge_gap_s` apart. Input must be sorted by center.
pub fn merge_positives(verdicts: &[WindowVerdict], merge_gap_s: f64) -> Vec<Detection> {
    let mut out: Vec<Detection> = Vec::new();
    for v in verdicts.iter().filter(|v| v.label == Label::Event) {
        match out.last_mut() {
            Some(d) if v.center_s - d.last_s < merge_gap_s => {
                d.last_s = v.center_s;
                d.window_count += 1;
            }
            _ => out.push(Detection {
                time_s: v.center_s,
                first_s: v.center_s,
                last_s: v.center_s,
                window_count: 1,
            }),
        }
    }
    for d in &mut out {
        d.time_s = 0.5 * (d.first_s + d.last_s);
    }
    out
}

pub fn detect_in_table(
    table: &PeriodTable,
    model: &TrainedModel,
    cfg: &DetectorConfig,
    start_s: f64,
    end_s: f64,
) -> Result<Vec<Detection>> {
    let verdicts = classify_windows(table, model, cfg, start_s, end_s)?;
    Ok(merge_positives(&verdicts, cfg.merge_gap_s))
}

pub fn detect(rec: &RawRecording, model: &TrainedModel, cfg: &DetectorConfig) -> Result<Vec<Detection>> {
    detect_range(rec, model, cfg, 0.0, rec.duration_s())
}

pub fn detect_range(
    rec: &RawRecording,
    model: &TrainedModel,
    cfg: &DetectorConfig,
    start_s: f64,
    end_s: f64,
) -> Result<Vec<Detection>> {
    check_model(rec.fs, rec.mains_hz, model)?;
    if rec.duration_s() < cfg.window_s {
        return Err(Error::InvalidInput(format!(
            "recording of {:.3} s is shorter than one {} s window",
            rec.duration_s(),
            cfg.window_s
        )));
    }
    let table = PeriodTable::build(rec, model.feature)?;
    detect_in_table(&table, model, cfg, start_s, end_s)
}

/// Draws `count` window centers uniformly from the admissible part of
/// `spans`: each window lies inside a span and its center keeps
/// `non_event_min_dist_s` from every label.
pub fn sample_non_events_in(
    gt: &GroundTruth,
    spans: &[(f64, f64)],
    count: usize,
    cfg: &DetectorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let half = cfg.window_s / 2.0;
    let centers: Vec<(f64, f64)> = spans
        .iter()
        .map(|&(a, b)| (a + half, b - half))
        .filter(|(a, b)| b > a)
        .collect();
    let total: f64 = centers.iter().map(|(a, b)| b - a).sum();
    if count == 0 {
        return Ok(Vec::new());
    }
    if total <= 0.0 {
        return Err(Error::Infeasible("no room for a single non-event window".into()));
    }
    let times = gt.times();
    let admissible = |t: f64| {
        let i = times.partition_point(|&x| x < t);
        let near = |j: usize| times.get(j).is_some_and(|&x| (x - t).abs() < cfg.non_event_min_dist_s);
        !(near(i) || (i > 0 && near(i - 1)))
    };
    let budget = 1000 * count + 10_000;
    let mut out = Vec::with_capacity(count);
    for _ in 0..budget {
        let mut u = rng.random::<f64>() * total;
        let mut t = centers[centers.len() - 1].1;
        for &(a, b) in &centers {
            if u < b - a {
                t = a + u;
                break;
            }
            u -= b - a;
        }
        if admissible(t) {
            out.push(t);
            if out.len() == count {
                return Ok(out);
            }
        }
    }
    Err(Error::Infeasible(format!(
        "found only {} of {count} admissible non-event windows after {budget} draws",
        out.len()
    )))
}

pub fn sample_non_events(
    rec: &RawRecording,
    gt: &GroundTruth,
    count: usize,
    cfg: &DetectorConfig,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    sample_non_events_in(gt, &[(0.0, rec.duration_s())], count, cfg, &mut rng)
}

pub const DETECTIONS_HEADER: [&str; 4] = ["time_s", "first_s", "last_s", "window_count"];

pub fn write_detections<W: Write>(dets: &[Detection], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DETECTIONS_HEADER)?;
    for d in dets {
        w.write_record([
            d.time_s.to_string(),
            d.first_s.to_string(),
            d.last_s.to_string(),
            d.window_count.to_string(),
        ])?;
    }
    w.flush()
}

pub fn store_detections(dets: &[Detection], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_detections(dets, std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::{train_model, ClassifierSpec, FeatureSetup, LabeledSample, Origin};
    use crate::features::extract_feature;
    use crate::normalize::NormKind;
    use crate::signal::{slice_window, synth_recording, EventKind, EventLabel, SynthSpec};

    fn verdicts(bits: &str) -> Vec<WindowVerdict> {
        bits.chars()
            .enumerate()
            .map(|(i, c)| WindowVerdict {
                center_s: 5.0 + 0.6 * i as f64,
                label: if c == '1' { Label::Event } else { Label::NonEvent },
            })
            .collect()
    }

    #[test]
    fn merge_joins_runs_within_gap() {
        // gaps of 3 windows (1.8 s) merge, gaps of 9 windows (5.4 s) do not
        let v = verdicts("0111000110000000001100");
        let d = merge_positives(&v, 5.0);
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].window_count, 5);
        assert!((d[0].first_s - 5.6).abs() < 1e-12 && (d[0].last_s - 9.8).abs() < 1e-12);
        assert!((d[0].time_s - 7.7).abs() < 1e-12);
        assert_eq!(d[1].window_count, 2);
        assert!(merge_positives(&verdicts("0000"), 5.0).is_empty());
    }

    #[test]
    fn merge_is_partition_safe() {
        let v = verdicts("01100000000011011000000000001");
        let whole = merge_positives(&v, 5.0);
        // cut inside negative stretches wider than the gap
        for cut in [10, 11, 20, 25] {
            let mut parts = merge_positives(&v[..cut], 5.0);
            parts.extend(merge_positives(&v[cut..], 5.0));
            assert_eq!(parts, whole, "cut at {cut}");
        }
        for d in &whole {
            assert!(d.first_s <= d.time_s && d.time_s <= d.last_s && d.window_count >= 1);
        }
    }

    fn step_spec(duration_s: f64, events: usize, nuisance: usize, seed: u64) -> SynthSpec {
        SynthSpec {
            duration_s,
            n_true_events: events,
            n_nuisance_transients: nuisance,
            fs: 1600,
            seed,
            ..SynthSpec::default()
        }
    }

    /// KNN(K=1) trained on labelled steps and random quiet windows of a
    /// separate recording.
    fn trained(kind: FeatureKind) -> TrainedModel {
        let spec = step_spec(1200.0, 20, 0, 42);
        let (rec, gt) = synth_recording(&spec).unwrap();
        let cfg = DetectorConfig::default();
        let mut samples = Vec::new();
        for l in gt.labels() {
            let seg = slice_window(&rec, l.time_s, 10.0).unwrap();
            samples.push((extract_feature(&seg, kind).unwrap().values, Label::Event, l.time_s));
        }
        for t in sample_non_events(&rec, &gt, 40, &cfg).unwrap() {
            let seg = slice_window(&rec, t, 10.0).unwrap();
            samples.push((extract_feature(&seg, kind).unwrap().values, Label::NonEvent, t));
        }
        let samples: Vec<LabeledSample> = samples
            .into_iter()
            .enumerate()
            .map(|(i, (vector, label, center_s))| LabeledSample {
                vector,
                label,
                origin: if label == Label::Event { Origin::GroundTruthEvent } else { Origin::RandomNonEvent },
                sample_index: i as u64,
                center_s,
            })
            .collect();
        let setup = FeatureSetup {
            feature: kind,
            fs: rec.fs,
            mains_hz: rec.mains_hz,
            window_s: 10.0,
        };
        train_model(&samples, NormKind::Variance, &ClassifierSpec::Knn { k: 1 }, setup).unwrap()
    }

    #[test]
    fn table_windows_equal_direct_extraction() {
        let (rec, _) = synth_recording(&step_spec(120.0, 2, 4, 3)).unwrap();
        for kind in FeatureKind::ALL {
            let table = PeriodTable::build(&rec, kind).unwrap();
            for p in [0usize, 30, 1234, rec.n_periods() - 500] {
                let center = (p as f64 + 250.0) / 50.0;
                let seg = slice_window(&rec, center, 10.0).unwrap();
                let direct = extract_feature(&seg, kind).unwrap().values;
                let cached = table.window_feature(p, 500).unwrap();
                assert!(
                    direct.iter().zip(&cached).all(|(a, b)| a.to_bits() == b.to_bits()),
                    "{kind} at period {p}"
                );
            }
        }
    }

    #[test]
    fn single_step_is_detected_once() {
        let model = trained(FeatureKind::Cusum);
        let spec = step_spec(300.0, 1, 0, 9);
        let (rec, gt) = synth_recording(&spec).unwrap();
        let t = gt.labels()[0].time_s;
        let dets = detect(&rec, &model, &DetectorConfig::default()).unwrap();
        assert_eq!(dets.len(), 1, "{dets:?}");
        assert!((dets[0].time_s - t).abs() <= 1.0, "{} vs {t}", dets[0].time_s);
    }

    #[test]
    fn idle_recording_has_no_detections() {
        let model = trained(FeatureKind::Cusum);
        let (rec, _) = synth_recording(&step_spec(200.0, 0, 0, 5)).unwrap();
        assert!(detect(&rec, &model, &DetectorConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn steps_three_seconds_apart_merge() {
        let model = trained(FeatureKind::Cusum);
        let spec = step_spec(200.0, 0, 0, 5);
        let (mut env, _) = crate::signal::synth_envelope(&spec).unwrap();
        let fs = spec.fs as usize;
        for (t, w) in [(100.0, 40.0), (103.0, 40.0)] {
            env.components.push(crate::signal::Component {
                start: (t * fs as f64) as usize,
                end: env.n_samples,
                profile: crate::signal::Profile::Constant(w),
                waveform: crate::signal::Waveform::Resistive,
            });
        }
        let rec = crate::signal::render(&spec, &env).unwrap();
        let dets = detect(&rec, &model, &DetectorConfig::default()).unwrap();
        assert_eq!(dets.len(), 1, "{dets:?}");
        assert!(dets[0].first_s < 101.0 && dets[0].last_s > 102.0);
    }

    #[test]
    fn halving_step_keeps_hits_per_event() {
        let model = trained(FeatureKind::Cusum);
        let (rec, gt) = synth_recording(&step_spec(600.0, 6, 10, 11)).unwrap();
        let table = PeriodTable::build(&rec, FeatureKind::Cusum).unwrap();
        let hits = |step: usize| -> Vec<usize> {
            let cfg = DetectorConfig { step_periods: step, ..DetectorConfig::default() };
            let v = classify_windows(&table, &model, &cfg, 0.0, rec.duration_s()).unwrap();
            gt.times()
                .iter()
                .map(|&t| {
                    v.iter()
                        .filter(|w| w.label == Label::Event && (w.center_s - t).abs() <= 5.0)
                        .count()
                })
                .collect()
        };
        let (h30, h15) = (hits(30), hits(15));
        assert!(h30.iter().zip(&h15).all(|(a, b)| b >= a), "{h30:?} {h15:?}");
        assert!(h30.iter().all(|&h| h > 0));
    }

    #[test]
    fn range_keeps_only_inner_windows() {
        let model = trained(FeatureKind::Cusum);
        let (rec, _) = synth_recording(&step_spec(100.0, 0, 0, 5)).unwrap();
        let table = PeriodTable::build(&rec, FeatureKind::Cusum).unwrap();
        let cfg = DetectorConfig::default();
        let v = classify_windows(&table, &model, &cfg, 20.0, 50.0).unwrap();
        assert!(!v.is_empty());
        assert!(v.iter().all(|w| w.center_s - 5.0 >= 20.0 - 1e-9 && w.center_s + 5.0 <= 50.0 + 1e-9));
        let all = classify_windows(&table, &model, &cfg, 0.0, 100.0).unwrap();
        // grid windows are 0.6 s apart and none may reach past the end
        assert_eq!(all.len(), (100 * 50 - 500) / 30 + 1);
        assert!(classify_windows(&table, &model, &cfg, 20.0, 29.0).unwrap().is_empty());
    }

    #[test]
    fn rate_mismatch_is_an_error() {
        let model = trained(FeatureKind::Cusum);
        let spec = SynthSpec { mains_hz: 60, fs: 1800, ..step_spec(60.0, 0, 0, 1) };
        let (rec, _) = synth_recording(&spec).unwrap();
        assert!(matches!(
            detect(&rec, &model, &DetectorConfig::default()),
            Err(Error::RateMismatch { .. })
        ));
    }

    #[test]
    fn non_event_sampling() {
        let (rec, _) = synth_recording(&step_spec(3600.0, 0, 0, 1)).unwrap();
        let labels: Vec<EventLabel> = (1..36)
            .map(|i| EventLabel {
                time_s: i as f64 * 100.0,
                channel_id: "synth".into(),
                appliance: "x".into(),
                kind: EventKind::On,
            })
            .collect();
        let gt = GroundTruth::new(labels).unwrap();
        let cfg = DetectorConfig::default();
        let a = sample_non_events(&rec, &gt, 100, &cfg).unwrap();
        assert_eq!(a, sample_non_events(&rec, &gt, 100, &cfg).unwrap());
        assert_eq!(a.len(), 100);
        for &t in &a {
            assert!((5.0..=3595.0).contains(&t));
            assert!(gt.times().iter().all(|&x| (x - t).abs() >= 10.0));
        }
        let empty = GroundTruth::new(vec![]).unwrap();
        assert_eq!(sample_non_events(&rec, &empty, 100, &cfg).unwrap().len(), 100);
        let other = DetectorConfig { rng_seed: 2, ..cfg };
        assert_ne!(a, sample_non_events(&rec, &gt, 100, &other).unwrap());
    }

    #[test]
    fn non_event_sampling_reports_lack_of_room() {
        let (rec, _) = synth_recording(&step_spec(60.0, 0, 0, 1)).unwrap();
        let labels: Vec<EventLabel> = [15.0, 30.0, 45.0]
            .iter()
            .map(|&time_s| EventLabel {
                time_s,
                channel_id: "synth".into(),
                appliance: "x".into(),
                kind: EventKind::On,
            })
            .collect();
        let gt = GroundTruth::new(labels).unwrap();
        assert!(matches!(
            sample_non_events(&rec, &gt, 5, &DetectorConfig::default()),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn detections_csv() {
        let d = [Detection { time_s: 60.3, first_s: 59.1, last_s: 61.5, window_count: 5 }];
        let mut buf = Vec::new();
        write_detections(&d, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "time_s,first_s,last_s,window_count\n60.3,59.1,61.5,5\n");
    }
}
