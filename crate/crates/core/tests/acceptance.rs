//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints exactly one PASS/FAIL line; exits non-zero if any
//! criterion fails.
//!
//! The optional BLUED check runs when `EVDET_BLUED_DIR` names a directory
//! holding `recording.json`, `recording.f32` and `ground_truth.csv`.

use std::f64::consts::{PI, SQRT_2};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use evdet_core::classify::{svm_train_traced, ClassifierSpec, KnnModel, Label, SvmParams};
use evdet_core::eval::{cross_validate, score_counts};
use evdet_core::features::{cusum, delta_cusum, flatness_of_spectrum, rms_per_period, FeatureKind, PeriodSeries};
use evdet_core::normalize::{NormKind, NormalizationParams};
use evdet_core::pipeline::PipelineConfig;
use evdet_core::signal::{load_ground_truth, load_recording, synth_recording, SynthSpec};
use evdet_core::training::train_on_recording;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn within(t: Instant, budget: Duration) -> Result<(), String> {
    check(t.elapsed() < budget, format!("took {:.1?}, budget {budget:?}", t.elapsed()))
}

fn feature_oracles() -> Outcome {
    let t = Instant::now();
    // 12 kHz, 60 Hz: 200 samples per period, 600 periods
    let samples: Vec<f64> = (0..120_000)
        .map(|k| SQRT_2 * (2.0 * PI * 60.0 * k as f64 / 12_000.0).sin())
        .collect();
    let periods: Vec<&[f64]> = samples.chunks_exact(200).collect();
    let rms = rms_per_period(&periods).map_err(|e| e.to_string())?;
    let worst = rms.values.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    check(worst <= 1e-9, format!("sine rms off by {worst:e}"))?;

    let flat = flatness_of_spectrum(&[0.37; 100]);
    check(flat == 1.0, format!("equal-bin flatness {flat}"))?;
    let mut single = vec![0.0; 100];
    single[17] = 5.0;
    let tonal = flatness_of_spectrum(&single);
    check(tonal == 0.0, format!("single-bin flatness {tonal}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_end = 0.0f64;
    let mut worst_id = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..600);
        let scale = 10f64.powi(rng.random_range(-3..4));
        let x: Vec<f64> = (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let max = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let cs = cusum(&PeriodSeries::from(x.clone())).map_err(|e| e.to_string())?;
        worst_end = worst_end.max(cs.values[n - 1].abs() / (n as f64 * max));
        let mean = x.iter().sum::<f64>() / n as f64;
        let d = delta_cusum(&PeriodSeries::from(x.clone())).map_err(|e| e.to_string())?;
        for k in 0..n - 1 {
            worst_id = worst_id.max((d.values[k] - (mean - x[k + 1])).abs());
        }
    }
    check(worst_end <= 1e-9, format!("cusum endpoint {worst_end:e} * n * max|x|"))?;
    check(worst_id <= 1e-9, format!("delta-cusum identity off by {worst_id:e}"))?;
    within(t, Duration::from_secs(10))?;
    Ok(format!("rms err {worst:.1e}, cusum end {worst_end:.1e}, identity {worst_id:.1e}, {:.2?}", t.elapsed()))
}

fn knn_scan(rows: &[Vec<f64>], labels: &[Label], q: &[f64], k: usize) -> Label {
    let mut all: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let events = all[..k].iter().filter(|x| labels[x.1] == Label::Event).count();
    if events * 2 > k {
        Label::Event
    } else {
        Label::NonEvent
    }
}

fn classifier_oracles() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rows: Vec<Vec<f64>> = (0..800)
        .map(|_| (0..6).map(|_| rng.random_range(0..4) as f64 + rng.random_range(0..2) as f64 * 0.5).collect())
        .collect();
    let labels: Vec<Label> = rows
        .iter()
        .map(|r| if r[0] + r[1] + rng.random_range(-2.0..2.0) > 3.5 { Label::Event } else { Label::NonEvent })
        .collect();
    let idx: Vec<u64> = (0..rows.len() as u64).collect();
    let queries: Vec<Vec<f64>> = (0..200).map(|_| (0..6).map(|_| rng.random_range(-0.5..4.5)).collect()).collect();
    for k in [1, 87, 137, 301] {
        let m = KnnModel::fit(&rows, &labels, &idx, k).map_err(|e| e.to_string())?;
        for (qi, q) in queries.iter().enumerate() {
            let got = m.predict(q).map_err(|e| e.to_string())?;
            check(got == knn_scan(&rows, &labels, q, k), format!("K={k} disagrees on query {qi}"))?;
        }
    }

    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut brows = Vec::new();
    let mut blabels = Vec::new();
    for i in 0..100 {
        let ev = i < 50;
        brows.push(vec![if ev { 10.0 } else { 0.0 } + noise.sample(&mut rng), noise.sample(&mut rng)]);
        blabels.push(if ev { Label::Event } else { Label::NonEvent });
    }
    let fit = svm_train_traced(&brows, &blabels, &SvmParams::new(1.0, 0.5), false).map_err(|e| e.to_string())?;
    let correct = brows
        .iter()
        .zip(&blabels)
        .filter(|(r, &l)| fit.model.predict(r).unwrap() == l)
        .count();
    check(correct == 100, format!("svm training accuracy {correct}/100"))?;
    check(fit.model.kkt_gap <= 1e-3, format!("kkt residual {}", fit.model.kkt_gap))?;
    let balance: f64 = fit.alpha.iter().zip(&blabels).map(|(a, l)| a * l.sign()).sum();
    check(balance.abs() <= 1e-6, format!("sum alpha*y = {balance:e}"))?;
    within(t, Duration::from_secs(60))?;
    Ok(format!(
        "knn exact on 4x200 queries, svm acc 100%, kkt {:.1e}, sum(alpha*y) {:.1e}, {:.2?}",
        fit.model.kkt_gap,
        balance.abs(),
        t.elapsed()
    ))
}

fn normalization() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let train: Vec<Vec<f64>> = (0..400)
        .map(|_| (0..20).map(|d| (d as f64 + 1.0) * rng.random_range(-3.0..7.0)).collect())
        .collect();
    let mm = NormalizationParams::fit(&train, NormKind::MinMax).map_err(|e| e.to_string())?;
    for r in &train {
        let v = mm.transform(r).map_err(|e| e.to_string())?;
        check(v.iter().all(|x| (-1.0..=1.0).contains(x)), "minmax left [-1, 1]")?;
    }
    let var = NormalizationParams::fit(&train, NormKind::Variance).map_err(|e| e.to_string())?;
    let z: Vec<Vec<f64>> = train.iter().map(|r| var.transform(r).unwrap()).collect();
    let n = z.len() as f64;
    let mut worst = 0.0f64;
    for d in 0..20 {
        let mean = z.iter().map(|r| r[d]).sum::<f64>() / n;
        let sd = (z.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n).sqrt();
        worst = worst.max((sd - 1.0).abs());
    }
    check(worst <= 1e-9, format!("standardized std off by {worst:e}"))?;

    let test: Vec<Vec<f64>> = (0..100).map(|_| (0..20).map(|_| rng.random_range(-40.0..40.0)).collect()).collect();
    let mut order: Vec<usize> = (0..test.len()).collect();
    order.shuffle(&mut rng);
    for p in [&mm, &var] {
        let direct: Vec<Vec<f64>> = test.iter().map(|r| p.transform(r).unwrap()).collect();
        for &i in &order {
            check(p.transform(&test[i]).unwrap() == direct[i], "replay depends on test order")?;
        }
    }
    within(t, Duration::from_secs(5))?;
    Ok(format!("std err {worst:.1e}, {:.2?}", t.elapsed()))
}

fn headline_config(rounds: usize) -> PipelineConfig {
    PipelineConfig {
        feature: FeatureKind::Cusum,
        norm: NormKind::Variance,
        classifier: ClassifierSpec::Knn { k: 87 },
        adaptive_rounds: rounds,
        folds: 5,
        ..PipelineConfig::default()
    }
}

fn adaptive_headline() -> Outcome {
    let t = Instant::now();
    let spec = SynthSpec {
        duration_s: 7200.0,
        n_true_events: 100,
        n_nuisance_transients: 300,
        seed: 1,
        ..SynthSpec::default()
    };
    let (rec, gt) = synth_recording(&spec).map_err(|e| e.to_string())?;
    let classical = cross_validate(&rec, &gt, &headline_config(0)).map_err(|e| e.to_string())?;
    let adaptive = cross_validate(&rec, &gt, &headline_config(3)).map_err(|e| e.to_string())?;
    let factor = classical.fp as f64 / adaptive.fp.max(1) as f64;
    let detail = format!(
        "classical fp={} recall={:.3}; adaptive 3x fp={} recall={:.3}; reduction {factor:.2}x (need >= 4), {:.1?}",
        classical.fp,
        classical.recall,
        adaptive.fp,
        adaptive.recall,
        t.elapsed()
    );
    check(factor >= 4.0 && adaptive.recall >= 0.85, detail.clone())?;
    within(t, Duration::from_secs(30 * 60))?;
    Ok(detail)
}

fn scoring_identity() -> Outcome {
    let s = score_counts(1175, 260, 402);
    check((s.fscore - 0.780).abs() <= 1e-3, format!("F = {}", s.fscore))?;
    Ok(format!("P={:.3} R={:.3} F={:.4}", s.precision, s.recall, s.fscore))
}

fn blued() -> Option<Outcome> {
    let dir = PathBuf::from(std::env::var_os("EVDET_BLUED_DIR")?);
    Some((|| {
        let t = Instant::now();
        let manifest = dir.join("recording.json");
        let rec = load_recording(&dir.join("recording.f32"), &manifest).map_err(|e| e.to_string())?;
        let gt = load_ground_truth(&dir.join("ground_truth.csv")).map_err(|e| e.to_string())?;
        let cfg = PipelineConfig {
            feature: FeatureKind::DeltaCusum,
            norm: NormKind::MinMax,
            classifier: ClassifierSpec::Knn { k: 137 },
            adaptive_rounds: 1,
            folds: 5,
            ..PipelineConfig::default()
        };
        let r = cross_validate(&rec, &gt, &cfg).map_err(|e| e.to_string())?;
        let detail = format!("tp={} fp={} fn={} F={:.3}, {:.1?}", r.tp, r.fp, r.fn_, r.fscore, t.elapsed());
        check(r.fscore >= 0.70, detail.clone())?;
        Ok(detail)
    })())
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

fn determinism() -> Outcome {
    let spec = SynthSpec {
        duration_s: 1800.0,
        n_true_events: 25,
        n_nuisance_transients: 75,
        seed: 5,
        ..SynthSpec::default()
    };
    let run = || -> Result<String, String> {
        let (rec, gt) = synth_recording(&spec).map_err(|e| e.to_string())?;
        let knn = PipelineConfig {
            classifier: ClassifierSpec::Knn { k: 5 },
            adaptive_rounds: 2,
            ..PipelineConfig::default()
        };
        let svm = PipelineConfig {
            feature: FeatureKind::SpectralFlatness,
            norm: NormKind::MinMax,
            classifier: ClassifierSpec::SvmGrid {
                c_grid: vec![1.0, 128.0],
                gamma_grid: vec![0.0078125, 0.5],
                folds: 3,
            },
            ..PipelineConfig::default()
        };
        let report = cross_validate(&rec, &gt, &knn).map_err(|e| e.to_string())?;
        let model = train_on_recording(&rec, &gt, &svm).map_err(|e| e.to_string())?.model;
        Ok(serde_json::to_string(&report).unwrap() + &model.to_json().map_err(|e| e.to_string())?)
    };
    let a = in_pool(1, run)?;
    let b = in_pool(1, run)?;
    let c = in_pool(4, run)?;
    check(a == b, "two single-thread runs differ")?;
    check(a == c, "1 vs 4 worker threads differ")?;
    Ok(format!("{} report bytes identical across runs and thread counts", a.len()))
}

fn main() {
    let criteria: Vec<(&str, Box<dyn Fn() -> Option<Outcome>>)> = vec![
        ("feature oracles", Box::new(|| Some(feature_oracles()))),
        ("classifier oracles", Box::new(|| Some(classifier_oracles()))),
        ("normalization", Box::new(|| Some(normalization()))),
        ("adaptive training headline", Box::new(|| Some(adaptive_headline()))),
        ("scoring identity", Box::new(|| Some(scoring_identity()))),
        ("BLUED phase B replication (optional)", Box::new(blued)),
        ("determinism", Box::new(|| Some(determinism()))),
    ];
    let mut failed = 0;
    for (name, f) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Some(Err(format!("panicked: {msg}")))
        });
        match outcome {
            Some(Ok(detail)) => println!("PASS  {name}: {detail}"),
            Some(Err(detail)) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
            None => println!("SKIP  {name}: EVDET_BLUED_DIR not set"),
        }
    }
    println!("acceptance: {} criteria, {failed} failed", criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
