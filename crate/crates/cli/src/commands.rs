use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use evdet_annotate::{AnnotationStore, AppState, Dataset};
use evdet_core::classify::{Label, TrainedModel};
use evdet_core::detector::{detect, store_detections, DETECTIONS_HEADER};
use evdet_core::eval::{cross_validate, match_detections, EvalReport};
use evdet_core::pipeline::PipelineConfig;
use evdet_core::signal::{
    load_ground_truth, load_recording, payload_path_for, store_recording, synth_recording, GroundTruth, Manifest,
    RawRecording,
};
use evdet_core::training::{train_on_recording, write_round_stats, RoundStats, ROUND_STATS_HEADER};
use serde::Serialize;

use crate::config::ConfigFile;
use crate::failure::{Context, Failure};

pub const RECORDING: &str = "recording";
pub const GROUND_TRUTH: &str = "ground_truth.csv";

fn manifest_in(dir: &Path) -> PathBuf {
    dir.join(format!("{RECORDING}.json"))
}

fn load_rec(dir: &Path) -> Result<RawRecording, Failure> {
    let m = manifest_in(dir);
    load_recording(&payload_path_for(&m), &m).data(format!("loading recording from {}", dir.display()))
}

/// Labels of `dir`'s ground truth that belong to `channel_id`.
fn load_labels(dir: &Path, channel_id: &str) -> Result<GroundTruth, Failure> {
    let gt = load_ground_truth(&dir.join(GROUND_TRUTH)).data("loading ground truth")?;
    let mine: Vec<_> = gt.labels().iter().filter(|l| l.channel_id == channel_id).cloned().collect();
    if mine.is_empty() && !gt.is_empty() {
        return Err(Failure::Data(anyhow::anyhow!(
            "ground truth holds {} labels but none for channel {channel_id:?}",
            gt.len()
        )));
    }
    GroundTruth::new(mine).data("filtering ground truth")
}

fn create_out(out: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(out).runtime(format!("creating {}", out.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).runtime(format!("writing {}", path.display()))
}

/// Writes `report.json` and the reloadable `config.toml` echo.
fn write_report<T: Serialize>(out: &Path, config: &ConfigFile, report: &T) -> Result<(), Failure> {
    #[derive(Serialize)]
    struct Wrapped<'a, T> {
        config: &'a ConfigFile,
        #[serde(flatten)]
        report: &'a T,
    }
    let mut json = serde_json::to_string_pretty(&Wrapped { config, report }).runtime("encoding report")?;
    json.push('\n');
    write_file(&out.join("report.json"), json.as_bytes())?;
    write_file(&out.join("config.toml"), config.to_toml().as_bytes())
}

pub fn synth(spec: &evdet_core::signal::SynthSpec, out: &Path) -> Result<(), Failure> {
    let (rec, gt) = synth_recording(spec)?;
    create_out(out)?;
    let m = manifest_in(out);
    store_recording(&rec, &payload_path_for(&m), &m)?;
    gt.store(&out.join(GROUND_TRUTH))?;
    eprintln!("wrote {:.0} s recording with {} labels to {}", rec.duration_s(), gt.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainReport<'a> {
    command: &'static str,
    channel_id: &'a str,
    events: usize,
    non_events: usize,
    final_round: usize,
    rounds: &'a [RoundStats],
}

pub fn train(config: &ConfigFile, data: &Path, cfg: &PipelineConfig, out: &Path) -> Result<(), Failure> {
    let rec = load_rec(data)?;
    let gt = load_labels(data, &rec.channel_id)?;
    let outcome = train_on_recording(&rec, &gt, cfg)?;
    create_out(out)?;
    outcome.model.save(&out.join("model.json"))?;
    let mut csv = Vec::new();
    write_round_stats(&outcome.stats, &mut csv).runtime("encoding round stats")?;
    write_file(&out.join("rounds.csv"), &csv)?;
    write_report(
        out,
        config,
        &TrainReport {
            command: "train",
            channel_id: &rec.channel_id,
            events: outcome.set.count(Label::Event),
            non_events: outcome.set.count(Label::NonEvent),
            final_round: outcome.set.round,
            rounds: &outcome.stats,
        },
    )?;
    eprintln!(
        "trained on {} events and {} non-events",
        outcome.set.count(Label::Event),
        outcome.set.count(Label::NonEvent)
    );
    Ok(())
}

pub fn detect_cmd(config: &ConfigFile, data: &Path, model: &Path, cfg: &PipelineConfig, out: &Path) -> Result<(), Failure> {
    let model = TrainedModel::load(model).data(format!("loading model {}", model.display()))?;
    let rec = load_rec(data)?;
    let dets = detect(&rec, &model, &cfg.detector)?;
    create_out(out)?;
    store_detections(&dets, &out.join("detections.csv"))?;

    #[derive(Serialize)]
    struct DetectReport<'a> {
        command: &'static str,
        channel_id: &'a str,
        detections: usize,
    }
    write_report(
        out,
        config,
        &DetectReport {
            command: "detect",
            channel_id: &rec.channel_id,
            detections: dets.len(),
        },
    )?;
    eprintln!("{} detections", dets.len());
    Ok(())
}

/// Event times from the first column of a detections CSV.
fn read_detection_times(path: &Path) -> Result<Vec<f64>, Failure> {
    let text = std::fs::read_to_string(path).data(format!("reading {}", path.display()))?;
    let bad = |line: usize, m: String| Failure::Data(anyhow::anyhow!("{}, line {line}: {m}", path.display()));
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header.split(',').next() != Some(DETECTIONS_HEADER[0]) {
        return Err(bad(1, format!("expected a {:?} column first", DETECTIONS_HEADER[0])));
    }
    let mut times = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let field = line.split(',').next().unwrap_or_default();
        let t: f64 = field.trim().parse().map_err(|e| bad(i + 2, format!("{field:?}: {e}")))?;
        if !t.is_finite() {
            return Err(bad(i + 2, format!("time {t} is not finite")));
        }
        times.push(t);
    }
    times.sort_by(f64::total_cmp);
    Ok(times)
}

#[derive(Serialize)]
struct EvalOut<'a> {
    command: &'static str,
    channel_id: &'a str,
    #[serde(flatten)]
    report: &'a EvalReport,
}

fn write_eval(config: &ConfigFile, out: &Path, command: &'static str, channel_id: &str, report: &EvalReport) -> Result<(), Failure> {
    create_out(out)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv).runtime("encoding summary")?;
    write_file(&out.join("summary.csv"), &csv)?;
    write_report(
        out,
        config,
        &EvalOut {
            command,
            channel_id,
            report,
        },
    )?;
    eprintln!(
        "tp={} fp={} fn={} precision={:.3} recall={:.3} fscore={:.3}",
        report.tp, report.fp, report.fn_, report.precision, report.recall, report.fscore
    );
    Ok(())
}

pub fn eval(config: &ConfigFile, data: &Path, detections: &Path, cfg: &PipelineConfig, out: &Path) -> Result<(), Failure> {
    let m = manifest_in(data);
    let manifest = Manifest::read(&m).data(format!("reading {}", m.display()))?;
    let gt = load_labels(data, &manifest.channel_id)?;
    let times = read_detection_times(detections)?;
    let report = EvalReport::single(&match_detections(&times, &gt.times(), cfg.detector.match_tol_s));
    write_eval(config, out, "eval", &manifest.channel_id, &report)
}

pub fn xval(config: &ConfigFile, data: &Path, cfg: &PipelineConfig, out: &Path) -> Result<(), Failure> {
    let rec = load_rec(data)?;
    let gt = load_labels(data, &rec.channel_id)?;
    let report = cross_validate(&rec, &gt, cfg)?;
    write_eval(config, out, "xval", &rec.channel_id, &report)?;
    let mut csv = String::from("fold,");
    csv.push_str(&ROUND_STATS_HEADER.join(","));
    csv.push('\n');
    for f in &report.folds {
        for r in &f.rounds {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                f.fold, r.round, r.train_tp, r.train_fp, r.set_size_event, r.set_size_nonevent
            ));
        }
    }
    write_file(&out.join("rounds.csv"), csv.as_bytes())
}

pub fn export_annotations(store: &Path, out: &Path) -> Result<(), Failure> {
    let gt = AnnotationStore::read_ground_truth(store).data("reading annotation store")?;
    create_out(out)?;
    gt.store(&out.join(GROUND_TRUTH))?;
    eprintln!("exported {} labels", gt.len());
    Ok(())
}

pub fn serve(data: &Path, store: &Path, addr: SocketAddr) -> Result<(), Failure> {
    let dataset = Dataset::load_dir(data).data(format!("loading dataset {}", data.display()))?;
    let store = AnnotationStore::open(store).runtime("opening annotation store")?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .runtime("starting async runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.runtime(format!("binding {addr}"))?;
        let local = listener.local_addr().runtime("reading bound address")?;
        println!("listening on http://{local}");
        std::io::stdout().flush().ok();
        let shutdown = async {
            tokio::signal::ctrl_c().await.ok();
        };
        evdet_annotate::serve(listener, AppState::new(dataset, store), shutdown)
            .await
            .runtime("serving")
    })
}
