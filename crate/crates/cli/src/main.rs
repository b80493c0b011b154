mod commands;
mod config;
mod failure;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{pick_path, ConfigFile, PipelineFlags, SynthFlags};
use failure::Failure;

/// Supervised appliance event detection on mains voltage/current recordings.
///
/// Exit codes: 0 success, 2 usage or config error, 3 bad input data,
/// 4 runtime failure.
#[derive(Parser)]
#[command(name = "evdet", version)]
struct Cli {
    /// Worker threads for parallel stages (default: one per core)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic recording with ground truth
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: SynthFlags,
    },
    /// Train a model on a recording and its labels
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: PipelineFlags,
    },
    /// Run a trained model over a recording
    Detect {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: PipelineFlags,
    },
    /// Score a detections CSV against the ground truth
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: PipelineFlags,
    },
    /// Time-block cross-validation of the whole pipeline
    Xval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: PipelineFlags,
    },
    /// Serve the annotation HTTP interface
    Serve {
        #[arg(long)]
        data: PathBuf,
        /// Append-only annotation log
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Write the labels of an annotation log as ground truth CSV
    ExportAnnotations {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn echo(file: &ConfigFile, cfg: &evdet_core::pipeline::PipelineConfig) -> ConfigFile {
    ConfigFile {
        pipeline: Some(cfg.clone()),
        synth: None,
        ..file.clone()
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    match cli.command {
        Command::Synth { out, config, flags } => {
            let file = ConfigFile::load(config.as_deref())?;
            commands::synth(&flags.apply(file.synth)?, &out)
        }
        Command::Train { data, out, config, flags } => {
            let file = ConfigFile::load(config.as_deref())?;
            let data = pick_path(&data, &file.data, "data")?;
            let cfg = flags.apply(file.pipeline.clone())?;
            let echoed = ConfigFile {
                data: Some(data.clone()),
                ..echo(&file, &cfg)
            };
            commands::train(&echoed, &data, &cfg, &out)
        }
        Command::Detect {
            data,
            model,
            out,
            config,
            flags,
        } => {
            let file = ConfigFile::load(config.as_deref())?;
            let data = pick_path(&data, &file.data, "data")?;
            let model = pick_path(&model, &file.model, "model")?;
            let cfg = flags.apply(file.pipeline.clone())?;
            let echoed = ConfigFile {
                data: Some(data.clone()),
                model: Some(model.clone()),
                ..echo(&file, &cfg)
            };
            commands::detect_cmd(&echoed, &data, &model, &cfg, &out)
        }
        Command::Eval {
            data,
            detections,
            out,
            config,
            flags,
        } => {
            let file = ConfigFile::load(config.as_deref())?;
            let data = pick_path(&data, &file.data, "data")?;
            let detections = pick_path(&detections, &file.detections, "detections")?;
            let cfg = flags.apply(file.pipeline.clone())?;
            let echoed = ConfigFile {
                data: Some(data.clone()),
                detections: Some(detections.clone()),
                ..echo(&file, &cfg)
            };
            commands::eval(&echoed, &data, &detections, &cfg, &out)
        }
        Command::Xval { data, out, config, flags } => {
            let file = ConfigFile::load(config.as_deref())?;
            let data = pick_path(&data, &file.data, "data")?;
            let cfg = flags.apply(file.pipeline.clone())?;
            let echoed = ConfigFile {
                data: Some(data.clone()),
                ..echo(&file, &cfg)
            };
            commands::xval(&echoed, &data, &cfg, &out)
        }
        Command::Serve { data, store, addr } => commands::serve(&data, &store, addr),
        Command::ExportAnnotations { store, out } => commands::export_annotations(&store, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("evdet: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
