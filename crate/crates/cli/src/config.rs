//! Config file, command-line overrides and the echoed effective config.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use evdet_core::classify::{default_c_grid, default_gamma_grid, ClassifierSpec};
use evdet_core::features::FeatureKind;
use evdet_core::normalize::NormKind;
use evdet_core::pipeline::PipelineConfig;
use evdet_core::signal::SynthSpec;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

/// Contents of a `--config` TOML file. Every output directory gets the
/// effective version back as `config.toml`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detections: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineConfig>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to toml")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClfKind {
    Knn,
    Svm,
    SvmGrid,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PipelineFlags {
    /// current, delta-current, admittance, spf, cusum or delta-cusum
    #[arg(long)]
    pub feature: Option<FeatureKind>,
    /// none, minmax or variance
    #[arg(long)]
    pub norm: Option<NormKind>,
    #[arg(long, value_enum)]
    pub clf: Option<ClfKind>,
    /// KNN neighbour count
    #[arg(long)]
    pub k: Option<usize>,
    /// SVM box constraint
    #[arg(long)]
    pub c: Option<f64>,
    /// SVM RBF kernel width
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Adaptive training rounds
    #[arg(long)]
    pub adaptive: Option<usize>,
    /// Random non-event windows per labelled event
    #[arg(long)]
    pub non_event_ratio: Option<f64>,
    /// Cross-validation folds
    #[arg(long)]
    pub folds: Option<usize>,
    /// Detector step in mains periods
    #[arg(long)]
    pub step: Option<usize>,
    /// Matching tolerance in seconds
    #[arg(long)]
    pub tol: Option<f64>,
    /// Seed for non-event sampling
    #[arg(long)]
    pub seed: Option<u64>,
}

impl PipelineFlags {
    /// Applies the flags on top of `base` and validates the result.
    pub fn apply(&self, base: Option<PipelineConfig>) -> Result<PipelineConfig, Failure> {
        let mut cfg = base.unwrap_or_default();
        if let Some(v) = self.feature {
            cfg.feature = v;
        }
        if let Some(v) = self.norm {
            cfg.norm = v;
        }
        if let Some(v) = self.adaptive {
            cfg.adaptive_rounds = v;
        }
        if let Some(v) = self.non_event_ratio {
            cfg.non_event_ratio = v;
        }
        if let Some(v) = self.folds {
            cfg.folds = v;
        }
        if let Some(v) = self.step {
            cfg.detector.step_periods = v;
        }
        if let Some(v) = self.tol {
            cfg.detector.match_tol_s = v;
        }
        if let Some(v) = self.seed {
            cfg.detector.rng_seed = v;
        }
        cfg.classifier = self.classifier(cfg.classifier)?;
        cfg.validate().map_err(|e| Failure::Usage(format!("pipeline: {e}")))?;
        Ok(cfg)
    }

    fn classifier(&self, current: ClassifierSpec) -> Result<ClassifierSpec, Failure> {
        let kind = self.clf.unwrap_or(match current {
            ClassifierSpec::Knn { .. } => ClfKind::Knn,
            ClassifierSpec::Svm { .. } => ClfKind::Svm,
            ClassifierSpec::SvmGrid { .. } => ClfKind::SvmGrid,
        });
        let usage = |m: &str| Err(Failure::Usage(m.to_string()));
        if self.k.is_some() && kind != ClfKind::Knn {
            return usage("--k applies only to --clf knn");
        }
        if (self.c.is_some() || self.gamma.is_some()) && kind != ClfKind::Svm {
            return usage("--c and --gamma apply only to --clf svm");
        }
        Ok(match (kind, current) {
            (ClfKind::Knn, ClassifierSpec::Knn { k }) => ClassifierSpec::Knn { k: self.k.unwrap_or(k) },
            (ClfKind::Knn, _) => ClassifierSpec::Knn { k: self.k.unwrap_or(87) },
            (ClfKind::Svm, cur) => {
                let (c0, g0) = match cur {
                    ClassifierSpec::Svm { c, gamma } => (Some(c), Some(gamma)),
                    _ => (None, None),
                };
                match (self.c.or(c0), self.gamma.or(g0)) {
                    (Some(c), Some(gamma)) => ClassifierSpec::Svm { c, gamma },
                    _ => return usage("--clf svm needs --c and --gamma"),
                }
            }
            (ClfKind::SvmGrid, cur @ ClassifierSpec::SvmGrid { .. }) => cur,
            (ClfKind::SvmGrid, _) => ClassifierSpec::SvmGrid {
                c_grid: default_c_grid(),
                gamma_grid: default_gamma_grid(),
                folds: 5,
            },
        })
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthFlags {
    /// Recording length in seconds
    #[arg(long)]
    pub duration: Option<f64>,
    /// Labelled appliance events
    #[arg(long)]
    pub events: Option<usize>,
    /// Unlabelled switched-mode transients
    #[arg(long)]
    pub nuisance: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sampling rate in Hz
    #[arg(long)]
    pub fs: Option<u32>,
    /// Mains frequency in Hz
    #[arg(long)]
    pub mains_hz: Option<u32>,
    #[arg(long)]
    pub channel: Option<String>,
}

impl SynthFlags {
    pub fn apply(&self, base: Option<SynthSpec>) -> Result<SynthSpec, Failure> {
        let mut s = base.unwrap_or_default();
        if let Some(v) = self.duration {
            s.duration_s = v;
        }
        if let Some(v) = self.events {
            s.n_true_events = v;
        }
        if let Some(v) = self.nuisance {
            s.n_nuisance_transients = v;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.fs {
            s.fs = v;
        }
        if let Some(v) = self.mains_hz {
            s.mains_hz = v;
        }
        if let Some(v) = &self.channel {
            s.channel_id = v.clone();
        }
        s.validate().map_err(|e| Failure::Usage(format!("synth: {e}")))?;
        Ok(s)
    }
}

/// A flag wins over the config file; one of the two must name the path.
pub fn pick_path(flag: &Option<PathBuf>, file: &Option<PathBuf>, name: &str) -> Result<PathBuf, Failure> {
    flag.clone()
        .or_else(|| file.clone())
        .ok_or_else(|| Failure::Usage(format!("--{name} is required (flag or `{name}` in the config file)")))
}
