//! Binary event / non-event classifiers and the model file.

mod grid;
mod knn;
mod svm;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use grid::{default_c_grid, default_gamma_grid, grid_search, stratified_folds, GridCell, GridResult};
pub use knn::KnnModel;
pub use svm::{svm_train, svm_train_traced, SvmFit, SvmModel, SvmParams};

use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::normalize::{NormKind, NormalizationParams};

pub const MODEL_FORMAT: &str = "evdet-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Event,
    NonEvent,
}

impl Label {
    /// +1 for events, -1 otherwise.
    pub fn sign(self) -> f64 {
        match self {
            Label::Event => 1.0,
            Label::NonEvent => -1.0,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Event => Label::NonEvent,
            Label::NonEvent => Label::Event,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Origin {
    GroundTruthEvent,
    RandomNonEvent,
    AdaptiveFp,
}

/// A training window and where it came from. `vector` holds the raw
/// (un-normalized) feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub vector: Vec<f64>,
    pub label: Label,
    pub origin: Origin,
    pub sample_index: u64,
    pub center_s: f64,
}

/// Which classifier to fit and with which hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum ClassifierSpec {
    Knn {
        k: usize,
    },
    Svm {
        c: f64,
        gamma: f64,
    },
    /// SVM with C and gamma chosen by cross-validated grid search.
    SvmGrid {
        c_grid: Vec<f64>,
        gamma_grid: Vec<f64>,
        folds: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum Classifier {
    Knn(KnnModel),
    Svm(SvmModel),
}

/// Everything needed to classify a raw feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub feature: FeatureKind,
    pub fs: u32,
    pub mains_hz: u32,
    pub window_s: f64,
    pub normalization: NormalizationParams,
    pub classifier: Classifier,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: TrainedModel,
}

impl TrainedModel {
    pub fn dim(&self) -> usize {
        self.normalization.dim()
    }

    /// Classifies an already-normalized vector.
    pub fn predict_normalized(&self, v: &[f64]) -> Result<Label> {
        match &self.classifier {
            Classifier::Knn(m) => m.predict(v),
            Classifier::Svm(m) => m.predict(v),
        }
    }

    /// Applies the stored normalization, then classifies.
    pub fn predict(&self, raw: &[f64]) -> Result<Label> {
        self.predict_normalized(&self.normalization.transform(raw)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::ModelFormat(format!("unexpected format {:?}", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported version {} (expected {MODEL_VERSION})",
                file.version
            )));
        }
        Ok(file.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Feature configuration a model is trained for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSetup {
    pub feature: FeatureKind,
    pub fs: u32,
    pub mains_hz: u32,
    pub window_s: f64,
}

/// Fits normalization on `samples`, then the classifier on the normalized
/// rows.
pub fn train_model(
    samples: &[LabeledSample],
    norm: NormKind,
    spec: &ClassifierSpec,
    setup: FeatureSetup,
) -> Result<TrainedModel> {
    let events = samples.iter().filter(|s| s.label == Label::Event).count();
    if events == 0 || events == samples.len() {
        return Err(Error::SingleClass {
            events,
            non_events: samples.len() - events,
        });
    }
    let raw: Vec<&[f64]> = samples.iter().map(|s| s.vector.as_slice()).collect();
    let normalization = NormalizationParams::fit(&raw, norm)?;
    let rows = raw
        .iter()
        .map(|r| normalization.transform(r))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let classifier = match spec {
        ClassifierSpec::Knn { k } => {
            let idx: Vec<u64> = samples.iter().map(|s| s.sample_index).collect();
            Classifier::Knn(KnnModel::fit(&rows, &labels, &idx, *k)?)
        }
        ClassifierSpec::Svm { c, gamma } => {
            Classifier::Svm(svm_train(&rows, &labels, &SvmParams::new(*c, *gamma))?)
        }
        ClassifierSpec::SvmGrid {
            c_grid,
            gamma_grid,
            folds,
        } => {
            let best = grid_search(&rows, &labels, c_grid, gamma_grid, *folds, &SvmParams::default())?;
            Classifier::Svm(svm_train(&rows, &labels, &SvmParams::new(best.c, best.gamma))?)
        }
    };
    Ok(TrainedModel {
        feature: setup.feature,
        fs: setup.fs,
        mains_hz: setup.mains_hz,
        window_s: setup.window_s,
        normalization,
        classifier,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples() -> Vec<LabeledSample> {
        (0..12)
            .map(|i| {
                let event = i % 3 == 0;
                LabeledSample {
                    vector: vec![i as f64 * 0.1, if event { 5.0 } else { -5.0 } + i as f64 * 0.01],
                    label: if event { Label::Event } else { Label::NonEvent },
                    origin: if event { Origin::GroundTruthEvent } else { Origin::RandomNonEvent },
                    sample_index: i,
                    center_s: i as f64 * 20.0,
                }
            })
            .collect()
    }

    fn setup() -> FeatureSetup {
        FeatureSetup {
            feature: FeatureKind::Cusum,
            fs: 3200,
            mains_hz: 50,
            window_s: 10.0,
        }
    }

    #[test]
    fn model_file_round_trips_bit_exactly() {
        for spec in [
            ClassifierSpec::Knn { k: 3 },
            ClassifierSpec::Svm { c: 128.0, gamma: 0.0078125 },
        ] {
            for norm in [NormKind::None, NormKind::MinMax, NormKind::Variance] {
                let m = train_model(&samples(), norm, &spec, setup()).unwrap();
                let back = TrainedModel::from_json(&m.to_json().unwrap()).unwrap();
                assert_eq!(back, m);
                assert_eq!(back.to_json().unwrap(), m.to_json().unwrap());
            }
        }
    }

    #[test]
    fn model_file_rejects_foreign_versions() {
        let m = train_model(&samples(), NormKind::None, &ClassifierSpec::Knn { k: 1 }, setup()).unwrap();
        let text = m.to_json().unwrap().replace("\"version\":1", "\"version\":9");
        assert!(matches!(TrainedModel::from_json(&text), Err(Error::ModelFormat(_))));
        let text = m.to_json().unwrap().replace(MODEL_FORMAT, "other");
        assert!(TrainedModel::from_json(&text).is_err());
    }

    #[test]
    fn predict_applies_stored_normalization() {
        for spec in [ClassifierSpec::Knn { k: 3 }, ClassifierSpec::Svm { c: 10.0, gamma: 0.5 }] {
            let m = train_model(&samples(), NormKind::Variance, &spec, setup()).unwrap();
            for s in samples() {
                let inside = m.predict(&s.vector).unwrap();
                let outside = m
                    .predict_normalized(&m.normalization.transform(&s.vector).unwrap())
                    .unwrap();
                assert_eq!(inside, outside);
                assert_eq!(inside, s.label);
            }
        }
    }

    #[test]
    fn single_class_training_set_is_rejected() {
        let only_events: Vec<_> = samples().into_iter().filter(|s| s.label == Label::Event).collect();
        assert!(matches!(
            train_model(&only_events, NormKind::None, &ClassifierSpec::Knn { k: 1 }, setup()),
            Err(Error::SingleClass { .. })
        ));
    }

    #[test]
    fn spec_serde_shape() {
        let json = serde_json::to_string(&ClassifierSpec::Knn { k: 137 }).unwrap();
        assert_eq!(json, r#"{"variant":"knn","k":137}"#);
        let spec: ClassifierSpec = serde_json::from_str(r#"{"variant":"svm","c":128,"gamma":512}"#).unwrap();
        assert_eq!(spec, ClassifierSpec::Svm { c: 128.0, gamma: 512.0 });
    }
}
