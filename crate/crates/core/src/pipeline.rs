//! Experiment configuration shared by training, detection and evaluation.

use serde::{Deserialize, Serialize};

use crate::classify::ClassifierSpec;
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::normalize::NormKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub feature: FeatureKind,
    pub norm: NormKind,
    pub classifier: ClassifierSpec,
    pub adaptive_rounds: usize,
    /// Random non-event windows drawn per ground-truth event.
    pub non_event_ratio: f64,
    pub folds: usize,
    pub detector: DetectorConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            feature: FeatureKind::Cusum,
            norm: NormKind::Variance,
            classifier: ClassifierSpec::Knn { k: 87 },
            adaptive_rounds: 0,
            non_event_ratio: 4.0,
            folds: 5,
            detector: DetectorConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        if !(self.non_event_ratio > 0.0 && self.non_event_ratio.is_finite()) {
            return Err(Error::InvalidInput("non_event_ratio must be positive".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidInput("folds must be at least 2".into()));
        }
        match &self.classifier {
            ClassifierSpec::Knn { k } if *k == 0 => Err(Error::InvalidInput("classifier.k must be at least 1".into())),
            ClassifierSpec::Svm { c, gamma } if !(*c > 0.0 && *gamma > 0.0) => {
                Err(Error::InvalidInput("classifier.c and classifier.gamma must be positive".into()))
            }
            ClassifierSpec::SvmGrid { c_grid, gamma_grid, folds } => {
                if c_grid.is_empty() || gamma_grid.is_empty() {
                    Err(Error::InvalidInput("classifier grids must be non-empty".into()))
                } else if c_grid.iter().chain(gamma_grid).any(|v| !(*v > 0.0)) {
                    Err(Error::InvalidInput("classifier grid values must be positive".into()))
                } else if *folds < 2 {
                    Err(Error::InvalidInput("classifier.folds must be at least 2".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let back: PipelineConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c: PipelineConfig =
            serde_json::from_str(r#"{"feature":"delta-cusum","norm":"minmax","detector":{"step_periods":15}}"#).unwrap();
        assert_eq!(c.feature, FeatureKind::DeltaCusum);
        assert_eq!(c.norm, NormKind::MinMax);
        assert_eq!(c.detector.step_periods, 15);
        assert_eq!(c.detector.merge_gap_s, 5.0);
        assert_eq!(c.folds, 5);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let bad = [
            PipelineConfig { folds: 1, ..Default::default() },
            PipelineConfig { non_event_ratio: 0.0, ..Default::default() },
            PipelineConfig { classifier: ClassifierSpec::Knn { k: 0 }, ..Default::default() },
            PipelineConfig { classifier: ClassifierSpec::Svm { c: -1.0, gamma: 1.0 }, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"feeture":"cusum"}"#).is_err());
    }
}
