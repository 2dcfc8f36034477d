use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::classify::{ClassifierModel, Label};
use crate::features::FeatureVector;
use crate::stats::{pca_project, standardize_apply, PcaModel, StandardizationParams, FEATURE_NAMES};

pub const MODEL_SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub schema_version: u64,
    /// Supplied by the caller so that identical training runs give identical files.
    pub created_at: String,
    pub training_samples: usize,
    pub feature_names: Vec<String>,
}

impl ModelMetadata {
    pub fn new(created_at: impl Into<String>, training_samples: usize) -> Self {
        Self {
            schema_version: MODEL_SCHEMA_VERSION,
            created_at: created_at.into(),
            training_samples,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Standardization, PCA projection and classifier, applied in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyModel {
    pub metadata: ModelMetadata,
    pub standardization: StandardizationParams,
    pub pca: PcaModel,
    pub classifier: ClassifierModel,
}

impl EfficiencyModel {
    pub fn project(&self, f: &FeatureVector) -> [f64; 2] {
        let z = standardize_apply(&f.as_array(), &self.standardization);
        pca_project(&z, &self.pca)
    }

    pub fn classify(&self, f: &FeatureVector) -> ([f64; 2], Label) {
        let pcs = self.project(f);
        (pcs, self.classifier.predict(&pcs))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes") + "\n"
    }

    /// Checks the schema version before decoding the rest.
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let parse = |e: serde_json::Error| PipelineError::Parse {
            context: "model file".into(),
            message: e.to_string(),
        };
        let value: serde_json::Value = serde_json::from_str(text).map_err(parse)?;
        let found = value.pointer("/metadata/schema_version").and_then(|v| v.as_u64());
        match found {
            Some(MODEL_SCHEMA_VERSION) => {}
            Some(found) => {
                return Err(PipelineError::ModelVersion {
                    found,
                    expected: MODEL_SCHEMA_VERSION,
                })
            }
            None => {
                return Err(PipelineError::Parse {
                    context: "model file".into(),
                    message: "missing metadata.schema_version".into(),
                })
            }
        }
        let model: EfficiencyModel = serde_json::from_value(value).map_err(parse)?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| {
            Err(PipelineError::Parse {
                context: "model file".into(),
                message: m.to_string(),
            })
        };
        let n = FEATURE_NAMES.len();
        if self.standardization.means.len() != n || self.standardization.stds.len() != n {
            return bad("standardization must cover three features");
        }
        if self.standardization.stds.iter().any(|s| !(*s > 0.0)) {
            return bad("standard deviations must be positive");
        }
        if self.pca.components.len() != 2 || self.pca.components.iter().any(|c| c.len() != n) {
            return bad("PCA must hold two components of length three");
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        fs::write(path, self.to_json()).map_err(|e| PipelineError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_json(&text)
    }
}
