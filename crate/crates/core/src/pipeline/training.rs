use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::{AnnotatedFrame, EfficiencyModel, FeatureLogRow, FrameProcessor, ModelMetadata, PipelineError, ProcessorConfig};
use crate::classify::{
    compare_classifiers, stratified_split_indices, Comparison, Dataset, Label, LabelSource, LabeledSample,
    TrainConfig,
};
use crate::features::FeatureVector;
use crate::labeling::{llm_label_batch, rule_label, LabelRecord, LlmClientConfig, LlmError, PendingLabel};
use crate::stats::{pca_fit, pca_project, standardize_apply, standardize_fit, standardize_matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractedSample {
    pub frame: u64,
    pub track_id: u64,
    pub features: FeatureVector,
}

/// Runs tracking and feature extraction over a stream and keeps every
/// (frame, flame track) with usable features.
pub fn extract_samples<I>(frames: I, cfg: ProcessorConfig) -> Result<Vec<ExtractedSample>, PipelineError>
where
    I: IntoIterator<Item = Result<AnnotatedFrame, PipelineError>>,
{
    let mut processor = FrameProcessor::new(cfg)?;
    let mut out = Vec::new();
    for item in frames {
        let (frame, ann) = item?;
        let processed = processor.process(&frame, &ann)?;
        out.extend(processed.observations.into_iter().filter_map(|o| {
            o.features.ok().map(|features| ExtractedSample {
                frame: o.frame,
                track_id: o.track_id,
                features,
            })
        }));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum LabelingMode {
    Rule,
    Llm(LlmClientConfig),
}

/// Preliminary labels for review. In LLM mode every exchange is saved under
/// `transcripts` (when given) as `NNNNNN.json`; unparseable replies leave the
/// sample unlabeled, any other service failure aborts.
pub fn label_samples(
    samples: &[ExtractedSample],
    mode: &LabelingMode,
    transcripts: Option<&Path>,
) -> Result<Vec<PendingLabel>, PipelineError> {
    let pending = |s: &ExtractedSample, label, source, transcript| PendingLabel {
        frame: Some(s.frame),
        track_id: Some(s.track_id),
        features: s.features,
        label,
        source,
        transcript,
    };
    let cfg = match mode {
        LabelingMode::Rule => {
            return Ok(samples
                .iter()
                .map(|s| pending(s, Some(rule_label(&s.features)), LabelSource::Rule, None))
                .collect())
        }
        LabelingMode::Llm(cfg) => cfg,
    };
    if cfg.api_key.is_none() {
        return Err(LlmError::MissingKey.into());
    }
    if let Some(dir) = transcripts {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let features: Vec<FeatureVector> = samples.iter().map(|s| s.features).collect();
    let results = llm_label_batch(cfg, &features)?;
    let mut out = Vec::with_capacity(samples.len());
    for (i, (s, r)) in samples.iter().zip(results).enumerate() {
        let transcript = match &r {
            Ok(l) => Some(&l.transcript),
            Err(e) => e.transcript(),
        };
        let path = match (transcripts, transcript) {
            (Some(dir), Some(t)) => {
                let path = dir.join(format!("{i:06}.json"));
                let text = serde_json::to_string_pretty(t).expect("transcript serializes");
                fs::write(&path, text).map_err(|e| PipelineError::io(&path, e))?;
                Some(path.display().to_string())
            }
            _ => None,
        };
        match r {
            Ok(l) => out.push(pending(s, Some(l.label), LabelSource::Llm, path)),
            Err(LlmError::UnparseableReply { .. }) => {
                log::warn!("frame {} track {}: unparseable reply, queued for review", s.frame, s.track_id);
                out.push(pending(s, None, LabelSource::Llm, path));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOptions {
    pub classifier: TrainConfig,
    /// Fraction of each class held out for model selection.
    pub test_fraction: f64,
    pub split_seed: u64,
    pub created_at: String,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        Self {
            classifier: TrainConfig::default(),
            test_fraction: 0.3,
            split_seed: 42,
            created_at: "unspecified".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub model: EfficiencyModel,
    pub comparison: Comparison,
    /// Every input record with its projection, in input order.
    pub samples: Vec<LabeledSample>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// One row per record; records without frame/track use their position
    /// and track 0.
    pub feature_log: Vec<FeatureLogRow>,
}

/// Splits the records, fits standardization and PCA on the training part,
/// trains all four classifiers and keeps the one with the best held-out
/// accuracy (ties: fewest parameters).
pub fn run_training(records: &[LabelRecord], opts: &TrainingOptions) -> Result<TrainingOutcome, PipelineError> {
    if !(opts.test_fraction > 0.0 && opts.test_fraction < 1.0) {
        return Err(PipelineError::Config(format!(
            "test fraction {} not in (0, 1)",
            opts.test_fraction
        )));
    }
    if records.len() < 3 {
        return Err(PipelineError::TrainingData(format!(
            "need at least 3 labeled samples, got {}",
            records.len()
        )));
    }
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    for l in [Label::High, Label::Low] {
        if !labels.contains(&l) {
            return Err(PipelineError::TrainingData(format!("no {} samples", l.as_str())));
        }
    }
    let (train_idx, test_idx) = stratified_split_indices(&labels, opts.test_fraction, opts.split_seed);
    if test_idx.is_empty() {
        return Err(PipelineError::TrainingData("too few samples to hold any out".into()));
    }

    let feats: Vec<[f64; 3]> = records.iter().map(|r| r.features.as_array()).collect();
    let train_matrix = DMatrix::from_fn(train_idx.len(), 3, |r, c| feats[train_idx[r]][c]);
    let standardization = standardize_fit(&train_matrix)?;
    let pca = pca_fit(&standardize_matrix(&train_matrix, &standardization))?;
    let pcs: Vec<[f64; 2]> = feats
        .iter()
        .map(|f| pca_project(&standardize_apply(f, &standardization), &pca))
        .collect();

    let subset = |idx: &[usize]| {
        Dataset::new(
            idx.iter().map(|&i| pcs[i]).collect(),
            idx.iter().map(|&i| labels[i]).collect(),
        )
    };
    let comparison = compare_classifiers(&subset(&train_idx), &subset(&test_idx), &opts.classifier)?;
    let model = EfficiencyModel {
        metadata: ModelMetadata::new(opts.created_at.clone(), train_idx.len()),
        standardization,
        pca,
        classifier: comparison.models[comparison.selected].clone(),
    };

    let samples = records
        .iter()
        .zip(&pcs)
        .map(|(r, p)| LabeledSample {
            features: r.features,
            pcs: *p,
            label: r.label,
            source: r.source,
        })
        .collect();
    let feature_log = records
        .iter()
        .zip(&pcs)
        .enumerate()
        .map(|(i, (r, p))| FeatureLogRow {
            frame: r.frame.unwrap_or(i as u64),
            track_id: r.track_id.unwrap_or(0),
            ratio: r.features.smoke_flame_ratio,
            e: r.features.rgb_index,
            angle: r.features.flame_angle,
            pc1: Some(p[0]),
            pc2: Some(p[1]),
            label: Some(r.label),
        })
        .collect();
    Ok(TrainingOutcome {
        model,
        comparison,
        samples,
        train_indices: train_idx,
        test_indices: test_idx,
        feature_log,
    })
}
