//! End-to-end orchestration: annotated frames in, per-track features,
//! classifications and alerts out.

mod feature_log;
mod model;
mod monitor;
mod plot;
mod training;

pub use feature_log::{read_feature_log, read_feature_table, read_projected_samples, FeatureLogRow, FeatureLogWriter, FEATURE_LOG_HEADER};
pub use model::{EfficiencyModel, ModelMetadata, MODEL_SCHEMA_VERSION};
pub use monitor::{verify_alert, Alert, FrameStatus, Monitor, MonitorConfig};
pub use plot::emit_scatter_plot;
pub use training::{
    extract_samples, label_samples, run_training, ExtractedSample, LabelingMode, TrainingOptions,
    TrainingOutcome,
};

use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::classify::ClassifyError;
use crate::features::{
    associate_smoke, channel_means, flame_angle, rgb_index, smoke_flame_ratio, FeatureError,
    FeatureVector, RgbIndexParams,
};
use crate::geometry::{BBox, Frame, Mask, ObjectClass};
use crate::ingest::{read_annotation_stream, FrameAnnotation, IngestError};
use crate::labeling::LlmError;
use crate::segment::{segment_box, SegmenterConfig};
use crate::simulator::{frame_file_name, FrameDirMeta, Scene, SimError};
use crate::stats::StatsError;
use crate::tracker::{default_kalman_params, SortParams, SortTracker, TrackerError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("frame {frame}: {source}")]
    Tracker { frame: u64, source: TrackerError },
    #[error("frame {frame}: {message}")]
    Frame { frame: u64, message: String },
    #[error("training data: {0}")]
    TrainingData(String),
    #[error("model schema version {found} is not supported (expected {expected})")]
    ModelVersion { found: u64, expected: u64 },
    #[error("{context}: {message}")]
    Parse { context: String, message: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Simulator(#[from] SimError),
    #[error("labeling service: {0}")]
    Llm(#[from] LlmError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),
}

impl PipelineError {
    /// Process exit status: 1 usage, 2 data, 3 external service.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Llm(LlmError::MissingKey | LlmError::InvalidConfig(_)) => 1,
            PipelineError::Llm(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// A directory of raw RGB frames as written by the simulator.
#[derive(Debug, Clone)]
pub struct FrameDir {
    dir: PathBuf,
    meta: FrameDirMeta,
}

impl FrameDir {
    pub fn open(dir: &Path) -> Result<Self, PipelineError> {
        let meta_path = dir.join("meta.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| PipelineError::io(&meta_path, e))?;
        let meta = serde_json::from_str(&text).map_err(|e| PipelineError::Parse {
            context: meta_path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
        })
    }

    pub fn meta(&self) -> &FrameDirMeta {
        &self.meta
    }

    pub fn load(&self, index: u64) -> Result<Frame, PipelineError> {
        let path = self.dir.join(frame_file_name(index));
        let pixels = fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
        Frame::new(
            index,
            index as f64 / self.meta.fps,
            self.meta.width,
            self.meta.height,
            pixels,
        )
        .map_err(|e| PipelineError::Frame {
            frame: index,
            message: e.to_string(),
        })
    }
}

pub type AnnotatedFrame = (Frame, FrameAnnotation);

/// Pairs each annotation line with its raw frame, lazily and in order.
pub fn annotated_frames<R: BufRead>(
    annotations: R,
    frames: FrameDir,
) -> impl Iterator<Item = Result<AnnotatedFrame, PipelineError>> {
    read_annotation_stream(annotations).map(move |ann| {
        let ann = ann?;
        let frame = frames.load(ann.frame_index)?;
        Ok((frame, ann))
    })
}

/// Simulator output as an annotated-frame stream.
pub fn simulated_frames(scene: Scene) -> impl Iterator<Item = Result<AnnotatedFrame, PipelineError>> {
    scene.map(|r| Ok((r.frame, r.annotation)))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProcessorConfig {
    pub sort: SortParams,
    pub segmenter: SegmenterConfig,
    pub rgb: RgbIndexParams,
}

/// One reported flame track in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlameObservation {
    pub frame: u64,
    pub track_id: u64,
    /// Detector box matched to the track this frame.
    pub bbox: BBox,
    pub features: Result<FeatureVector, FeatureError>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProcessedFrame {
    pub frame: u64,
    /// Sorted by track id.
    pub observations: Vec<FlameObservation>,
    /// Flame tracks retired this frame.
    pub deaths: Vec<u64>,
}

/// Stateful per-frame stage: tracking, region masks, smoke association and
/// feature extraction.
#[derive(Debug, Clone)]
pub struct FrameProcessor {
    cfg: ProcessorConfig,
    flames: SortTracker,
    smoke: SortTracker,
    last_frame: Option<u64>,
}

impl FrameProcessor {
    pub fn new(cfg: ProcessorConfig) -> Result<Self, PipelineError> {
        cfg.segmenter
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.rgb
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let tracker = |class| {
            SortTracker::new(class, cfg.sort, default_kalman_params())
                .map_err(|e| PipelineError::Config(e.to_string()))
        };
        Ok(Self {
            cfg,
            flames: tracker(ObjectClass::Flame)?,
            smoke: tracker(ObjectClass::Smoke)?,
            last_frame: None,
        })
    }

    pub fn process(&mut self, frame: &Frame, ann: &FrameAnnotation) -> Result<ProcessedFrame, PipelineError> {
        let index = ann.frame_index;
        if frame.index != index {
            return Err(PipelineError::Frame {
                frame: index,
                message: format!("raw frame carries index {}", frame.index),
            });
        }
        if let Some(prev) = self.last_frame {
            if index <= prev {
                return Err(PipelineError::Frame {
                    frame: index,
                    message: format!("frame follows {prev}"),
                });
            }
        }
        self.last_frame = Some(index);

        let flame_dets = ann.of_class(ObjectClass::Flame);
        let smoke_dets = ann.of_class(ObjectClass::Smoke);
        let tracker_err = |source| PipelineError::Tracker { frame: index, source };
        let flame_step = self
            .flames
            .step(&flame_dets.iter().map(|(_, d)| *d).collect::<Vec<_>>())
            .map_err(tracker_err)?;
        self.smoke
            .step(&smoke_dets.iter().map(|(_, d)| *d).collect::<Vec<_>>())
            .map_err(tracker_err)?;

        let segmenter = self.cfg.segmenter;
        let regions: Vec<Option<Mask>> = ann
            .detections
            .par_iter()
            .enumerate()
            .map(|(i, d)| {
                if let Some(m) = ann.mask_for(i) {
                    return Some(m.clone());
                }
                match segment_box(frame, &d.bbox, &segmenter) {
                    Ok(s) => {
                        if s.degenerate {
                            log::debug!("frame {index}: detection {i} segmented to its seed only");
                        }
                        Some(s.mask)
                    }
                    Err(e) => {
                        log::warn!("frame {index}: detection {i}: {e}");
                        None
                    }
                }
            })
            .collect();

        let flames: Vec<(u64, BBox)> = flame_dets.iter().map(|(i, d)| (*i as u64, d.bbox)).collect();
        let smoke: Vec<(BBox, u64)> = smoke_dets
            .iter()
            .filter_map(|(i, d)| regions[*i].as_ref().map(|m| (d.bbox, m.area())))
            .collect();
        let assoc = associate_smoke(&flames, &smoke);

        let rgb = self.cfg.rgb;
        let observations: Vec<FlameObservation> = flame_step
            .reported
            .par_iter()
            .map(|snap| {
                let (det_index, det) = flame_dets[snap.detection];
                let features = regions[det_index]
                    .as_ref()
                    .ok_or(FeatureError::EmptyRegion)
                    .and_then(|mask| {
                        let smoke_area = assoc.areas.get(&(det_index as u64)).copied().unwrap_or(0);
                        let ratio = smoke_flame_ratio(smoke_area, mask.area())?;
                        let e = rgb_index(channel_means(frame, mask)?, &rgb)?;
                        let angle = flame_angle(mask)?;
                        Ok(FeatureVector::new(ratio, e, angle))
                    });
                if let Err(e) = &features {
                    log::warn!("frame {index}: flame track {}: {e}", snap.id);
                }
                FlameObservation {
                    frame: index,
                    track_id: snap.id,
                    bbox: det.bbox,
                    features,
                }
            })
            .collect();

        Ok(ProcessedFrame {
            frame: index,
            observations,
            deaths: flame_step.deaths,
        })
    }
}
