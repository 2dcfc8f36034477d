use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{
    EfficiencyModel, FeatureLogRow, FrameProcessor, PipelineError, ProcessedFrame, ProcessorConfig,
};
use crate::classify::Label;
use crate::features::FeatureVector;
use crate::geometry::Frame;
use crate::ingest::FrameAnnotation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    /// Consecutive low frames before a track alerts.
    pub alert_window: u64,
    /// Frames after an alert during which the same track stays silent.
    pub cooldown: u64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            alert_window: 5,
            cooldown: 50,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.alert_window == 0 {
            return Err(PipelineError::Config("alert window must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub track_id: u64,
    pub first_frame: u64,
    pub last_frame: u64,
    pub features: FeatureVector,
    pub pcs: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameStatus {
    pub frame: u64,
    /// One classified row per flame track with usable features.
    pub rows: Vec<FeatureLogRow>,
    pub alerts: Vec<Alert>,
}

#[derive(Debug, Clone, Copy)]
struct Streak {
    first: u64,
    last: u64,
}

/// Classifies every reported flame track per frame and debounces low
/// classifications into alerts. State is per live track only.
///
/// A frame in which a track has no classification (not reported, or its
/// features failed) ends that track's streak.
#[derive(Debug, Clone)]
pub struct Monitor {
    model: EfficiencyModel,
    cfg: MonitorConfig,
    processor: FrameProcessor,
    streaks: HashMap<u64, Streak>,
    silent_until: HashMap<u64, u64>,
}

impl Monitor {
    pub fn new(model: EfficiencyModel, cfg: MonitorConfig, processor: ProcessorConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        Ok(Self {
            model,
            cfg,
            processor: FrameProcessor::new(processor)?,
            streaks: HashMap::new(),
            silent_until: HashMap::new(),
        })
    }

    pub fn process(&mut self, frame: &Frame, ann: &FrameAnnotation) -> Result<FrameStatus, PipelineError> {
        let processed = self.processor.process(frame, ann)?;
        Ok(self.classify(processed))
    }

    fn classify(&mut self, processed: ProcessedFrame) -> FrameStatus {
        let f = processed.frame;
        let mut status = FrameStatus {
            frame: f,
            ..Default::default()
        };
        for obs in processed.observations {
            let Ok(features) = obs.features else {
                self.streaks.remove(&obs.track_id);
                continue;
            };
            let (pcs, label) = self.model.classify(&features);
            status.rows.push(FeatureLogRow {
                frame: f,
                track_id: obs.track_id,
                ratio: features.smoke_flame_ratio,
                e: features.rgb_index,
                angle: features.flame_angle,
                pc1: Some(pcs[0]),
                pc2: Some(pcs[1]),
                label: Some(label),
            });
            if label != Label::Low {
                self.streaks.remove(&obs.track_id);
                continue;
            }
            let streak = self
                .streaks
                .entry(obs.track_id)
                .and_modify(|s| {
                    if s.last + 1 == f {
                        s.last = f;
                    } else {
                        *s = Streak { first: f, last: f };
                    }
                })
                .or_insert(Streak { first: f, last: f });
            let len = streak.last - streak.first + 1;
            let silent = self.silent_until.get(&obs.track_id).is_some_and(|&u| f < u);
            if len >= self.cfg.alert_window && !silent {
                status.alerts.push(Alert {
                    track_id: obs.track_id,
                    first_frame: streak.first,
                    last_frame: f,
                    features,
                    pcs,
                });
                self.streaks.remove(&obs.track_id);
                self.silent_until.insert(obs.track_id, f + self.cfg.cooldown);
            }
        }
        // drop streaks of tracks that went unreported this frame
        self.streaks.retain(|_, s| s.last == f);
        for id in processed.deaths {
            self.streaks.remove(&id);
            self.silent_until.remove(&id);
        }
        status
    }

    /// Number of tracks with live alert state; bounded by concurrent tracks.
    pub fn tracked_state_len(&self) -> usize {
        self.streaks.len() + self.silent_until.len()
    }
}

/// Checks an alert against a feature log: the track has a low row in every
/// frame of the streak, and the streak is at least `alert_window` long.
pub fn verify_alert(alert: &Alert, log: &[FeatureLogRow], alert_window: u64) -> bool {
    if alert.last_frame < alert.first_frame || alert.last_frame - alert.first_frame + 1 < alert_window {
        return false;
    }
    (alert.first_frame..=alert.last_frame).all(|f| {
        log.iter()
            .any(|r| r.frame == f && r.track_id == alert.track_id && r.label == Some(Label::Low))
    })
}
