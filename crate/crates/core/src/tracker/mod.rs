//! SORT multi-object tracking: constant-velocity Kalman prediction, IoU cost,
//! Hungarian association.

pub mod hungarian;
pub mod kalman;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, Detection, ObjectClass};
pub use hungarian::{hungarian, Assignment};
pub use kalman::{kalman_predict, kalman_update, KalmanParams, KalmanState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid cost matrix: {0}")]
    InvalidCost(String),
    #[error("tracker for {expected:?} received a {got:?} detection")]
    ClassMismatch {
        expected: ObjectClass,
        got: ObjectClass,
    },
    #[error("invalid tracker parameters: {0}")]
    InvalidParams(String),
}

pub const STATE_DIM: usize = 7;
pub const MEASUREMENT_DIM: usize = 4;

/// State (u, v, s, r, u̇, v̇, ṡ): box center, area, aspect ratio, velocities.
pub type SortState = KalmanState<STATE_DIM>;
pub type SortKalmanParams = KalmanParams<STATE_DIM, MEASUREMENT_DIM>;
pub type Measurement = SVector<f64, MEASUREMENT_DIM>;

/// Multiplier applied to measurement variances for unobserved velocities of a new track.
pub const VELOCITY_VARIANCE_INFLATION: f64 = 1000.0;

/// Constant-velocity model with unit time step and the usual SORT noise levels.
pub fn default_kalman_params() -> SortKalmanParams {
    let mut transition = SMatrix::<f64, 7, 7>::identity();
    transition[(0, 4)] = 1.0;
    transition[(1, 5)] = 1.0;
    transition[(2, 6)] = 1.0;
    let mut observation = SMatrix::<f64, 4, 7>::zeros();
    for i in 0..4 {
        observation[(i, i)] = 1.0;
    }
    let process_noise = SMatrix::<f64, 7, 7>::from_diagonal(&SVector::<f64, 7>::from([
        1.0, 1.0, 1.0, 1.0, 0.01, 0.01, 1e-4,
    ]));
    let measurement_noise =
        SMatrix::<f64, 4, 4>::from_diagonal(&SVector::<f64, 4>::from([1.0, 1.0, 10.0, 10.0]));
    KalmanParams {
        transition,
        control: SMatrix::zeros(),
        control_input: SVector::zeros(),
        process_noise,
        observation,
        measurement_noise,
    }
}

/// Box → (center u, center v, area s, aspect r = w/h).
pub fn bbox_to_measurement(b: &BBox) -> Measurement {
    let c = b.center();
    Measurement::new(c.x, c.y, b.area(), b.width() / b.height())
}

/// Inverse of [`bbox_to_measurement`]; `s` and `r` must be positive.
pub fn measurement_to_bbox(m: &Measurement) -> Option<BBox> {
    let (s, r) = (m[2], m[3]);
    if !(s > 0.0 && r > 0.0) {
        return None;
    }
    let w = (s * r).sqrt();
    let h = s / w;
    BBox::new(m[0] - w / 2.0, m[1] - h / 2.0, m[0] + w / 2.0, m[1] + h / 2.0).ok()
}

/// Fresh state for a detection: zero velocity, covariance from measurement
/// noise with velocity variances inflated.
pub fn initial_state(b: &BBox, kp: &SortKalmanParams) -> SortState {
    let z = bbox_to_measurement(b);
    let mut x = SVector::<f64, 7>::zeros();
    x.fixed_rows_mut::<4>(0).copy_from(&z);
    let r = &kp.measurement_noise;
    let diag = SVector::<f64, 7>::from([
        r[(0, 0)],
        r[(1, 1)],
        r[(2, 2)],
        r[(3, 3)],
        r[(0, 0)] * VELOCITY_VARIANCE_INFLATION,
        r[(1, 1)] * VELOCITY_VARIANCE_INFLATION,
        r[(2, 2)] * VELOCITY_VARIANCE_INFLATION,
    ]);
    KalmanState::new(x, SMatrix::from_diagonal(&diag))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SortParams {
    pub iou_threshold: f64,
    pub max_age: u32,
    pub min_hits: u32,
}

impl Default for SortParams {
    fn default() -> Self {
        Self {
            iou_threshold: 0.3,
            max_age: 5,
            min_hits: 3,
        }
    }
}

impl SortParams {
    pub fn validate(&self) -> Result<(), TrackerError> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(TrackerError::InvalidParams(format!(
                "iou_threshold {} not in (0, 1)",
                self.iou_threshold
            )));
        }
        if self.max_age < 1 || self.min_hits < 1 {
            return Err(TrackerError::InvalidParams(
                "max_age and min_hits must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub state: SortState,
    pub hits: u32,
    pub age: u32,
    pub time_since_update: u32,
    pub class: ObjectClass,
}

impl Track {
    /// Current box estimate; `None` if the state has left the valid region.
    pub fn bbox(&self) -> Option<BBox> {
        measurement_to_bbox(&self.state.x.fixed_rows::<4>(0).into_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackMatch {
    pub track_id: u64,
    pub detection: usize,
}

/// Immutable view of a reported track after one step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSnapshot {
    pub id: u64,
    pub class: ObjectClass,
    pub bbox: Option<BBox>,
    pub hits: u32,
    pub age: u32,
    /// Index of the detection that updated the track this frame.
    pub detection: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutput {
    pub matches: Vec<TrackMatch>,
    pub births: Vec<u64>,
    pub deaths: Vec<u64>,
    /// Tracks updated this frame with at least `min_hits` hits, by id.
    pub reported: Vec<TrackSnapshot>,
    /// Tracks whose predicted scale or aspect had to be clamped.
    pub degenerate_scale: Vec<u64>,
}

/// One SORT step over an explicit track list.
///
/// `next_id` supplies fresh identities and is advanced for every birth.
pub fn sort_step(
    tracks: &[Track],
    detections: &[Detection],
    p: &SortParams,
    kp: &SortKalmanParams,
    next_id: &mut u64,
) -> Result<(Vec<Track>, StepOutput), TrackerError> {
    let mut out = StepOutput::default();

    // (1) predict
    let mut predicted: Vec<Track> = Vec::with_capacity(tracks.len());
    for t in tracks {
        let mut state = t.state.predict(kp);
        let mut clamped = false;
        for i in [2usize, 3] {
            if !(state.x[i] > 0.0) {
                state.x[i] = kalman::SCALE_EPSILON;
                clamped = true;
            }
        }
        if clamped && state.x[6] < 0.0 {
            state.x[6] = 0.0;
        }
        if clamped {
            out.degenerate_scale.push(t.id);
        }
        predicted.push(Track {
            state,
            age: t.age + 1,
            time_since_update: t.time_since_update + 1,
            ..t.clone()
        });
    }

    // (2)-(4) associate
    let boxes: Vec<Option<BBox>> = predicted.iter().map(Track::bbox).collect();
    let cost: Vec<Vec<f64>> = boxes
        .iter()
        .map(|b| {
            detections
                .iter()
                .map(|d| -b.map_or(0.0, |b| b.iou(&d.bbox)))
                .collect()
        })
        .collect();
    let assignment = hungarian(&cost)?;
    let mut det_matched = vec![false; detections.len()];
    let mut det_of_track = vec![None; predicted.len()];
    for &(ti, di) in &assignment.pairs {
        if -cost[ti][di] >= p.iou_threshold {
            det_matched[di] = true;
            det_of_track[ti] = Some(di);
        }
    }

    // (5) update matched
    for (ti, det) in det_of_track.iter().enumerate() {
        if let Some(di) = *det {
            let track = &mut predicted[ti];
            let z = bbox_to_measurement(&detections[di].bbox);
            track.state = track.state.update(&z, kp)?;
            track.hits += 1;
            track.time_since_update = 0;
            out.matches.push(TrackMatch {
                track_id: track.id,
                detection: di,
            });
        }
    }

    // (7) expire
    let mut survivors = Vec::with_capacity(predicted.len() + detections.len());
    for (ti, t) in predicted.into_iter().enumerate() {
        if t.time_since_update > p.max_age {
            out.deaths.push(t.id);
        } else {
            if let Some(di) = det_of_track[ti] {
                if t.hits >= p.min_hits {
                    out.reported.push(TrackSnapshot {
                        id: t.id,
                        class: t.class,
                        bbox: t.bbox(),
                        hits: t.hits,
                        age: t.age,
                        detection: di,
                    });
                }
            }
            survivors.push(t);
        }
    }

    // (6) births
    for (di, d) in detections.iter().enumerate() {
        if det_matched[di] {
            continue;
        }
        let id = *next_id;
        *next_id += 1;
        let track = Track {
            id,
            state: initial_state(&d.bbox, kp),
            hits: 1,
            age: 0,
            time_since_update: 0,
            class: d.class,
        };
        if p.min_hits <= 1 {
            out.reported.push(TrackSnapshot {
                id,
                class: d.class,
                bbox: track.bbox(),
                hits: 1,
                age: 0,
                detection: di,
            });
        }
        out.births.push(id);
        survivors.push(track);
    }

    out.reported.sort_by_key(|s| s.id);
    Ok((survivors, out))
}

/// Per-class SORT tracker; frames must be fed strictly in order.
#[derive(Debug, Clone)]
pub struct SortTracker {
    class: ObjectClass,
    params: SortParams,
    kalman: SortKalmanParams,
    tracks: Vec<Track>,
    next_id: u64,
    frames_seen: u64,
}

impl SortTracker {
    pub fn new(
        class: ObjectClass,
        params: SortParams,
        kalman: SortKalmanParams,
    ) -> Result<Self, TrackerError> {
        params.validate()?;
        Ok(Self {
            class,
            params,
            kalman,
            tracks: Vec::new(),
            next_id: 1,
            frames_seen: 0,
        })
    }

    pub fn with_defaults(class: ObjectClass) -> Self {
        Self::new(class, SortParams::default(), default_kalman_params())
            .expect("default SORT parameters are valid")
    }

    pub fn class(&self) -> ObjectClass {
        self.class
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    pub fn step(&mut self, detections: &[Detection]) -> Result<StepOutput, TrackerError> {
        if let Some(d) = detections.iter().find(|d| d.class != self.class) {
            return Err(TrackerError::ClassMismatch {
                expected: self.class,
                got: d.class,
            });
        }
        let mut next_id = self.next_id;
        let (tracks, out) = sort_step(
            &self.tracks,
            detections,
            &self.params,
            &self.kalman,
            &mut next_id,
        )?;
        self.tracks = tracks;
        self.next_id = next_id;
        self.frames_seen += 1;
        Ok(out)
    }
}
