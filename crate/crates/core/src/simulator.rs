//! Synthetic flare scenes with exact ground truth.
//!
//! Each stack is a filled rotated ellipse (the flame) with a gray elliptical
//! plume rendered above it. Everything is a pure function of the
//! [`SceneSpec`] and the frame index, so frames can be rendered in any order
//! or in parallel and still come out bit-identical.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::Label;
use crate::features::{rgb_index, FeatureVector, RgbIndexParams};
use crate::geometry::{BBox, Detection, Frame, Mask, ObjectClass};
use crate::ingest::{write_annotation, FrameAnnotation, MaskEntry};
use crate::labeling::rule_label;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error("unknown preset {0:?}")]
    InvalidPreset(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Annotation boxes are ground truth moved by up to this many pixels per edge.
pub const MAX_BOX_JITTER: f64 = 2.0;
/// Plume width over plume height.
pub const SMOKE_ASPECT: f64 = 1.5;
pub const FLAME_CONFIDENCE: f64 = 0.9;
pub const SMOKE_CONFIDENCE: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlameSpec {
    /// Ellipse center at frame 0, pixels.
    pub center: [f64; 2],
    /// Half-length along the flame axis.
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Degrees from vertical, leaning right.
    pub tilt_deg: f64,
    /// Pixels per frame.
    pub drift: [f64; 2],
    pub core_color: [u8; 3],
    pub edge_color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmokeSpec {
    /// Plume area over flame area; 0 disables the plume.
    pub area_multiplier: f64,
    pub gray: u8,
    /// Gap in pixels between the flame's top and the plume's bottom.
    pub vertical_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackSpec {
    pub flame: FlameSpec,
    pub smoke: SmokeSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub frame_count: u64,
    pub seed: u64,
    pub fps: f64,
    /// Uniform per-channel noise amplitude.
    pub noise: u8,
    pub background: [u8; 3],
    pub stacks: Vec<StackSpec>,
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    sin: f64,
    cos: f64,
}

impl Ellipse {
    /// Major axis along (sin t, -cos t), i.e. `tilt_deg` clockwise from up.
    fn new(cx: f64, cy: f64, a: f64, b: f64, tilt_deg: f64) -> Self {
        let (sin, cos) = tilt_deg.to_radians().sin_cos();
        Self { cx, cy, a, b, sin, cos }
    }

    fn half_extent(&self) -> (f64, f64) {
        let hx = (self.a.powi(2) * self.sin.powi(2) + self.b.powi(2) * self.cos.powi(2)).sqrt();
        let hy = (self.a.powi(2) * self.cos.powi(2) + self.b.powi(2) * self.sin.powi(2)).sqrt();
        (hx, hy)
    }

    fn extent(&self) -> [f64; 4] {
        let (hx, hy) = self.half_extent();
        [self.cx - hx, self.cy - hy, self.cx + hx, self.cy + hy]
    }

    /// Normalized radius of a point; inside iff ≤ 1.
    fn radius(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.sin - dy * self.cos;
        let v = dx * self.cos + dy * self.sin;
        ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt()
    }

    /// Calls `f(x, y, radius)` for every pixel whose center is inside.
    fn raster(&self, width: u32, height: u32, mut f: impl FnMut(u32, u32, f64)) {
        let [x0, y0, x1, y1] = self.extent();
        let xs = (x0 - 0.5).ceil().max(0.0) as i64;
        let ys = (y0 - 0.5).ceil().max(0.0) as i64;
        let xe = ((x1 - 0.5).floor() as i64).min(width as i64 - 1);
        let ye = ((y1 - 0.5).floor() as i64).min(height as i64 - 1);
        for y in ys..=ye {
            for x in xs..=xe {
                let r = self.radius(x as f64 + 0.5, y as f64 + 0.5);
                if r <= 1.0 {
                    f(x as u32, y as u32, r);
                }
            }
        }
    }

    fn truncated(&self, width: u32, height: u32) -> bool {
        let [x0, y0, x1, y1] = self.extent();
        x0 < 0.0 || y0 < 0.0 || x1 > width as f64 || y1 > height as f64
    }
}

impl StackSpec {
    fn flame_at(&self, frame: u64) -> Ellipse {
        let f = &self.flame;
        let t = frame as f64;
        Ellipse::new(
            f.center[0] + f.drift[0] * t,
            f.center[1] + f.drift[1] * t,
            f.semi_major,
            f.semi_minor,
            f.tilt_deg,
        )
    }

    fn smoke_at(&self, frame: u64) -> Option<Ellipse> {
        let m = self.smoke.area_multiplier;
        if m <= 0.0 {
            return None;
        }
        let flame = self.flame_at(frame);
        let (_, hy) = flame.half_extent();
        let height = (m * flame.a * flame.b / SMOKE_ASPECT).sqrt();
        let width = SMOKE_ASPECT * height;
        let cy = flame.cy - hy - self.smoke.vertical_offset - height;
        Some(Ellipse::new(flame.cx, cy, width, height, 90.0))
    }

    /// Features implied by the spec: plume multiplier, E of the mean color
    /// over a uniformly filled ellipse, and tilt.
    pub fn nominal_features(&self) -> FeatureVector {
        // mean normalized radius over a filled ellipse is 2/3
        let mean: [f64; 3] = std::array::from_fn(|k| {
            self.flame.core_color[k] as f64 / 3.0 + 2.0 * self.flame.edge_color[k] as f64 / 3.0
        });
        let e = rgb_index(mean, &RgbIndexParams::default()).unwrap_or(0.5);
        FeatureVector::new(self.smoke.area_multiplier, e, self.flame.tilt_deg)
    }

    pub fn regime(&self) -> Label {
        rule_label(&self.nominal_features())
    }
}

fn boxes_overlap(a: [f64; 4], b: [f64; 4]) -> bool {
    a[0] < b[2] && b[0] < a[2] && a[1] < b[3] && b[1] < a[3]
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSpec(m));
        if self.width == 0 || self.height == 0 {
            return bad("frame size must be positive".into());
        }
        if self.frame_count == 0 {
            return bad("frame_count must be at least 1".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps {}", self.fps));
        }
        let mut extents = Vec::new();
        for (i, s) in self.stacks.iter().enumerate() {
            let f = &s.flame;
            if !(f.semi_major > 0.0 && f.semi_minor > 0.0) {
                return bad(format!("stack {}: axes must be positive", i + 1));
            }
            if !(0.0..90.0).contains(&f.tilt_deg) {
                return bad(format!("stack {}: tilt {} not in [0, 90)", i + 1, f.tilt_deg));
            }
            if f.center.iter().chain(&f.drift).any(|v| !v.is_finite()) {
                return bad(format!("stack {}: non-finite position", i + 1));
            }
            if !(s.smoke.area_multiplier >= 0.0 && s.smoke.area_multiplier.is_finite()) {
                return bad(format!("stack {}: smoke multiplier", i + 1));
            }
            if !(s.smoke.vertical_offset >= 0.0) {
                return bad(format!("stack {}: negative smoke offset", i + 1));
            }
            let mut e = s.flame_at(0).extent();
            if let Some(sm) = s.smoke_at(0) {
                let se = sm.extent();
                e = [e[0].min(se[0]), e[1].min(se[1]), e[2].max(se[2]), e[3].max(se[3])];
            }
            if let Some(j) = extents.iter().position(|o| boxes_overlap(*o, e)) {
                return bad(format!("stacks {} and {} overlap at frame 0", j + 1, i + 1));
            }
            extents.push(e);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackTruth {
    pub stack_id: u64,
    /// Tight bound of `flame_mask`; `None` when the flame is fully out of frame.
    pub flame_bbox: Option<BBox>,
    pub flame_mask: Mask,
    pub smoke_bbox: Option<BBox>,
    pub smoke_mask: Mask,
    pub tilt_deg: f64,
    pub regime: Label,
    /// Part of the flame ellipse lies outside the frame.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frame_index: u64,
    pub stacks: Vec<StackTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub frame: Frame,
    pub truth: GroundTruth,
    pub annotation: FrameAnnotation,
}

fn lerp(a: [u8; 3], b: [u8; 3], t: f64) -> [u8; 3] {
    std::array::from_fn(|k| (a[k] as f64 * (1.0 - t) + b[k] as f64 * t).round() as u8)
}

fn jitter(rng: &mut ChaCha8Rng, b: &BBox, width: u32, height: u32) -> BBox {
    let mut d = [0.0; 4];
    for v in &mut d {
        *v = rng.random_range(-MAX_BOX_JITTER..=MAX_BOX_JITTER);
    }
    let (w, h) = (width as f64, height as f64);
    BBox::new(
        (b.x_min() + d[0]).clamp(0.0, w),
        (b.y_min() + d[1]).clamp(0.0, h),
        (b.x_max() + d[2]).clamp(0.0, w),
        (b.y_max() + d[3]).clamp(0.0, h),
    )
    .unwrap_or(*b)
}

/// Renders one frame. Pure in `(spec, index)`.
pub fn render_frame(spec: &SceneSpec, index: u64) -> RenderedFrame {
    let (w, h) = (spec.width, spec.height);
    let n = w as usize * h as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);

    let mut pixels: Vec<u8> = spec.background.iter().copied().cycle().take(n * 3).collect();
    // 0 = background, 2k+1 = smoke of stack k, 2k+2 = flame of stack k
    let mut owner = vec![0u32; n];
    let mut paint = |x: u32, y: u32, rgb: [u8; 3], id: u32, pixels: &mut Vec<u8>| {
        let i = y as usize * w as usize + x as usize;
        pixels[i * 3..i * 3 + 3].copy_from_slice(&rgb);
        owner[i] = id;
    };
    for (k, s) in spec.stacks.iter().enumerate() {
        if let Some(sm) = s.smoke_at(index) {
            let g = s.smoke.gray;
            sm.raster(w, h, |x, y, _| paint(x, y, [g, g, g], 2 * k as u32 + 1, &mut pixels));
        }
    }
    for (k, s) in spec.stacks.iter().enumerate() {
        let (core, edge) = (s.flame.core_color, s.flame.edge_color);
        s.flame_at(index)
            .raster(w, h, |x, y, r| paint(x, y, lerp(core, edge, r), 2 * k as u32 + 2, &mut pixels));
    }

    let objects = 2 * spec.stacks.len() + 1;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); objects];
    for (i, o) in owner.iter().enumerate() {
        if *o != 0 {
            members[*o as usize].push(i);
        }
    }
    let mask_of = |id: usize| Mask::from_sorted_indices(w, h, members[id].iter().copied()).expect("ascending");

    let mut stacks = Vec::with_capacity(spec.stacks.len());
    let mut detections = Vec::new();
    let mut masks = Vec::new();
    for (k, s) in spec.stacks.iter().enumerate() {
        let flame_mask = mask_of(2 * k + 2);
        let smoke_mask = mask_of(2 * k + 1);
        let flame_bbox = flame_mask.bounding_box();
        let smoke_bbox = smoke_mask.bounding_box();
        // jitter is always drawn so the stream does not depend on visibility
        let flame_jit = jitter(&mut rng, &flame_bbox.unwrap_or(BBox::new(0., 0., 1., 1.).unwrap()), w, h);
        let smoke_jit = jitter(&mut rng, &smoke_bbox.unwrap_or(BBox::new(0., 0., 1., 1.).unwrap()), w, h);
        if flame_bbox.is_some() {
            masks.push(MaskEntry {
                detection: detections.len(),
                mask: flame_mask.clone(),
            });
            detections.push(Detection::new(ObjectClass::Flame, flame_jit, FLAME_CONFIDENCE).expect("valid"));
        }
        if smoke_bbox.is_some() {
            masks.push(MaskEntry {
                detection: detections.len(),
                mask: smoke_mask.clone(),
            });
            detections.push(Detection::new(ObjectClass::Smoke, smoke_jit, SMOKE_CONFIDENCE).expect("valid"));
        }
        stacks.push(StackTruth {
            stack_id: k as u64 + 1,
            flame_bbox,
            flame_mask,
            smoke_bbox,
            smoke_mask,
            tilt_deg: s.flame.tilt_deg,
            regime: s.regime(),
            truncated: s.flame_at(index).truncated(w, h),
        });
    }

    if spec.noise > 0 {
        // each channel offset is drawn from 16 random bits scaled onto
        // [-noise, noise]
        let span = 2 * spec.noise as u32 + 1;
        let mut raw = vec![0u8; pixels.len() * 2];
        rng.fill_bytes(&mut raw);
        for (p, r) in pixels.iter_mut().zip(raw.chunks_exact(2)) {
            let draw = (u16::from_le_bytes([r[0], r[1]]) as u32 * span) >> 16;
            let v = *p as i32 + draw as i32 - spec.noise as i32;
            *p = v.clamp(0, 255) as u8;
        }
    }

    let frame = Frame::new(index, index as f64 / spec.fps, w, h, pixels).expect("buffer sized to frame");
    RenderedFrame {
        frame,
        truth: GroundTruth {
            frame_index: index,
            stacks,
        },
        annotation: FrameAnnotation {
            frame_index: index,
            detections,
            masks: Some(masks),
        },
    }
}

/// Lazy in-order iterator over a validated scene.
pub struct Scene {
    spec: SceneSpec,
    next: u64,
}

impl Scene {
    pub fn new(spec: SceneSpec) -> Result<Self, SimError> {
        spec.validate()?;
        Ok(Self { spec, next: 0 })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }
}

impl Iterator for Scene {
    type Item = RenderedFrame;

    fn next(&mut self) -> Option<RenderedFrame> {
        if self.next >= self.spec.frame_count {
            return None;
        }
        let out = render_frame(&self.spec, self.next);
        self.next += 1;
        Some(out)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.spec.frame_count - self.next) as usize;
        (left, Some(left))
    }
}

pub fn render(spec: &SceneSpec) -> Result<Scene, SimError> {
    Scene::new(spec.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    CleanHigh,
    SmokyLow,
    Windy,
    ThreeStacks,
    CrossingNearMiss,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::CleanHigh,
        Preset::SmokyLow,
        Preset::Windy,
        Preset::ThreeStacks,
        Preset::CrossingNearMiss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::CleanHigh => "clean_high",
            Preset::SmokyLow => "smoky_low",
            Preset::Windy => "windy",
            Preset::ThreeStacks => "three_stacks",
            Preset::CrossingNearMiss => "crossing_near_miss",
        }
    }
}

impl FromStr for Preset {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| SimError::InvalidPreset(s.to_string()))
    }
}

const BACKGROUND: [u8; 3] = [30, 35, 50];
const BLUE_CORE: [u8; 3] = [70, 110, 255];
const BLUE_EDGE: [u8; 3] = [140, 160, 235];
const RED_CORE: [u8; 3] = [255, 150, 40];
const RED_EDGE: [u8; 3] = [220, 70, 20];

fn stack(center: [f64; 2], axes: [f64; 2], tilt: f64, colors: [[u8; 3]; 2], smoke: f64) -> StackSpec {
    StackSpec {
        flame: FlameSpec {
            center,
            semi_major: axes[0],
            semi_minor: axes[1],
            tilt_deg: tilt,
            drift: [0.0, 0.0],
            core_color: colors[0],
            edge_color: colors[1],
        },
        smoke: SmokeSpec {
            area_multiplier: smoke,
            gray: if smoke > 1.0 { 110 } else { 150 },
            vertical_offset: 8.0,
        },
    }
}

/// Canned scenes, 200 frames each.
///
/// - `clean_high`: one blue flame, plume at 0.15 of the flame area.
/// - `smoky_low`: one red flame under a plume twice its area.
/// - `windy`: four flames tilted 10°, 20°, 30° and 45°, axis ratio 3.
/// - `three_stacks`: three slowly drifting stacks, the middle one smoky and red.
/// - `crossing_near_miss`: two flames on different rows passing each other.
pub fn preset(p: Preset) -> SceneSpec {
    let blue = [BLUE_CORE, BLUE_EDGE];
    let red = [RED_CORE, RED_EDGE];
    let (width, height, stacks) = match p {
        Preset::CleanHigh => (320, 240, vec![stack([160.0, 160.0], [36.0, 14.0], 4.0, blue, 0.15)]),
        Preset::SmokyLow => (320, 240, vec![stack([160.0, 170.0], [34.0, 14.0], 12.0, red, 2.0)]),
        Preset::Windy => {
            let orange = [[250, 200, 120], [230, 140, 60]];
            let s = [10.0, 20.0, 30.0, 45.0]
                .iter()
                .enumerate()
                .map(|(i, t)| stack([60.0 + 90.0 * i as f64, 170.0], [33.0, 11.0], *t, orange, 0.4))
                .collect();
            (400, 260, s)
        }
        Preset::ThreeStacks => {
            let mut s = vec![
                stack([60.0, 165.0], [30.0, 12.0], 6.0, blue, 0.15),
                stack([160.0, 165.0], [30.0, 12.0], 14.0, red, 2.0),
                stack([260.0, 165.0], [30.0, 12.0], 3.0, blue, 0.15),
            ];
            s[0].flame.drift = [0.05, 0.0];
            s[1].flame.drift = [0.0, -0.03];
            s[2].flame.drift = [-0.05, 0.0];
            (320, 240, s)
        }
        Preset::CrossingNearMiss => {
            let mut a = stack([50.0, 185.0], [25.0, 10.0], 0.0, blue, 0.15);
            let mut b = stack([270.0, 95.0], [25.0, 10.0], 0.0, blue, 0.15);
            a.flame.drift = [1.2, 0.0];
            b.flame.drift = [-1.2, 0.0];
            (320, 240, vec![a, b])
        }
    };
    SceneSpec {
        width,
        height,
        frame_count: 200,
        seed: 7,
        fps: 10.0,
        noise: 6,
        background: BACKGROUND,
        stacks,
    }
}

pub fn preset_by_name(name: &str) -> Result<SceneSpec, SimError> {
    Ok(preset(name.parse()?))
}

/// Size and rate of a directory of raw frames, stored as `frames/meta.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameDirMeta {
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub frame_count: u64,
}

pub fn frame_file_name(index: u64) -> String {
    format!("{index:06}.rgb")
}

const WRITE_CHUNK: u64 = 32;

/// Writes `scene.json`, `annotations.jsonl`, `groundtruth.jsonl` and
/// `frames/NNNNNN.rgb` (+ `frames/meta.json`) under `dir`. Frames in a chunk
/// render in parallel and are written in order.
pub fn write_scene(spec: &SceneSpec, dir: &Path) -> Result<(), SimError> {
    spec.validate()?;
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir)?;
    fs::write(dir.join("scene.json"), serde_json::to_string_pretty(spec)? + "\n")?;
    let meta = FrameDirMeta {
        width: spec.width,
        height: spec.height,
        fps: spec.fps,
        frame_count: spec.frame_count,
    };
    fs::write(frames_dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    let mut ann = BufWriter::new(File::create(dir.join("annotations.jsonl"))?);
    let mut gt = BufWriter::new(File::create(dir.join("groundtruth.jsonl"))?);
    let mut start = 0;
    while start < spec.frame_count {
        let end = (start + WRITE_CHUNK).min(spec.frame_count);
        let chunk: Vec<RenderedFrame> = (start..end)
            .into_par_iter()
            .map(|i| render_frame(spec, i))
            .collect();
        for r in chunk {
            fs::write(frames_dir.join(frame_file_name(r.frame.index)), r.frame.pixels())?;
            write_annotation(&mut ann, &r.annotation)?;
            serde_json::to_writer(&mut gt, &r.truth)?;
            gt.write_all(b"\n")?;
        }
        start = end;
    }
    ann.flush()?;
    gt.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_upright() -> SceneSpec {
        SceneSpec {
            width: 64,
            height: 64,
            frame_count: 3,
            seed: 1,
            fps: 10.0,
            noise: 0,
            background: BACKGROUND,
            stacks: vec![stack([32.0, 44.0], [12.0, 5.0], 0.0, [BLUE_CORE, BLUE_EDGE], 0.2)],
        }
    }

    #[test]
    fn static_flame_is_constant() {
        let spec = single_upright();
        let frames: Vec<_> = Scene::new(spec).unwrap().collect();
        assert_eq!(frames.len(), 3);
        let m0 = &frames[0].truth.stacks[0].flame_mask;
        assert!(frames.iter().all(|f| &f.truth.stacks[0].flame_mask == m0));
        assert_eq!(frames[0].truth.stacks[0].tilt_deg, 0.0);
        assert_eq!(frames[0].frame, {
            let mut f = frames[2].frame.clone();
            f.index = 0;
            f.timestamp = 0.0;
            f
        });
    }

    #[test]
    fn ground_truth_consistency() {
        for p in Preset::ALL {
            let spec = preset(p);
            for i in [0, 99, 199] {
                let r = render_frame(&spec, i);
                for s in &r.truth.stacks {
                    assert_eq!(s.flame_bbox, s.flame_mask.bounding_box());
                    assert_eq!(s.smoke_bbox, s.smoke_mask.bounding_box());
                }
                r.annotation.validate().unwrap();
                let masks = r.annotation.masks.as_ref().unwrap();
                for (e, d) in masks.iter().zip(&r.annotation.detections) {
                    let truth = r.truth.stacks.iter().find_map(|s| {
                        [(&s.flame_mask, ObjectClass::Flame), (&s.smoke_mask, ObjectClass::Smoke)]
                            .into_iter()
                            .find(|(m, _)| **m == e.mask)
                    });
                    let (m, class) = truth.expect("annotation mask is a ground-truth mask");
                    assert_eq!(class, d.class);
                    let tb = m.bounding_box().unwrap();
                    for (a, b) in tb.as_array().iter().zip(d.bbox.as_array()) {
                        assert!((a - b).abs() <= MAX_BOX_JITTER + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn smoke_strictly_above_flame() {
        for p in Preset::ALL {
            let r = render_frame(&preset(p), 0);
            for s in &r.truth.stacks {
                let (f, sm) = (s.flame_bbox.unwrap(), s.smoke_bbox.unwrap());
                assert!(sm.y_max() + 2.0 * MAX_BOX_JITTER < f.y_min(), "{p:?}");
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = preset(Preset::ThreeStacks);
        assert_eq!(render_frame(&spec, 17), render_frame(&spec, 17));
        let other = SceneSpec { seed: 8, ..spec.clone() };
        assert_ne!(render_frame(&spec, 17).frame, render_frame(&other, 17).frame);
    }

    #[test]
    fn preset_regimes() {
        assert!(preset(Preset::CleanHigh).stacks.iter().all(|s| s.regime() == Label::High));
        assert!(preset(Preset::SmokyLow).stacks.iter().all(|s| s.regime() == Label::Low));
        let three: Vec<_> = preset(Preset::ThreeStacks).stacks.iter().map(|s| s.regime()).collect();
        assert_eq!(three, [Label::High, Label::Low, Label::High]);
        let clean = &preset(Preset::CleanHigh).stacks[0];
        assert!(clean.smoke.area_multiplier <= 0.3);
        assert!(clean.flame.core_color[2] > clean.flame.core_color[0]);
        let smoky = &preset(Preset::SmokyLow).stacks[0];
        assert!(smoky.smoke.area_multiplier >= 1.5);
        assert!(smoky.flame.core_color[0] > smoky.flame.core_color[2]);
    }

    #[test]
    fn preset_names() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
            preset(p).validate().unwrap();
        }
        assert!(matches!("foggy".parse::<Preset>(), Err(SimError::InvalidPreset(_))));
    }

    #[test]
    fn truncation_flagged() {
        let mut spec = single_upright();
        spec.stacks[0].flame.drift = [20.0, 0.0];
        let r = render_frame(&spec, 2);
        assert!(r.truth.stacks[0].truncated);
        assert!(!render_frame(&spec, 0).truth.stacks[0].truncated);
    }

    #[test]
    fn invalid_specs() {
        let mut s = single_upright();
        s.stacks[0].flame.tilt_deg = 90.0;
        assert!(s.validate().is_err());
        let mut s = single_upright();
        s.frame_count = 0;
        assert!(s.validate().is_err());
        let mut s = single_upright();
        s.stacks.push(s.stacks[0].clone());
        assert!(s.validate().is_err());
    }
}
