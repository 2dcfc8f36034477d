//! Per-flame visual features: smoke/flame area ratio, weighted RGB
//! efficiency index, and flutter angle of the equivalent ellipse.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, Frame, Mask};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("region has no foreground pixels")]
    EmptyRegion,
    #[error("region channel sum is zero")]
    InsufficientSignal,
    #[error("region needs at least {needed} pixels for an orientation, has {got}")]
    TooFewPixels { needed: u64, got: u64 },
    #[error("region is near-circular (axis ratio {axis_ratio:.4}); orientation undefined")]
    DegenerateOrientation { axis_ratio: f64 },
    #[error("mask is {mask_w}x{mask_h} but frame is {frame_w}x{frame_h}")]
    SizeMismatch {
        mask_w: u32,
        mask_h: u32,
        frame_w: u32,
        frame_h: u32,
    },
    #[error("invalid RGB index weights: {0}")]
    InvalidWeights(String),
}

/// Below this major/minor axis ratio the ellipse orientation is rejected.
pub const MIN_AXIS_RATIO: f64 = 1.05;
pub const MIN_ANGLE_PIXELS: u64 = 5;

/// Weights for the blue, yellow and red proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RgbIndexParams {
    pub w_blue: f64,
    pub w_yellow: f64,
    pub w_red: f64,
}

impl Default for RgbIndexParams {
    fn default() -> Self {
        Self {
            w_blue: 0.7,
            w_yellow: 0.5,
            w_red: 0.3,
        }
    }
}

impl RgbIndexParams {
    pub fn validate(&self) -> Result<(), FeatureError> {
        for (name, w) in [
            ("blue", self.w_blue),
            ("yellow", self.w_yellow),
            ("red", self.w_red),
        ] {
            if !(0.0..=1.0).contains(&w) {
                return Err(FeatureError::InvalidWeights(format!("{name} weight {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub smoke_flame_ratio: f64,
    pub rgb_index: f64,
    /// Degrees from upright, in [0, 90].
    pub flame_angle: f64,
}

impl FeatureVector {
    pub fn new(smoke_flame_ratio: f64, rgb_index: f64, flame_angle: f64) -> Self {
        Self {
            smoke_flame_ratio,
            rgb_index,
            flame_angle,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.smoke_flame_ratio, self.rgb_index, self.flame_angle]
    }
}

/// Mean (red, green, blue) over the foreground of `mask`.
pub fn channel_means(frame: &Frame, mask: &Mask) -> Result<[f64; 3], FeatureError> {
    if mask.width() != frame.width() || mask.height() != frame.height() {
        return Err(FeatureError::SizeMismatch {
            mask_w: mask.width(),
            mask_h: mask.height(),
            frame_w: frame.width(),
            frame_h: frame.height(),
        });
    }
    let mut sums = [0u64; 3];
    let mut count = 0u64;
    for (x, y) in mask.foreground() {
        let px = frame.pixel(x, y);
        for c in 0..3 {
            sums[c] += px[c] as u64;
        }
        count += 1;
    }
    if count == 0 {
        return Err(FeatureError::EmptyRegion);
    }
    Ok(sums.map(|s| s as f64 / count as f64))
}

/// Blue/yellow/red proportions (r₁, r₂, r₃) of mean channel values, with
/// yellow taken as the mean of green and red.
pub fn color_proportions(means: [f64; 3]) -> Result<[f64; 3], FeatureError> {
    let [red, green, blue] = means;
    let yellow = (green + red) / 2.0;
    let total = blue + yellow + red;
    if !(total > 0.0) {
        return Err(FeatureError::InsufficientSignal);
    }
    Ok([blue / total, yellow / total, red / total])
}

/// E = w_blue·r₁ + w_yellow·r₂ + w_red·r₃.
///
/// Evaluated as (w_blue·B + w_yellow·Y + w_red·R) / S so that symmetric inputs
/// land exactly on the weight mean.
pub fn rgb_index(means: [f64; 3], p: &RgbIndexParams) -> Result<f64, FeatureError> {
    let [red, green, blue] = means;
    let yellow = (green + red) / 2.0;
    let total = blue + yellow + red;
    if !(total > 0.0) {
        return Err(FeatureError::InsufficientSignal);
    }
    Ok((p.w_blue * blue + p.w_yellow * yellow + p.w_red * red) / total)
}

pub fn smoke_flame_ratio(smoke_area: u64, flame_area: u64) -> Result<f64, FeatureError> {
    if flame_area == 0 {
        return Err(FeatureError::EmptyRegion);
    }
    Ok(smoke_area as f64 / flame_area as f64)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SmokeAssociation {
    /// Total attributed smoke area per flame id; every input flame is present.
    pub areas: BTreeMap<u64, u64>,
    /// Smoke regions with no flame beneath them.
    pub dropped: usize,
}

/// Attributes each smoke region to the flame directly beneath it.
///
/// Candidates are flames whose box top is at or below the smoke box bottom
/// (y grows downward). Among those the nearest box center in x wins; equal
/// distances go to the earlier flame in `flames`.
pub fn associate_smoke(flames: &[(u64, BBox)], smoke: &[(BBox, u64)]) -> SmokeAssociation {
    let mut result = SmokeAssociation {
        areas: flames.iter().map(|(id, _)| (*id, 0)).collect(),
        dropped: 0,
    };
    for (sbox, area) in smoke {
        let sx = sbox.center().x;
        let best = flames
            .iter()
            .filter(|(_, fbox)| fbox.y_min() >= sbox.y_max())
            .map(|(id, fbox)| (*id, (fbox.center().x - sx).abs()))
            .fold(None::<(u64, f64)>, |best, cand| match best {
                Some((_, d)) if d <= cand.1 => best,
                _ => Some(cand),
            });
        match best {
            Some((id, _)) => *result.areas.entry(id).or_insert(0) += area,
            None => {
                log::warn!("smoke region {:?} has no flame beneath it; dropped", sbox.as_array());
                result.dropped += 1;
            }
        }
    }
    result
}

/// Second-order central moments (μ20, μ02, μ11) of the foreground, normalized
/// by pixel count, plus that count.
pub fn central_moments(mask: &Mask) -> (f64, f64, f64, u64) {
    let (mut n, mut sx, mut sy) = (0u64, 0.0, 0.0);
    for (x, y) in mask.foreground() {
        n += 1;
        sx += x as f64;
        sy += y as f64;
    }
    if n == 0 {
        return (0.0, 0.0, 0.0, 0);
    }
    let (cx, cy) = (sx / n as f64, sy / n as f64);
    let (mut m20, mut m02, mut m11) = (0.0, 0.0, 0.0);
    for (x, y) in mask.foreground() {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        m20 += dx * dx;
        m02 += dy * dy;
        m11 += dx * dy;
    }
    let nf = n as f64;
    (m20 / nf, m02 / nf, m11 / nf, n)
}

/// Flutter angle in degrees from upright, from the orientation of the
/// moment-equivalent ellipse's major axis.
pub fn flame_angle(mask: &Mask) -> Result<f64, FeatureError> {
    let (m20, m02, m11, n) = central_moments(mask);
    if n < MIN_ANGLE_PIXELS {
        return Err(FeatureError::TooFewPixels {
            needed: MIN_ANGLE_PIXELS,
            got: n,
        });
    }
    let half_sum = (m20 + m02) / 2.0;
    let root = (((m20 - m02) / 2.0).powi(2) + m11 * m11).sqrt();
    let major = half_sum + root;
    let minor = half_sum - root;
    let axis_ratio = if minor > 0.0 {
        (major / minor).sqrt()
    } else {
        f64::INFINITY
    };
    if axis_ratio < MIN_AXIS_RATIO {
        return Err(FeatureError::DegenerateOrientation { axis_ratio });
    }
    // Major-axis angle from the x axis, in (-90, 90].
    let theta = 0.5 * (2.0 * m11).atan2(m20 - m02);
    let from_vertical = (90.0 - theta.to_degrees().abs()).abs();
    Ok(from_vertical.clamp(0.0, 90.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn region(w: u32, h: u32, inside: impl Fn(u32, u32) -> bool) -> Mask {
        let bits: Vec<bool> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| inside(x, y))
            .collect();
        Mask::from_bitmap(w, h, &bits).unwrap()
    }

    fn ellipse(w: u32, h: u32, cx: f64, cy: f64, a: f64, b: f64, tilt_deg: f64) -> Mask {
        // a along the tilted "up" axis
        let t = tilt_deg.to_radians();
        let (ux, uy) = (t.sin(), -t.cos());
        region(w, h, |x, y| {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let along = dx * ux + dy * uy;
            let across = -dx * uy + dy * ux;
            (along / a).powi(2) + (across / b).powi(2) <= 1.0
        })
    }

    #[test]
    fn channel_mean_examples() {
        let mut f = Frame::filled(0, 0.0, 4, 1, [10, 20, 30]);
        let all = Mask::from_runs(4, 1, vec![0, 4]).unwrap();
        assert_eq!(channel_means(&f, &all).unwrap(), [10.0, 20.0, 30.0]);
        f.set_pixel(0, 0, [0, 0, 0]);
        f.set_pixel(1, 0, [2, 4, 6]);
        let two = Mask::from_runs(4, 1, vec![0, 2, 2]).unwrap();
        assert_eq!(channel_means(&f, &two).unwrap(), [1.0, 2.0, 3.0]);
        assert_eq!(
            channel_means(&f, &Mask::empty(4, 1)),
            Err(FeatureError::EmptyRegion)
        );
    }

    #[test]
    fn rgb_index_examples() {
        let p = RgbIndexParams::default();
        assert_eq!(rgb_index([255.0, 255.0, 255.0], &p).unwrap(), 0.5);
        assert_eq!(color_proportions([0.0, 0.0, 255.0]).unwrap(), [1.0, 0.0, 0.0]);
        assert_eq!(rgb_index([0.0, 0.0, 255.0], &p).unwrap(), 0.7);
        // V_yellow = 127.5, S = 382.5 → r = (0, 1/3, 2/3)
        let e = rgb_index([255.0, 0.0, 0.0], &p).unwrap();
        assert!((e - (0.5 / 3.0 + 0.6 / 3.0)).abs() < 1e-15);
        assert_eq!(
            rgb_index([0.0, 0.0, 0.0], &p),
            Err(FeatureError::InsufficientSignal)
        );
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(smoke_flame_ratio(40, 40).unwrap(), 1.0);
        assert_eq!(smoke_flame_ratio(0, 40).unwrap(), 0.0);
        assert_eq!(smoke_flame_ratio(3, 0), Err(FeatureError::EmptyRegion));
    }

    #[test]
    fn smoke_association_examples() {
        let b = |x0, y0, x1, y1| BBox::new(x0, y0, x1, y1).unwrap();
        let one = associate_smoke(&[(7, b(90., 100., 110., 150.))], &[(b(80., 20., 120., 90.), 500)]);
        assert_eq!(one.areas[&7], 500);

        let flames = [(1, b(90., 100., 110., 150.)), (2, b(290., 100., 310., 150.))];
        let r = associate_smoke(&flames, &[(b(90., 20., 130., 90.), 300)]);
        assert_eq!((r.areas[&1], r.areas[&2], r.dropped), (300, 0, 0));

        let below = associate_smoke(&flames, &[(b(90., 160., 130., 200.), 300)]);
        assert_eq!(below.dropped, 1);
        assert_eq!(below.areas.values().sum::<u64>(), 0);
    }

    #[test]
    fn upright_ellipse_is_zero_degrees() {
        let m = ellipse(40, 60, 20.0, 30.0, 25.0, 8.0, 0.0);
        assert!(flame_angle(&m).unwrap().abs() < 1e-9);
    }

    #[test]
    fn circle_is_degenerate() {
        let m = ellipse(41, 41, 20.5, 20.5, 15.0, 15.0, 0.0);
        assert!(matches!(
            flame_angle(&m),
            Err(FeatureError::DegenerateOrientation { .. })
        ));
        assert!(matches!(
            flame_angle(&Mask::from_runs(5, 1, vec![0, 4, 1]).unwrap()),
            Err(FeatureError::TooFewPixels { .. })
        ));
    }

    #[test]
    fn tilted_ellipse_recovered() {
        for tilt in [10.0, 30.0, 60.0, 80.0] {
            let m = ellipse(160, 160, 80.0, 80.0, 60.0, 20.0, tilt);
            let got = flame_angle(&m).unwrap();
            assert!((got - tilt).abs() < 1.0, "tilt {tilt} got {got}");
        }
    }

    proptest! {
        #[test]
        fn proportions_sum_to_one(r in 0.0..255.0f64, g in 0.0..255.0f64, b in 0.1..255.0f64) {
            let p = color_proportions([r, g, b]).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let e = rgb_index([r, g, b], &RgbIndexParams::default()).unwrap();
            prop_assert!((0.3 - 1e-12..=0.7 + 1e-12).contains(&e));
        }

        #[test]
        fn more_blue_never_lowers_index(r in 0.0..255.0f64, g in 0.0..255.0f64, b in 0.0..200.0f64, extra in 0.0..55.0f64) {
            prop_assume!(r + g + b > 0.0);
            let p = RgbIndexParams::default();
            prop_assert!(rgb_index([r, g, b + extra], &p).unwrap() >= rgb_index([r, g, b], &p).unwrap() - 1e-15);
        }

        #[test]
        fn angle_translation_and_mirror_invariant(tilt in 5.0..85.0f64, dx in 0u32..20, dy in 0u32..20) {
            let base = ellipse(120, 120, 50.0, 50.0, 30.0, 10.0, tilt);
            let moved = ellipse(120, 120, 50.0 + dx as f64, 50.0 + dy as f64, 30.0, 10.0, tilt);
            let a = flame_angle(&base).unwrap();
            prop_assert!((a - flame_angle(&moved).unwrap()).abs() < 1e-9);
            let bits = base.to_bitmap();
            let mirrored: Vec<bool> = (0..120usize)
                .flat_map(|y| (0..120usize).map(move |x| (x, y)))
                .map(|(x, y)| bits[y * 120 + (119 - x)])
                .collect();
            let m = Mask::from_bitmap(120, 120, &mirrored).unwrap();
            prop_assert!((a - flame_angle(&m).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn ratio_linear_in_smoke(s in 0u64..10_000, k in 1u64..5, f in 1u64..10_000) {
            let one = smoke_flame_ratio(s, f).unwrap();
            prop_assert!((smoke_flame_ratio(s * k, f).unwrap() - k as f64 * one).abs() < 1e-9);
        }
    }
}
