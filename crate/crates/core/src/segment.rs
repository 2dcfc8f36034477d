//! Box-prompted region growing, used when the annotation stream has no mask
//! for a detection.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, Frame, Mask};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentError {
    #[error("seed ({x:.1}, {y:.1}) lies outside the {width}x{height} frame")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("invalid segmenter config: {0}")]
    InvalidConfig(String),
}

/// Each side of the box is pushed out by this fraction of the box size.
pub const BOX_DILATION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    /// Max per-channel deviation from the seed 3×3 mean, 0–255.
    pub color_tolerance: f64,
    /// Region size cap as a fraction of the (undilated) box area.
    pub max_region_fraction: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            color_tolerance: 80.0,
            max_region_fraction: 1.5,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<(), SegmentError> {
        if !(self.color_tolerance >= 0.0) {
            return Err(SegmentError::InvalidConfig(format!(
                "color_tolerance {}",
                self.color_tolerance
            )));
        }
        if !(self.max_region_fraction > 0.0 && self.max_region_fraction <= 2.0) {
            return Err(SegmentError::InvalidConfig(format!(
                "max_region_fraction {} not in (0, 2]",
                self.max_region_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub mask: Mask,
    /// The seed pixel itself failed the color test; `mask` is the seed alone.
    pub degenerate: bool,
}

/// Pixel-index window whose pixel centers fall inside the dilated box,
/// clipped to the frame. Inclusive bounds, `None` if empty.
fn clip_window(b: &BBox, width: u32, height: u32) -> Option<(u32, u32, u32, u32)> {
    let dx = b.width() * BOX_DILATION;
    let dy = b.height() * BOX_DILATION;
    let x0 = (b.x_min() - dx - 0.5).ceil().max(0.0);
    let y0 = (b.y_min() - dy - 0.5).ceil().max(0.0);
    let x1 = (b.x_max() + dx - 0.5).floor().min(width as f64 - 1.0);
    let y1 = (b.y_max() + dy - 0.5).floor().min(height as f64 - 1.0);
    (x0 <= x1 && y0 <= y1).then_some((x0 as u32, y0 as u32, x1 as u32, y1 as u32))
}

/// 4-connected flood fill from the box midpoint.
///
/// Pixels join when every channel is within `color_tolerance` of the mean of
/// the seed's 3×3 neighborhood. Growth is confined to the box dilated by
/// [`BOX_DILATION`] per side and stops once the region reaches
/// `max_region_fraction` of the box area.
pub fn segment_box(
    frame: &Frame,
    bbox: &BBox,
    cfg: &SegmenterConfig,
) -> Result<Segmentation, SegmentError> {
    cfg.validate()?;
    let (w, h) = (frame.width(), frame.height());
    let c = bbox.center();
    if c.x < 0.0 || c.y < 0.0 || c.x >= w as f64 || c.y >= h as f64 {
        return Err(SegmentError::OutOfBounds {
            x: c.x,
            y: c.y,
            width: w,
            height: h,
        });
    }
    let (sx, sy) = (c.x.floor() as u32, c.y.floor() as u32);

    let mut mean = [0.0f64; 3];
    let mut n = 0.0;
    for y in sy.saturating_sub(1)..=(sy + 1).min(h - 1) {
        for x in sx.saturating_sub(1)..=(sx + 1).min(w - 1) {
            let px = frame.pixel(x, y);
            for k in 0..3 {
                mean[k] += px[k] as f64;
            }
            n += 1.0;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let admits = |x: u32, y: u32| {
        let px = frame.pixel(x, y);
        (0..3).all(|k| (px[k] as f64 - mean[k]).abs() <= cfg.color_tolerance)
    };

    let mut bits = vec![false; w as usize * h as usize];
    let idx = |x: u32, y: u32| y as usize * w as usize + x as usize;
    if !admits(sx, sy) {
        bits[idx(sx, sy)] = true;
        return Ok(Segmentation {
            mask: Mask::from_bitmap(w, h, &bits).expect("bitmap sized to frame"),
            degenerate: true,
        });
    }
    // The seed always lies inside its own box, so the window is non-empty.
    let (x0, y0, x1, y1) = clip_window(bbox, w, h).unwrap_or((sx, sy, sx, sy));
    let cap = ((cfg.max_region_fraction * bbox.area()).ceil() as usize).max(1);

    let mut count = 1usize;
    bits[idx(sx, sy)] = true;
    let mut queue = VecDeque::from([(sx, sy)]);
    'grow: while let Some((x, y)) = queue.pop_front() {
        let neighbors = [
            (x.checked_sub(1), Some(y)),
            (Some(x + 1), Some(y)),
            (Some(x), y.checked_sub(1)),
            (Some(x), Some(y + 1)),
        ];
        for (nx, ny) in neighbors {
            let (Some(nx), Some(ny)) = (nx, ny) else { continue };
            if nx < x0 || nx > x1 || ny < y0 || ny > y1 || bits[idx(nx, ny)] {
                continue;
            }
            if admits(nx, ny) {
                bits[idx(nx, ny)] = true;
                count += 1;
                if count >= cap {
                    break 'grow;
                }
                queue.push_back((nx, ny));
            }
        }
    }
    Ok(Segmentation {
        mask: Mask::from_bitmap(w, h, &bits).expect("bitmap sized to frame"),
        degenerate: false,
    })
}
