//! Boxes, detections, run-length masks and raw RGB frames.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid box ({x_min}, {y_min}, {x_max}, {y_max}): need finite x_min < x_max and y_min < y_max")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("mask runs sum to {sum}, expected {expected} ({width}x{height})")]
    Decode {
        sum: u64,
        expected: u64,
        width: u32,
        height: u32,
    },
    #[error("pixel buffer has {len} bytes, expected {expected}")]
    PixelBuffer { len: usize, expected: usize },
    #[error("bitmap has {len} cells, expected {expected}")]
    BitmapSize { len: usize, expected: usize },
    #[error("pixel index {index} out of order or beyond {len}")]
    InvalidIndex { index: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// Axis-aligned box in continuous image coordinates (origin top-left, y down).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min >= x_max || y_min >= y_max {
            return Err(GeometryError::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Midpoint of the box, the seed used for point-prompted segmentation.
    pub fn center(&self) -> Point {
        Point {
            x: (self.x_min + self.x_max) / 2.0,
            y: (self.y_min + self.y_max) / 2.0,
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let ih = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if iw <= 0.0 || ih <= 0.0 {
            return 0.0;
        }
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        // Clamp guards against the last-ulp overshoot when one box contains the other.
        (inter / union).min(1.0)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = GeometryError;
    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.as_array()
    }
}

pub fn box_center(b: &BBox) -> Point {
    b.center()
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Flame,
    Smoke,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDetection")]
pub struct Detection {
    pub class: ObjectClass,
    pub bbox: BBox,
    confidence: f64,
}

#[derive(Deserialize)]
struct RawDetection {
    class: ObjectClass,
    bbox: BBox,
    confidence: f64,
}

impl TryFrom<RawDetection> for Detection {
    type Error = GeometryError;
    fn try_from(r: RawDetection) -> Result<Self, Self::Error> {
        Detection::new(r.class, r.bbox, r.confidence)
    }
}

impl Detection {
    pub fn new(class: ObjectClass, bbox: BBox, confidence: f64) -> Result<Self, GeometryError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(GeometryError::InvalidConfidence(confidence));
        }
        Ok(Self {
            class,
            bbox,
            confidence,
        })
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }
}

/// Binary mask stored as row-major run lengths.
///
/// Runs alternate background/foreground and always start with a background
/// run, which may be zero. The runs must cover exactly `width * height` pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawMask")]
pub struct Mask {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

#[derive(Deserialize)]
struct RawMask {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

impl TryFrom<RawMask> for Mask {
    type Error = GeometryError;
    fn try_from(r: RawMask) -> Result<Self, Self::Error> {
        Mask::from_runs(r.width, r.height, r.runs)
    }
}

impl Mask {
    pub fn from_runs(width: u32, height: u32, runs: Vec<u32>) -> Result<Self, GeometryError> {
        let sum: u64 = runs.iter().map(|&r| r as u64).sum();
        let expected = width as u64 * height as u64;
        if sum != expected {
            return Err(GeometryError::Decode {
                sum,
                expected,
                width,
                height,
            });
        }
        Ok(Self {
            width,
            height,
            runs,
        })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            runs: vec![width * height],
        }
    }

    /// Encodes a row-major bitmap into canonical runs (no zero runs except a
    /// possible leading background run).
    pub fn from_bitmap(width: u32, height: u32, bits: &[bool]) -> Result<Self, GeometryError> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(GeometryError::BitmapSize {
                len: bits.len(),
                expected,
            });
        }
        let mut runs = Vec::new();
        let mut current = false;
        let mut count = 0u32;
        for &b in bits {
            if b != current {
                runs.push(count);
                count = 0;
                current = b;
            }
            count += 1;
        }
        runs.push(count);
        Ok(Self {
            width,
            height,
            runs,
        })
    }

    /// Canonical mask from strictly increasing row-major pixel indices.
    pub fn from_sorted_indices(
        width: u32,
        height: u32,
        indices: impl IntoIterator<Item = usize>,
    ) -> Result<Self, GeometryError> {
        let len = width as usize * height as usize;
        let mut runs: Vec<u32> = Vec::new();
        let mut end = 0usize;
        for i in indices {
            if i >= len || (!runs.is_empty() && i < end) {
                return Err(GeometryError::InvalidIndex { index: i, len });
            }
            if !runs.is_empty() && i == end {
                *runs.last_mut().expect("non-empty") += 1;
            } else {
                runs.push((i - end) as u32);
                runs.push(1);
            }
            end = i + 1;
        }
        if runs.is_empty() || end < len {
            runs.push((len - end) as u32);
        }
        Ok(Self {
            width,
            height,
            runs,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    pub fn to_bitmap(&self) -> Vec<bool> {
        let mut bits = Vec::with_capacity(self.width as usize * self.height as usize);
        for (i, &r) in self.runs.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
        }
        bits
    }

    pub fn area(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).map(|&r| r as u64).sum()
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let target = y as u64 * self.width as u64 + x as u64;
        let mut pos = 0u64;
        for (i, &r) in self.runs.iter().enumerate() {
            pos += r as u64;
            if target < pos {
                return i % 2 == 1;
            }
        }
        false
    }

    /// Foreground pixel coordinates in row-major order, without materializing
    /// the full bitmap.
    pub fn foreground(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let width = self.width as u64;
        let mut starts = Vec::with_capacity(self.runs.len() / 2);
        let mut pos = 0u64;
        for (i, &r) in self.runs.iter().enumerate() {
            if i % 2 == 1 && r > 0 {
                starts.push((pos, r as u64));
            }
            pos += r as u64;
        }
        starts.into_iter().flat_map(move |(start, len)| {
            (start..start + len).map(move |p| ((p % width) as u32, (p / width) as u32))
        })
    }

    /// Tight pixel-edge bounding box of the foreground, `None` for an empty mask.
    pub fn bounding_box(&self) -> Option<BBox> {
        let mut x0 = u32::MAX;
        let mut y0 = u32::MAX;
        let mut x1 = 0u32;
        let mut y1 = 0u32;
        let mut any = false;
        for (x, y) in self.foreground() {
            any = true;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        if !any {
            return None;
        }
        BBox::new(x0 as f64, y0 as f64, x1 as f64 + 1.0, y1 as f64 + 1.0).ok()
    }

    pub fn iou(&self, other: &Mask) -> f64 {
        let a = self.to_bitmap();
        let b = other.to_bitmap();
        let (mut inter, mut union) = (0u64, 0u64);
        for (p, q) in a.iter().zip(&b) {
            inter += (*p && *q) as u64;
            union += (*p || *q) as u64;
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

pub fn mask_area(m: &Mask) -> u64 {
    m.area()
}

/// One raw RGB video frame, 8 bits per channel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: u64,
    pub timestamp: f64,
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(
        index: u64,
        timestamp: f64,
        width: u32,
        height: u32,
        pixels: Vec<u8>,
    ) -> Result<Self, GeometryError> {
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(GeometryError::PixelBuffer {
                len: pixels.len(),
                expected,
            });
        }
        Ok(Self {
            index,
            timestamp,
            width,
            height,
            pixels,
        })
    }

    pub fn filled(index: u64, timestamp: f64, width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self {
            index,
            timestamp,
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }
}
