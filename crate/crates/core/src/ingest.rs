//! Line-delimited JSON interchange for per-frame detections and masks.
//!
//! One frame per line:
//!
//! ```text
//! {"frame_index":3,"detections":[{"class":"flame","bbox":[10.0,20.0,30.0,60.0],"confidence":0.9}],"masks":[{"detection":0,"mask":{"width":64,"height":64,"runs":[1300,4,60]}}]}
//! ```
//!
//! `masks` is omitted when the producer only emits boxes. Mask runs are
//! row-major and start with a background run.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Detection, Mask, ObjectClass};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: frame_index {got} follows {previous}")]
    Order {
        line: usize,
        previous: u64,
        got: u64,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub detection: usize,
    pub mask: Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub frame_index: u64,
    pub detections: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<Vec<MaskEntry>>,
}

impl FrameAnnotation {
    pub fn new(frame_index: u64, detections: Vec<Detection>) -> Self {
        Self {
            frame_index,
            detections,
            masks: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if let Some(masks) = &self.masks {
            for entry in masks {
                if entry.detection >= self.detections.len() {
                    return Err(format!(
                        "mask refers to detection {} but only {} detections present",
                        entry.detection,
                        self.detections.len()
                    ));
                }
            }
        }
        Ok(())
    }

    /// External mask for the detection at `index`, if the producer supplied one.
    pub fn mask_for(&self, index: usize) -> Option<&Mask> {
        self.masks
            .as_ref()?
            .iter()
            .find(|m| m.detection == index)
            .map(|m| &m.mask)
    }

    /// Detections of one class, paired with their index in the frame.
    pub fn of_class(&self, class: ObjectClass) -> Vec<(usize, Detection)> {
        self.detections
            .iter()
            .enumerate()
            .filter(|(_, d)| d.class == class)
            .map(|(i, d)| (i, *d))
            .collect()
    }
}

/// Sequential reader over an annotation stream. Blank lines are skipped.
pub struct AnnotationReader<R> {
    source: R,
    line_no: usize,
    previous: Option<u64>,
    buf: String,
}

impl<R: BufRead> AnnotationReader<R> {
    pub fn new(source: R) -> Self {
        Self {
            source,
            line_no: 0,
            previous: None,
            buf: String::new(),
        }
    }
}

impl<R: BufRead> Iterator for AnnotationReader<R> {
    type Item = Result<FrameAnnotation, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.source.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line_no += 1;
            if self.buf.trim().is_empty() {
                continue;
            }
            let line = self.line_no;
            let ann: FrameAnnotation = match serde_json::from_str(self.buf.trim_end()) {
                Ok(a) => a,
                Err(e) => {
                    return Some(Err(IngestError::Parse {
                        line,
                        message: e.to_string(),
                    }))
                }
            };
            if let Err(message) = ann.validate() {
                return Some(Err(IngestError::Parse { line, message }));
            }
            if let Some(prev) = self.previous {
                if ann.frame_index < prev {
                    return Some(Err(IngestError::Order {
                        line,
                        previous: prev,
                        got: ann.frame_index,
                    }));
                }
            }
            self.previous = Some(ann.frame_index);
            return Some(Ok(ann));
        }
    }
}

pub fn read_annotation_stream<R: BufRead>(source: R) -> AnnotationReader<R> {
    AnnotationReader::new(source)
}

/// Reads a whole stream, stopping at the first error.
pub fn read_all<R: BufRead>(source: R) -> Result<Vec<FrameAnnotation>, IngestError> {
    AnnotationReader::new(source).collect()
}

/// Writes one annotation as a canonical line (compact JSON, trailing newline).
pub fn write_annotation<W: Write>(out: &mut W, ann: &FrameAnnotation) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, ann)?;
    out.write_all(b"\n")
}

pub fn write_all<'a, W: Write>(
    out: &mut W,
    anns: impl IntoIterator<Item = &'a FrameAnnotation>,
) -> std::io::Result<()> {
    for a in anns {
        write_annotation(out, a)?;
    }
    Ok(())
}
