//! Flare-stack combustion monitoring.
//!
//! Detections and masks arrive per frame (from an external detector or the
//! built-in scene simulator), flames are tracked with SORT, three visual
//! features are measured per flame, reduced to two principal components and
//! classified as high or low combustion efficiency.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod ingest;
pub mod stats;
pub mod tracker;
pub mod classify;
pub mod features;
pub mod segment;
pub mod labeling;
pub mod simulator;
pub mod pipeline;
