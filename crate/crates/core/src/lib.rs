//! RGB-D gaze estimation building blocks.

pub mod camera;
pub mod geometry;
pub mod image;
pub mod lm;
pub mod normalization;
pub mod depthproc;
pub mod fusion;
pub mod subjectcal;
pub mod mirrorcal;
pub mod filtering;
pub mod dataset;
pub mod pipeline;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/geometry.md")]
    struct Geometry;
    #[doc = include_str!("../../../book/src/normalization.md")]
    struct Normalization;
    #[doc = include_str!("../../../book/src/depth.md")]
    struct Depth;
    #[doc = include_str!("../../../book/src/fusion.md")]
    struct Fusion;
    #[doc = include_str!("../../../book/src/calibration.md")]
    struct Calibration;
    #[doc = include_str!("../../../book/src/filtering.md")]
    struct Filtering;
    #[doc = include_str!("../../../book/src/dataset.md")]
    struct Dataset;
}
