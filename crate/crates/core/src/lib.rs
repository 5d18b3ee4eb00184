//! Metric scale recovery for monocular visual odometry from a known camera
//! height.
//!
//! Each frame's features are triangulated in the image, back-projected with
//! their up-to-scale depths, and filtered down to ground points. Ground points
//! from a short window of frames are fitted jointly, the camera's height above
//! that plane is compared with the known metric height, and the resulting
//! per-frame scale is smoothed and applied to the relative translations.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub use nalgebra;

pub mod delaunay;
pub mod frame;
pub mod geometry;
pub mod gpa;
pub mod gpe;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod scale_filter;
pub mod synth;

pub use delaunay::{triangulate, DelaunayError, Triangulation};
pub use frame::{Feature, FeatureFrame};
pub use geometry::{GeometryError, Intrinsics, PlaneFrame, PlaneHypothesis, Pose, Triangle3};
pub use gpa::{GpaConfig, GpaError, GpaResult, WeightedCloud, WindowBuffer};
pub use gpe::{GpeConfig, GpeError, GroundPointSet};
pub use io::IoError;
pub use metrics::{rle, trajectory_length, EvalReport, StageTimings, Trajectory};
pub use pipeline::{
    evaluate, run_pipeline, Pipeline, PipelineConfig, PipelineError, PipelineOutput,
};
pub use scale_filter::{FilterConfig, ScaleError, ScaleEstimate, ScaleFilter, ScaleStatus};
pub use synth::{generate_scene, PointLabel, Preset, SyntheticScene, SyntheticSequence};
