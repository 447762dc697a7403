use alloc::string::String;

use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid transform: {0}")]
    InvalidTransform(&'static str),

    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    OutOfBounds {
        u: f64,
        v: f64,
        width: usize,
        height: usize,
    },

    #[error("ray is zero or non-finite")]
    InvalidRay,

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("image {width}x{height} is smaller than the {min}px minimum")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("timestamps are not sorted ascending ({0})")]
    UnsortedTimestamps(&'static str),

    #[error("odometry break at scan {index}: fitness {fitness:.4} below floor {floor:.4}")]
    OdometryBreak { index: usize, fitness: f64, floor: f64 },

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("color channel {0} outside [0, 1]")]
    InvalidColor(f64),

    #[error("point cloud has no colors")]
    MissingColors,

    #[error("point cloud has no normals")]
    MissingNormals,

    #[error("no correspondences within {max_corr_dist} at the initial transform")]
    NoCorrespondences { max_corr_dist: f64 },

    #[error("registration failed after {iterations} iterations ({correspondences} feature correspondences)")]
    RegistrationFailed {
        iterations: usize,
        correspondences: usize,
    },

    #[error("alignment fitness {fitness:.4} below gate {gate:.4}")]
    AlignmentGateFailed { fitness: f64, gate: f64 },

    #[error("need at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("ratio undefined: {0}")]
    UndefinedRatio(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid synthetic scene: {0}")]
    InvalidSpec(String),
}
