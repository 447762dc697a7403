//! Algorithmic core of the splatforge pipeline. `no_std`, allocation only.
#![no_std]
// `!(x > 0.0)` is used on purpose: it rejects NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod align;
pub mod colorize;
pub mod cubemap;
pub mod error;
pub mod features;
pub mod fpfh;
pub mod gaussian;
pub mod geometry;
pub mod homography;
pub mod image;
pub mod keyframe;
pub mod normals;
pub mod odometry;
pub mod prism;
pub mod registration;
pub mod rng;
pub mod sfm;
pub mod spatial;
pub mod synth;
pub mod temporal;

pub use error::{Error, Result};
pub use geometry::{apply_transform, ColorRgb, Point3, PointCloud, RigidTransform};
pub use spatial::{build_index, SpatialIndex};
