//! File formats, stage orchestration and run ledgers around `splatforge-core`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod error;
pub mod image_io;
pub mod ledger;
pub mod ply;
pub mod sparse_model;
pub mod stages;

pub use error::{Error, Result};
pub use splatforge_core as core;
