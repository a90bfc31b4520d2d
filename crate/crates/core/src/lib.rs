//! Dual-quadric object landmarks constrained by convex-hull plane-algebraic errors.

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constraints;
pub mod dataset_io;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod geometry;
pub mod hull;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod polygon;
pub mod scene_sim;

pub use error::{Error, Result};
