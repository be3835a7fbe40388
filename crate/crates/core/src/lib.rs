#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod body;
pub mod condition;
pub mod diffcore;
pub mod error;
pub mod flow;
pub mod heatmaps;
pub mod losses;
pub mod masks;
pub mod metrics;
pub mod model;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
