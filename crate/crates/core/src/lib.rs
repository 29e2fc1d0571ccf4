#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diffcore;
pub mod evaluation;
pub mod models;
pub mod presets;
pub mod spline;
pub mod systems;
pub mod training;

#[cfg(feature = "cli")]
pub mod cli;
