//! Reverse-mode automatic differentiation over dense `f64` arrays.

mod check;
mod graph;
mod ops;
mod tape;

pub use check::{finite_diff_check, FdReport, ParamReport, FD_SCALE_FLOOR};
pub use graph::RandomGraph;
pub use ops::{Op, LAYER_NORM_EPS, LOG_FLOOR};
pub use tape::{DiffNode, Tape, Var};
