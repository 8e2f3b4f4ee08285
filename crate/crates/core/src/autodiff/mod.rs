//! Reverse-mode differentiation over vector-valued operations, and the
//! finite-difference checker that validates it.

mod check;
mod difference;
mod params;
mod tape;

pub use check::{grad_check, Difference, relative_error, GradCheckError, GradCheckOptions, GradCheckReport};
pub use params::{Gradients, ParamId, ParamSet, Parameter};
pub use tape::{dot_nodes, AutodiffError, Fault, NodeId, Tape};
