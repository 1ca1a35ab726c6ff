//! Reverse-mode differentiation over dense vectors.
//!
//! The op set is the closure needed by the toy prior and the losses: affine
//! maps, SiLU, add/sub/scale, dot, L2 norm, cosine similarity, concatenation
//! and timestep-embedding lookup.

mod check;
mod graph;
mod params;

pub use check::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use params::{Gradients, ParamId, Parameter, ParameterSet};

#[cfg(test)]
mod tests;
