//! Scalar reverse-mode differentiation.
//!
//! Models build their energy and its input gradient as explicit nodes (edge
//! derivatives are closed-form), so a single reverse pass over the loss
//! yields parameter gradients that include the mixed second-order terms.

mod graph;
mod params;

pub use graph::{Adjoints, Graph, GraphError, Var};
pub use params::{ParamSlice, ParameterStore, ParameterStoreBuilder};
