//! Tensors, automatic differentiation, layers, and optimizers.
//!
//! The tape in [`graph`] supports differentiating through its own backward
//! pass, which the critic's gradient-penalty term requires.

pub mod graph;
pub mod nn;
pub mod ops;
pub mod optim;

#[cfg(test)]
mod gradcheck_tests;

pub use graph::{grad, Data, Graph, Var};
