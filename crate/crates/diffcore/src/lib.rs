//! Reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Graph`] records primitives as they are evaluated; [`Graph::backward`]
//! sweeps the record in reverse and returns gradients for every parameter
//! of a [`ParamStore`]. [`gradcheck`] compares those gradients against
//! central differences, and [`checkpoint`] persists a store bit-exactly.

pub mod array;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod params;

pub use array::NdArray;
pub use error::{DiffError, Result};
pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
pub use graph::{Fault, Graph, NodeGrads, Var, MASKED};
pub use nn::{linear, lstm_cell, LstmWeights};
pub use params::{Adam, Gradients, ParamId, ParamStore};
