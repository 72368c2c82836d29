//! Graybox modeling and optimal control of a qubit coupled to unknown
//! bosonic or fermionic pseudo-mode noise.
//!
//! The crate is organized around the pipeline:
//! operators and states ([`linalg`]) -> Gaussian pulse trains ([`pulse`]) ->
//! ground-truth Lindblad simulation ([`sim`]) -> prepare-control-measure
//! datasets ([`dataset`]) -> recurrent graybox model with manual reverse-mode
//! gradients ([`model`]) -> constrained pulse optimization for gate synthesis
//! ([`control`]).

pub mod linalg;
pub mod pulse;
pub mod sim;
pub mod dataset;
pub mod model;
pub mod control;

pub use linalg::{DensityMatrix, Operator, UnitaryOperator};
