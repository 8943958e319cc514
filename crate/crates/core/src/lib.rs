//! Probabilistic virtual process chain for sheet molding compound.

// Guards written as `!(x > 0.0)` also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod damage;
pub mod dmn;
pub mod error;
pub mod meanfield;
pub mod microstructure;
pub mod molding;
pub mod pipeline;
pub mod rng;
pub mod specimen;
pub mod tensor;
pub mod uq;

pub use error::{Error, Result};
