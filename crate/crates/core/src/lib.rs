//! Ultra-lightweight edge detection networks built from scratch.
//!
//! The crate covers dense NCHW tensor kernels with exact backward passes
//! ([`ops`], [`nn`]), the residual block zoo behind a runtime registry
//! ([`blocks`]), the three-stage detector ([`model`]), training ([`train`]),
//! benchmark evaluation ([`eval`]), parameter and MAC accounting ([`audit`])
//! and image I/O ([`io`]).

pub mod audit;
pub mod blocks;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod nn;
pub mod ops;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig, Transition};
pub use tensor::{Scalar, Tensor};
