//! Transformer neural processes: meta-learning under uncertainty as masked sequence modeling.

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tasks;
pub mod tensor;
pub mod train;

pub use error::{Result, TnpError};
