//! Graph factorization machines for multi-field tabular prediction.

pub mod cli;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod explain;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
