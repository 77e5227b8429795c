//! Diffusion modeling toolkit for categorical data on the probability
//! simplex: forward Jacobi diffusion, score-matching training, reverse-SDE
//! sampling with time dilation, and ODE-based likelihood evaluation.

pub mod dictionary;
pub mod error;
pub mod jacobi;
pub mod likelihood;
pub mod neural;
pub mod quad;
pub mod rng;
pub mod sampling;
pub mod scorefield;
pub mod simplex;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
