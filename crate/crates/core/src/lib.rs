//! Bounded low-rank adapters for gradient-difference unlearning, with the
//! numerics, models, diagnostics, and evaluation needed to study when
//! gradient ascent diverges.

pub mod adapters;
pub mod complexity;
pub mod diagnostics;
pub mod error;
pub mod evalkit;
pub mod gradcheck;
pub mod linalg;
pub mod model;
pub mod nnet;
pub mod rng;
pub mod unlearn;

pub use error::{Error, Result};
