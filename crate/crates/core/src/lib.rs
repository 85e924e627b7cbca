//! Stochastic Klausmeier system with porous-medium diffusion and
//! multiplicative spectral noise on `[0,1]^d`.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod config;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod fixedpoint;
pub mod noise;
pub mod output;
pub mod parallel;
pub mod run;
pub mod stats;

pub use error::{Error, Result};
