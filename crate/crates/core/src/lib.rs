//! Intrinsically motivated online learning of visuo-motor coordination.
//!
//! An agent moves a camera over a planar scene, picks self-generated goals
//! from a self-organizing map and learns forward and inverse models online.
//! Goal selection and the exploration/exploitation balance are regulated by
//! the dynamics of prediction errors tracked at two levels:
//!
//! - per goal: FIFO buffers of prediction errors whose regression slope
//!   ranks goals by learning progress ([`monitor`], [`policy`]);
//! - globally: a FIFO of test-set MSE values of the forward model whose
//!   slope resizes the goal buffers and scales the exploration noise.
//!
//! Module map:
//!
//! - [`nnet`] dense networks, backpropagation, dropout and AdaDelta
//! - [`som`] goal map
//! - [`encoder`] image compression into sensory states
//! - [`world`] procedural scene, camera trajectories, test set
//! - [`models`] inverse/forward models and episodic memory
//! - [`monitor`] prediction-error buffers and trend estimation
//! - [`policy`] goal selection and exploration noise
//! - [`engine`] iteration loop, single runs and the design of experiments
//! - [`report`], [`plot`], [`cli`] file formats, SVG plots and subcommands

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod encoder;
pub mod engine;
pub mod error;
pub mod models;
pub mod monitor;
pub mod nnet;
pub mod plot;
pub mod policy;
pub mod report;
pub mod som;
pub mod world;

pub use error::{Error, Result};

/// Encoded visual input; every component lies in `[0, 1]`.
pub type SensoryState = Vec<f64>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
