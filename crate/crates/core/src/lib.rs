//! Desk-scale laboratory for manifold-embedding GAN objectives.
//!
//! The discriminator maps samples to an `m`-dimensional embedding code
//! instead of a scalar, and the adversarial objective scores codes with a
//! cosine pivot, a Gaussian log-density, or a norm/log-entropy combination.
//! A topological-consistency regularizer asks the discriminator to commute
//! with convex mixing of real and generated samples, which acts as a
//! Lipschitz constraint without fixing the constant.
//!
//! Layout:
//! - [`autodiff`]: dense reverse-mode engine (with double backward).
//! - [`nn`]: toy generator/discriminator, initialization, checkpoints.
//! - [`objectives`]: Std-GAN, WGAN and the three manifold objectives.
//! - [`constraints`]: topological consistency, clipping, gradient penalty,
//!   continuity probe and the numerical theorem suite.
//! - [`trainer`]: alternating critic/generator training with Adam.
//! - [`data`], [`metrics`]: synthetic 2D sets and evaluation instruments.
//! - [`experiment`], [`verify`]: config-driven runs, comparison and self-checks.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod constraints;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod par;
pub mod rng;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
