//! Geometric latent-representation toolkit.
//!
//! Gaussian, hyperspherical (von Mises–Fisher), spread-loss, Riemannian-metric
//! and rotation-equivariant autoencoders, with a tile preprocessing pipeline
//! and the evaluation harness used to compare them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod equivariance;
pub mod error;
pub mod harness;
pub mod nets;
pub mod patchkit;
pub mod riemann;
pub mod sphere;

pub use error::{Error, Result};
