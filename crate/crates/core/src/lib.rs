//! Adversarial text detection over learned representations.
//!
//! A small, fully differentiable text classifier is trained, attacked at the
//! character and word level, and the adversarial inputs are detected with
//! nearest-neighbor influence features (NNIF), Mahalanobis confidence scores
//! and local intrinsic dimensionality.

pub mod analysis;
pub mod attacks;
pub mod corpus;
pub mod detectors;
pub mod error;
pub mod influence;
pub mod mahalanobis;
pub mod model;
pub mod neighbors;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
