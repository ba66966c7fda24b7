//! Low-rank structure of autoregressive sequence models.
//!
//! The crate works with anything that answers *logit queries* (the
//! mean-centered next-token logits at an arbitrary prefix). It provides:
//!
//! - [`model`]: time-varying ISANs, exact enumeration, sampling, KL/TV;
//! - [`constructions`]: copying, noisy parity, SSM embedding and friends;
//! - [`logit_matrix`]: extended logit matrices and the `.elm` file format;
//! - [`spectral`]: SVD, truncation, power-law fits, average KL, principal angles;
//! - [`lingen`]: generation from linear combinations of other histories' logits;
//! - [`learner`]: recovering an ISAN from logit queries;
//! - [`bounds`]: generalization-bound quantities for linear generation.

pub mod bounds;
pub mod constructions;
pub mod error;
pub mod learner;
pub mod linalg;
pub mod lingen;
pub mod logit_matrix;
pub mod model;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
