//! Analysis and optimization of the inference-outage probability of a
//! latency-constrained edge inference system.
//!
//! A device fuses features from `K` observations and uploads the `S` most
//! discriminative ones over a block-fading channel; the server classifies
//! whatever arrives. Under one end-to-end deadline, computation (more
//! observations) and communication (more features) compete. This crate
//! models that system end to end:
//!
//! - [`gmm`]: the Gaussian-mixture data model and its discriminant-gain
//!   profile;
//! - [`classifier`]: Mahalanobis classification and accuracy estimates;
//! - [`channel`]: the Rayleigh erasure channel and the latency budget;
//! - [`outage`]: the receive-DG distribution, its Gaussian approximation,
//!   and exact/empirical outage probabilities;
//! - [`optimizer`]: the concave surrogate and the feature-count optimizer,
//!   with brute-force and benchmark baselines;
//! - [`cnn`]: the lookup-table pipeline for classifiers without closed
//!   forms, over a pluggable inference backend;
//! - [`experiment`]: scenario configs, sweep runner, CSV output.

// `!(x > 0.0)`-style range checks reject NaN along with the out-of-range
// values; the positive form would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod classifier;
pub mod cnn;
pub mod error;
pub mod experiment;
pub mod gmm;
pub mod numerics;
pub mod optimizer;
pub mod outage;

pub use error::{Error, Result};
pub use numerics::{Probability, RngStream};
