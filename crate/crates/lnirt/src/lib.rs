//! Joint hierarchical modeling of response accuracy and response times.
//!
//! This crate implements a family of Bayesian hierarchical models for
//! computer-based tests that record both item scores and item response
//! times. At the measurement level, correctness follows a (multidimensional)
//! Rasch model and log response times follow a (multidimensional) log-normal
//! model; a person-level covariance matrix ties latent abilities to latent
//! speeds, and an item-level covariance matrix ties item easiness to item
//! time-intensity. Three structures are supported, differing in whether
//! ability and speed are unidimensional or follow a Q-matrix:
//! `UA_US`, `MA_US`, and `MA_MS`.
//!
//! What's here:
//!
//! - [`model`]: the measurement models, the joint likelihood, and deviance.
//! - [`stats`]: sampling primitives, from a seeded multi-stream RNG to
//!   multivariate normal conditioning and Wishart/inverse-Wishart draws.
//! - [`sim`]: simulation of persons, items, responses, and response times
//!   from the generative model.
//! - [`sampler`]: Metropolis-within-Gibbs estimation, with exact conjugate
//!   draws for speeds, time-intensities, residual precisions, and covariance
//!   matrices, and adaptive random-walk steps for abilities and intercepts.
//! - [`diagnostics`]: PSRF convergence checks, posterior predictive model
//!   checks, AIC/BIC/DIC, and posterior summaries.
//! - [`recovery`]: a replication harness computing bias, RMSE, and
//!   true-vs-estimated correlations.
//! - [`io`]: CSV/JSON file formats, run configuration, and the command
//!   entry points behind the `lnirt` binary.
//!
//! The `examples/` directory has one runnable program per capability; start
//! with `cargo run --example fit_joint_model`.

// Guards written as `!(x > 0.0)` reject NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod io;
pub mod model;
pub mod recovery;
pub mod sampler;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use model::{ItemParams, ModelStructure, ObservedData, PersonParams, QMatrix};
pub use sampler::{ChainState, JointModel, PosteriorDraws, PriorSpec, SamplerConfig};
pub use sim::{OmegaMode, SimDesign};
pub use stats::{Rng, SpdMatrix};
