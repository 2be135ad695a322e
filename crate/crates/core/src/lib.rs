//! Divide-and-conquer posterior sampling combined through Wasserstein-2
//! barycenters.
//!
//! Subset posteriors are sampled in parallel with tempered likelihoods
//! ([`models`]), optionally pushed through functionals ([`functionals`]), and
//! combined on a fixed grid by a barycenter linear program ([`barycenter`]).
//! [`diagnostics`] compares the result with a full-data reference and
//! [`orchestrator`] runs complete experiments.

pub mod barycenter;
pub mod cluster;
pub mod diagnostics;
pub mod error;
pub mod functionals;
pub mod lp;
pub mod measures;
pub mod models;
pub mod orchestrator;
pub mod rng;

pub use error::{Error, Result};
