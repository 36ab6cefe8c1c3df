//! Localized convergence diagnostics for multi-chain MCMC output.
//!
//! The central statistic is the local potential scale reduction factor
//! `R̂(x)`: the Gelman–Rubin ratio computed on the indicator series
//! `1{θ ≤ x}`, and its supremum `R̂∞` over `x`.

pub mod chains;
pub mod counterexamples;
pub mod diagnostics;
pub mod error;
pub mod ks;
pub mod multivariate;
pub mod population;
pub mod rng;
pub mod simulate;
pub mod statdist;
pub mod thresholds;

pub use chains::{ChainSet, Layout};
pub use error::{Error, Result};
pub use statdist::DistributionSpec;
