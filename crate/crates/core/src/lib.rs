//! Matched sample selection and attribute disentanglement over precomputed
//! latent and recognition-embedding spaces.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`latent`]: expanded/restricted codes and regularized projection
//! - [`dataset`]: samples, manifests and file formats
//! - [`matching`]: greedy latent-distance matching with identity removal
//! - [`propensity`]: logistic propensity scores and caliper matching
//! - [`balance`]: covariate balance and intersectional reports
//! - [`disentangle`]: correlation-penalized attribute mappers
//! - [`benchmark`]: same-identity recognition distance gaps
//! - [`synth`]: confounded synthetic populations with known ground truth
//! - [`cli`]: the `matchlab` command line

pub mod balance;
pub mod benchmark;
pub mod cli;
pub mod dataset;
pub mod disentangle;
pub mod error;
pub mod latent;
pub mod matching;
pub mod optim;
pub mod propensity;
pub mod report;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
