//! Counterfactual explanations for tabular classifiers with a Gaussian
//! process auto-encoder built from random Fourier features.
//!
//! The pipeline: [`dataio`] turns a CSV into standardized, one-hot encoded
//! splits; [`gpae`] trains the encoder/decoder/classifier; [`density`] fits a
//! latent density; [`cfsearch`] finds boundary counterfactuals by a
//! primal-dual iteration; [`betaselect`] picks the density weight; and
//! [`metrics`] scores the results against the [`baselines`].

pub mod error;
pub mod seed;
pub mod dataio;
pub mod rff;
pub mod gpae;
pub mod synth;
pub mod density;
pub mod cfsearch;
pub mod betaselect;
pub mod metrics;
pub mod baselines;
pub mod pipeline;
mod serde_arr;

pub use error::{Error, Result};
