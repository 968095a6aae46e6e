//! Contrastive Shapley attribution over generative counterfactuals.
//!
//! A shift predictor maps a latent code and a per-attribute direction spec
//! (`+1` increase, `-1` decrease, `0` unchanged) to a counterfactual latent.
//! Each coalition of attributes becomes a spec, the target model's output on
//! the resulting counterfactual becomes the coalition's value, and Shapley
//! values split the gap between the original and the full counterfactual.

pub mod error;
pub mod explain;
pub mod numerics;
pub mod oracle;
pub mod shapley;
pub mod shift;
pub mod world;

pub use error::{Error, Result};
