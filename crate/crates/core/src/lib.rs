//! Multimodal cross-modal transformer with a from-scratch autodiff substrate,
//! the rotating 10-fold evaluation protocol, classification metrics, and a
//! parameter-isolation / ablation search harness.

pub mod data;
pub mod error;
pub mod hpo;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
