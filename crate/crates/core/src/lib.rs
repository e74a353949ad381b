//! AutoML toolbox for classifying 1-D sensor signals.
//!
//! The crate searches every combination of seven feature extractors, five
//! feature rankers and two classifiers, choosing the number of retained
//! features by brute force inside each training fold. Pipelines are scored
//! with stratified K-fold or leave-one-group-out cross-validation, so the
//! accuracy lost to an unseen operating condition (domain shift) can be
//! measured directly. An MLP baseline and model-agnostic occlusion maps
//! complete the toolbox.
//!
//! See the runnable programs under `examples/` for one walkthrough per
//! capability.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifiers;
pub mod container;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod features;
pub mod interpret;
pub mod matrix;
pub mod mlp;
pub mod plots;
pub mod selection;
pub mod validation;

pub use error::{Error, Result};
pub use matrix::Matrix;
