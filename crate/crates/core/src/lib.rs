//! Differentiable ensemble Kalman filtering of arm pose and body heading from
//! a smartwatch and a smartphone.
//!
//! The crate is organized bottom-up:
//! - [`rotmath`]: quaternions, 6D rotations, device calibration;
//! - [`neuralnet`]: small MLPs with dropout, reverse-mode gradients, Adam;
//! - [`enkf`]: the ensemble Kalman filter over pluggable models;
//! - [`models`]: the four learned submodels and end-to-end training;
//! - [`kinematics`]: elbow and wrist positions from a pose state;
//! - [`data`]: observation/state layouts, augmentation, synthesis, CSV I/O;
//! - [`ingest`]: wire protocol, live assembly and streaming sessions.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod enkf;
pub mod error;
pub mod ingest;
pub mod kinematics;
pub mod models;
pub mod neuralnet;
pub mod rotmath;

pub use error::{Error, Result};
