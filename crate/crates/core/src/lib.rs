//! Behavior-cloning stack for a simulated mini autonomous car.
//!
//! The pipeline mirrors a DonkeyCar-style workflow: drive (or let a scripted
//! expert drive) an Ackermann vehicle around a track while recording camera
//! frames with steering/throttle labels, train a small convolutional network
//! on those records, then let the network drive.
//!
//! Modules:
//! - [`vehicle`]: kinematic bicycle model and body-dimension checks
//! - [`track`], [`camera`]: track geometry and the synthetic camera
//! - [`actuation`]: commands to 12-bit PWM duty ticks
//! - [`dataset`]: session recording, loading, splits and batches
//! - [`nn`]: the network, its gradients, optimizer and checkpoints
//! - [`autopilot`]: preprocessing, inference and the drive loop
//! - [`eval`]: pure-pursuit expert, lap scoring, dataset synthesis

// Validation uses `!(x > 0.0)` style checks on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actuation;
pub mod autopilot;
pub mod camera;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod track;
pub mod vehicle;

pub use error::{Error, Result};
