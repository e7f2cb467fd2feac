//! Quickest change detection with a censoring sensor.
//!
//! A remote sensor observes a stream that may switch from a pre-change law
//! to a post-change law at an unknown time, and transmits only observations
//! deemed informative so that the average pre-change transmission rate stays
//! within an energy budget. The decision maker runs a stopping rule on what
//! arrives: CuSum or the Shiryaev-Roberts-Pollak recursion driven by the
//! censored likelihood ratio, or the data-efficient CuSum baseline that
//! skips observations outright.
//!
//! The crate provides the observation models ([`model`]), censoring policies
//! and the optimal-region search ([`censoring`]), the detector recursions
//! ([`detectors`]), an integral-equation solver for SRP run lengths
//! ([`numerics`]) and a reproducible Monte Carlo harness ([`simulation`]).

// Validation guards are written as `!(x > 0.0)` so NaN parameters fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod censoring;
pub mod detectors;
pub mod error;
pub mod model;
pub mod numerics;
pub mod simulation;

pub use error::{Error, Result};
