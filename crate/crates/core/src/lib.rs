//! Sonomyography muscle-computer interface.
//!
//! Ultrasound frames are smoothed and correlated against two calibration
//! references to give a scalar muscle signal, which is normalized against
//! adaptive bounds and drives a one-dimensional cursor through a target
//! acquisition task. A warp-based phantom and virtual subjects stand in for
//! the probe and the participant; the metrics module scores recorded trials.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod frame;
pub mod metrics;
pub mod minjerk;
pub mod normalization;
pub mod phantom;
pub mod session;
pub mod simulation;
pub mod task;
