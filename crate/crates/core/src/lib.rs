//! Deterministic simulator for trusted-node satellite QKD constellations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod error;
pub mod fom;
pub mod geometry;
pub mod isl;
pub mod key_network;
mod kv;
pub mod optical_link;
pub mod pipeline;
pub mod qkd_rate;
pub mod scenario;
pub mod scheduler;
pub mod weather;

pub use error::{Error, Result};
