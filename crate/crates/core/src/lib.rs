//! Simulation and analysis of conveyor-mode shuttled spin qubits.

// NaN inputs must fail validation, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod benchmarking;
pub mod cli;
pub mod conveyor;
pub mod dynamics;
pub mod error;
pub mod exchange;
pub mod numerics;
pub mod quantum;
pub mod readout;
pub mod rng;
pub mod teleport;
pub mod tomography;

pub use error::{Error, Result};
