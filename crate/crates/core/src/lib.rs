//! Real-time qubit readout discrimination: synthetic readout signals,
//! weighted digital demodulation, a small feed-forward discriminator and a
//! bit-exact emulator of its fixed-point hardware pipeline.

pub mod cli;
pub mod config;
pub mod demod;
pub mod emu;
pub mod error;
pub mod fnn;
pub mod fxp;
pub mod io;
pub mod iqsim;
pub mod metrics;
pub mod pipeline;
pub mod pulseshape;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
