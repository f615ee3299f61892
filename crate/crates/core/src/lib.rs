//! Device, programming, crossbar and network models for ferroelectric FinFET
//! compute-in-memory inference.
//!
//! The crate is `no_std` with `alloc` when the default `std` feature is off.
//! Noise-trace synthesis needs an FFT and is only available with `std`.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod crossbar;
pub mod device;
mod error;
mod math;
pub mod network;
pub mod nonideality;
pub mod programming;
pub mod rng;

pub use error::{Error, Result};
