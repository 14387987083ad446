//! Desk-scale deep-learning core: a dense f64 tensor engine with reverse-mode
//! autodiff, dual-path network blocks with optional squeeze-excitation channel
//! attention, a seeded image augmentation pipeline, a perturbation-based local
//! surrogate explainer, and confusion-matrix classification metrics.
//!
//! The crate is `no_std` + `alloc`: everything here is pure computation over
//! in-memory buffers. File formats, the CLI, and all IO live in the companion
//! `dpnse-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod augment;
pub mod error;
pub mod gradcheck;
pub mod lime;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod rng;
pub mod serialize;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, TensorId};
