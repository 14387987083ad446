//! Command-line harness around `dpnse-core`: synthetic datasets, training,
//! evaluation, explanation, and augmentation preview, plus the file formats
//! they speak (PGM/PPM images, TAB-separated manifests, key-value configs,
//! CSV training logs, JSON reports, and the `DPNSE01` model binary).

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod model_file;
pub mod pnm;
pub mod synth;
pub mod train;

pub use error::{CliError, Result};
