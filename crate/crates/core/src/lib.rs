//! Microstate clustering of EEG topographies with a convolutional VAE and a mixture prior.

pub mod eeg;
pub mod error;
pub mod metrics;
pub mod modkmeans;
pub mod nn;
pub mod sweep;
pub mod topomap;
pub mod trainer;
pub mod vade;

pub use error::{Error, Result};
