//! GAN-based background suppression for hyperspectral anomaly detection.
//!
//! A conditional encoder–decoder GAN learns to reconstruct background
//! spectra; subtracting its reconstruction leaves a spectral difference image
//! in which anomalies stand out, and the RX (Mahalanobis) detector scores
//! that difference image. Classical RX, weighted RX and an autoencoder
//! reconstruction-error detector are included as baselines, together with
//! ROC/AUC evaluation on synthetic scenes with implanted targets.

pub mod cli;
pub mod detect;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod gan;
pub mod hsi;
pub mod nn;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
