//! Desk-scale laboratory for learning with combined closed-set and open-set
//! label noise.
//!
//! The crate is organised around the stages of an experiment:
//!
//! - [`benchgen`] builds provenance-tagged noisy benchmarks and persists them
//!   in the `EDMv1` manifest format.
//! - [`nn`] is a small multilayer rectifier network with a reverse-mode tape,
//!   SGD with momentum, input jitter and the `EDMCKPT1` checkpoint format.
//! - [`losses`] holds every training objective (subjective-logic, labelled
//!   cross-entropy, unlabelled squared error, prior regulariser).
//! - [`gmm`] fits a one-dimensional Gaussian mixture to per-sample losses and
//!   turns component posteriors into clean / open / closed group posteriors.
//! - [`train`] runs the dual-network EvidentialMix loop and the plain
//!   cross-entropy control.
//! - [`eval`] measures test accuracy and noise-type identification and writes
//!   the comma-separated exports.

pub mod benchgen;
mod checksum;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
