//! Joint transmit precoding and receive antenna coding for a multi-user
//! MISO downlink in which every user carries a switch-reconfigurable pixel
//! antenna and the transmitter uses one-layer rate splitting.
//!
//! Module map:
//! - [`em_model`]: multiport network, port currents, pattern basis, pattern coders.
//! - [`channel`]: synthetic hardware and channels, CSIT errors, SAA sample sets.
//! - [`rsma`]: SINRs, sample-average rates, RS-ZF-SVD and SDMA-ZF precoders.
//! - [`wmmse`]: WMMSE precoder updates, SEBO coder search, alternating optimization.
//! - [`codebook`]: Lloyd codebook training and online codeword selection.
//! - [`harness`]: experiment runner, CSV results, CLI plumbing.

pub mod antenna_file;
pub mod channel;
pub mod codebook;
pub mod config;
pub mod em_model;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod rsma;
pub mod sebo;
pub mod selftest;
pub mod wmmse;

pub use error::{Error, Result};
