//! Lung-ultrasound local-phase feature pipeline and multi-scale residual
//! CNN classifier.
//!
//! The library is organized as a chain of pure image stages feeding a
//! small training stack:
//!
//! - [`imgcore`] — grayscale image container, PNG/PGM/PFM I/O, cropping,
//!   bilinear resizing, and 2-D FFT utilities.
//! - [`phasefilt`] — quadrature band-pass filtering, the monogenic signal,
//!   and local phase energy extraction.
//! - [`enhance`] — Beer-Lambert transmission maps and attenuation-inverting
//!   contrast enhancement.
//! - [`frst`] — fast radial symmetry transform over the enhanced images.
//! - [`net`] — multi-scale residual CNN with early/mid/late feature fusion,
//!   trained with cross-entropy and Adam.
//! - [`data`] — dataset manifests, subject-disjoint k-fold planning,
//!   feature precomputation, and batch assembly.
//! - [`metrics`] — confusion-matrix evaluation and fold aggregation.
//! - [`cli`] — subcommand orchestration with reproducible configuration.

pub mod cli;
pub mod data;
pub mod enhance;
mod error;
pub mod frst;
pub mod imgcore;
pub mod metrics;
pub mod net;
pub mod phasefilt;

pub use error::{Error, Result};
