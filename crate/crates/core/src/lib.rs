//! Qubit noise spectroscopy.
//!
//! Simulates coherence decays under dynamical-decoupling sequences from
//! parametric noise spectra, inverts decays back to spectra (classical
//! baselines and a recurrent network), denoises measured decays and
//! optimizes π-pulse placement.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod eval;
pub mod fit;
pub mod forward;
pub mod inversion;
mod io_util;
pub mod nn;
pub mod optimize;
pub mod quadrature;
pub mod sequence;
pub mod spectrum;

pub use error::{Error, Result};
