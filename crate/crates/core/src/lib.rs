//! Link-level simulator for a satellite downlink with nonlinear and
//! widely-linear impairments, plus the family of complex-valued extreme
//! learning machine (ELM) post-distorters trained online on a pilot symbol.
//!
//! The crate is organized as five modules:
//!
//! * [`numerics`] — complex dense linear algebra: second-order statistics,
//!   the widely linear least-squares solver (block elimination), and an
//!   SVD-based Moore-Penrose pseudoinverse.
//! * [`waveform`] — QAM mapping, DFT-s-OFDM modulation with cyclic prefix,
//!   pilot generation and frame assembly.
//! * [`channel`] — the impairment chain: Saleh amplifier with optional ideal
//!   pre-distortion, tapped delay line with Doppler, residual frequency
//!   offset, phase noise, I/Q imbalance, and AWGN.
//! * [`receivers`] — pilot-based LS/MMSE baselines and the ELM family
//!   (real ELM, CELM, CELMAH, CELM-WLLS).
//! * [`harness`] — experiment configuration, reproducible Monte-Carlo BER
//!   sweeps, FLOP estimates, and CSV/JSON export.

pub mod channel;
pub mod fft;
pub mod harness;
pub mod numerics;
pub mod receivers;
pub mod signal;
pub mod waveform;

pub use numerics::{CMatrix, CVector, SecondOrderStats, WidelyLinearWeights};
pub use signal::ComplexSignal;

use std::path::PathBuf;

/// Errors shared by every module in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    #[error("non-finite input: {context}")]
    NonFinite { context: String },

    #[error("invalid input: {context}")]
    InvalidInput { context: String },

    /// A regularized linear system could not be factorized. `block` names the
    /// offending matrix ("C" or "schur").
    #[error("singular system in block {block}")]
    SingularSystem { block: &'static str },

    #[error("domain error: {context}")]
    Domain { context: String },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {context}")]
    Parse { context: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
        }
    }

    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }

    pub(crate) fn input(context: impl Into<String>) -> Self {
        Error::InvalidInput {
            context: context.into(),
        }
    }

    pub(crate) fn domain(context: impl Into<String>) -> Self {
        Error::Domain {
            context: context.into(),
        }
    }
}
