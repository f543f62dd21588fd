//! Link-level simulation of CP-free OFDM receivers.
//!
//! The crate models a CP-free OFDM link (no cyclic prefix, so the channel
//! tail leaks into the next block and breaks subcarrier orthogonality) and
//! the receivers that cope with it:
//!
//! * [`estimation`]: LS and LMMSE frequency-domain channel estimation and
//!   CE-NET, a single affine layer initialized from the LMMSE weights and
//!   refined by training.
//! * [`detection`]: inter-block interference cancellation, the OAMP detector
//!   and its unfolded counterpart OAMP-NET with two trainable scalars per
//!   layer.
//! * [`harness`]: configuration-driven BER/MSE sweeps, dataset generation
//!   and CSV reporting, all bitwise reproducible from a master seed.
//!
//! [`numerics`], [`channel`] and [`modem`] hold the shared building blocks.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod detection;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod modem;
pub mod numerics;
pub mod optim;

pub use error::{Error, Result};

/// Complex sample type used throughout the crate.
pub type C64 = num_complex::Complex64;
