//! Spectrally-directed low-rank adaptation at desk scale.
//!
//! Fine-tuning a weight matrix tends to amplify its top singular values
//! and reorient its top singular directions while leaving the rest of the
//! spectrum nearly untouched. This crate provides the machinery to both
//! observe and exploit that structure:
//!
//! - [`linalg`] — dense `f64` matrices and a deterministic thin SVD;
//! - [`spectral`] — spectrum comparison and per-index singular-vector
//!   alignment between a (pre, fine-tuned) weight pair, plus spectral
//!   entropy / effective rank;
//! - [`adapter`] — the adapter layer itself: a frozen base weight, a
//!   learnable per-direction scaling vector `d`, and a low-rank residual
//!   `A·B`, in two interchangeable formulations (an exact SVD-based one
//!   and an efficient Hadamard-mask one), with forward, analytic
//!   backward, and merge;
//! - [`train`] — AdamW + linear warmup/decay schedule, planted-task
//!   generation, and sweep protocols for k / rank / direction ablations;
//! - [`io`] — a minimal byte-exact tensor container format and adapter
//!   checkpoints;
//! - [`gradcheck`] — a finite-difference verification suite for the
//!   analytic gradients;
//! - [`cli`] — the `speclora` command-line front end.
//!
//! Start with the runnable examples: each major capability has one under
//! `examples/`.

pub mod adapter;
pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod linalg;
mod rng;
pub mod spectral;
#[cfg(test)]
pub(crate) mod testutil;
pub mod train;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, SvdFactors};
