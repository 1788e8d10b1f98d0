//! Kernelized factorization matrix completion (KFMC) for high-rank matrices.
//!
//! Columns of the data matrix are assumed to lie on a low-dimensional nonlinear
//! variety (or a union of them). The data matrix itself may be full rank, but its
//! image under a polynomial or RBF feature map is low rank, so the missing entries
//! can be recovered by factorizing `phi(X) ~ phi(D) Z` through the kernel trick.
//!
//! Modules:
//! - [`kernel`]: kernel evaluation and kernel matrices.
//! - [`masked`]: observed-entry masks and working completions.
//! - [`offline`]: batch completion.
//! - [`online`]: streaming completion with a dictionary updated per sample.
//! - [`ose`]: completing new columns against a frozen dictionary.
//! - [`baselines`]: low-rank factorization comparators.
//! - [`synth`]: synthetic data and mask generators.
//! - [`sampling`]: rank predictions and sampling-rate bounds.
//! - [`metrics`]: relative errors and numerical rank.
//! - [`io`]: CSV matrices and dictionary checkpoints.

// Parameter checks use `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod masked;
pub mod metrics;
pub mod offline;
pub mod online;
pub mod ose;
pub mod sampling;
pub mod synth;

pub use error::{KfmcError, Result};
pub use kernel::KernelSpec;
pub use masked::{InitStrategy, Mask, MaskedMatrix};
pub use offline::{OfflineHyperparams, OfflineModel};
pub use online::{OnlineHyperparams, OnlineModel};

pub use nalgebra::{DMatrix, DVector};
