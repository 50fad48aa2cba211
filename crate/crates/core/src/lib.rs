//! Pathwise pseudo-spectral simulation of the stochastic nonlinear Schrödinger
//! equation with linear multiplicative noise
//!
//! `i dX = ΔX dt + λ|X|^{α-1}X dt - iμX dt + i Σ_k X G_k dβ_k`,
//! `G_k(t,x) = g_k(t) φ_k(x)`, `μ = ½ Σ_k |G_k|²`,
//!
//! together with the gauge and pseudo-conformal calculus used to study its
//! scattering behaviour.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod field;
pub mod functionals;
pub mod noise;
pub mod transforms;

pub use error::{Error, Result};
pub use num_complex::Complex64;

pub(crate) const I: Complex64 = Complex64::new(0.0, 1.0);

/// Version string embedded in every output artifact.
pub const VERSION: &str = concat!("snls ", env!("CARGO_PKG_VERSION"));
