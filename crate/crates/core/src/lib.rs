//! Numerical toolkit for one-parameter quantum channel estimation.
//!
//! The crate compares two figures of merit for estimating the parameter of a
//! channel family: Fisher-information (Cramer-Rao style) bounds computed from
//! the channel's Choi matrix, and the Bayesian mini-max risk of covariant
//! phase estimation. The modules are layered:
//!
//! - [`linalg`]: dense complex matrices, partial traces, vectorization,
//!   Hermitian eigendecomposition, support-restricted pseudo-inverses.
//! - [`channel`]: one-parameter channel families (unitary, phase damping,
//!   depolarizing, shift mixtures), their Choi matrices and derivatives,
//!   and tensor products of families.
//! - [`fisher`]: SLD and RLD Fisher information of state families, the
//!   channel RLD maximum with its attaining input, input optimization for
//!   the SLD quantity, and additivity/superadditivity checks.
//! - [`phase`]: interferometric phase estimation; two-branch probe states,
//!   covariant mini-max risk on the Fourier-mode space, posterior ambiguity
//!   of phase measurements, and a covariant-estimator simulator.
//! - [`estimate`]: measurement strategies as samplable outcome
//!   distributions; Monte Carlo mean-squared-error estimation, local worst-
//!   case risk, two-step adaptive estimation, and bias diagnostics.

#![forbid(unsafe_code)]

pub mod channel;
pub mod error;
pub mod estimate;
pub mod fisher;
pub mod linalg;
pub mod phase;
pub mod sample;

pub use error::{Error, Result};
pub use linalg::{CMatrix, Complex64};
