//! Numerical laboratory for entropic dynamics.
//!
//! * [`kernel`]: Gaussian maximum-entropy transition kernel, trajectory
//!   sampling and Monte Carlo moment checks.
//! * [`evolution`]: coupled `(ρ, Φ)` evolution on a periodic grid, with a
//!   split-step Schrödinger solver as reference.
//! * [`inference`]: finite-dimensional states and operators, pointer
//!   devices, Bayesian detection updates and weak values.
//! * [`contextuality`]: Pauli-string algebra, the Peres-Mermin square,
//!   valuation search and position valuations.
//!
//! The numerical code is generic over [`Real`] (`f32` or `f64`). The aliases
//! below fix the scalar for the common cases.

// Negated comparisons double as NaN rejection.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod contextuality;
pub mod error;
pub mod evolution;
pub mod inference;
pub mod kernel;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Configuration64 = kernel::Configuration<f64>;
pub type KernelParams64 = kernel::KernelParams<f64>;
pub type MomentReport64 = kernel::MomentReport<f64>;

pub type Grid1D64 = evolution::Grid1D<f64>;
pub type DensityField64 = evolution::DensityField<f64>;
pub type PhaseField64 = evolution::PhaseField<f64>;
pub type HamiltonianSpec64 = evolution::HamiltonianSpec<f64>;
pub type WaveField64 = evolution::WaveField<f64>;

pub type StateVector64 = inference::StateVector<f64>;
pub type HermitianOperator64 = inference::HermitianOperator<f64>;
pub type PointerDevice64 = inference::PointerDevice<f64>;
pub type Likelihood64 = inference::Likelihood<f64>;

pub type Configuration32 = kernel::Configuration<f32>;
pub type KernelParams32 = kernel::KernelParams<f32>;
pub type DensityField32 = evolution::DensityField<f32>;
pub type PhaseField32 = evolution::PhaseField<f32>;
pub type WaveField32 = evolution::WaveField<f32>;
pub type StateVector32 = inference::StateVector<f32>;
pub type HermitianOperator32 = inference::HermitianOperator<f32>;
