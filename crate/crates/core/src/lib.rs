//! Reconstruction of the space-dependent factor of a parabolic source term
//! from noisy measurements on the top boundary.
//!
//! The forward model is `a(x)·u_t − Δu = F(x)·G(x,t)` on the unit
//! square/cube with zero initial data and homogeneous Neumann boundary
//! conditions. Given data `ũ` on the top boundary over (0,T), the unknown
//! `F` is recovered by minimizing a regularized misfit functional with a
//! conjugate-gradient method whose gradient comes from a backward-in-time
//! adjoint solve.
//!
//! Everything numeric is generic over the scalar type ([`Scalar`],
//! implemented for `f32` and `f64`); the aliases below fix `f64`, which the
//! command-line tools use throughout.

pub mod csv;
pub mod diagnostics;
mod error;
pub mod grid;
pub mod objective;
pub mod optimizer;
pub mod pde;
mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Field64 = grid::ScalarField<f64>;
pub type SpaceTimeField64 = grid::SpaceTimeField<f64>;
pub type TimeAxis64 = grid::TimeAxis<f64>;
pub type Trace64 = objective::BoundaryTrace<f64>;
pub type Weights64 = objective::ObservationWeights<f64>;
pub type Problem64 = synth::ProblemSpec<f64>;
pub type Result64 = optimizer::ReconstructionResult<f64>;
