//! Floating-point scalar abstraction: everything numeric is generic over
//! [`Scalar`], instantiated as `f32` or `f64`.

use std::fmt::{Debug, Display, LowerExp};
use std::str::FromStr;

use num_traits::float::FloatConst;
use num_traits::{Float, NumAssign};

/// Real scalar type for fields, norms and solvers.
pub trait Scalar:
    Float
    + FloatConst
    + NumAssign
    + Debug
    + Display
    + LowerExp
    + FromStr<Err = std::num::ParseFloatError>
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;

    fn from_usize(n: usize) -> Self;

    /// Default relative-residual tolerance for the inner linear solver.
    fn default_linear_tolerance() -> Self;

    fn to_f64(self) -> f64;

    fn half(self) -> Self {
        self / Self::from_f64(2.0)
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn from_usize(n: usize) -> Self {
        n as f32
    }
    fn default_linear_tolerance() -> Self {
        1e-6
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn from_usize(n: usize) -> Self {
        n as f64
    }
    fn default_linear_tolerance() -> Self {
        1e-10
    }
    fn to_f64(self) -> f64 {
        self
    }
}
