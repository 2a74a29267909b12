//! Floating-point abstraction for the numerical kernels.
//!
//! Everything downstream of the channel conversion is generic over [`Scalar`]
//! so the same code runs in `f32` or `f64`. The crate-root aliases pin the
//! default precision to `f64`, which the gradient checks rely on.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, NumAssign};
use rand::Rng;
use rand_distr::StandardNormal;

/// Real scalar type usable by the kernels: `f32` or `f64`.
pub trait Scalar:
    Float + NumAssign + Sum + fmt::Display + fmt::LowerExp + fmt::Debug + Send + Sync + 'static
{
    /// One draw from the standard normal distribution N(0, 1).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

impl Scalar for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

/// Lossless-enough constant conversion; panics only on values outside the
/// target type's range, which never happens for the literals used here.
pub(crate) fn cast<S: Scalar>(x: f64) -> S {
    S::from(x).expect("constant representable in scalar type")
}
