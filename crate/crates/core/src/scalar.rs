//! Scalar abstraction shared by every numerical module.
//!
//! All field, kernel and operator code is written against [`Real`], which is
//! implemented for `f32` and `f64`. The exact Pauli algebra does not need a
//! scalar at all; it only touches `Real` when strings are turned into dense
//! matrices.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating point scalar: `f32` or `f64`.
///
/// `Real` pulls in both [`Float`] and `rustfft::FftNum` (which brings
/// `num_traits::Signed`). Both define `abs` and `signum`, so generic code
/// calls those through `Float::abs(x)` rather than method syntax.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + rustfft::FftNum
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Draws one standard normal variate.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Converts an `f64` literal. Panics only for values the type cannot
    /// represent at all, which never happens for `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Converts a count or index.
    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    /// Lossy conversion used for reports and error messages.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// A tolerance that is `requested` for `f64` but never tighter than what
    /// the type can resolve (about `1e3` ulps).
    #[inline]
    fn tol(requested: f64) -> Self {
        let floor = Self::epsilon() * Self::lit(1e3);
        Float::max(Self::lit(requested), floor)
    }
}

impl Real for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

impl Real for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

/// Complex number over a [`Real`] scalar.
pub type Cplx<T> = Complex<T>;
