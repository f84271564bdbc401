//! Floating-point abstraction shared by every numerical module.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::{Complex, RealField};
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar the crate is generic over: `f32` or `f64`.
///
/// `RealField` supplies the linear algebra (Cholesky, Hermitian eigen
/// decompositions over `Complex<T>`), `num-traits` supplies the numeric
/// conversions used for constants and reporting.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal representable")
    }

    /// Widening conversion used at reporting boundaries.
    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Machine epsilon of the underlying type.
    #[inline]
    fn eps() -> Self {
        Self::default_epsilon()
    }

    /// `true` when the type carries roughly double precision.
    #[inline]
    fn is_double() -> bool {
        Self::default_epsilon().as_f64() < 1e-12
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex number over a [`Real`] scalar.
pub type Cx<T> = Complex<T>;

#[inline]
pub(crate) fn cx<T: Real>(re: T, im: T) -> Cx<T> {
    Complex::new(re, im)
}

#[inline]
pub(crate) fn re<T: Real>(x: T) -> Cx<T> {
    Complex::new(x, T::zero())
}

/// `r * e^{j theta}`.
#[inline]
pub(crate) fn polar<T: Real>(r: T, theta: T) -> Cx<T> {
    Complex::new(r * theta.cos(), r * theta.sin())
}

/// Modulus of a complex number without overflow-prone squaring.
#[inline]
pub(crate) fn abs<T: Real>(z: Cx<T>) -> T {
    z.re.hypot(z.im)
}

#[inline]
pub(crate) fn abs2<T: Real>(z: Cx<T>) -> T {
    z.re * z.re + z.im * z.im
}

/// Linear power ratio to decibels.
pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Decibels to linear power ratio.
pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    from_db(dbm - 30.0)
}
