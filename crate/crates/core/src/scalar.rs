//! Numeric bounds shared by the crate.
//!
//! The redistribution rules only need field arithmetic and an ordering, so
//! [`Scalar`] is satisfied by `f32`, `f64` and exact rationals such as
//! `num_rational::BigRational`. Sampling, drift analysis and ODE integration
//! need transcendental-free floating point and use [`Real`].

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, Num, Signed, ToPrimitive};

/// Ordered field element the price-vector updates are evaluated in.
pub trait Scalar: Num + Signed + PartialOrd + Clone + Debug + FromPrimitive + ToPrimitive {}

impl<T> Scalar for T where T: Num + Signed + PartialOrd + Clone + Debug + FromPrimitive + ToPrimitive
{}

/// Floating-point scalar: `f32` or `f64`.
pub trait Real: Scalar + Float + Copy + Send + Sync + 'static {}

impl<T> Real for T where T: Scalar + Float + Copy + Send + Sync + 'static {}

/// Converts an `f64` literal into `T`.
///
/// Every scalar this crate is instantiated with can represent (or exactly
/// rationalise) a finite `f64`, so failure indicates a non-finite literal.
#[inline]
pub(crate) fn lit<T: FromPrimitive>(x: f64) -> T {
    T::from_f64(x).expect("finite literal representable in scalar type")
}

#[inline]
pub(crate) fn to_f64<T: ToPrimitive>(x: &T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// `tol`, widened to 64 units of roundoff when `T` cannot resolve it at 1.
pub(crate) fn resolvable_tolerance<T: Scalar>(tol: f64) -> T {
    let t: T = lit(tol);
    if T::one() + t.clone() != T::one() {
        return t;
    }
    let mut ulp: T = t;
    while T::one() + ulp.clone() == T::one() {
        ulp = ulp * lit(2.0);
    }
    ulp * lit(64.0)
}
