//! Scalar abstraction. Everything numeric in this crate is generic over
//! [`Real`] so the engine can run in `f32` or `f64`; the crate root exports
//! `f64` aliases for the common types.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the engine computes with (`f32` or `f64`).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + std::fmt::Display
    + std::fmt::Debug
    + std::fmt::LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` constant into the working scalar type.
#[inline]
pub fn real<R: Real>(x: f64) -> R {
    R::from_f64(x).expect("constant not representable in scalar type")
}

/// Tolerance for probability vectors summing to one: 1e-9 in `f64`, widened
/// for `f32` where 1e-9 sits below rounding noise.
pub fn prob_tol<R: Real>() -> R {
    real::<R>(1e-9).max(R::epsilon() * real::<R>(64.0))
}

/// `out += scale * x`, elementwise.
#[inline]
pub fn axpy<R: Real>(out: &mut [R], scale: R, x: &[R]) {
    debug_assert_eq!(out.len(), x.len());
    for (o, &v) in out.iter_mut().zip(x.iter()) {
        *o += scale * v;
    }
}

/// Inner product of two equal-length vectors.
#[inline]
pub fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).fold(R::zero(), |s, (&x, &y)| s + x * y)
}

/// Euclidean norm.
#[inline]
pub fn norm2<R: Real>(a: &[R]) -> R {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_roundtrips_constants() {
        assert_eq!(real::<f64>(0.25), 0.25);
        assert_eq!(real::<f32>(0.25), 0.25f32);
    }

    #[test]
    fn axpy_and_dot() {
        let mut out = vec![1.0, 2.0];
        axpy(&mut out, 2.0, &[3.0, -1.0]);
        assert_eq!(out, vec![7.0, 0.0]);
        assert_eq!(dot(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]), 32.0);
    }
}
