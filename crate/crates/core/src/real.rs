//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rustfft::FftNum;

/// Floating-point scalar usable by the grid, operators and solvers.
///
/// Setup quantities (special functions, quadrature weights, dense
/// factorizations) are evaluated in `f64` and converted with [`Real::lit`];
/// the per-node arithmetic runs in `Self`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + FftNum
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal or setup value.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 value representable in scalar type")
    }

    /// Widens to `f64` for setup arithmetic and serialization.
    #[inline]
    fn to64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }

    /// Converts a node count or index.
    #[inline]
    fn from_len(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Widens a slice to `f64`.
pub fn to_f64_vec<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to64()).collect()
}

/// Narrows a slice of `f64` into the working scalar.
pub fn from_f64_vec<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}
