//! Floating-point abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type accepted by tensors, the tape, and the constraint layer.
///
/// Implemented for `f32` and `f64`. Training and the command-line driver use
/// `f64`; `f32` is supported for inference-only use.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal, panicking only for values no float can hold.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Smallest margin kept between a probability and 0 or 1.
    ///
    /// 1e-9 for `f64`; widened for `f32` so that `1 - eps` stays below one.
    #[inline]
    fn prob_eps() -> Self {
        let floor = Self::lit(1e-9);
        let machine = Self::epsilon() * Self::lit(4.0);
        if machine > floor {
            machine
        } else {
            floor
        }
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
