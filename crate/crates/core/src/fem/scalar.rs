use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

pub use faer::c64;

/// Field scalar for assembly and solves: `f64` or `c64`.
pub trait Scalar:
    faer::traits::ComplexField
    + Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + 'static
{
    const IS_COMPLEX: bool;

    fn from_f64(x: f64) -> Self;
    /// `i·x`, if the field has an imaginary unit.
    fn imaginary(x: f64) -> Option<Self>;
    fn re(self) -> f64;
    fn im(self) -> f64;
    fn modulus(self) -> f64;
    fn scale(self, c: f64) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn is_finite_value(self) -> bool {
        self.re().is_finite() && self.im().is_finite()
    }
}

impl Scalar for f64 {
    const IS_COMPLEX: bool = false;

    fn from_f64(x: f64) -> Self {
        x
    }

    fn imaginary(_: f64) -> Option<Self> {
        None
    }

    fn re(self) -> f64 {
        self
    }

    fn im(self) -> f64 {
        0.0
    }

    fn modulus(self) -> f64 {
        self.abs()
    }

    fn scale(self, c: f64) -> Self {
        self * c
    }
}

impl Scalar for c64 {
    const IS_COMPLEX: bool = true;

    fn from_f64(x: f64) -> Self {
        c64::new(x, 0.0)
    }

    fn imaginary(x: f64) -> Option<Self> {
        Some(c64::new(0.0, x))
    }

    fn re(self) -> f64 {
        self.re
    }

    fn im(self) -> f64 {
        self.im
    }

    fn modulus(self) -> f64 {
        self.norm()
    }

    fn scale(self, c: f64) -> Self {
        c64::new(self.re * c, self.im * c)
    }
}

/// Euclidean norm of a scalar vector.
pub fn norm2<S: Scalar>(v: &[S]) -> f64 {
    v.iter().map(|x| x.modulus().powi(2)).sum::<f64>().sqrt()
}
