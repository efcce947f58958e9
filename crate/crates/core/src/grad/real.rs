use std::ops::{Add, Div, Mul, Neg, Sub};

use super::tape::Var;

/// Arithmetic shared by plain `f64` and recorded tape values, so physics
/// formulas are written once and evaluated either way.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn exp(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn abs(self) -> Self;
    fn relu(self) -> Self;
    fn recip(self) -> Self;
}

impl Real for f64 {
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn relu(self) -> Self {
        self.max(0.0)
    }
    fn recip(self) -> Self {
        f64::recip(self)
    }
}

impl<'t> Real for Var<'t> {
    fn exp(self) -> Self {
        Var::exp(self)
    }
    fn powi(self, n: i32) -> Self {
        Var::powi(self, n)
    }
    fn abs(self) -> Self {
        Var::abs(self)
    }
    fn relu(self) -> Self {
        Var::relu(self)
    }
    fn recip(self) -> Self {
        Var::recip(self)
    }
}
