//! Abstraction over plain `f64` evaluation and tape-recorded evaluation.
//!
//! Model code is written once against [`Scalar`]; instantiating it with `f64`
//! gives a fast gradient-free path, instantiating it with [`Var`] records the
//! same computation on a tape. Both implementations perform the identical
//! sequence of floating-point operations, so the two paths produce
//! bit-identical values.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::tape::Var;

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Current numeric value.
    fn val(self) -> f64;
    /// A constant in the same evaluation context as `self`.
    fn lift(self, c: f64) -> Self;
    /// `self * c` for a constant `c`.
    fn scale(self, c: f64) -> Self;
    /// `self + c` for a constant `c`.
    fn shift(self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn relu(self) -> Self;
    fn softplus(self) -> Self;
    fn cos(self) -> Self;
    fn clamp_min(self, c: f64) -> Self;
    /// `w . x + b`.
    fn affine(w: &[Self], x: &[Self], b: Self) -> Self;
    /// `max(0, w . x + b)`.
    fn affine_relu(w: &[Self], x: &[Self], b: Self) -> Self;
}

impl Scalar for f64 {
    fn val(self) -> f64 {
        self
    }

    fn lift(self, c: f64) -> f64 {
        c
    }

    fn scale(self, c: f64) -> f64 {
        self * c
    }

    fn shift(self, c: f64) -> f64 {
        self + c
    }

    fn exp(self) -> f64 {
        f64::exp(self)
    }

    fn ln(self) -> f64 {
        f64::ln(self)
    }

    fn tanh(self) -> f64 {
        f64::tanh(self)
    }

    fn relu(self) -> f64 {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }

    fn softplus(self) -> f64 {
        if self > 0.0 {
            self + f64::ln_1p(f64::exp(-self))
        } else {
            f64::ln_1p(f64::exp(self))
        }
    }

    fn cos(self) -> f64 {
        f64::cos(self)
    }

    fn clamp_min(self, c: f64) -> f64 {
        if self > c {
            self
        } else {
            c
        }
    }

    fn affine(w: &[f64], x: &[f64], b: f64) -> f64 {
        debug_assert_eq!(w.len(), x.len());
        let mut acc = b;
        for (wi, xi) in w.iter().zip(x) {
            acc += wi * xi;
        }
        acc
    }

    fn affine_relu(w: &[f64], x: &[f64], b: f64) -> f64 {
        let acc = <f64 as Scalar>::affine(w, x, b);
        if acc > 0.0 {
            acc
        } else {
            0.0
        }
    }
}

impl<'t> Scalar for Var<'t> {
    fn val(self) -> f64 {
        Var::val(self)
    }

    fn lift(self, c: f64) -> Var<'t> {
        self.tape().constant(c)
    }

    fn scale(self, c: f64) -> Var<'t> {
        Var::scale(self, c)
    }

    fn shift(self, c: f64) -> Var<'t> {
        Var::shift(self, c)
    }

    fn exp(self) -> Var<'t> {
        Var::exp(self)
    }

    fn ln(self) -> Var<'t> {
        Var::ln(self)
    }

    fn tanh(self) -> Var<'t> {
        Var::tanh(self)
    }

    fn relu(self) -> Var<'t> {
        Var::relu(self)
    }

    fn softplus(self) -> Var<'t> {
        Var::softplus(self)
    }

    fn cos(self) -> Var<'t> {
        Var::cos(self)
    }

    fn clamp_min(self, c: f64) -> Var<'t> {
        Var::clamp_min(self, c)
    }

    fn affine(w: &[Var<'t>], x: &[Var<'t>], b: Var<'t>) -> Var<'t> {
        b.tape().affine(w, x, b)
    }

    fn affine_relu(w: &[Var<'t>], x: &[Var<'t>], b: Var<'t>) -> Var<'t> {
        b.tape().affine_relu(w, x, b)
    }
}
