//! Order-2 forward-mode jets in a single seed direction.
//!
//! A [`Jet2`] carries `f(s)`, `f'(s)` and `f''(s)` for one scalar seed `s`
//! (the moneyness input of the pricing network). Arithmetic is truncated
//! second-order Taylor arithmetic, so derivatives are exact up to rounding.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Value with first and second derivative with respect to the seed variable.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet2 {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Elementary scalar functions with their first three derivatives.
///
/// The third derivative is only needed by the reverse sweep in
/// [`crate::autodiff::Tape`], which differentiates the `d2` channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementary {
    Exp,
    Ln,
    Tanh,
    Softplus,
    /// `max(x, 0)`; every derivative is taken as 0 at the kink.
    Max0,
    Recip,
}

impl Elementary {
    pub fn name(self) -> &'static str {
        match self {
            Elementary::Exp => "exp",
            Elementary::Ln => "ln",
            Elementary::Tanh => "tanh",
            Elementary::Softplus => "softplus",
            Elementary::Max0 => "max0",
            Elementary::Recip => "div",
        }
    }

    pub(crate) fn check_domain(self, x: f64) -> Result<()> {
        match self {
            Elementary::Ln if !(x > 0.0) => Err(Error::domain("ln", format!("argument {x} ≤ 0"))),
            Elementary::Recip if x == 0.0 => Err(Error::domain("div", "division by a jet with value 0")),
            _ => Ok(()),
        }
    }

    /// `[f(x), f'(x), f''(x), f'''(x)]`.
    #[inline]
    pub fn taylor(self, x: f64) -> [f64; 4] {
        match self {
            Elementary::Exp => {
                let e = x.exp();
                [e, e, e, e]
            }
            Elementary::Ln => {
                let r = 1.0 / x;
                [x.ln(), r, -r * r, 2.0 * r * r * r]
            }
            Elementary::Tanh => {
                let t = x.tanh();
                let s = 1.0 - t * t;
                [t, s, -2.0 * t * s, s * (6.0 * t * t - 2.0)]
            }
            Elementary::Softplus => {
                let sig = sigmoid(x);
                let v = sig * (1.0 - sig);
                [softplus(x), sig, v, v * (1.0 - 2.0 * sig)]
            }
            Elementary::Max0 => {
                if x > 0.0 {
                    [x, 1.0, 0.0, 0.0]
                } else {
                    [0.0, 0.0, 0.0, 0.0]
                }
            }
            Elementary::Recip => {
                let r = 1.0 / x;
                let r2 = r * r;
                [r, -r2, 2.0 * r2 * r, -6.0 * r2 * r2]
            }
        }
    }
}

/// `ln(1 + e^x)` without overflow for large `x`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Jet2 {
    pub const fn new(value: f64, d1: f64, d2: f64) -> Self {
        Jet2 { value, d1, d2 }
    }

    /// Lift a constant: `(c, 0, 0)`.
    pub fn lift_const(c: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::domain("lift_const", format!("non-finite constant {c}")));
        }
        Ok(Jet2::new(c, 0.0, 0.0))
    }

    /// Lift the seed variable: `(s, 1, 0)`.
    pub fn lift_seed(s: f64) -> Result<Self> {
        if !s.is_finite() {
            return Err(Error::domain("lift_seed", format!("non-finite seed {s}")));
        }
        Ok(Jet2::new(s, 1.0, 0.0))
    }

    pub(crate) const fn constant(c: f64) -> Self {
        Jet2::new(c, 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.d1.is_finite() && self.d2.is_finite()
    }

    /// Chain rule for `f(self)` given `f` and its first two derivatives at `self.value`.
    #[inline]
    pub(crate) fn chain(self, f0: f64, f1: f64, f2: f64) -> Self {
        Jet2 {
            value: f0,
            d1: f1 * self.d1,
            d2: f2 * self.d1 * self.d1 + f1 * self.d2,
        }
    }

    /// Apply an elementary function; fails only on `ln`/`div` domain violations.
    pub fn apply(self, f: Elementary) -> Result<Self> {
        f.check_domain(self.value)?;
        let [f0, f1, f2, _] = f.taylor(self.value);
        Ok(self.chain(f0, f1, f2))
    }

    #[inline]
    fn apply_total(self, f: Elementary) -> Self {
        let [f0, f1, f2, _] = f.taylor(self.value);
        self.chain(f0, f1, f2)
    }

    pub fn exp(self) -> Self {
        self.apply_total(Elementary::Exp)
    }

    pub fn tanh(self) -> Self {
        self.apply_total(Elementary::Tanh)
    }

    pub fn softplus(self) -> Self {
        self.apply_total(Elementary::Softplus)
    }

    pub fn max0(self) -> Self {
        self.apply_total(Elementary::Max0)
    }

    pub fn ln(self) -> Result<Self> {
        self.apply(Elementary::Ln)
    }

    pub fn recip(self) -> Result<Self> {
        self.apply(Elementary::Recip)
    }

    pub fn div(self, rhs: Jet2) -> Result<Self> {
        Ok(self * rhs.recip()?)
    }

    pub fn scale(self, k: f64) -> Self {
        Jet2::new(self.value * k, self.d1 * k, self.d2 * k)
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    #[inline]
    fn add(self, rhs: Jet2) -> Jet2 {
        Jet2::new(self.value + rhs.value, self.d1 + rhs.d1, self.d2 + rhs.d2)
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    #[inline]
    fn sub(self, rhs: Jet2) -> Jet2 {
        Jet2::new(self.value - rhs.value, self.d1 - rhs.d1, self.d2 - rhs.d2)
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    #[inline]
    fn neg(self) -> Jet2 {
        Jet2::new(-self.value, -self.d1, -self.d2)
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    /// Leibniz: `(fg)'' = f''g + 2f'g' + fg''`.
    #[inline]
    fn mul(self, rhs: Jet2) -> Jet2 {
        Jet2 {
            value: self.value * rhs.value,
            d1: self.d1 * rhs.value + self.value * rhs.d1,
            d2: self.d2 * rhs.value + 2.0 * self.d1 * rhs.d1 + self.value * rhs.d2,
        }
    }
}

impl Mul<f64> for Jet2 {
    type Output = Jet2;
    #[inline]
    fn mul(self, k: f64) -> Jet2 {
        self.scale(k)
    }
}

impl Add<f64> for Jet2 {
    type Output = Jet2;
    #[inline]
    fn add(self, c: f64) -> Jet2 {
        Jet2::new(self.value + c, self.d1, self.d2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn lifts() {
        assert_eq!(Jet2::lift_const(3.0).unwrap(), Jet2::new(3.0, 0.0, 0.0));
        assert_eq!(Jet2::lift_seed(1.1).unwrap(), Jet2::new(1.1, 1.0, 0.0));
        assert_eq!(Jet2::lift_seed(0.0).unwrap(), Jet2::new(0.0, 1.0, 0.0));
        assert!(Jet2::lift_const(f64::NAN).is_err());
        assert!(Jet2::lift_seed(f64::INFINITY).is_err());
    }

    #[test]
    fn tanh_at_origin() {
        let j = Jet2::lift_seed(0.0).unwrap().tanh();
        assert_eq!(j, Jet2::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn softplus_at_origin() {
        let j = Jet2::lift_seed(0.0).unwrap().softplus();
        assert!((j.value - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((j.d1 - 0.5).abs() < 1e-15);
        assert!((j.d2 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn leibniz_product() {
        let p = Jet2::new(2.0, 3.0, 1.0) * Jet2::new(5.0, -1.0, 4.0);
        assert_eq!(p, Jet2::new(10.0, 13.0, 7.0));
    }

    #[test]
    fn domain_errors_name_the_op() {
        let zero = Jet2::lift_const(0.0).unwrap();
        match Jet2::lift_seed(1.0).unwrap().div(zero) {
            Err(Error::Domain { op, .. }) => assert_eq!(op, "div"),
            other => panic!("expected domain error, got {other:?}"),
        }
        match Jet2::lift_seed(-1.0).unwrap().ln() {
            Err(Error::Domain { op, .. }) => assert_eq!(op, "ln"),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn max0_kink_convention() {
        assert_eq!(Jet2::lift_seed(0.0).unwrap().max0(), Jet2::default());
        assert_eq!(Jet2::lift_seed(-0.5).unwrap().max0(), Jet2::default());
        assert_eq!(Jet2::lift_seed(0.5).unwrap().max0(), Jet2::new(0.5, 1.0, 0.0));
    }

    #[test]
    fn softplus_is_stable_for_large_arguments() {
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    // Third derivatives checked against central differences of the second.
    #[test]
    fn taylor_third_derivatives() {
        let h = 1e-5;
        for f in [
            Elementary::Exp,
            Elementary::Ln,
            Elementary::Tanh,
            Elementary::Softplus,
            Elementary::Recip,
        ] {
            for &x in &[0.3, 0.9, 1.7] {
                let [_, _, f2p, _] = f.taylor(x + h);
                let [_, _, f2m, _] = f.taylor(x - h);
                let [_, _, _, f3] = f.taylor(x);
                let fd = (f2p - f2m) / (2.0 * h);
                assert!(close(f3, fd, 1e-6), "{f:?} at {x}: {f3} vs {fd}");
            }
        }
    }

    fn poly(c: &[f64], s: f64) -> (f64, f64, f64) {
        let mut v = 0.0;
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for (k, &ck) in c.iter().enumerate() {
            let k = k as i32;
            v += ck * s.powi(k);
            if k >= 1 {
                d1 += ck * k as f64 * s.powi(k - 1);
            }
            if k >= 2 {
                d2 += ck * (k * (k - 1)) as f64 * s.powi(k - 2);
            }
        }
        (v, d1, d2)
    }

    proptest! {
        // Horner evaluation in jets against symbolic coefficient differentiation.
        #[test]
        fn polynomial_jets_match_symbolic(
            coeffs in prop::collection::vec(-3.0f64..3.0, 1..=5),
            s in -2.0f64..2.0,
        ) {
            let x = Jet2::lift_seed(s).unwrap();
            let mut acc = Jet2::lift_const(*coeffs.last().unwrap()).unwrap();
            for &c in coeffs.iter().rev().skip(1) {
                acc = acc * x + c;
            }
            let (v, d1, d2) = poly(&coeffs, s);
            let scale = coeffs.iter().map(|c| c.abs()).sum::<f64>() * 48.0;
            prop_assert!((acc.value - v).abs() <= 1e-12 * scale.max(1.0));
            prop_assert!((acc.d1 - d1).abs() <= 1e-12 * scale.max(1.0));
            prop_assert!((acc.d2 - d2).abs() <= 1e-12 * scale.max(1.0));
        }
    }
}
