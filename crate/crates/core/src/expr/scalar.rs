//! Number types the expression tape can be evaluated over.
//!
//! `f64` gives plain values, [`Dual`] carries one directional derivative and
//! [`HyperDual`] carries two directional derivatives plus the mixed second
//! derivative, which is what the Hessian assembly needs.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Below this magnitude `sinc` switches to its Taylor series.
pub const SINC_SERIES_THRESHOLD: f64 = 1e-4;

/// Below this magnitude the derivatives of `sinc` use their series; the closed
/// forms lose too many digits to cancellation near zero.
const SINC_DERIV_SERIES_THRESHOLD: f64 = 1.0;

pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn constant(c: f64) -> Self;
    fn value(&self) -> f64;
    /// True when every component is finite.
    fn is_finite(&self) -> bool;
    fn powi(self, n: i32) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn sinc(self) -> Self;
}

/// `sin(u)/u` with the removable singularity filled in.
pub fn sinc(u: f64) -> f64 {
    if u.abs() < SINC_SERIES_THRESHOLD {
        let u2 = u * u;
        // 1 - u²/6 + u⁴/120 - u⁶/5040 + u⁸/362880
        1.0 - u2 / 6.0 * (1.0 - u2 / 20.0 * (1.0 - u2 / 42.0 * (1.0 - u2 / 72.0)))
    } else {
        u.sin() / u
    }
}

/// Value, first and second derivative of `sinc` at `u`.
pub fn sinc_derivs(u: f64) -> (f64, f64, f64) {
    let f0 = sinc(u);
    if u.abs() < SINC_DERIV_SERIES_THRESHOLD {
        // sinc(u) = Σ (-1)^n u^{2n} / (2n+1)!
        let u2 = u * u;
        let mut f1 = 0.0;
        let mut f2 = 0.0;
        // coef = (-1)^n / (2n+1)!
        let mut coef = 1.0;
        let mut upow_odd = u; // u^{2n-1}
        let mut upow_even = 1.0; // u^{2n-2}
        for n in 1..=12 {
            let nn = n as f64;
            coef /= -((2.0 * nn) * (2.0 * nn + 1.0));
            f1 += coef * 2.0 * nn * upow_odd;
            f2 += coef * 2.0 * nn * (2.0 * nn - 1.0) * upow_even;
            upow_odd *= u2;
            upow_even *= u2;
        }
        (f0, f1, f2)
    } else {
        let (s, c) = u.sin_cos();
        let f1 = (u * c - s) / (u * u);
        let f2 = ((2.0 - u * u) * s - 2.0 * u * c) / (u * u * u);
        (f0, f1, f2)
    }
}

fn powi_derivs(a: f64, n: i32) -> (f64, f64, f64) {
    let f0 = a.powi(n);
    let f1 = if n == 0 { 0.0 } else { n as f64 * a.powi(n - 1) };
    let f2 = if n == 0 || n == 1 { 0.0 } else { (n as f64) * ((n - 1) as f64) * a.powi(n - 2) };
    (f0, f1, f2)
}

impl Scalar for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sinc(self) -> Self {
        sinc(self)
    }
}

/// First-order dual number `val + dot·ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub val: f64,
    pub dot: f64,
}

impl Dual {
    pub fn new(val: f64, dot: f64) -> Self {
        Dual { val, dot }
    }

    fn chain(self, f0: f64, f1: f64) -> Self {
        Dual { val: f0, dot: f1 * self.dot }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.val + o.val, self.dot + o.dot)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.val - o.val, self.dot - o.dot)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.val * o.val, self.val * o.dot + self.dot * o.val)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let q = self.val / o.val;
        Dual::new(q, (self.dot - q * o.dot) / o.val)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.val, -self.dot)
    }
}

impl Scalar for Dual {
    fn constant(c: f64) -> Self {
        Dual::new(c, 0.0)
    }
    fn value(&self) -> f64 {
        self.val
    }
    fn is_finite(&self) -> bool {
        self.val.is_finite() && self.dot.is_finite()
    }
    fn powi(self, n: i32) -> Self {
        let (f0, f1, _) = powi_derivs(self.val, n);
        self.chain(f0, f1)
    }
    fn sin(self) -> Self {
        let (s, c) = self.val.sin_cos();
        self.chain(s, c)
    }
    fn cos(self) -> Self {
        let (s, c) = self.val.sin_cos();
        self.chain(c, -s)
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.chain(e, e)
    }
    fn sinc(self) -> Self {
        let (f0, f1, _) = sinc_derivs(self.val);
        self.chain(f0, f1)
    }
}

/// Hyper-dual number `a + b·ε₁ + c·ε₂ + d·ε₁ε₂` with `ε₁² = ε₂² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperDual {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl HyperDual {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        HyperDual { a, b, c, d }
    }

    fn chain(self, f0: f64, f1: f64, f2: f64) -> Self {
        HyperDual { a: f0, b: f1 * self.b, c: f1 * self.c, d: f1 * self.d + f2 * self.b * self.c }
    }
}

impl Add for HyperDual {
    type Output = HyperDual;
    fn add(self, o: HyperDual) -> HyperDual {
        HyperDual::new(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)
    }
}

impl Sub for HyperDual {
    type Output = HyperDual;
    fn sub(self, o: HyperDual) -> HyperDual {
        HyperDual::new(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
    }
}

impl Mul for HyperDual {
    type Output = HyperDual;
    fn mul(self, o: HyperDual) -> HyperDual {
        HyperDual::new(
            self.a * o.a,
            self.a * o.b + self.b * o.a,
            self.a * o.c + self.c * o.a,
            self.a * o.d + self.b * o.c + self.c * o.b + self.d * o.a,
        )
    }
}

impl Div for HyperDual {
    type Output = HyperDual;
    fn div(self, o: HyperDual) -> HyperDual {
        let inv = 1.0 / o.a;
        let recip = o.chain(inv, -inv * inv, 2.0 * inv * inv * inv);
        self * recip
    }
}

impl Neg for HyperDual {
    type Output = HyperDual;
    fn neg(self) -> HyperDual {
        HyperDual::new(-self.a, -self.b, -self.c, -self.d)
    }
}

impl Scalar for HyperDual {
    fn constant(c: f64) -> Self {
        HyperDual::new(c, 0.0, 0.0, 0.0)
    }
    fn value(&self) -> f64 {
        self.a
    }
    fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite() && self.d.is_finite()
    }
    fn powi(self, n: i32) -> Self {
        let (f0, f1, f2) = powi_derivs(self.a, n);
        self.chain(f0, f1, f2)
    }
    fn sin(self) -> Self {
        let (s, c) = self.a.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.a.sin_cos();
        self.chain(c, -s, -c)
    }
    fn exp(self) -> Self {
        let e = self.a.exp();
        self.chain(e, e, e)
    }
    fn sinc(self) -> Self {
        let (f0, f1, f2) = sinc_derivs(self.a);
        self.chain(f0, f1, f2)
    }
}
