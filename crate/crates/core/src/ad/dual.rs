use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Rem, Sub};

use num_traits::{FromPrimitive, Num, One, Zero};

use crate::scalar::Scalar;

/// Truncated Taylor number carrying a value and `N` directional derivatives.
///
/// Evaluating a function over `Dual<T, N>` with seeded tangents yields the
/// function value together with `N` Jacobian-vector products in one pass.
#[derive(Clone, Copy, Debug)]
pub struct Dual<T, const N: usize> {
    pub re: T,
    pub eps: [T; N],
}

impl<T: Scalar, const N: usize> Dual<T, N> {
    #[inline]
    pub fn constant(re: T) -> Self {
        Dual { re, eps: [T::zero(); N] }
    }

    #[inline]
    pub fn new(re: T, eps: [T; N]) -> Self {
        Dual { re, eps }
    }

    /// A variable whose tangent is the `k`-th unit direction.
    pub fn variable(re: T, k: usize) -> Self {
        let mut eps = [T::zero(); N];
        eps[k] = T::one();
        Dual { re, eps }
    }

    /// Chain rule for a unary function with value `f` and derivative `df`.
    #[inline]
    fn chain(self, f: T, df: T) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = *e * df;
        }
        Dual { re: f, eps }
    }
}

impl<T: Scalar, const N: usize> PartialEq for Dual<T, N> {
    fn eq(&self, other: &Self) -> bool {
        self.re == other.re
    }
}

impl<T: Scalar, const N: usize> PartialOrd for Dual<T, N> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.re.partial_cmp(&other.re)
    }
}

impl<T: Scalar, const N: usize> Add for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps) {
            *e = *e + r;
        }
        Dual { re: self.re + rhs.re, eps }
    }
}

impl<T: Scalar, const N: usize> Sub for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps) {
            *e = *e - r;
        }
        Dual { re: self.re - rhs.re, eps }
    }
}

impl<T: Scalar, const N: usize> Mul for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps) {
            *e = *e * rhs.re + self.re * r;
        }
        Dual { re: self.re * rhs.re, eps }
    }
}

impl<T: Scalar, const N: usize> Div for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = T::one() / rhs.re;
        let q = self.re * inv;
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps) {
            *e = (*e - q * r) * inv;
        }
        Dual { re: q, eps }
    }
}

impl<T: Scalar, const N: usize> Rem for Dual<T, N> {
    type Output = Self;
    /// `a % b = a - b * trunc(a / b)`; the truncated quotient is locally constant.
    fn rem(self, rhs: Self) -> Self {
        let r = self.re % rhs.re;
        let k = (self.re - r) / rhs.re;
        let mut eps = self.eps;
        for (e, b) in eps.iter_mut().zip(rhs.eps) {
            *e = *e - k * b;
        }
        Dual { re: r, eps }
    }
}

impl<T: Scalar, const N: usize> Neg for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = -*e;
        }
        Dual { re: -self.re, eps }
    }
}

impl<T: Scalar, const N: usize> Zero for Dual<T, N> {
    fn zero() -> Self {
        Self::constant(T::zero())
    }
    fn is_zero(&self) -> bool {
        self.re.is_zero() && self.eps.iter().all(Zero::is_zero)
    }
}

impl<T: Scalar, const N: usize> One for Dual<T, N> {
    fn one() -> Self {
        Self::constant(T::one())
    }
}

impl<T: Scalar, const N: usize> Num for Dual<T, N> {
    type FromStrRadixErr = T::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        T::from_str_radix(s, radix).map(Self::constant)
    }
}

impl<T: Scalar, const N: usize> FromPrimitive for Dual<T, N> {
    fn from_i64(n: i64) -> Option<Self> {
        T::from_i64(n).map(Self::constant)
    }
    fn from_u64(n: u64) -> Option<Self> {
        T::from_u64(n).map(Self::constant)
    }
    fn from_f64(n: f64) -> Option<Self> {
        T::from_f64(n).map(Self::constant)
    }
}

impl<T: Scalar, const N: usize> Scalar for Dual<T, N> {
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, T::one() / (T::cst(2.0) * s))
    }
    fn abs(self) -> Self {
        if self.re < T::zero() {
            -self
        } else {
            self
        }
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::one();
        }
        self.chain(self.re.powi(n), T::cst(n as f64) * self.re.powi(n - 1))
    }
    fn re(self) -> f64 {
        self.re.re()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly<T: Scalar>(x: T) -> T {
        x.powi(3) - T::cst(2.0) * x + (x * x).sqrt() / x
    }

    #[test]
    fn derivative_of_polynomial() {
        let x = Dual::<f64, 1>::variable(1.5, 0);
        let y = poly(x);
        assert!((y.re - poly(1.5)).abs() < 1e-15);
        // d/dx (x^3 - 2x + |x|/x) = 3x^2 - 2 for x > 0
        assert!((y.eps[0] - (3.0 * 2.25 - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn quotient_and_trig() {
        let x = Dual::<f64, 2>::variable(0.7, 0);
        let y = Dual::<f64, 2>::variable(1.3, 1);
        let f = (x * y).sin() / y;
        // df/dx = cos(xy), df/dy = (x cos(xy) y - sin(xy)) / y^2
        let c = (0.7f64 * 1.3).cos();
        let s = (0.7f64 * 1.3).sin();
        assert!((f.eps[0] - c).abs() < 1e-14);
        assert!((f.eps[1] - (0.7 * c * 1.3 - s) / (1.3 * 1.3)).abs() < 1e-14);
    }

    #[test]
    fn nested_duals_give_second_derivatives() {
        type D2 = Dual<Dual<f64, 1>, 1>;
        let x = D2::new(Dual::variable(2.0, 0), [Dual::constant(1.0)]);
        let y = x * x * x;
        // d2/dx2 x^3 = 6x
        assert!((y.eps[0].eps[0] - 12.0).abs() < 1e-14);
    }
}
