//! Truncated multivariate Taylor arithmetic.
//!
//! A [`Jet`] carries a value together with all partial derivatives up to
//! order three with respect to `nvars` independent variables.  Arithmetic
//! propagates derivatives exactly (Leibniz and Faà di Bruno rules truncated at
//! the jet's order), which is what nested dual numbers compute, but without
//! the exponential blow-up of nesting.
//!
//! Derivative tensors are stored densely; the second and third derivative
//! blocks are symmetric by construction because every rule used to build them
//! is symmetric in its indices.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Largest supported derivative order.
pub const MAX_ORDER: u8 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    n: usize,
    order: u8,
    c: Vec<f64>,
}

#[inline]
fn jet_len(n: usize, order: u8) -> usize {
    match order {
        0 => 1,
        1 => 1 + n,
        2 => 1 + n + n * n,
        _ => 1 + n + n * n + n * n * n,
    }
}

impl Jet {
    /// A constant: all derivatives zero.
    pub fn constant(value: f64, nvars: usize, order: u8) -> Self {
        let order = order.min(MAX_ORDER);
        let mut c = vec![0.0; jet_len(nvars, order)];
        c[0] = value;
        Jet { n: nvars, order, c }
    }

    /// The coordinate function `x_index` evaluated at `value`.
    pub fn variable(value: f64, index: usize, nvars: usize, order: u8) -> Self {
        assert!(index < nvars, "variable index out of range");
        let mut j = Self::constant(value, nvars, order);
        if j.order >= 1 {
            j.c[1 + index] = 1.0;
        }
        j
    }

    /// A constant with the same shape as `self`.
    pub fn lift(&self, value: f64) -> Self {
        Self::constant(value, self.n, self.order)
    }

    pub fn nvars(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// First partial derivative, zero when the order is too low.
    #[inline]
    pub fn d1(&self, i: usize) -> f64 {
        if self.order >= 1 {
            self.c[1 + i]
        } else {
            0.0
        }
    }

    #[inline]
    pub fn d2(&self, i: usize, j: usize) -> f64 {
        if self.order >= 2 {
            self.c[1 + self.n + i * self.n + j]
        } else {
            0.0
        }
    }

    #[inline]
    pub fn d3(&self, i: usize, j: usize, k: usize) -> f64 {
        if self.order >= 3 {
            let n = self.n;
            self.c[1 + n + n * n + (i * n + j) * n + k]
        } else {
            0.0
        }
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter().all(|x| x.is_finite())
    }

    /// Drop derivatives above `order`.
    pub fn truncate(&self, order: u8) -> Self {
        if order >= self.order {
            return self.clone();
        }
        Jet { n: self.n, order, c: self.c[..jet_len(self.n, order)].to_vec() }
    }

    /// The partial derivative `∂_i` of this jet, as a jet of one lower order.
    pub fn partial(&self, i: usize) -> Self {
        assert!(self.order >= 1, "cannot differentiate an order-0 jet");
        let n = self.n;
        let order = self.order - 1;
        let mut out = Jet::constant(self.d1(i), n, order);
        if order >= 1 {
            for j in 0..n {
                out.c[1 + j] = self.d2(i, j);
            }
        }
        if order >= 2 {
            for j in 0..n {
                for k in 0..n {
                    out.c[1 + n + j * n + k] = self.d3(i, j, k);
                }
            }
        }
        out
    }

    /// Apply a scalar function given its value and first three derivatives
    /// at `self.value()`.
    pub fn compose(&self, f0: f64, f1: f64, f2: f64, f3: f64) -> Self {
        let n = self.n;
        let mut out = Jet::constant(f0, n, self.order);
        if self.order >= 1 {
            for i in 0..n {
                out.c[1 + i] = f1 * self.c[1 + i];
            }
        }
        if self.order >= 2 {
            let o2 = 1 + n;
            for i in 0..n {
                let ai = self.c[1 + i];
                for j in 0..n {
                    out.c[o2 + i * n + j] = f2 * ai * self.c[1 + j] + f1 * self.c[o2 + i * n + j];
                }
            }
        }
        if self.order >= 3 {
            let o2 = 1 + n;
            let o3 = 1 + n + n * n;
            for i in 0..n {
                let ai = self.c[1 + i];
                for j in 0..n {
                    let aj = self.c[1 + j];
                    let aij = self.c[o2 + i * n + j];
                    for k in 0..n {
                        let ak = self.c[1 + k];
                        let s = aij * ak + self.c[o2 + i * n + k] * aj + self.c[o2 + j * n + k] * ai;
                        out.c[o3 + (i * n + j) * n + k] =
                            f3 * ai * aj * ak + f2 * s + f1 * self.c[o3 + (i * n + j) * n + k];
                    }
                }
            }
        }
        out
    }

    pub fn recip(&self) -> Self {
        let x = self.value();
        let r = 1.0 / x;
        self.compose(r, -r * r, 2.0 * r * r * r, -6.0 * r * r * r * r)
    }

    pub fn sqrt(&self) -> Self {
        let s = self.value().sqrt();
        self.compose(s, 0.5 / s, -0.25 / (s * s * s), 0.375 / (s * s * s * s * s))
    }

    pub fn exp(&self) -> Self {
        let e = self.value().exp();
        self.compose(e, e, e, e)
    }

    pub fn ln(&self) -> Self {
        let x = self.value();
        let r = 1.0 / x;
        self.compose(x.ln(), r, -r * r, 2.0 * r * r * r)
    }

    pub fn sin(&self) -> Self {
        let (s, c) = self.value().sin_cos();
        self.compose(s, c, -s, -c)
    }

    pub fn cos(&self) -> Self {
        let (s, c) = self.value().sin_cos();
        self.compose(c, -s, -c, s)
    }

    pub fn sinh(&self) -> Self {
        let (s, c) = (self.value().sinh(), self.value().cosh());
        self.compose(s, c, s, c)
    }

    pub fn cosh(&self) -> Self {
        let (s, c) = (self.value().sinh(), self.value().cosh());
        self.compose(c, s, c, s)
    }

    pub fn tanh(&self) -> Self {
        let t = self.value().tanh();
        let u = 1.0 - t * t;
        self.compose(t, u, -2.0 * t * u, u * (6.0 * t * t - 2.0))
    }

    pub fn atan(&self) -> Self {
        let x = self.value();
        let q = 1.0 + x * x;
        self.compose(x.atan(), 1.0 / q, -2.0 * x / (q * q), (6.0 * x * x - 2.0) / (q * q * q))
    }

    /// `x^p` for real `p`; requires `x > 0` unless `p` is a small integer.
    pub fn powf(&self, p: f64) -> Self {
        let x = self.value();
        self.compose(
            x.powf(p),
            p * x.powf(p - 1.0),
            p * (p - 1.0) * x.powf(p - 2.0),
            p * (p - 1.0) * (p - 2.0) * x.powf(p - 3.0),
        )
    }

    pub fn powi(&self, k: i32) -> Self {
        let x = self.value();
        let kf = k as f64;
        self.compose(
            x.powi(k),
            kf * x.powi(k - 1),
            kf * (kf - 1.0) * x.powi(k - 2),
            kf * (kf - 1.0) * (kf - 2.0) * x.powi(k - 3),
        )
    }

    pub fn square(&self) -> Self {
        self * self
    }

    /// `cos(√q)` continued analytically to `q < 0` (where it is `cosh √-q`).
    pub fn cos_sqrt(&self) -> Self {
        let d = cos_sqrt_derivs(self.value());
        self.compose(d[0], d[1], d[2], d[3])
    }

    /// `sin(√q)/√q`, continued analytically through `q = 0` and to `q < 0`.
    pub fn sinc_sqrt(&self) -> Self {
        let d = sinc_sqrt_derivs(self.value());
        self.compose(d[0], d[1], d[2], d[3])
    }
}

// Power-series coefficients of C(q) = cos√q and S(q) = sin√q/√q are
// (-1)^k/(2k)! and (-1)^k/(2k+1)!.
fn series_derivs(q: f64, odd: bool) -> [f64; 4] {
    const TERMS: usize = 24;
    let mut coef = [0.0; TERMS];
    // m tracks the factorial argument: (2k)! or (2k+1)!
    let mut fact = 1.0f64;
    let mut m = if odd { 1.0 } else { 0.0 };
    for (k, slot) in coef.iter_mut().enumerate() {
        if k > 0 {
            fact *= (m + 1.0) * (m + 2.0);
            m += 2.0;
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        *slot = sign / fact;
    }
    let mut out = [0.0; 4];
    for (d, slot) in out.iter_mut().enumerate() {
        // Horner on the d-th derivative of the series; q^(k-d) scaled by k!/(k-d)!
        let mut h = 0.0;
        for k in (d..TERMS).rev() {
            let falling: f64 = (0..d).map(|t| (k - t) as f64).product();
            h = h * q + coef[k] * falling;
        }
        *slot = h;
    }
    out
}

fn cos_sqrt_derivs(q: f64) -> [f64; 4] {
    if q.abs() < 1.0 {
        return series_derivs(q, false);
    }
    let s = sinc_sqrt_derivs(q);
    let c0 = if q > 0.0 { q.sqrt().cos() } else { (-q).sqrt().cosh() };
    [c0, -0.5 * s[0], -0.5 * s[1], -0.5 * s[2]]
}

fn sinc_sqrt_derivs(q: f64) -> [f64; 4] {
    if q.abs() < 1.0 {
        return series_derivs(q, true);
    }
    let (c, s) = if q > 0.0 {
        let r = q.sqrt();
        (r.cos(), r.sin() / r)
    } else {
        let r = (-q).sqrt();
        (r.cosh(), r.sinh() / r)
    };
    // C' = -S/2, S' = (C - S)/(2q)
    let c1 = -0.5 * s;
    let s1 = (c - s) / (2.0 * q);
    let c2 = -0.5 * s1;
    let s2 = (c1 - s1) / (2.0 * q) - (c - s) / (2.0 * q * q);
    let s3 = (c2 - s2) / (2.0 * q) - 2.0 * (c1 - s1) / (2.0 * q * q) + 2.0 * (c - s) / (2.0 * q * q * q);
    [s, s1, s2, s3]
}

fn zip_with(a: &Jet, b: &Jet, f: impl Fn(f64, f64) -> f64) -> Jet {
    assert_eq!(a.n, b.n, "jets over different variable counts");
    let order = a.order.min(b.order);
    let len = jet_len(a.n, order);
    Jet { n: a.n, order, c: a.c[..len].iter().zip(&b.c[..len]).map(|(x, y)| f(*x, *y)).collect() }
}

fn mul_jets(a: &Jet, b: &Jet) -> Jet {
    assert_eq!(a.n, b.n, "jets over different variable counts");
    let n = a.n;
    let order = a.order.min(b.order);
    let mut out = Jet::constant(a.c[0] * b.c[0], n, order);
    let (a0, b0) = (a.c[0], b.c[0]);
    if order >= 1 {
        for i in 0..n {
            out.c[1 + i] = a.c[1 + i] * b0 + a0 * b.c[1 + i];
        }
    }
    if order >= 2 {
        let o2 = 1 + n;
        for i in 0..n {
            for j in 0..n {
                out.c[o2 + i * n + j] = a.c[o2 + i * n + j] * b0
                    + a.c[1 + i] * b.c[1 + j]
                    + a.c[1 + j] * b.c[1 + i]
                    + a0 * b.c[o2 + i * n + j];
            }
        }
    }
    if order >= 3 {
        let o2 = 1 + n;
        let o3 = 1 + n + n * n;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let idx = o3 + (i * n + j) * n + k;
                    out.c[idx] = a.c[idx] * b0
                        + a.c[o2 + i * n + j] * b.c[1 + k]
                        + a.c[o2 + i * n + k] * b.c[1 + j]
                        + a.c[o2 + j * n + k] * b.c[1 + i]
                        + a.c[1 + i] * b.c[o2 + j * n + k]
                        + a.c[1 + j] * b.c[o2 + i * n + k]
                        + a.c[1 + k] * b.c[o2 + i * n + j]
                        + a0 * b.c[idx];
                }
            }
        }
    }
    out
}

impl Add<&Jet> for &Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        zip_with(self, rhs, |x, y| x + y)
    }
}

impl Sub<&Jet> for &Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        zip_with(self, rhs, |x, y| x - y)
    }
}

impl Mul<&Jet> for &Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        mul_jets(self, rhs)
    }
}

impl Div<&Jet> for &Jet {
    type Output = Jet;
    fn div(self, rhs: &Jet) -> Jet {
        mul_jets(self, &rhs.recip())
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet { n: self.n, order: self.order, c: self.c.iter().map(|x| -x).collect() }
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        self.c.iter_mut().for_each(|x| *x = -*x);
        self
    }
}

macro_rules! forward_binop {
    ($tr:ident, $m:ident) => {
        impl $tr<Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                (&self).$m(&rhs)
            }
        }
        impl $tr<&Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: &Jet) -> Jet {
                (&self).$m(rhs)
            }
        }
        impl $tr<Jet> for &Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                self.$m(&rhs)
            }
        }
    };
}

forward_binop!(Add, add);
forward_binop!(Sub, sub);
forward_binop!(Mul, mul);
forward_binop!(Div, div);

impl Add<f64> for &Jet {
    type Output = Jet;
    fn add(self, rhs: f64) -> Jet {
        let mut out = self.clone();
        out.c[0] += rhs;
        out
    }
}

impl Sub<f64> for &Jet {
    type Output = Jet;
    fn sub(self, rhs: f64) -> Jet {
        let mut out = self.clone();
        out.c[0] -= rhs;
        out
    }
}

impl Mul<f64> for &Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        Jet { n: self.n, order: self.order, c: self.c.iter().map(|x| x * rhs).collect() }
    }
}

impl Div<f64> for &Jet {
    type Output = Jet;
    fn div(self, rhs: f64) -> Jet {
        self * (1.0 / rhs)
    }
}

macro_rules! forward_scalar {
    ($tr:ident, $m:ident) => {
        impl $tr<f64> for Jet {
            type Output = Jet;
            fn $m(self, rhs: f64) -> Jet {
                (&self).$m(rhs)
            }
        }
    };
}

forward_scalar!(Add, add);
forward_scalar!(Sub, sub);
forward_scalar!(Mul, mul);
forward_scalar!(Div, div);

impl Mul<&Jet> for f64 {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        rhs * self
    }
}

impl Mul<Jet> for f64 {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        &rhs * self
    }
}

impl Add<&Jet> for f64 {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        rhs + self
    }
}

impl Add<Jet> for f64 {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        &rhs + self
    }
}

impl Sub<&Jet> for f64 {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        -(rhs - self)
    }
}

impl Sub<Jet> for f64 {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        -(&rhs - self)
    }
}

impl Div<&Jet> for f64 {
    type Output = Jet;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: &Jet) -> Jet {
        rhs.recip() * self
    }
}

impl Div<Jet> for f64 {
    type Output = Jet;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Jet) -> Jet {
        rhs.recip() * self
    }
}

/// Sum of a non-empty sequence of jets.
pub fn sum<'a>(mut it: impl Iterator<Item = &'a Jet>) -> Jet {
    let first = it.next().expect("sum of empty jet sequence").clone();
    it.fold(first, |acc, x| acc + x)
}

/// Euclidean dot product of jet vectors.
pub fn dot(a: &[Jet], b: &[Jet]) -> Jet {
    assert_eq!(a.len(), b.len());
    let mut acc = &a[0] * &b[0];
    for (x, y) in a.iter().zip(b).skip(1) {
        acc = acc + x * y;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn product_rule_matches_closed_form() {
        // f = x^2 y at (2, 3): f_x = 2xy, f_xy = 2x, f_xxy = 2
        let x = Jet::variable(2.0, 0, 2, 3);
        let y = Jet::variable(3.0, 1, 2, 3);
        let f = &(&x * &x) * &y;
        assert_eq!(f.value(), 12.0);
        assert_eq!(f.d1(0), 12.0);
        assert_eq!(f.d1(1), 4.0);
        assert_eq!(f.d2(0, 0), 6.0);
        assert_eq!(f.d2(0, 1), 4.0);
        assert_eq!(f.d2(1, 1), 0.0);
        assert_eq!(f.d3(0, 0, 1), 2.0);
        assert_eq!(f.d3(1, 0, 0), 2.0);
        assert_eq!(f.d3(0, 0, 0), 0.0);
    }

    #[test]
    fn chain_rule_third_order() {
        // exp(sin x) third derivative at x = 0.3
        let x = Jet::variable(0.3, 0, 1, 3);
        let f = x.sin().exp();
        let (s, c) = 0.3f64.sin_cos();
        let e = s.exp();
        let d3 = e * (c * c * c - 3.0 * s * c - c);
        assert!(close(f.d3(0, 0, 0), d3, 1e-14));
    }

    #[test]
    fn partial_shifts_order() {
        let x = Jet::variable(0.5, 0, 2, 3);
        let y = Jet::variable(-0.2, 1, 2, 3);
        let f = (&x * &y).exp();
        let fx = f.partial(0);
        assert_eq!(fx.order(), 2);
        assert!(close(fx.value(), f.d1(0), 1e-15));
        assert!(close(fx.d1(1), f.d2(0, 1), 1e-15));
        assert!(close(fx.d2(1, 1), f.d3(0, 1, 1), 1e-15));
    }

    #[test]
    fn sinc_sqrt_is_smooth_through_zero() {
        for &q in &[-2.5, -1.0000001, -0.999999, -0.3, 0.0, 0.4, 0.999999, 1.000001, 3.0] {
            let qj = Jet::variable(q, 0, 1, 3);
            let s = qj.sinc_sqrt();
            let c = qj.cos_sqrt();
            // finite-difference the values
            let h = 1e-4;
            let f = |t: f64| Jet::constant(t, 1, 0).sinc_sqrt().value();
            let g = |t: f64| Jet::constant(t, 1, 0).cos_sqrt().value();
            let fd1 = (f(q + h) - f(q - h)) / (2.0 * h);
            let gd2 = (g(q + h) - 2.0 * g(q) + g(q - h)) / (h * h);
            assert!(close(s.d1(0), fd1, 1e-7), "q={q}: {} vs {}", s.d1(0), fd1);
            assert!(close(c.d2(0, 0), gd2, 1e-5), "q={q}: {} vs {}", c.d2(0, 0), gd2);
            let fd3 = {
                let f2 = |t: f64| Jet::variable(t, 0, 1, 2).sinc_sqrt().d2(0, 0);
                (f2(q + h) - f2(q - h)) / (2.0 * h)
            };
            assert!(close(s.d3(0, 0, 0), fd3, 1e-6), "q={q}: {} vs {}", s.d3(0, 0, 0), fd3);
        }
        let v = Jet::constant(0.7f64.powi(2), 1, 0);
        assert!(close(v.sinc_sqrt().value(), 0.7f64.sin() / 0.7, 1e-15));
        assert!(close(v.cos_sqrt().value(), 0.7f64.cos(), 1e-15));
    }

    #[test]
    fn mixed_order_operands_truncate() {
        let a = Jet::variable(1.0, 0, 1, 3);
        let b = Jet::variable(1.0, 0, 1, 1);
        assert_eq!((&a * &b).order(), 1);
    }
}
