//! Truncated multivariate Taylor series in three variables.
//!
//! A `Tps` of order N holds the Taylor coefficients c_α of a function about a
//! base point, for all multi-indices |α| ≤ N. The same kernel code runs on
//! plain `f64` (values only) and on `Tps` (values plus all spatial derivatives
//! up to N) through the [`Scalar`] trait.

use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::OnceLock;

/// Highest supported order.
pub const MAX_ORDER: usize = 10;

/// Number of monomials in 3 variables with total degree ≤ order.
pub const fn n_coeffs(order: usize) -> usize {
    (order + 1) * (order + 2) * (order + 3) / 6
}

struct Table {
    exps: Vec<[u8; 3]>,
    // (i, j, k): coeff k of the product receives a_i * b_j
    mul: Vec<(u16, u16, u16)>,
}

fn build_table(order: usize) -> Table {
    let mut exps = Vec::with_capacity(n_coeffs(order));
    for d in 0..=order {
        for i in (0..=d).rev() {
            for j in (0..=d - i).rev() {
                exps.push([i as u8, j as u8, (d - i - j) as u8]);
            }
        }
    }
    let idx = |e: [u8; 3]| exps.iter().position(|x| *x == e).unwrap();
    let mut mul = Vec::new();
    for (a, ea) in exps.iter().enumerate() {
        for (b, eb) in exps.iter().enumerate() {
            let e = [ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2]];
            if (e[0] + e[1] + e[2]) as usize <= order {
                mul.push((a as u16, b as u16, idx(e) as u16));
            }
        }
    }
    Table { exps, mul }
}

fn table(order: usize) -> &'static Table {
    static TABLES: [OnceLock<Table>; MAX_ORDER + 1] = [const { OnceLock::new() }; MAX_ORDER + 1];
    assert!(order <= MAX_ORDER, "Tps order {order} exceeds {MAX_ORDER}");
    TABLES[order].get_or_init(|| build_table(order))
}

/// Index of the monomial with exponents `e` (any order table shares the layout).
pub fn monomial_index(e: [usize; 3]) -> usize {
    let d = e[0] + e[1] + e[2];
    // monomials of lower degree, then position inside degree d
    let before = n_coeffs(d) - (d + 1) * (d + 2) / 2;
    // inside degree d: i descends from d, then j descends from d - i
    let i = e[0];
    let mut pos = 0;
    for ii in (i + 1..=d).rev() {
        pos += d - ii + 1;
    }
    pos += (d - i) - e[1];
    before + pos
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tps {
    order: usize,
    c: Vec<f64>,
}

impl Tps {
    pub fn constant(v: f64, order: usize) -> Self {
        let mut c = vec![0.0; n_coeffs(order)];
        c[0] = v;
        Self { order, c }
    }

    /// The coordinate x_i expanded about `x0`.
    pub fn var(i: usize, x0: f64, order: usize) -> Self {
        let mut t = Self::constant(x0, order);
        if order >= 1 {
            let mut e = [0; 3];
            e[i] = 1;
            t.c[monomial_index(e)] = 1.0;
        }
        t
    }

    /// The three coordinates about the point `x0`.
    pub fn point(x0: [f64; 3], order: usize) -> [Self; 3] {
        [Self::var(0, x0[0], order), Self::var(1, x0[1], order), Self::var(2, x0[2], order)]
    }

    pub fn from_coeffs(order: usize, c: Vec<f64>) -> Self {
        assert_eq!(c.len(), n_coeffs(order));
        Self { order, c }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.c
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// Taylor coefficient c_α.
    pub fn coeff(&self, e: [usize; 3]) -> f64 {
        let d = e[0] + e[1] + e[2];
        if d > self.order {
            return 0.0;
        }
        self.c[monomial_index(e)]
    }

    /// Partial derivative ∂^α f at the base point.
    pub fn deriv(&self, e: [usize; 3]) -> f64 {
        let fact = |n: usize| (1..=n).product::<usize>() as f64;
        self.coeff(e) * fact(e[0]) * fact(e[1]) * fact(e[2])
    }

    /// Derivative along the listed axes, e.g. `[2, 2]` for ∂₃₃.
    pub fn deriv_axes(&self, axes: &[usize]) -> f64 {
        let mut e = [0; 3];
        for &a in axes {
            e[a] += 1;
        }
        self.deriv(e)
    }

    /// The series of ∂_i f, one order lower.
    pub fn partial(&self, i: usize) -> Tps {
        assert!(self.order >= 1);
        let lower = self.order - 1;
        let t = table(lower);
        let c = t
            .exps
            .iter()
            .map(|e| {
                let mut up = [e[0] as usize, e[1] as usize, e[2] as usize];
                up[i] += 1;
                self.c[monomial_index(up)] * up[i] as f64
            })
            .collect();
        Tps { order: lower, c }
    }

    /// Rebuild a series from its value and the series of its three partials
    /// (which must be mutually consistent, i.e. a gradient field).
    pub fn from_value_and_gradient(value: f64, grad: &[Tps; 3]) -> Tps {
        let order = grad[0].order + 1;
        let t = table(order);
        let mut c = vec![0.0; n_coeffs(order)];
        c[0] = value;
        for (k, e) in t.exps.iter().enumerate().skip(1) {
            let i = (0..3).find(|&i| e[i] > 0).unwrap();
            let mut down = [e[0] as usize, e[1] as usize, e[2] as usize];
            down[i] -= 1;
            c[k] = grad[i].c[monomial_index(down)] / e[i] as f64;
        }
        Tps { order, c }
    }

    /// Truncate to a lower order.
    pub fn truncate(&self, order: usize) -> Tps {
        assert!(order <= self.order);
        Tps { order, c: self.c[..n_coeffs(order)].to_vec() }
    }

    fn nilpotent(&self) -> Tps {
        let mut n = self.clone();
        n.c[0] = 0.0;
        n
    }

    /// f(self) given the univariate Taylor coefficients of f at self.value().
    pub fn compose(&self, t: &[f64]) -> Tps {
        let n = self.nilpotent();
        let mut acc = Tps::constant(t[self.order.min(t.len() - 1)], self.order);
        for k in (0..self.order.min(t.len() - 1)).rev() {
            acc = &acc * &n;
            acc.c[0] += t[k];
        }
        acc
    }

    fn mul_into(&self, other: &Tps, out: &mut [f64]) {
        assert_eq!(self.order, other.order, "Tps order mismatch");
        for v in out.iter_mut() {
            *v = 0.0;
        }
        let a = &self.c;
        let b = &other.c;
        for &(i, j, k) in &table(self.order).mul {
            out[k as usize] += a[i as usize] * b[j as usize];
        }
    }

    pub fn recip(&self) -> Tps {
        let a0 = self.value();
        let inv = 1.0 / a0;
        let mut t = vec![0.0; self.order + 1];
        let mut p = inv;
        for (k, tk) in t.iter_mut().enumerate() {
            *tk = if k % 2 == 0 { p } else { -p };
            p *= inv;
        }
        self.compose(&t)
    }

    pub fn powf(&self, r: f64) -> Tps {
        let a0 = self.value();
        let mut t = vec![0.0; self.order + 1];
        let mut binom = 1.0;
        for (k, tk) in t.iter_mut().enumerate() {
            *tk = binom * a0.powf(r - k as f64);
            binom *= (r - k as f64) / (k as f64 + 1.0);
        }
        self.compose(&t)
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Tps {
        Tps { order: self.order, c: self.c.iter().map(|&v| f(v)).collect() }
    }

    pub fn axpy(&mut self, alpha: f64, x: &Tps) {
        assert_eq!(self.order, x.order);
        for (a, b) in self.c.iter_mut().zip(&x.c) {
            *a += alpha * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.c.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Univariate Taylor coefficients of q(h)^r for a polynomial q.
fn series_pow(q: &[f64], r: f64, n: usize) -> Vec<f64> {
    let mut g = vec![0.0; n + 1];
    g[0] = q[0].powf(r);
    for k in 1..=n {
        let mut s = 0.0;
        for j in 1..=k.min(q.len() - 1) {
            s += (r * j as f64 - (k - j) as f64) * q[j] * g[k - j];
        }
        g[k] = s / (k as f64 * q[0]);
    }
    g
}

/// Univariate Taylor coefficients of exp(p(h)) for a polynomial p with p(0) = 0.
fn series_exp(p: &[f64], n: usize) -> Vec<f64> {
    let mut e = vec![0.0; n + 1];
    e[0] = 1.0;
    for k in 1..=n {
        let mut s = 0.0;
        for j in 1..=k.min(p.len() - 1) {
            s += j as f64 * p[j] * e[k - j];
        }
        e[k] = s / k as f64;
    }
    e
}

fn integrate_series(t0: f64, d: &[f64]) -> Vec<f64> {
    let mut t = Vec::with_capacity(d.len() + 1);
    t.push(t0);
    for (k, v) in d.iter().enumerate() {
        t.push(v / (k as f64 + 1.0));
    }
    t
}

pub(crate) fn jet_atan(a0: f64, n: usize) -> Vec<f64> {
    if n == 0 {
        return vec![a0.atan()];
    }
    let d = series_pow(&[1.0 + a0 * a0, 2.0 * a0, 1.0], -1.0, n - 1);
    integrate_series(a0.atan(), &d)
}

pub(crate) fn jet_asinh(a0: f64, n: usize) -> Vec<f64> {
    if n == 0 {
        return vec![a0.asinh()];
    }
    let d = series_pow(&[1.0 + a0 * a0, 2.0 * a0, 1.0], -0.5, n - 1);
    integrate_series(a0.asinh(), &d)
}

pub(crate) fn jet_erf(a0: f64, n: usize) -> Vec<f64> {
    let v = crate::specfun::erf_unchecked(a0);
    if n == 0 {
        return vec![v];
    }
    let scale = std::f64::consts::FRAC_2_SQRT_PI * (-a0 * a0).exp();
    let d: Vec<f64> = series_exp(&[0.0, -2.0 * a0, -1.0], n - 1).iter().map(|e| e * scale).collect();
    integrate_series(v, &d)
}

pub(crate) fn jet_exp(a0: f64, n: usize) -> Vec<f64> {
    let mut t = vec![a0.exp(); n + 1];
    for k in 1..=n {
        t[k] = t[k - 1] / k as f64;
    }
    t
}

pub(crate) fn jet_ln(a0: f64, n: usize) -> Vec<f64> {
    let mut t = vec![a0.ln(); n + 1];
    let mut p = 1.0;
    for k in 1..=n {
        p /= a0;
        t[k] = if k % 2 == 1 { p / k as f64 } else { -p / k as f64 };
    }
    t
}

macro_rules! binop {
    ($tr:ident, $m:ident, $body:expr) => {
        impl $tr<&Tps> for &Tps {
            type Output = Tps;
            fn $m(self, rhs: &Tps) -> Tps {
                let f: fn(&Tps, &Tps) -> Tps = $body;
                f(self, rhs)
            }
        }
        impl $tr<Tps> for Tps {
            type Output = Tps;
            fn $m(self, rhs: Tps) -> Tps {
                (&self).$m(&rhs)
            }
        }
        impl $tr<&Tps> for Tps {
            type Output = Tps;
            fn $m(self, rhs: &Tps) -> Tps {
                (&self).$m(rhs)
            }
        }
        impl $tr<Tps> for &Tps {
            type Output = Tps;
            fn $m(self, rhs: Tps) -> Tps {
                self.$m(&rhs)
            }
        }
    };
}

binop!(Add, add, |a, b| {
    assert_eq!(a.order, b.order);
    Tps { order: a.order, c: a.c.iter().zip(&b.c).map(|(x, y)| x + y).collect() }
});
binop!(Sub, sub, |a, b| {
    assert_eq!(a.order, b.order);
    Tps { order: a.order, c: a.c.iter().zip(&b.c).map(|(x, y)| x - y).collect() }
});
binop!(Mul, mul, |a, b| {
    let mut out = vec![0.0; a.c.len()];
    a.mul_into(b, &mut out);
    Tps { order: a.order, c: out }
});
binop!(Div, div, |a, b| a * &b.recip());

impl Neg for Tps {
    type Output = Tps;
    fn neg(self) -> Tps {
        self.map(|v| -v)
    }
}

impl Add<f64> for Tps {
    type Output = Tps;
    fn add(mut self, rhs: f64) -> Tps {
        self.c[0] += rhs;
        self
    }
}
impl Sub<f64> for Tps {
    type Output = Tps;
    fn sub(mut self, rhs: f64) -> Tps {
        self.c[0] -= rhs;
        self
    }
}
impl Mul<f64> for Tps {
    type Output = Tps;
    fn mul(self, rhs: f64) -> Tps {
        self.map(|v| v * rhs)
    }
}
impl Div<f64> for Tps {
    type Output = Tps;
    fn div(self, rhs: f64) -> Tps {
        self.map(|v| v / rhs)
    }
}

/// Truncated univariate Taylor series about a base point, used where radial
/// functions need many more orders than a three-variable [`Tps`] can hold.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet1 {
    c: Vec<f64>,
}

impl Jet1 {
    /// The variable h expanded about h0, to order n.
    pub fn var(h0: f64, n: usize) -> Self {
        let mut c = vec![0.0; n + 1];
        c[0] = h0;
        if n >= 1 {
            c[1] = 1.0;
        }
        Self { c }
    }

    pub fn constant(v: f64, n: usize) -> Self {
        let mut c = vec![0.0; n + 1];
        c[0] = v;
        Self { c }
    }

    pub fn order(&self) -> usize {
        self.c.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c
    }

    /// f(self) given the Taylor coefficients of f at self.value().
    pub fn compose(&self, t: &[f64]) -> Jet1 {
        let n = self.order();
        let mut nil = self.clone();
        nil.c[0] = 0.0;
        let top = n.min(t.len() - 1);
        let mut acc = Jet1::constant(t[top], n);
        for k in (0..top).rev() {
            acc = acc * nil.clone();
            acc.c[0] += t[k];
        }
        acc
    }

    fn recip(&self) -> Jet1 {
        let n = self.order();
        let mut r = vec![0.0; n + 1];
        r[0] = 1.0 / self.c[0];
        for k in 1..=n {
            let s: f64 = (1..=k).map(|j| self.c[j] * r[k - j]).sum();
            r[k] = -s * r[0];
        }
        Jet1 { c: r }
    }
}

impl Add for Jet1 {
    type Output = Jet1;
    fn add(mut self, rhs: Jet1) -> Jet1 {
        for (a, b) in self.c.iter_mut().zip(&rhs.c) {
            *a += b;
        }
        self
    }
}
impl Sub for Jet1 {
    type Output = Jet1;
    fn sub(mut self, rhs: Jet1) -> Jet1 {
        for (a, b) in self.c.iter_mut().zip(&rhs.c) {
            *a -= b;
        }
        self
    }
}
impl Mul for Jet1 {
    type Output = Jet1;
    fn mul(self, rhs: Jet1) -> Jet1 {
        let n = self.order();
        let mut c = vec![0.0; n + 1];
        for (i, a) in self.c.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in rhs.c[..=n - i].iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Jet1 { c }
    }
}
impl Div for Jet1 {
    type Output = Jet1;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Jet1) -> Jet1 {
        self * rhs.recip()
    }
}
impl Neg for Jet1 {
    type Output = Jet1;
    fn neg(mut self) -> Jet1 {
        self.c.iter_mut().for_each(|v| *v = -*v);
        self
    }
}
impl Add<f64> for Jet1 {
    type Output = Jet1;
    fn add(mut self, rhs: f64) -> Jet1 {
        self.c[0] += rhs;
        self
    }
}
impl Sub<f64> for Jet1 {
    type Output = Jet1;
    fn sub(mut self, rhs: f64) -> Jet1 {
        self.c[0] -= rhs;
        self
    }
}
impl Mul<f64> for Jet1 {
    type Output = Jet1;
    fn mul(mut self, rhs: f64) -> Jet1 {
        self.c.iter_mut().for_each(|v| *v *= rhs);
        self
    }
}
impl Div<f64> for Jet1 {
    type Output = Jet1;
    fn div(mut self, rhs: f64) -> Jet1 {
        self.c.iter_mut().for_each(|v| *v /= rhs);
        self
    }
}

/// Arithmetic shared by `f64` and `Tps` so that kernels are written once.
pub trait Scalar:
    Clone
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
    fn value(&self) -> f64;
    /// A constant with the same shape as `self`.
    fn cst(&self, v: f64) -> Self;
    fn sqrt(&self) -> Self;
    fn ln(&self) -> Self;
    fn exp(&self) -> Self;
    fn asinh(&self) -> Self;
    fn atan2(&self, x: &Self) -> Self;
    fn erf(&self) -> Self;
    /// |self| using the sign of the base value; the derivative is one-sided at 0.
    fn abs_branch(&self) -> Self {
        if self.value() < 0.0 {
            -self.clone()
        } else {
            self.clone()
        }
    }
    fn square(&self) -> Self {
        self.clone() * self.clone()
    }
}

impl Scalar for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn cst(&self, v: f64) -> Self {
        v
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn asinh(&self) -> Self {
        f64::asinh(*self)
    }
    fn atan2(&self, x: &Self) -> Self {
        f64::atan2(*self, *x)
    }
    fn erf(&self) -> Self {
        crate::specfun::erf_unchecked(*self)
    }
}

impl Scalar for Tps {
    fn value(&self) -> f64 {
        self.c[0]
    }
    fn cst(&self, v: f64) -> Self {
        Tps::constant(v, self.order)
    }
    fn sqrt(&self) -> Self {
        self.powf(0.5)
    }
    fn ln(&self) -> Self {
        self.compose(&jet_ln(self.value(), self.order))
    }
    fn exp(&self) -> Self {
        self.compose(&jet_exp(self.value(), self.order))
    }
    fn asinh(&self) -> Self {
        self.compose(&jet_asinh(self.value(), self.order))
    }
    fn atan2(&self, x: &Self) -> Self {
        let (y0, x0) = (self.value(), x.value());
        let theta0 = y0.atan2(x0);
        if x0.abs() >= y0.abs() {
            let z = self / x;
            let mut t = jet_atan(z.value(), self.order);
            t[0] = theta0;
            z.compose(&t)
        } else {
            let z = x / self;
            let mut t: Vec<f64> = jet_atan(z.value(), self.order).iter().map(|v| -v).collect();
            t[0] = theta0;
            z.compose(&t)
        }
    }
    fn erf(&self) -> Self {
        self.compose(&jet_erf(self.value(), self.order))
    }
}

impl Scalar for Jet1 {
    fn value(&self) -> f64 {
        self.c[0]
    }
    fn cst(&self, v: f64) -> Self {
        Jet1::constant(v, self.order())
    }
    fn sqrt(&self) -> Self {
        let a0 = self.value();
        let n = self.order();
        let mut t = vec![0.0; n + 1];
        let mut binom = 1.0;
        for (k, tk) in t.iter_mut().enumerate() {
            *tk = binom * a0.powf(0.5 - k as f64);
            binom *= (0.5 - k as f64) / (k as f64 + 1.0);
        }
        self.compose(&t)
    }
    fn ln(&self) -> Self {
        self.compose(&jet_ln(self.value(), self.order()))
    }
    fn exp(&self) -> Self {
        self.compose(&jet_exp(self.value(), self.order()))
    }
    fn asinh(&self) -> Self {
        self.compose(&jet_asinh(self.value(), self.order()))
    }
    fn atan2(&self, x: &Self) -> Self {
        let theta0 = self.value().atan2(x.value());
        let z = self.clone() / x.clone();
        let mut t = jet_atan(z.value(), self.order());
        t[0] = theta0;
        z.compose(&t)
    }
    fn erf(&self) -> Self {
        self.compose(&jet_erf(self.value(), self.order()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn index_layout_matches_table() {
        for order in 0..=6 {
            for (k, e) in table(order).exps.iter().enumerate() {
                assert_eq!(monomial_index([e[0] as usize, e[1] as usize, e[2] as usize]), k);
            }
            assert_eq!(table(order).exps.len(), n_coeffs(order));
        }
    }

    #[test]
    fn jet1_matches_closed_forms() {
        let h = Jet1::var(0.3, 12);
        let e = Scalar::exp(&(h.clone() * 2.0));
        for k in 0..=12 {
            let want = 2f64.powi(k as i32) * 0.6f64.exp() / (1..=k).fold(1.0, |a, j| a * j as f64);
            assert!(close(e.coeffs()[k], want, 1e-13));
        }
        let q = (h.clone() * h.clone() + 1.0) / (h.clone() + 2.0);
        let back = q * (h + 2.0);
        assert!(close(back.coeffs()[0], 1.09, 1e-14));
        assert!(close(back.coeffs()[1], 0.6, 1e-14));
        assert!(close(back.coeffs()[2], 1.0, 1e-14));
        assert!(back.coeffs()[3..].iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn product_of_polynomials() {
        let [x, y, z] = Tps::point([1.0, 2.0, -1.0], 4);
        let f = &(&x * &y) * &z; // xyz
        assert!(close(f.value(), -2.0, 1e-15));
        assert!(close(f.deriv([1, 1, 1]), 1.0, 1e-15));
        assert!(close(f.deriv([1, 0, 0]), -2.0, 1e-15));
        assert!(close(f.deriv([0, 1, 1]), 1.0, 1e-15));
    }

    #[test]
    fn elementary_derivatives() {
        let x0 = 0.7;
        let order = 6;
        let x = Tps::var(0, x0, order);
        let checks: Vec<(Tps, Box<dyn Fn(usize) -> f64>)> = vec![
            (Scalar::exp(&x), Box::new(move |_| x0.exp())),
            (
                Scalar::ln(&x),
                Box::new(move |k| {
                    if k == 0 {
                        x0.ln()
                    } else {
                        let f: f64 = (1..k).product::<usize>() as f64;
                        (-1f64).powi(k as i32 + 1) * f / x0.powi(k as i32)
                    }
                }),
            ),
            (
                x.powf(-1.5),
                Box::new(move |k| {
                    let mut c = 1.0;
                    for j in 0..k {
                        c *= -1.5 - j as f64;
                    }
                    c * x0.powf(-1.5 - k as f64)
                }),
            ),
        ];
        for (t, d) in checks {
            for k in 0..=order {
                assert!(close(t.deriv([k, 0, 0]), d(k), 1e-12), "k = {k}");
            }
        }
    }

    fn fd_nth<F: Fn(f64) -> f64>(f: F, x: f64, n: usize, h: f64) -> f64 {
        // central finite difference of order n via binomial stencil
        let mut s = 0.0;
        for j in 0..=n {
            let c = (1..=n).product::<usize>() as f64 / ((1..=j).product::<usize>() as f64 * (1..=n - j).product::<usize>() as f64);
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            s += sign * c * f(x + (n as f64 / 2.0 - j as f64) * h);
        }
        s / h.powi(n as i32)
    }

    #[test]
    fn special_jets_against_finite_differences() {
        let x0 = 0.4;
        let x = Tps::var(0, x0, 3);
        let cases: Vec<(Tps, fn(f64) -> f64)> = vec![
            (Scalar::asinh(&x), f64::asinh),
            (Scalar::erf(&x), crate::specfun::erf_unchecked),
            (x.atan2(&Tps::constant(1.0, 3)), f64::atan),
        ];
        for (t, f) in cases {
            for n in 1..=3 {
                let fd = fd_nth(f, x0, n, 1e-3);
                assert!(close(t.deriv([n, 0, 0]), fd, 1e-5), "n = {n}: {} vs {fd}", t.deriv([n, 0, 0]));
            }
        }
    }

    #[test]
    fn atan2_both_branches() {
        for &(y0, x0) in &[(0.3, 1.2), (1.5, 0.2), (-0.8, -0.1), (0.5, -2.0)] {
            let [x, y, _] = Tps::point([x0, y0, 0.0], 2);
            let th = y.atan2(&x);
            assert!(close(th.value(), f64::atan2(y0, x0), 1e-15));
            let r2 = x0 * x0 + y0 * y0;
            assert!(close(th.deriv([1, 0, 0]), -y0 / r2, 1e-13));
            assert!(close(th.deriv([0, 1, 0]), x0 / r2, 1e-13));
            // atan2 is harmonic
            assert!((th.deriv([2, 0, 0]) + th.deriv([0, 2, 0])).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_roundtrip() {
        let [x, y, z] = Tps::point([0.2, -0.3, 0.5], 5);
        let r = (&x * &x + &y * &y + &z * &z).sqrt();
        let g = [r.partial(0), r.partial(1), r.partial(2)];
        let back = Tps::from_value_and_gradient(r.value(), &g);
        for (a, b) in back.coeffs().iter().zip(r.coeffs()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn division_inverts_multiplication(a in 0.5f64..2.0, b in 0.5f64..2.0, c in -1.0f64..1.0) {
                let [x, y, z] = Tps::point([a, b, c], 4);
                let num = &x * &y + z.clone();
                let den = &y + &x;
                let q = &num / &den;
                let back = &q * &den;
                for (u, v) in back.coeffs().iter().zip(num.coeffs()) {
                    prop_assert!((u - v).abs() < 1e-11);
                }
            }

            #[test]
            fn laplacian_of_inverse_distance_vanishes(a in 0.3f64..2.0, b in -1.0f64..1.0, c in -1.0f64..1.0) {
                let [x, y, z] = Tps::point([a, b, c], 4);
                let r = (&x * &x + &y * &y + &z * &z).sqrt();
                let inv = r.recip();
                let lap = inv.deriv([2, 0, 0]) + inv.deriv([0, 2, 0]) + inv.deriv([0, 0, 2]);
                prop_assert!(lap.abs() < 1e-10 * inv.deriv([2, 0, 0]).abs().max(1.0));
            }
        }
    }
}
