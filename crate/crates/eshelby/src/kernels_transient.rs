//! Spatial and time-integrated Eshelby tensors for polyhedral inclusions.
//!
//! With W_p the polyhedral moments of [`crate::polyint`]:
//!
//! - spatial tensor: L(x, τ) = (4πατ)^{-3/2}/Cp Σ_m (-1)^m W_{2m} / (m! (4ατ)^m)
//! - time tensors:   Cⁿ = ∫_{t_prev}^{t_f} (2α(t-t'))ⁿ L(x, t-t') dt' = G(T1) - G(T2),
//!   T1 = t - t_prev, T2 = t - t_f, with
//!   G(T) = (2α)ⁿ(4πα)^{-3/2}/Cp [Γ(1/2-n)(4α)^{1/2-n} W_{2n-1}
//!   plus Σ_k (-1)^k W_{2k} (4α)^{-k} T^{n-k-1/2} / (k!(n-k-1/2))]
//!   and G(0) = 0. The Γ terms cancel whenever T2 > 0; at T2 = 0 the leading
//!   term is the steady Newtonian potential W_{-1}/(4πK).
//!
//! The polynomial-moment tensors follow from x'_p G = x_p G + 2ατ ∂_p G:
//! L̄ = C⁰, L̄_p = C¹_{,p} + x_p C⁰,
//! L̄_pq = C²_{,pq} + δ_pq C¹ + x_p C¹_{,q} + x_q C¹_{,p} + x_p x_q C⁰,
//! and D̄_{i..} = -K ∂_i L̄_{..}.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Material, Polyhedron, Vec3};
use crate::par::Exec;
use crate::polyint::{moments_gradient, moments_tps, moments_value, EvalFlags, MomentRequest, MomentSet};
use crate::specfun::gamma_half;
use crate::tps::Tps;

pub type Mat3 = [[f64; 3]; 3];
pub type Ten3 = [[[f64; 3]; 3]; 3];

/// Relative size of the last kept series term that marks non-convergence.
pub const SERIES_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("invalid time window: t_prev = {t_prev}, t_f = {t_f}")]
    Interval { t_prev: f64, t_f: f64 },
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("step index {f} outside grid of {steps} steps")]
    Step { f: usize, steps: usize },
}

/// Truncation of the m-series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesParams {
    pub n_max: usize,
}

impl SeriesParams {
    pub const MAX: usize = 60;

    pub fn new(n_max: usize) -> Result<Self, KernelError> {
        if n_max > Self::MAX {
            return Err(KernelError::Params(format!("n_max = {n_max} exceeds {}", Self::MAX)));
        }
        Ok(Self { n_max })
    }
}

impl Default for SeriesParams {
    fn default() -> Self {
        Self { n_max: 10 }
    }
}

/// Uniform time grid; step f covers the window [t0 + f·dt, t0 + (f+1)·dt].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, steps: usize) -> Result<Self, KernelError> {
        if !(dt > 0.0) || steps == 0 || !t0.is_finite() {
            return Err(KernelError::Params(format!("bad time grid t0 = {t0}, dt = {dt}, steps = {steps}")));
        }
        Ok(Self { t0, dt, steps })
    }

    /// Grid time t_f = t0 + f·dt.
    pub fn time(&self, f: usize) -> f64 {
        self.t0 + f as f64 * self.dt
    }

    pub fn window(&self, f: usize) -> (f64, f64) {
        (self.time(f), self.time(f + 1))
    }

    pub fn end(&self) -> f64 {
        self.time(self.steps)
    }
}

/// Polynomial eigen-field coefficients of one time step (stored unsymmetrized).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EigenCoeffs {
    pub q0: f64,
    pub q1: Vec3,
    pub q2: Mat3,
    pub u0: Vec3,
    pub u1: Mat3,
    pub u2: Ten3,
}

impl EigenCoeffs {
    pub fn is_finite(&self) -> bool {
        self.q0.is_finite()
            && self.q1.iter().all(|v| v.is_finite())
            && self.q2.iter().flatten().all(|v| v.is_finite())
            && self.u0.iter().all(|v| v.is_finite())
            && self.u1.iter().flatten().all(|v| v.is_finite())
            && self.u2.iter().flatten().flatten().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }
}

/// A value with evaluation diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eval<T> {
    pub value: T,
    pub flags: EvalFlags,
}

/// Time Eshelby tensors at one field point and window, with their spatial gradients
/// (the last index is the derivative direction).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorSet {
    pub lbar: f64,
    pub lbar_p: Vec3,
    pub lbar_pq: Mat3,
    pub dbar_i: Vec3,
    pub dbar_ip: Mat3,
    pub dbar_ipq: Ten3,
    pub grad_lbar: Vec3,
    pub grad_lbar_p: Mat3,
    pub grad_lbar_pq: Ten3,
    pub grad_dbar_i: Mat3,
    pub grad_dbar_ip: Ten3,
    pub grad_dbar_ipq: [Ten3; 3],
    pub flags: EvalFlags,
}

/// Taylor-series form of the six tensor families about a field point.
#[derive(Debug, Clone)]
pub struct TensorTps {
    pub lbar: Tps,
    pub lbar_p: [Tps; 3],
    pub lbar_pq: [[Tps; 3]; 3],
    pub dbar_i: [Tps; 3],
    pub dbar_ip: [[Tps; 3]; 3],
    pub dbar_ipq: [[[Tps; 3]; 3]; 3],
    pub flags: EvalFlags,
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |a, k| a * k as f64)
}

/// Coefficients c_m with L = Σ c_m W_{2m}.
pub fn spatial_coeffs(tau: f64, mat: &Material, n_max: usize) -> Vec<f64> {
    let pre = (4.0 * std::f64::consts::PI * mat.alpha * tau).powf(-1.5) / mat.cp;
    let z = 4.0 * mat.alpha * tau;
    (0..=n_max)
        .map(|m| {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            pre * sign / (factorial(m) * z.powi(m as i32))
        })
        .collect()
}

/// Coefficients of Cⁿ: even part c_k on W_{2k} and the Newtonian-type coefficient on W_{2n-1}.
pub struct TimeCoeffs {
    pub even: Vec<f64>,
    pub odd: f64,
}

pub(crate) fn g_coeffs(n: usize, big_t: f64, mat: &Material, n_max: usize) -> TimeCoeffs {
    if big_t <= 0.0 {
        return TimeCoeffs { even: vec![0.0; n_max + 1], odd: 0.0 };
    }
    let a4 = 4.0 * mat.alpha;
    let pre = (2.0 * mat.alpha).powi(n as i32) * (4.0 * std::f64::consts::PI * mat.alpha).powf(-1.5) / mat.cp;
    let nf = n as f64;
    let even = (0..=n_max)
        .map(|k| {
            let kf = k as f64;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            pre * sign * a4.powi(-(k as i32)) * big_t.powf(nf - kf - 0.5) / (factorial(k) * (nf - kf - 0.5))
        })
        .collect();
    let odd = pre * gamma_half(0.5 - nf).expect("n in 0..=2") * a4.powf(0.5 - nf);
    TimeCoeffs { even, odd }
}

/// Coefficients of Cⁿ for the window [t_prev, t_f] observed at t (t ≥ t_f).
pub fn time_coeffs(n: usize, t: f64, t_prev: f64, t_f: f64, mat: &Material, n_max: usize) -> TimeCoeffs {
    let t1 = t - t_prev;
    let t2 = t - t_f;
    let g1 = g_coeffs(n, t1, mat, n_max);
    if t2 > 0.0 {
        let g2 = g_coeffs(n, t2, mat, n_max);
        TimeCoeffs { even: g1.even.iter().zip(&g2.even).map(|(a, b)| a - b).collect(), odd: 0.0 }
    } else {
        g1
    }
}

/// Things that can be linearly combined: f64, gradients, Taylor series.
pub trait Lin: Clone {
    fn zero_like(&self) -> Self;
    fn axpy(&mut self, a: f64, x: &Self);
    fn magnitude(&self) -> f64;
}

impl Lin for f64 {
    fn zero_like(&self) -> Self {
        0.0
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        *self += a * x;
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl Lin for Vec3 {
    fn zero_like(&self) -> Self {
        [0.0; 3]
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        for i in 0..3 {
            self[i] += a * x[i];
        }
    }
    fn magnitude(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Lin for Tps {
    fn zero_like(&self) -> Self {
        Tps::constant(0.0, self.order())
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        Tps::axpy(self, a, x)
    }
    fn magnitude(&self) -> f64 {
        self.value().abs()
    }
}

/// Σ c_k W_{2k} + c_odd W_{odd_p}, flagging a series whose last term is not negligible.
fn combine<T: Lin>(ms: &MomentSet<T>, even: &[f64], odd: Option<(i32, f64)>) -> (T, bool) {
    let mut acc = ms.even[0].zero_like();
    let mut last = 0.0;
    for (k, c) in even.iter().enumerate() {
        acc.axpy(*c, &ms.even[k]);
        last = (c * ms.even[k].magnitude()).abs();
    }
    if let Some((p, c)) = odd {
        if c != 0.0 {
            acc.axpy(c, ms.get(p));
        }
    }
    let scale = acc.magnitude().max(even.first().map_or(0.0, |c| (c * ms.even[0].magnitude()).abs()) * 1e-6);
    (acc, last > SERIES_REL_TOL * scale)
}

fn check_window(t_prev: f64, t_f: f64) -> Result<(), KernelError> {
    if !(t_prev < t_f) || !t_prev.is_finite() || !t_f.is_finite() {
        return Err(KernelError::Interval { t_prev, t_f });
    }
    Ok(())
}

/// Moments at one field point, reusable across times and windows.
#[derive(Debug, Clone)]
pub struct PointMoments {
    pub x: Vec3,
    pub n_max: usize,
    pub tps: MomentSet<Tps>,
}

impl PointMoments {
    /// Taylor series of W_{2k} (k ≤ n_max) and W_{-1}, W_1, W_3 to the given order.
    pub fn new(poly: &Polyhedron, x: Vec3, sp: &SeriesParams, order: usize) -> Self {
        let req = MomentRequest { even_max: Some(2 * sp.n_max), odd_max: Some(3) };
        Self { x, n_max: sp.n_max, tps: moments_tps(poly, x, &req, order) }
    }

    /// Series of C⁰, C¹, C² for the window [t_prev, t_f] observed at t.
    pub fn c_series(&self, t: f64, t_prev: f64, t_f: f64, mat: &Material) -> Eval<[Tps; 3]> {
        let mut flags = self.tps.flags;
        let zero = self.tps.even[0].zero_like();
        let tf = t_f.min(t);
        if t <= t_prev {
            return Eval { value: [zero.clone(), zero.clone(), zero], flags };
        }
        let mut out = Vec::with_capacity(3);
        for n in 0..3 {
            let tc = time_coeffs(n, t, t_prev, tf, mat, self.n_max);
            let (v, bad) = combine(&self.tps, &tc.even, Some((2 * n as i32 - 1, tc.odd)));
            flags.series_unconverged |= bad;
            out.push(v);
        }
        let [c0, c1, c2]: [Tps; 3] = out.try_into().unwrap();
        Eval { value: [c0, c1, c2], flags }
    }

    /// Series of the spatial tensor L(·, τ).
    pub fn spatial_series(&self, tau: f64, mat: &Material) -> Eval<Tps> {
        if tau <= 0.0 {
            return Eval { value: self.tps.even[0].zero_like(), flags: self.tps.flags };
        }
        let (v, bad) = combine(&self.tps, &spatial_coeffs(tau, mat, self.n_max), None);
        let mut flags = self.tps.flags;
        flags.series_unconverged |= bad;
        Eval { value: v, flags }
    }

    /// All tensor families for one window; accurate to order `order - 3` in the
    /// highest family (D̄_ipq).
    pub fn tensors(&self, t: f64, t_prev: f64, t_f: f64, mat: &Material) -> TensorTps {
        let c = self.c_series(t, t_prev, t_f, mat);
        assemble_from_c(&c.value, self.x, mat.k, c.flags)
    }
}

/// Assemble the six tensor families from series of C⁰, C¹, C² about x0.
pub fn assemble_from_c(c: &[Tps; 3], x0: Vec3, k: f64, flags: EvalFlags) -> TensorTps {
    let n = c[0].order();
    assert!(n >= 2, "assembly needs series order >= 2");
    let x1 = Tps::point(x0, n - 1);
    let x2 = Tps::point(x0, n - 2);
    let c0_1 = c[0].truncate(n - 1);
    let c0_2 = c[0].truncate(n - 2);
    let c1_2 = c[1].truncate(n - 2);
    let lbar = c[0].clone();
    let lbar_p: [Tps; 3] = std::array::from_fn(|p| c[1].partial(p).truncate(n - 1) + &x1[p] * &c0_1);
    let c1_d: [Tps; 3] = std::array::from_fn(|p| c[1].partial(p).truncate(n - 2));
    let lbar_pq: [[Tps; 3]; 3] = std::array::from_fn(|p| {
        std::array::from_fn(|q| {
            let mut v = c[2].partial(p).partial(q);
            if p == q {
                v = v + &c1_2;
            }
            v + &x2[p] * &c1_d[q] + &x2[q] * &c1_d[p] + &(&x2[p] * &x2[q]) * &c0_2
        })
    });
    let dbar_i: [Tps; 3] = std::array::from_fn(|i| lbar.partial(i) * (-k));
    let dbar_ip = std::array::from_fn(|i| std::array::from_fn(|p| lbar_p[p].partial(i) * (-k)));
    let dbar_ipq = if n >= 3 {
        std::array::from_fn(|i| std::array::from_fn(|p| std::array::from_fn(|q| lbar_pq[p][q].partial(i) * (-k))))
    } else {
        // not representable at this order; values left as NaN so misuse is visible
        std::array::from_fn(|_| std::array::from_fn(|_| std::array::from_fn(|_| Tps::constant(f64::NAN, 0))))
    };
    TensorTps { lbar, lbar_p, lbar_pq, dbar_i, dbar_ip, dbar_ipq, flags }
}

impl TensorTps {
    /// Values and first spatial gradients (needs series order ≥ 4).
    pub fn to_tensor_set(&self) -> TensorSet {
        let v = |t: &Tps| t.value();
        let g = |t: &Tps| -> Vec3 { std::array::from_fn(|j| if t.order() >= 1 { t.deriv_axes(&[j]) } else { f64::NAN }) };
        TensorSet {
            lbar: v(&self.lbar),
            lbar_p: std::array::from_fn(|p| v(&self.lbar_p[p])),
            lbar_pq: std::array::from_fn(|p| std::array::from_fn(|q| v(&self.lbar_pq[p][q]))),
            dbar_i: std::array::from_fn(|i| v(&self.dbar_i[i])),
            dbar_ip: std::array::from_fn(|i| std::array::from_fn(|p| v(&self.dbar_ip[i][p]))),
            dbar_ipq: std::array::from_fn(|i| std::array::from_fn(|p| std::array::from_fn(|q| v(&self.dbar_ipq[i][p][q])))),
            grad_lbar: g(&self.lbar),
            grad_lbar_p: std::array::from_fn(|p| g(&self.lbar_p[p])),
            grad_lbar_pq: std::array::from_fn(|p| std::array::from_fn(|q| g(&self.lbar_pq[p][q]))),
            grad_dbar_i: std::array::from_fn(|i| g(&self.dbar_i[i])),
            grad_dbar_ip: std::array::from_fn(|i| std::array::from_fn(|p| g(&self.dbar_ip[i][p]))),
            grad_dbar_ipq: std::array::from_fn(|i| std::array::from_fn(|p| std::array::from_fn(|q| g(&self.dbar_ipq[i][p][q])))),
            flags: self.flags,
        }
    }

    /// Disturbed temperature series u' = -Q·L̄ + u*·D̄ for one window.
    pub fn contract(&self, c: &EigenCoeffs) -> Tps {
        let order = self.dbar_ipq[0][0][0].order();
        let tr = |t: &Tps| t.truncate(order);
        let mut u = tr(&self.lbar) * (-c.q0);
        for p in 0..3 {
            u.axpy(-c.q1[p], &tr(&self.lbar_p[p]));
            u.axpy(c.u0[p], &tr(&self.dbar_i[p]));
            for q in 0..3 {
                u.axpy(-c.q2[p][q], &tr(&self.lbar_pq[p][q]));
                u.axpy(c.u1[p][q], &tr(&self.dbar_ip[p][q]));
                for r in 0..3 {
                    u.axpy(c.u2[p][q][r], &self.dbar_ipq[p][q][r]);
                }
            }
        }
        u
    }
}

/// Spatial Eshelby tensor L(x, τ) = (1/Cp) ∫_Ω G(x - x', τ) dx'.
pub fn spatial_l(poly: &Polyhedron, x: Vec3, tau: f64, mat: &Material, sp: &SeriesParams) -> Eval<f64> {
    if tau <= 0.0 {
        return Eval { value: 0.0, flags: EvalFlags::default() };
    }
    let ms = moments_value(poly, x, &MomentRequest::even(2 * sp.n_max));
    let (v, bad) = combine(&ms, &spatial_coeffs(tau, mat, sp.n_max), None);
    let mut flags = ms.flags;
    flags.series_unconverged |= bad;
    Eval { value: v, flags }
}

/// Gradient of the spatial tensor through the surface (Stokes) route.
pub fn grad_spatial_l(poly: &Polyhedron, x: Vec3, tau: f64, mat: &Material, sp: &SeriesParams) -> Eval<Vec3> {
    if tau <= 0.0 {
        return Eval { value: [0.0; 3], flags: EvalFlags::default() };
    }
    let ms = moments_gradient(poly, x, &MomentRequest::even(2 * sp.n_max));
    let (v, bad) = combine(&ms, &spatial_coeffs(tau, mat, sp.n_max), None);
    let mut flags = ms.flags;
    flags.series_unconverged |= bad;
    Eval { value: v, flags }
}

/// Taylor series of the spatial tensor about x (derivatives of any order up to `order`).
pub fn spatial_l_tps(poly: &Polyhedron, x: Vec3, tau: f64, mat: &Material, sp: &SeriesParams, order: usize) -> Eval<Tps> {
    let req = MomentRequest::even(2 * sp.n_max);
    let pm = PointMoments { x, n_max: sp.n_max, tps: moments_tps(poly, x, &req, order) };
    pm.spatial_series(tau, mat)
}

fn time_moment_request(n: usize, sp: &SeriesParams) -> MomentRequest {
    MomentRequest { even_max: Some(2 * sp.n_max), odd_max: Some(2 * n as i32 - 1) }
}

fn time_value<T: Lin>(ms: &MomentSet<T>, n: usize, t: f64, t_prev: f64, t_f: f64, mat: &Material, sp: &SeriesParams) -> (T, EvalFlags) {
    let mut flags = ms.flags;
    if t <= t_prev {
        return (ms.even[0].zero_like(), flags);
    }
    let tc = time_coeffs(n, t, t_prev, t_f.min(t), mat, sp.n_max);
    let (v, bad) = combine(ms, &tc.even, Some((2 * n as i32 - 1, tc.odd)));
    flags.series_unconverged |= bad;
    (v, flags)
}

fn check_n(n: usize) -> Result<(), KernelError> {
    if n > 2 {
        return Err(KernelError::Params(format!("time tensor order n = {n} not in 0..=2")));
    }
    Ok(())
}

/// Time tensor Cⁿ for the window [t_prev, t_f] observed at t.
#[allow(clippy::too_many_arguments)]
pub fn c_nf(
    poly: &Polyhedron,
    x: Vec3,
    t: f64,
    t_prev: f64,
    t_f: f64,
    n: usize,
    mat: &Material,
    sp: &SeriesParams,
) -> Result<Eval<f64>, KernelError> {
    check_window(t_prev, t_f)?;
    check_n(n)?;
    let ms = moments_value(poly, x, &time_moment_request(n, sp));
    let (value, flags) = time_value(&ms, n, t, t_prev, t_f, mat, sp);
    Ok(Eval { value, flags })
}

/// L at many field points, one task per point.
pub fn spatial_l_sweep(poly: &Polyhedron, points: &[Vec3], tau: f64, mat: &Material, sp: &SeriesParams, exec: Exec) -> Vec<Eval<f64>> {
    exec.map(points, |x| spatial_l(poly, *x, tau, mat, sp))
}

/// Cⁿ at many field points, one task per point.
#[allow(clippy::too_many_arguments)]
pub fn c_nf_sweep(
    poly: &Polyhedron,
    points: &[Vec3],
    t: f64,
    window: (f64, f64),
    n: usize,
    mat: &Material,
    sp: &SeriesParams,
    exec: Exec,
) -> Result<Vec<Eval<f64>>, KernelError> {
    check_window(window.0, window.1)?;
    check_n(n)?;
    exec.map(points, |x| c_nf(poly, *x, t, window.0, window.1, n, mat, sp)).into_iter().collect()
}

/// Gradient of Cⁿ.
#[allow(clippy::too_many_arguments)]
pub fn grad_c_nf(
    poly: &Polyhedron,
    x: Vec3,
    t: f64,
    t_prev: f64,
    t_f: f64,
    n: usize,
    mat: &Material,
    sp: &SeriesParams,
) -> Result<Eval<Vec3>, KernelError> {
    check_window(t_prev, t_f)?;
    check_n(n)?;
    let ms = moments_gradient(poly, x, &time_moment_request(n, sp));
    let (value, flags) = time_value(&ms, n, t, t_prev, t_f, mat, sp);
    Ok(Eval { value, flags })
}

/// Second or third spatial derivatives of Cⁿ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HigherDerivs {
    Second(Mat3),
    Third(Ten3),
}

/// ∂_ij Cⁿ (order 2) or ∂_ijk Cⁿ (order 3). Points on a face plane get the
/// `near_interface` flag: the derivative there is one-sided.
#[allow(clippy::too_many_arguments)]
pub fn higher_derivs_c(
    poly: &Polyhedron,
    x: Vec3,
    t: f64,
    t_prev: f64,
    t_f: f64,
    n: usize,
    mat: &Material,
    sp: &SeriesParams,
    order: usize,
) -> Result<Eval<HigherDerivs>, KernelError> {
    check_window(t_prev, t_f)?;
    check_n(n)?;
    if !(order == 2 || order == 3) {
        return Err(KernelError::Params(format!("derivative order {order} not in {{2, 3}}")));
    }
    let ms = moments_tps(poly, x, &time_moment_request(n, sp), order);
    let (c, flags) = time_value(&ms, n, t, t_prev, t_f, mat, sp);
    let value = if order == 2 {
        HigherDerivs::Second(std::array::from_fn(|i| std::array::from_fn(|j| c.deriv_axes(&[i, j]))))
    } else {
        HigherDerivs::Third(std::array::from_fn(|i| std::array::from_fn(|j| std::array::from_fn(|k| c.deriv_axes(&[i, j, k])))))
    };
    Ok(Eval { value, flags })
}

/// Series order needed for values and gradients of every tensor family.
pub const TENSOR_SET_ORDER: usize = 4;

/// Tensor set of step f (window [t_f, t_f + dt] of the grid) observed at t.
pub fn assemble_tensors(
    poly: &Polyhedron,
    x: Vec3,
    t: f64,
    f: usize,
    grid: &TimeGrid,
    mat: &Material,
    sp: &SeriesParams,
) -> Result<TensorSet, KernelError> {
    if f >= grid.steps {
        return Err(KernelError::Step { f, steps: grid.steps });
    }
    let (t_prev, t_f) = grid.window(f);
    if t <= t_prev {
        return Ok(TensorSet::default());
    }
    let pm = PointMoments::new(poly, x, sp, TENSOR_SET_ORDER);
    Ok(pm.tensors(t, t_prev, t_f, mat).to_tensor_set())
}

fn disturbance_series(
    poly: &Polyhedron,
    x: Vec3,
    t: f64,
    coeffs: &[EigenCoeffs],
    grid: &TimeGrid,
    mat: &Material,
    sp: &SeriesParams,
    order: usize,
) -> Result<Eval<Tps>, KernelError> {
    if coeffs.len() > grid.steps {
        return Err(KernelError::Step { f: coeffs.len(), steps: grid.steps });
    }
    let mut u = Tps::constant(0.0, order);
    let mut flags = EvalFlags::default();
    if coeffs.iter().all(|c| c.is_zero()) {
        return Ok(Eval { value: u, flags });
    }
    let pm = PointMoments::new(poly, x, sp, order + 3);
    for (f, c) in coeffs.iter().enumerate() {
        let (t_prev, t_f) = grid.window(f);
        if t <= t_prev || c.is_zero() {
            continue;
        }
        let ts = pm.tensors(t, t_prev, t_f, mat);
        flags = flags.merge(ts.flags);
        u = u + ts.contract(c);
    }
    Ok(Eval { value: u, flags })
}

/// Disturbed temperature u'(x, t) from the eigen-field history.
pub fn temperature(
    poly: &Polyhedron,
    x: Vec3,
    t: f64,
    coeffs: &[EigenCoeffs],
    grid: &TimeGrid,
    mat: &Material,
    sp: &SeriesParams,
) -> Result<Eval<f64>, KernelError> {
    let u = disturbance_series(poly, x, t, coeffs, grid, mat, sp, 0)?;
    Ok(Eval { value: u.value.value(), flags: u.flags })
}

/// Disturbed flux -K ∇u'.
pub fn flux(
    poly: &Polyhedron,
    x: Vec3,
    t: f64,
    coeffs: &[EigenCoeffs],
    grid: &TimeGrid,
    mat: &Material,
    sp: &SeriesParams,
) -> Result<Eval<Vec3>, KernelError> {
    let u = disturbance_series(poly, x, t, coeffs, grid, mat, sp, 1)?;
    Ok(Eval { value: std::array::from_fn(|i| -mat.k * u.value.deriv_axes(&[i])), flags: u.flags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_cuboid, tessellate_sphere};
    use std::f64::consts::PI;

    fn mat() -> Material {
        Material::from_diffusivity(0.05, 0.05).unwrap()
    }

    fn cube() -> Polyhedron {
        make_cuboid(0.2, 0.2, 0.2, [0.0; 3]).unwrap()
    }

    // exact box integral of the heat kernel: product of erf differences
    fn box_l(x: Vec3, tau: f64, m: &Material) -> f64 {
        let s = (4.0 * m.alpha * tau).sqrt();
        let mut p = 1.0;
        for xi in x {
            p *= 0.5 * (crate::specfun::erf_unchecked((0.1 - xi) / s) + crate::specfun::erf_unchecked((0.1 + xi) / s));
        }
        p / m.cp
    }

    #[test]
    fn heaviside() {
        let c = cube();
        let sp = SeriesParams::default();
        assert_eq!(spatial_l(&c, [0.0; 3], -1.0, &mat(), &sp).value, 0.0);
        assert_eq!(spatial_l(&c, [0.0; 3], 0.0, &mat(), &sp).value, 0.0);
        assert_eq!(c_nf(&c, [0.0; 3], 0.5, 1.0, 2.0, 1, &mat(), &sp).unwrap().value, 0.0);
        let grid = TimeGrid::new(0.0, 1.0, 3).unwrap();
        let ts = assemble_tensors(&c, [0.05, 0.0, 0.0], 1.0, 1, &grid, &mat(), &sp).unwrap();
        assert_eq!(ts, TensorSet::default());
    }

    #[test]
    fn interval_errors() {
        let c = cube();
        let sp = SeriesParams::default();
        assert!(matches!(c_nf(&c, [0.0; 3], 2.0, 1.0, 1.0, 0, &mat(), &sp), Err(KernelError::Interval { .. })));
        assert!(grad_c_nf(&c, [0.0; 3], 2.0, 1.5, 1.0, 0, &mat(), &sp).is_err());
        assert!(SeriesParams::new(61).is_err());
        assert!(TimeGrid::new(0.0, 0.0, 3).is_err());
    }

    #[test]
    fn spatial_matches_exact_box_integral() {
        let m = mat();
        let sp = SeriesParams::new(20).unwrap();
        for x in [[0.0; 3], [0.05, 0.02, -0.07], [0.3, 0.1, 0.0]] {
            let v = spatial_l(&cube(), x, 2.0, &m, &sp);
            let e = box_l(x, 2.0, &m);
            assert!(((v.value - e) / e).abs() < 1e-12, "{} vs {e}", v.value);
            assert!(!v.flags.series_unconverged);
        }
        let short = spatial_l(&cube(), [1.0, 0.0, 0.0], 0.5, &m, &SeriesParams::new(2).unwrap());
        assert!(short.flags.series_unconverged);
    }

    #[test]
    fn gradient_is_zero_at_center() {
        let g = grad_spatial_l(&cube(), [0.0; 3], 2.0, &mat(), &SeriesParams::default());
        assert!(g.value.iter().all(|v| v.abs() < 1e-10));
        let gc = grad_c_nf(&cube(), [0.0; 3], 2.0, 0.0, 1.0, 1, &mat(), &SeriesParams::default()).unwrap();
        assert!(gc.value.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn newtonian_branch_at_sphere_center() {
        // n = 0, t = t_f: C⁰ = W_{-1}/(4πK) + (terms vanishing as t_prev → -∞)
        let s = tessellate_sphere(0.1, 4).unwrap();
        let m = mat();
        let sp = SeriesParams::default();
        let ms = moments_value(&s, [0.0; 3], &MomentRequest::odd(-1));
        let lead = ms.get(-1) / (4.0 * PI * m.k);
        assert!((lead / 0.1 - 1.0).abs() < 3e-3);
        // the full tensor is below its steady limit and approaches it as the window grows
        let short = c_nf(&s, [0.0; 3], 2.0, 0.0, 2.0, 0, &m, &sp).unwrap().value;
        let long = c_nf(&s, [0.0; 3], 40.0, 0.0, 40.0, 0, &m, &SeriesParams::new(4).unwrap()).unwrap().value;
        assert!(short < long && long < lead);
        assert!((long / lead - 1.0).abs() < 0.05);
    }

    #[test]
    fn time_tensor_is_integral_of_spatial() {
        use crate::specfun::{integrate, QuadratureSpec};
        let c = cube();
        let m = mat();
        let sp = SeriesParams::new(14).unwrap();
        let x = [0.05, 0.12, -0.03];
        let spec = QuadratureSpec::new(2000, 1e-14, 1e-11).unwrap();
        for n in 0..3 {
            for (t, tp, tf) in [(2.0, 0.0, 1.0), (2.0, 0.5, 2.0)] {
                let v = c_nf(&c, x, t, tp, tf, n, &m, &sp).unwrap().value;
                // τ = s² near the singular end keeps the integrand smooth
                let q = integrate(
                    |s: f64| {
                        let tau = (t - tf) + s * s;
                        2.0 * s * (2.0 * m.alpha * tau).powi(n as i32) * box_l(x, tau, &m)
                    },
                    0.0,
                    (t - tp - (t - tf)).sqrt(),
                    &spec,
                )
                .unwrap()
                .value;
                assert!(((v - q) / q).abs() < 1e-9, "n = {n}, window ({tp}, {tf}): {v} vs {q}");
            }
        }
    }

    #[test]
    fn tensor_set_symmetry_and_gradients() {
        let c = cube();
        let m = mat();
        let sp = SeriesParams::default();
        let grid = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let x = [0.03, 0.15, -0.04];
        let ts = assemble_tensors(&c, x, 2.0, 0, &grid, &m, &sp).unwrap();
        for p in 0..3 {
            for q in 0..3 {
                let a = ts.lbar_pq[p][q];
                assert!((a - ts.lbar_pq[q][p]).abs() <= 1e-9 * a.abs().max(1e-12));
                for i in 0..3 {
                    let d = ts.dbar_ipq[i][p][q];
                    assert!((d - ts.dbar_ipq[i][q][p]).abs() <= 1e-9 * d.abs().max(1e-12));
                }
            }
        }
        // D̄_i = -K ∂_i L̄ against the direct gradient route
        let g = grad_c_nf(&c, x, 2.0, 0.0, 1.0, 0, &m, &sp).unwrap().value;
        for i in 0..3 {
            assert!((ts.dbar_i[i] + m.k * g[i]).abs() < 1e-12 * g[i].abs().max(1e-9));
            assert!((ts.grad_lbar[i] - g[i]).abs() < 1e-12 * g[i].abs().max(1e-9));
        }
        // L̄_p by finite differences of C¹ plus x_p C⁰
        let c0 = c_nf(&c, x, 2.0, 0.0, 1.0, 0, &m, &sp).unwrap().value;
        let g1 = grad_c_nf(&c, x, 2.0, 0.0, 1.0, 1, &m, &sp).unwrap().value;
        for p in 0..3 {
            assert!((ts.lbar_p[p] - (g1[p] + x[p] * c0)).abs() < 1e-12 * ts.lbar_p[p].abs().max(1e-9));
        }
    }

    #[test]
    fn higher_derivatives_match_finite_differences() {
        let c = cube();
        let m = mat();
        let sp = SeriesParams::default();
        let x = [0.17, -0.05, 0.12];
        let h = 1e-5;
        let HigherDerivs::Second(d2) = higher_derivs_c(&c, x, 2.0, 0.0, 1.0, 1, &m, &sp, 2).unwrap().value else { panic!() };
        let HigherDerivs::Third(d3) = higher_derivs_c(&c, x, 2.0, 0.0, 1.0, 1, &m, &sp, 3).unwrap().value else { panic!() };
        for i in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let gp = grad_c_nf(&c, xp, 2.0, 0.0, 1.0, 1, &m, &sp).unwrap().value;
            let gm = grad_c_nf(&c, xm, 2.0, 0.0, 1.0, 1, &m, &sp).unwrap().value;
            for j in 0..3 {
                let fd = (gp[j] - gm[j]) / (2.0 * h);
                assert!((d2[i][j] - fd).abs() < 1e-4 * d2[i][j].abs().max(1e-3), "{} vs {fd}", d2[i][j]);
                assert!((d3[i][j][i] - d3[j][i][i]).abs() < 1e-9 * d3[i][j][i].abs().max(1e-9));
            }
        }
        let on_face = higher_derivs_c(&c, [0.0, 0.0, 0.1], 2.0, 0.0, 2.0, 0, &m, &sp, 2).unwrap();
        assert!(on_face.flags.near_interface);
    }

    #[test]
    fn zero_coefficients_give_zero_fields() {
        let c = cube();
        let grid = TimeGrid::new(0.0, 0.5, 4).unwrap();
        let hist = vec![EigenCoeffs::default(); 4];
        let sp = SeriesParams::default();
        assert_eq!(temperature(&c, [0.3, 0.0, 0.0], 2.0, &hist, &grid, &mat(), &sp).unwrap().value, 0.0);
        assert_eq!(flux(&c, [0.3, 0.0, 0.0], 2.0, &hist, &grid, &mat(), &sp).unwrap().value, [0.0; 3]);
    }

    #[test]
    fn uniform_u0_gives_zero_temperature_at_center() {
        let c = cube();
        let grid = TimeGrid::new(0.0, 1.0, 1).unwrap();
        let hist = vec![EigenCoeffs { u0: [0.0, 0.0, 1.0], ..Default::default() }];
        let u = temperature(&c, [0.0; 3], 2.0, &hist, &grid, &mat(), &SeriesParams::default()).unwrap();
        assert!(u.value.abs() < 1e-12);
    }

    #[test]
    fn flux_is_minus_k_gradient_of_temperature() {
        let c = cube();
        let m = mat();
        let sp = SeriesParams::default();
        let grid = TimeGrid::new(0.0, 0.5, 3).unwrap();
        let mut hist = vec![EigenCoeffs::default(); 3];
        for (f, h) in hist.iter_mut().enumerate() {
            h.q0 = 1.0 + f as f64;
            h.q1 = [0.5, -1.0, 2.0];
            h.q2[0][2] = 3.0;
            h.u0 = [0.1, 0.0, -0.2];
            h.u1[1][2] = 0.7;
            h.u2[2][0][1] = -1.3;
        }
        let x = [0.18, 0.07, -0.11];
        let q = flux(&c, x, 1.7, &hist, &grid, &m, &sp).unwrap().value;
        let hstep = 1e-6;
        for i in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += hstep;
            xm[i] -= hstep;
            let up = temperature(&c, xp, 1.7, &hist, &grid, &m, &sp).unwrap().value;
            let um = temperature(&c, xm, 1.7, &hist, &grid, &m, &sp).unwrap().value;
            let fd = -m.k * (up - um) / (2.0 * hstep);
            assert!((q[i] - fd).abs() < 1e-4 * q[i].abs().max(1e-8), "{} vs {fd}", q[i]);
        }
    }
}
