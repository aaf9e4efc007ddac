//! Helmholtz-potential integrals and harmonic Eshelby tensors of polyhedra.
//!
//! Expanding the Helmholtz kernel in powers of iβ,
//!
//!   Aⁿ(x) = ∫_Ω e^{iβr} r^{n-1} dx' = Σ_m (iβ)^m/m! W_{m+n-1}(x),
//!
//! and with x' = x - d, d^{m-1} d_q = ∂_q r^{m+1}/(m+1), the polynomial-weighted
//! potentials Φ_{pq..} = ∫_Ω e^{iβr}/r x'_p x'_q.. dx' become sums of moments and
//! their derivatives with no negative powers of β:
//!
//!   ∫ x'_p r^{m-1}       = x_p W_{m-1} - ∂_p W_{m+1}/(m+1)
//!   ∫ x'_p x'_q r^{m-1}  = x_p x_q W_{m-1} - (x_p ∂_q + x_q ∂_p) W_{m+1}/(m+1)
//!                          + ∂_pq W_{m+3}/((m+1)(m+3)) - δ_pq W_{m+1}/(m+1)
//!
//! The inclusion frame is centred (x^C = 0). L^H = Φ/(4πK), D^H_i = -∂_iΦ/(4π).

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::geometry::{Material, Polyhedron, Vec3};
use crate::kernels_transient::{factorial, SeriesParams};
use crate::polyint::{moments_gradient, moments_tps, moments_value, EvalFlags, MomentRequest};
use crate::tps::Tps;

#[derive(Debug, Error, PartialEq)]
pub enum HarmonicError {
    #[error("invalid harmonic parameters: {0}")]
    Params(String),
    #[error("harmonic series not converged: last term {last_term:e} against value {value:e}")]
    Accuracy { last_term: f64, value: f64 },
}

/// Relative size of the trailing series terms accepted as converged.
pub const HARMONIC_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicParams {
    pub beta: Complex64,
    pub omega: Option<f64>,
}

impl HarmonicParams {
    pub fn new(beta: Complex64) -> Result<Self, HarmonicError> {
        if !(beta.re.is_finite() && beta.im.is_finite()) || beta.im < 0.0 {
            return Err(HarmonicError::Params(format!("beta must be finite with Im >= 0, got {beta}")));
        }
        Ok(Self { beta, omega: None })
    }

    /// β = √(iω/α) on the decaying branch.
    pub fn from_omega(omega: f64, mat: &Material) -> Result<Self, HarmonicError> {
        if !(omega.is_finite() && omega >= 0.0) {
            return Err(HarmonicError::Params(format!("omega must be finite and >= 0, got {omega}")));
        }
        let beta = (Complex64::i() * omega / mat.alpha).sqrt();
        Ok(Self { beta, omega: Some(omega) })
    }

    /// Explicit β with the frequency it claims to represent.
    pub fn with_omega(beta: Complex64, omega: f64, mat: &Material) -> Result<Self, HarmonicError> {
        let mut hp = Self::new(beta)?;
        let target = Complex64::i() * omega / mat.alpha;
        if (beta * beta - target).norm() > 1e-10 * (beta * beta).norm() {
            return Err(HarmonicError::Params(format!("beta^2 = {} differs from i*omega/alpha = {target}", beta * beta)));
        }
        hp.omega = Some(omega);
        Ok(hp)
    }
}

/// A complex Taylor series as a pair of real ones.
#[derive(Debug, Clone, PartialEq)]
pub struct CTps {
    pub re: Tps,
    pub im: Tps,
}

impl CTps {
    fn zero(order: usize) -> Self {
        Self { re: Tps::constant(0.0, order), im: Tps::constant(0.0, order) }
    }

    fn add_scaled(&mut self, c: Complex64, t: &Tps) {
        self.re.axpy(c.re, t);
        self.im.axpy(c.im, t);
    }

    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re.value(), self.im.value())
    }

    /// Partial derivative ∂^e as a complex number.
    pub fn deriv(&self, e: [usize; 3]) -> Complex64 {
        Complex64::new(self.re.deriv(e), self.im.deriv(e))
    }

    pub fn truncate(&self, order: usize) -> Self {
        Self { re: self.re.truncate(order), im: self.im.truncate(order) }
    }
}

/// Φ, Φ_p, Φ_pq as Taylor series about a field point.
#[derive(Debug, Clone)]
pub struct PhiTps {
    pub phi: CTps,
    pub phi_p: [CTps; 3],
    pub phi_pq: [[CTps; 3]; 3],
    pub flags: EvalFlags,
}

/// Φ, Φ_p, Φ_pq at a field point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhiTensors {
    pub phi: Complex64,
    pub phi_p: [Complex64; 3],
    pub phi_pq: [[Complex64; 3]; 3],
}

/// Harmonic Eshelby tensors: L^H, L^H_p, L^H_pq and D^H_i, D^H_ip, D^H_ipq.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HarmonicTensors {
    pub l: Complex64,
    pub l_p: [Complex64; 3],
    pub l_pq: [[Complex64; 3]; 3],
    pub d_i: [Complex64; 3],
    pub d_ip: [[Complex64; 3]; 3],
    pub d_ipq: [[[Complex64; 3]; 3]; 3],
}

fn series_coeffs(beta: Complex64, n_max: usize) -> Vec<Complex64> {
    let ib = Complex64::i() * beta;
    (0..=n_max).map(|m| ib.powu(m as u32) / factorial(m)).collect()
}

fn request(p_max: i32) -> MomentRequest {
    let p_max = p_max.max(1);
    MomentRequest { even_max: Some((p_max - p_max % 2) as usize), odd_max: Some(if p_max % 2 == 1 { p_max } else { p_max - 1 }) }
}

fn check_tail(terms: &[f64], value: f64, scale: f64) -> Result<(), HarmonicError> {
    let last = terms.iter().rev().take(2).fold(0.0f64, |m, v| m.max(*v));
    if last > HARMONIC_REL_TOL * value.max(scale * 1e-12) {
        return Err(HarmonicError::Accuracy { last_term: last, value });
    }
    Ok(())
}

fn check_n(n: usize) -> Result<(), HarmonicError> {
    if n > 2 {
        return Err(HarmonicError::Params(format!("A_n needs n in 0..=2, got {n}")));
    }
    Ok(())
}

/// Aⁿ(x) for n ∈ {0, 1, 2}.
pub fn a_n(poly: &Polyhedron, x: Vec3, hp: &HarmonicParams, n: usize, sp: &SeriesParams) -> Result<Complex64, HarmonicError> {
    check_n(n)?;
    let nm = sp.n_max;
    let ms = moments_value(poly, x, &request((nm + n) as i32 - 1));
    let c = series_coeffs(hp.beta, nm);
    let mut acc = Complex64::new(0.0, 0.0);
    let mut terms = Vec::with_capacity(nm + 1);
    for (m, cm) in c.iter().enumerate() {
        let t = cm * ms.get((m + n) as i32 - 1);
        terms.push(t.norm());
        acc += t;
    }
    check_tail(&terms, acc.norm(), terms.iter().cloned().fold(0.0, f64::max))?;
    Ok(acc)
}

/// ∇Aⁿ(x) by the surface route.
pub fn grad_a_n(poly: &Polyhedron, x: Vec3, hp: &HarmonicParams, n: usize, sp: &SeriesParams) -> Result<[Complex64; 3], HarmonicError> {
    check_n(n)?;
    let nm = sp.n_max;
    let ms = moments_gradient(poly, x, &request((nm + n) as i32 - 1));
    let c = series_coeffs(hp.beta, nm);
    let mut acc = [Complex64::new(0.0, 0.0); 3];
    let mut terms = Vec::with_capacity(nm + 1);
    for (m, cm) in c.iter().enumerate() {
        let g = ms.get((m + n) as i32 - 1);
        let mut mag = 0.0f64;
        for i in 0..3 {
            let t = cm * g[i];
            mag = mag.max(t.norm());
            acc[i] += t;
        }
        terms.push(mag);
    }
    let value = acc.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    check_tail(&terms, value, terms.iter().cloned().fold(0.0, f64::max))?;
    Ok(acc)
}

/// Φ, Φ_p, Φ_pq as Taylor series of the given order about x.
pub fn phi_tps(poly: &Polyhedron, x: Vec3, hp: &HarmonicParams, sp: &SeriesParams, order: usize) -> Result<PhiTps, HarmonicError> {
    let nm = sp.n_max;
    let top = order + 2;
    let ms = moments_tps(poly, x, &request(nm as i32 + 3), top);
    let xs = Tps::point(x, top);
    let c = series_coeffs(hp.beta, nm);
    let mut phi = CTps::zero(top);
    let mut phi_p: [CTps; 3] = std::array::from_fn(|_| CTps::zero(top - 1));
    let mut phi_pq: [[CTps; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| CTps::zero(order)));
    let mut terms = Vec::with_capacity(nm + 1);
    for (m, cm) in c.iter().enumerate() {
        let mf = m as f64;
        let w_lo = ms.get(m as i32 - 1);
        let w_mid = ms.get(m as i32 + 1);
        let w_hi = ms.get(m as i32 + 3);
        terms.push(cm.norm() * w_lo.value().abs());
        phi.add_scaled(*cm, w_lo);
        let d_mid: [Tps; 3] = std::array::from_fn(|p| w_mid.partial(p));
        let w_lo1 = w_lo.truncate(top - 1);
        let x1: [Tps; 3] = std::array::from_fn(|p| xs[p].truncate(top - 1));
        for p in 0..3 {
            let t = &x1[p] * &w_lo1 - d_mid[p].clone() / (mf + 1.0);
            phi_p[p].add_scaled(*cm, &t);
        }
        let x0: [Tps; 3] = std::array::from_fn(|p| xs[p].truncate(order));
        let w_lo0 = w_lo.truncate(order);
        let w_mid0 = w_mid.truncate(order);
        let d_mid0: [Tps; 3] = std::array::from_fn(|p| d_mid[p].truncate(order));
        let d_hi: [Tps; 3] = std::array::from_fn(|p| w_hi.partial(p));
        for p in 0..3 {
            for q in p..3 {
                let mut t = &(&x0[p] * &x0[q]) * &w_lo0;
                t = t - (&x0[p] * &d_mid0[q] + &x0[q] * &d_mid0[p]) / (mf + 1.0);
                t = t + d_hi[p].partial(q) / ((mf + 1.0) * (mf + 3.0));
                if p == q {
                    t = t - w_mid0.clone() / (mf + 1.0);
                }
                phi_pq[p][q].add_scaled(*cm, &t);
            }
        }
    }
    for p in 0..3 {
        for q in 0..p {
            phi_pq[p][q] = phi_pq[q][p].clone();
        }
    }
    let v = phi.value().norm();
    check_tail(&terms, v, terms.iter().cloned().fold(0.0, f64::max))?;
    Ok(PhiTps { phi: phi.truncate(order), phi_p: std::array::from_fn(|p| phi_p[p].truncate(order)), phi_pq, flags: ms.flags })
}

/// Φ, Φ_p, Φ_pq at x.
pub fn phi_tensors(poly: &Polyhedron, x: Vec3, hp: &HarmonicParams, sp: &SeriesParams) -> Result<PhiTensors, HarmonicError> {
    let t = phi_tps(poly, x, hp, sp, 0)?;
    Ok(PhiTensors {
        phi: t.phi.value(),
        phi_p: std::array::from_fn(|p| t.phi_p[p].value()),
        phi_pq: std::array::from_fn(|p| std::array::from_fn(|q| t.phi_pq[p][q].value())),
    })
}

/// L^H and D^H families at x.
pub fn harmonic_eshelby(
    poly: &Polyhedron,
    x: Vec3,
    hp: &HarmonicParams,
    k: f64,
    sp: &SeriesParams,
) -> Result<HarmonicTensors, HarmonicError> {
    let t = phi_tps(poly, x, hp, sp, 1)?;
    let lk = 1.0 / (4.0 * PI * k);
    let dk = -1.0 / (4.0 * PI);
    let grad = |c: &CTps, i: usize| {
        let mut e = [0; 3];
        e[i] = 1;
        c.deriv(e)
    };
    Ok(HarmonicTensors {
        l: t.phi.value() * lk,
        l_p: std::array::from_fn(|p| t.phi_p[p].value() * lk),
        l_pq: std::array::from_fn(|p| std::array::from_fn(|q| t.phi_pq[p][q].value() * lk)),
        d_i: std::array::from_fn(|i| grad(&t.phi, i) * dk),
        d_ip: std::array::from_fn(|i| std::array::from_fn(|p| grad(&t.phi_p[p], i) * dk)),
        d_ipq: std::array::from_fn(|i| std::array::from_fn(|p| std::array::from_fn(|q| grad(&t.phi_pq[p][q], i) * dk))),
    })
}
