//! Closed-form tensors of a ball and the shell-integral tensor of an ellipsoid.
//!
//! For a ball of radius a centred at the origin the spatial tensor and the
//! antiderivatives
//!
//!   Eⁿ(x, T) with dEⁿ/dT = (2αT)ⁿ L(x, T),  Cⁿ = Eⁿ(t - t_prev) - Eⁿ(t - t_f)
//!
//! are radial functions written as g(r)/r with g odd in r. Three evaluation
//! routes are used:
//!
//! - the closed form g(r)/r away from the centre;
//! - near the centre, the Taylor coefficients of g at r = 0 (computed with
//!   [`Jet1`]) turned into an even series in ρ = |x|²;
//! - for diffusion lengths large against the ball, the moment series of
//!   [`crate::kernels_transient`] with exact ball moments, which are
//!   polynomials in ρ. The closed forms lose digits there to cancellation.
//!
//! Derivatives of any order come from evaluating the same routes on [`Tps`].

use std::f64::consts::PI;

use thiserror::Error;

use crate::geometry::{norm, Material, Vec3};
use crate::kernels_transient::{assemble_from_c, g_coeffs, spatial_coeffs, TensorSet, TensorTps, TENSOR_SET_ORDER};
use crate::polyint::EvalFlags;
use crate::specfun::{erf_unchecked, gauss_legendre};
use crate::tps::{Jet1, Scalar, Tps};

#[derive(Debug, Error, PartialEq)]
pub enum SphereError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("shell quadrature did not settle: value {value}, relative change {change}")]
    Accuracy { value: f64, change: f64 },
}

/// Ellipsoid centred at the origin with semi-axes along the coordinate axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub a: [f64; 3],
}

impl Ellipsoid {
    pub fn new(a1: f64, a2: f64, a3: f64) -> Result<Self, SphereError> {
        let a = [a1, a2, a3];
        if a.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(SphereError::Params(format!("semi-axes must be positive, got {a:?}")));
        }
        Ok(Self { a })
    }
}

/// Product rule on the unit sphere of directions: Gauss–Legendre in cos γ,
/// trapezoid in θ. Refined by doubling both counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShellQuadrature {
    pub n_theta: usize,
    pub n_gamma: usize,
}

impl ShellQuadrature {
    pub fn new(n_theta: usize, n_gamma: usize) -> Result<Self, SphereError> {
        if n_theta < 8 || n_gamma < 8 {
            return Err(SphereError::Params(format!("shell quadrature needs at least 8 points per direction, got {n_theta} x {n_gamma}")));
        }
        Ok(Self { n_theta, n_gamma })
    }
}

impl Default for ShellQuadrature {
    fn default() -> Self {
        Self { n_theta: 16, n_gamma: 16 }
    }
}

const SHELL_REL_TOL: f64 = 1e-6;
const SHELL_MAX_DOUBLINGS: usize = 8;

/// Number of ρ-terms kept in the expansion about the centre.
const CENTRE_TERMS: usize = 30;
/// Number of ball-moment terms in the large-T route.
const MOMENT_TERMS: usize = 40;
/// The moment route is used while (a + r)² < SWITCH · 4αT.
const SWITCH: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Radial {
    L,
    E(usize),
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// r·F(r) for F = L or Eⁿ at time T; T = 0 is the t → 0⁺ limit.
fn numer<T: Scalar>(kind: Radial, r: &T, big_t: f64, a: f64, mat: &Material) -> T {
    let c = |v: f64| r.cst(v);
    let am = c(a) - r.clone();
    let ap = r.clone() + a;
    let at = mat.alpha * big_t;
    let (em, ep, ea, eb) = if big_t > 0.0 {
        let s = (4.0 * at).sqrt();
        ((am.clone() / s).erf(), (ap.clone() / s).erf(), (-(ap.square()) / (4.0 * at)).exp(), (-(am.square()) / (4.0 * at)).exp())
    } else {
        let r0 = r.value();
        (c(sign(a - r0)), c(sign(a + r0)), c(0.0), c(0.0))
    };
    let root = (4.0 * at / PI).sqrt();
    match kind {
        Radial::L => {
            let lead = r.clone() * (em + ep) / (2.0 * mat.cp);
            let tail = (ea - eb) * (mat.alpha.powf(1.5) * big_t.sqrt() / (PI.sqrt() * mat.k));
            lead + tail
        }
        Radial::E(0) => {
            let pa = -((c(2.0 * a) - r.clone()) * ap.clone()) + 4.0 * at;
            let pb = (r.clone() + 2.0 * a) * am.clone() - 4.0 * at;
            let qm = (r.clone() + 2.0 * a) * am.square() + r.clone() * (6.0 * at);
            let qp = -((c(2.0 * a) - r.clone()) * ap.square()) + r.clone() * (6.0 * at);
            ((pa * ea + pb * eb) * root + qm * em + qp * ep) / (12.0 * mat.k)
        }
        Radial::E(1) => {
            let f4m = c(4.0 * a) - r.clone();
            let f4p = r.clone() + 4.0 * a;
            let ap3 = ap.square() * ap.clone();
            let am3 = am.square() * am.clone();
            let pa = f4m.clone() * ap3.clone() - f4m.clone() * ap.clone() * (2.0 * at) + 48.0 * at * at;
            let pb = -(f4p.clone() * am3.clone()) + f4p.clone() * am.clone() * (2.0 * at) - 48.0 * at * at;
            let qm = -(f4p * am3 * am) + r.clone() * (60.0 * at * at);
            let qp = f4m * ap3 * ap + r.clone() * (60.0 * at * at);
            ((pa * ea + pb * eb) * root + qm * em + qp * ep) / (120.0 * mat.k)
        }
        Radial::E(2) => {
            let f6m = c(6.0 * a) - r.clone();
            let f6p = r.clone() + 6.0 * a;
            let ap2 = ap.square();
            let am2 = am.square();
            let ap3 = ap2.clone() * ap.clone();
            let am3 = am2.clone() * am.clone();
            let ap5 = ap3.clone() * ap2.clone();
            let am5 = am3.clone() * am2.clone();
            let at3 = at * at * at;
            let pa =
                -(f6m.clone() * ap5.clone()) + f6m.clone() * ap3 * (2.0 * at) - f6m.clone() * ap.clone() * (12.0 * at * at) + 720.0 * at3;
            let pb = f6p.clone() * am5.clone() - f6p.clone() * am3 * (2.0 * at) + f6p.clone() * am.clone() * (12.0 * at * at) - 720.0 * at3;
            let qm = f6p * am5 * am + r.clone() * (840.0 * at3);
            let qp = -(f6m * ap5 * ap) + r.clone() * (840.0 * at3);
            ((pa * ea + pb * eb) * root + qm * em + qp * ep) / (1260.0 * mat.k)
        }
        Radial::E(n) => panic!("time tensor order {n} not in 0..=2"),
    }
}

/// Coefficients (in ρ^i) of the ball moment W_{2m}(x) = ∫_ball |x - x'|^{2m} dx'.
fn ball_moment_poly(a: f64, m: usize) -> Vec<f64> {
    let mut p = vec![0.0; m + 1];
    let top = 2 * m + 2;
    let mut binom = 1.0; // C(top, j)
    for j in 0..=top {
        if j % 2 == 1 {
            let i = (top - 1 - j) / 2;
            p[i] += 2.0 * PI / (m as f64 + 1.0) * binom * a.powi(j as i32 + 2) / (j as f64 + 2.0);
        }
        binom *= (top - j) as f64 / (j as f64 + 1.0);
    }
    p
}

fn rho_tps(x0: Vec3, order: usize) -> Tps {
    let [x, y, z] = Tps::point(x0, order);
    &x * &x + &y * &y + &z * &z
}

fn horner(p: &[f64], rho: &Tps) -> Tps {
    let mut acc = rho.cst(*p.last().unwrap_or(&0.0));
    for c in p.iter().rev().skip(1) {
        acc = &acc * rho + *c;
    }
    acc
}

fn moment_route(kind: Radial, a: f64, x0: Vec3, big_t: f64, mat: &Material, order: usize) -> Tps {
    let coefs = match kind {
        Radial::L => spatial_coeffs(big_t, mat, MOMENT_TERMS),
        Radial::E(n) => g_coeffs(n, big_t, mat, MOMENT_TERMS).even,
    };
    let mut p = vec![0.0; MOMENT_TERMS + 1];
    for (m, c) in coefs.iter().enumerate() {
        for (i, w) in ball_moment_poly(a, m).iter().enumerate() {
            p[i] += c * w;
        }
    }
    horner(&p, &rho_tps(x0, order))
}

fn closed_route(kind: Radial, a: f64, x0: Vec3, big_t: f64, mat: &Material, order: usize) -> Tps {
    let r0 = norm(x0);
    let near = if order == 0 { 1e-3 * a } else { 0.25 * a };
    if r0 >= near {
        let r = rho_tps(x0, order).sqrt();
        numer(kind, &r, big_t, a, mat) / r
    } else {
        let g = numer(kind, &Jet1::var(0.0, 2 * CENTRE_TERMS + 1), big_t, a, mat);
        let f: Vec<f64> = (0..=CENTRE_TERMS).map(|j| g.coeffs()[2 * j + 1]).collect();
        horner(&f, &rho_tps(x0, order))
    }
}

fn radial_tps(kind: Radial, a: f64, x0: Vec3, big_t: f64, mat: &Material, order: usize) -> Tps {
    if big_t < 0.0 {
        return Tps::constant(0.0, order);
    }
    let r0 = norm(x0);
    if big_t > 0.0 && (a + r0).powi(2) < SWITCH * 4.0 * mat.alpha * big_t {
        moment_route(kind, a, x0, big_t, mat, order)
    } else {
        closed_route(kind, a, x0, big_t, mat, order)
    }
}

/// Spatial tensor of a ball of radius a at radial coordinate x_r ≥ 0.
pub fn sphere_l(a: f64, x_r: f64, t: f64, mat: &Material) -> f64 {
    radial_tps(Radial::L, a, [0.0, 0.0, x_r.abs()], t, mat, 0).value()
}

/// Taylor series of the spatial ball tensor about x.
pub fn sphere_l_tps(a: f64, x: Vec3, t: f64, mat: &Material, order: usize) -> Tps {
    radial_tps(Radial::L, a, x, t, mat, order)
}

/// Antiderivative Eⁿ(x_r, T) of (2αT)ⁿ L in T, n ∈ {0, 1, 2}.
pub fn sphere_e(a: f64, x_r: f64, t: f64, mat: &Material, n: usize) -> f64 {
    assert!(n <= 2, "time tensor order {n} not in 0..=2");
    radial_tps(Radial::E(n), a, [0.0, 0.0, x_r.abs()], t, mat, 0).value()
}

fn clip_window(t: f64, window: (f64, f64)) -> Option<(f64, f64)> {
    let (t_prev, t_f) = window;
    if t <= t_prev || t_f <= t_prev {
        return None;
    }
    Some((t - t_prev, t - t_f.min(t)))
}

/// Cⁿ of the ball for the window (t_prev, t_f) observed at t.
pub fn sphere_c(a: f64, x_r: f64, t: f64, window: (f64, f64), mat: &Material, n: usize) -> f64 {
    match clip_window(t, window) {
        Some((t1, t2)) => sphere_e(a, x_r, t1, mat, n) - sphere_e(a, x_r, t2, mat, n),
        None => 0.0,
    }
}

/// Taylor series of C⁰, C¹, C² about x for one window.
pub fn sphere_c_tps(a: f64, x: Vec3, t: f64, window: (f64, f64), mat: &Material, order: usize) -> [Tps; 3] {
    std::array::from_fn(|n| match clip_window(t, window) {
        Some((t1, t2)) => radial_tps(Radial::E(n), a, x, t1, mat, order) - radial_tps(Radial::E(n), a, x, t2, mat, order),
        None => Tps::constant(0.0, order),
    })
}

/// All tensor families of the ball as Taylor series about x.
pub fn sphere_tensor_tps(a: f64, x: Vec3, t: f64, window: (f64, f64), mat: &Material, order: usize) -> TensorTps {
    let c = sphere_c_tps(a, x, t, window, mat, order);
    assemble_from_c(&c, x, mat.k, EvalFlags::default())
}

/// Tensor values and gradients of the ball for one window.
pub fn sphere_tensor_set(a: f64, x: Vec3, t: f64, window: (f64, f64), mat: &Material) -> TensorSet {
    sphere_tensor_tps(a, x, t, window, mat, TENSOR_SET_ORDER).to_tensor_set()
}

fn shell_sum(ell: &Ellipsoid, x: Vec3, t: f64, mat: &Material, n_gamma: usize, n_theta: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(n_gamma);
    let at4 = 4.0 * mat.alpha * t;
    let sigma = at4.sqrt();
    let gauss = 1.0 / (PI * mat.alpha * t).sqrt();
    let dtheta = 2.0 * PI / n_theta as f64;
    let mut sum = 0.0;
    for (c, w) in nodes.iter().zip(&weights) {
        let s = (1.0 - c * c).sqrt();
        let mut ring = 0.0;
        for j in 0..n_theta {
            let th = dtheta * j as f64;
            let e = [s * th.cos(), s * th.sin(), *c];
            let big_s = 1.0 / (0..3).map(|i| (e[i] / ell.a[i]).powi(2)).sum::<f64>().sqrt();
            let b: f64 = (0..3).map(|i| x[i] * e[i] / ell.a[i]).sum();
            let (lo, hi) = ((1.0 - b) * big_s, (1.0 + b) * big_s);
            ring +=
                erf_unchecked(lo / sigma) + erf_unchecked(hi / sigma) - big_s * gauss * ((-hi * hi / at4).exp() + (-lo * lo / at4).exp());
        }
        sum += w * ring * dtheta;
    }
    sum / (8.0 * PI * mat.cp)
}

/// Spatial tensor of an ellipsoid by the shell integral over directions; the same
/// integral serves interior and exterior points.
pub fn ellipsoid_l(ell: &Ellipsoid, x: Vec3, t: f64, mat: &Material, quad: &ShellQuadrature) -> Result<f64, SphereError> {
    if t < 0.0 {
        return Ok(0.0);
    }
    if t == 0.0 {
        let q: f64 = (0..3).map(|i| (x[i] / ell.a[i]).powi(2)).sum();
        return Ok(if q < 1.0 {
            1.0 / mat.cp
        } else if q == 1.0 {
            0.5 / mat.cp
        } else {
            0.0
        });
    }
    let (mut ng, mut nt) = (quad.n_gamma, quad.n_theta);
    let mut prev = shell_sum(ell, x, t, mat, ng, nt);
    let floor = 1e-14 / mat.cp;
    let mut change = f64::INFINITY;
    for _ in 0..SHELL_MAX_DOUBLINGS {
        ng *= 2;
        nt *= 2;
        let cur = shell_sum(ell, x, t, mat, ng, nt);
        change = (cur - prev).abs() / cur.abs().max(floor);
        if change <= SHELL_REL_TOL {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(SphereError::Accuracy { value: prev, change })
}
