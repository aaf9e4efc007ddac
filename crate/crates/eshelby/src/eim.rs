//! Equivalent inclusion method for one spherical inhomogeneity in an
//! insulated block heated through its top face.
//!
//! The undisturbed field is the exact 1D slab solution. The inhomogeneity is
//! replaced by polynomial eigen-fields (heat source Q* and eigen-gradient u*)
//! that are constant over each time step; their coefficients come from
//! matching flux and heat-source equivalence at the sphere centre, step by
//! step, with the sphere's Taylor-series tensors as the convolution blocks.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{sub, Material, Vec3};
use crate::kernels_sphere_ellipsoid::sphere_tensor_tps;
use crate::kernels_transient::{EigenCoeffs, TensorTps, TimeGrid};
use crate::par::Exec;
use crate::tps::Tps;

#[derive(Debug, Error)]
pub enum EimError {
    #[error("invalid problem: {0}")]
    Params(String),
    #[error("unsupported boundary condition: {0}")]
    UnsupportedBc(String),
    #[error("equivalent system at step {step} is ill-conditioned (condition number {condition:e})")]
    Conditioning { step: usize, condition: f64 },
    #[error("quadratic coefficients at step {step} are not symmetric (relative asymmetry {asymmetry:e})")]
    Asymmetric { step: usize, asymmetry: f64 },
}

/// Prescribed temperature on the top face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum TopBc {
    /// amplitude · sin(2πt / period)
    Sine {
        amplitude: f64,
        period: f64,
    },
    Const {
        value: f64,
    },
}

impl TopBc {
    fn validate(&self) -> Result<(), EimError> {
        match *self {
            TopBc::Sine { amplitude, period } if amplitude.is_finite() && period.is_finite() && period > 0.0 => Ok(()),
            TopBc::Const { value } if value.is_finite() => Ok(()),
            other => Err(EimError::UnsupportedBc(format!("{other:?}"))),
        }
    }

    /// g, g', g'', g''' at t.
    fn derivs(&self, t: f64) -> [f64; 4] {
        match *self {
            TopBc::Sine { amplitude: a, period } => {
                let w = 2.0 * PI / period;
                let (s, c) = (w * t).sin_cos();
                [a * s, a * w * c, -a * w * w * s, -a * w * w * w * c]
            }
            TopBc::Const { value } => [value, 0.0, 0.0, 0.0],
        }
    }
}

/// Slab 0 ≤ x₃ ≤ thickness with insulated sides, zero initial temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slab {
    pub thickness: f64,
    pub top: TopBc,
    pub bottom: f64,
    pub mat: Material,
}

/// Undisturbed temperature and its x₃ and time derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UndisturbedSample {
    pub u: f64,
    /// ∂ᵏu/∂x₃ᵏ for k = 1, 2, 3
    pub dx: [f64; 3],
    pub dt: f64,
    pub dt_dx: f64,
}

impl UndisturbedSample {
    /// Derivative along the listed axes; only x₃ derivatives are non-zero.
    pub fn deriv_axes(&self, axes: &[usize]) -> f64 {
        if axes.is_empty() {
            self.u
        } else if axes.iter().all(|&a| a == 2) && axes.len() <= 3 {
            self.dx[axes.len() - 1]
        } else if axes.iter().all(|&a| a == 2) {
            f64::NAN
        } else {
            0.0
        }
    }
}

const SLAB_TAIL: f64 = 1e-12;
const SLAB_MAX_TERMS: usize = 200_000;

/// Undisturbed slab field. The boundary data are lifted with three
/// polynomials in x₃ (so the remaining eigenfunction series has a forcing of
/// size g'''/λ³), and the remaining series is summed until its terms, times
/// the third-derivative factor, fall below 1e-12 K.
pub fn slab_undisturbed(slab: &Slab, x3: f64, t: f64) -> Result<UndisturbedSample, EimError> {
    slab.top.validate()?;
    let l = slab.thickness;
    if !(l > 0.0) || !slab.bottom.is_finite() {
        return Err(EimError::Params(format!("bad slab thickness {l} or bottom temperature {}", slab.bottom)));
    }
    if !(-1e-12 * l..=l * (1.0 + 1e-12)).contains(&x3) {
        return Err(EimError::Params(format!("x3 = {x3} lies outside the slab [0, {l}]")));
    }
    if t <= 0.0 {
        let mut s = UndisturbedSample::default();
        if x3 >= l {
            s.u = slab.top.derivs(0.0)[0];
        } else if x3 <= 0.0 {
            s.u = slab.bottom;
        }
        return Ok(s);
    }
    let alpha = slab.mat.alpha;
    let b = slab.bottom;
    let g = slab.top.derivs(t);
    let g0 = slab.top.derivs(0.0);
    // lifting U = g x/L + b(1 - x/L) - g' q(x) + g'' r(x), α q'' = -x/L, α r'' = -q
    let poly = |c: &[f64], x: f64| c.iter().rev().fold(0.0, |a, v| a * x + v);
    let qc = [0.0, l * l, 0.0, -1.0].map(|v| v / (6.0 * alpha * l));
    let rc = [0.0, 7.0 * l.powi(4), 0.0, -10.0 * l * l, 0.0, 3.0].map(|v| v / (360.0 * alpha * alpha * l));
    let deriv = |c: &[f64]| -> Vec<f64> { c.iter().enumerate().skip(1).map(|(k, v)| k as f64 * v).collect() };
    let (q1, r1) = (deriv(&qc), deriv(&rc));
    let (q2, r2) = (deriv(&q1), deriv(&r1));
    let (q3, r3) = (deriv(&q2), deriv(&r2));
    let lin = [x3 / l, 1.0 / l, 0.0, 0.0];
    let lin_b = [1.0 - x3 / l, -1.0 / l, 0.0, 0.0];
    let qs = [poly(&qc, x3), poly(&q1, x3), poly(&q2, x3), poly(&q3, x3)];
    let rs = [poly(&rc, x3), poly(&r1, x3), poly(&r2, x3), poly(&r3, x3)];
    let mut d = [0.0; 4];
    let mut dt = [0.0; 2];
    for k in 0..4 {
        d[k] = g[0] * lin[k] + b * lin_b[k] - g[1] * qs[k] + g[2] * rs[k];
    }
    for k in 0..2 {
        dt[k] = g[1] * lin[k] - g[2] * qs[k] + g[3] * rs[k];
    }
    // remainder v = Σ v_n(t) sin(k_n x), v_t - α v_xx = -g''' r, v(x,0) = -U(x,0)
    let mut n = 1usize;
    loop {
        let kn = n as f64 * PI / l;
        let lam = alpha * kn * kn;
        let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
        let cn = 2.0 * sign / (n as f64 * PI);
        let dn = 2.0 / (n as f64 * PI);
        let rn = cn / (lam * lam);
        let v0 = -(g0[0] * cn + b * dn - g0[1] * cn / lam + g0[2] * rn);
        let decay = (-lam * t).exp();
        let forced = match slab.top {
            TopBc::Sine { amplitude, period } => {
                let w = 2.0 * PI / period;
                // -r_n ∫₀ᵗ g'''(s) e^{-λ(t-s)} ds with g''' = -A w³ cos(ws)
                let ic = (lam * (w * t).cos() + w * (w * t).sin() - lam * decay) / (lam * lam + w * w);
                rn * amplitude * w.powi(3) * ic
            }
            TopBc::Const { .. } => 0.0,
        };
        let vn = v0 * decay + forced;
        let vn_t = -lam * vn - rn * g[3];
        let (s, c) = (kn * x3).sin_cos();
        d[0] += vn * s;
        d[1] += vn * kn * c;
        d[2] -= vn * kn * kn * s;
        d[3] -= vn * kn * kn * kn * c;
        dt[0] += vn_t * s;
        dt[1] += vn_t * kn * c;
        // bound on the rest: the initial part decays geometrically in n,
        // the forced part like n^-7 (n^-4 after three derivatives)
        let init_tail = v0.abs() * decay * kn.powi(3) / (1.0 - (-alpha * (PI / l).powi(2) * t * 2.0 * n as f64).exp()).max(1e-300);
        let forced_tail = forced.abs() * kn.powi(3) * n as f64 / 3.0;
        let dt_tail = lam * (v0.abs() * decay + forced.abs()) * n as f64 + rn.abs() * g[3].abs() * n as f64;
        if n >= 8 && init_tail.max(forced_tail).max(dt_tail) < SLAB_TAIL {
            break;
        }
        n += 1;
        if n > SLAB_MAX_TERMS {
            return Err(EimError::Params(format!("slab series did not converge at t = {t}")));
        }
    }
    Ok(UndisturbedSample { u: d[0], dx: [d[1], d[2], d[3]], dt: dt[0], dt_dx: dt[1] })
}

/// Polynomial order of the eigen-fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Uniform,
    Linear,
    Quadratic,
}

impl Order {
    pub fn degree(self) -> usize {
        match self {
            Order::Uniform => 0,
            Order::Linear => 1,
            Order::Quadratic => 2,
        }
    }

    /// 4, 16 or 52 unknowns per step.
    pub fn unknowns(self) -> usize {
        unknown_layout(self).len()
    }

    pub fn all() -> [Order; 3] {
        [Order::Uniform, Order::Linear, Order::Quadratic]
    }
}

/// One unknown: heat-source (None) or eigen-gradient component i, with the
/// monomial exponent list α about the centre.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Unknown {
    comp: Option<usize>,
    alpha: Vec<usize>,
}

fn multi_indices(degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    if degree >= 1 {
        out.extend((0..3).map(|p| vec![p]));
    }
    if degree >= 2 {
        for p in 0..3 {
            for q in 0..3 {
                out.push(vec![p, q]);
            }
        }
    }
    out
}

fn unknown_layout(order: Order) -> Vec<Unknown> {
    let alphas = multi_indices(order.degree());
    let mut out: Vec<Unknown> = alphas.iter().map(|a| Unknown { comp: None, alpha: a.clone() }).collect();
    for i in 0..3 {
        out.extend(alphas.iter().map(|a| Unknown { comp: Some(i), alpha: a.clone() }));
    }
    out
}

fn coeff_mut<'a>(c: &'a mut EigenCoeffs, u: &Unknown) -> &'a mut f64 {
    match (u.comp, u.alpha.as_slice()) {
        (None, []) => &mut c.q0,
        (None, [p]) => &mut c.q1[*p],
        (None, [p, q]) => &mut c.q2[*p][*q],
        (Some(i), []) => &mut c.u0[i],
        (Some(i), [p]) => &mut c.u1[i][*p],
        (Some(i), [p, q]) => &mut c.u2[i][*p][*q],
        _ => unreachable!("monomials have degree <= 2"),
    }
}

/// ∂^α of the monomial term at the centre; quadratic terms carry the factor 2.
fn monomial_factor(alpha: &[usize]) -> f64 {
    if alpha.len() == 2 {
        2.0
    } else {
        1.0
    }
}

/// A spherical inhomogeneity in the 1 × 1 × thickness block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InhomogeneityProblem {
    pub matrix: Material,
    pub inhomogeneity: Material,
    pub center: Vec3,
    pub radius: f64,
    pub slab: Slab,
    pub grid: TimeGrid,
    pub order: Order,
}

/// Lateral size of the block (m).
pub const BLOCK_WIDTH: f64 = 1.0;
/// Condition numbers above this make a step fail.
pub const MAX_CONDITION: f64 = 1e12;
/// Relative asymmetry tolerated in the quadratic coefficients.
pub const SYMMETRY_TOL: f64 = 1e-6;
// Taylor order of the lag blocks: third derivatives of the quadratic terms
const BLOCK_ORDER: usize = 6;

impl InhomogeneityProblem {
    pub fn validate(&self) -> Result<(), EimError> {
        self.matrix.validate().map_err(|e| EimError::Params(e.to_string()))?;
        self.inhomogeneity.validate().map_err(|e| EimError::Params(e.to_string()))?;
        self.slab.top.validate()?;
        if self.slab.mat != self.matrix {
            return Err(EimError::Params("slab material must be the matrix material".into()));
        }
        let a = self.radius;
        let hi = [BLOCK_WIDTH, BLOCK_WIDTH, self.slab.thickness];
        let inside = (0..3).all(|i| self.center[i] - a > 0.0 && self.center[i] + a < hi[i]);
        if !(a > 0.0) || !inside {
            return Err(EimError::Params(format!("sphere (centre {:?}, radius {a}) is not inside the block", self.center)));
        }
        if self.grid.t0 != 0.0 {
            return Err(EimError::Params("the march starts from the zero initial state at t = 0".into()));
        }
        Ok(())
    }

    fn undisturbed(&self, x3: f64, t: f64) -> Result<UndisturbedSample, EimError> {
        slab_undisturbed(&self.slab, x3, t)
    }
}

/// Dense system A·c = b for the unknowns of one step (row-major A).
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalentSystem {
    pub n: usize,
    pub matrix: Vec<f64>,
    pub rhs: Vec<f64>,
}

/// Tensor blocks of the ball for lags k = 0, 1, ...: the window of step f - k
/// observed at the end of step f.
#[derive(Debug, Clone)]
pub struct LagBlocks {
    blocks: Vec<TensorTps>,
}

impl LagBlocks {
    pub fn new(problem: &InhomogeneityProblem, count: usize, exec: Exec) -> Self {
        let dt = problem.grid.dt;
        let blocks = exec.map_range(count, |k| {
            sphere_tensor_tps(problem.radius, [0.0; 3], (k + 1) as f64 * dt, (0.0, dt), &problem.matrix, BLOCK_ORDER)
        });
        Self { blocks }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Disturbed temperature Taylor series at the centre, at the end of step `f`,
/// from the steps in `history` (indexed from 0).
fn history_series(lags: &LagBlocks, f: usize, history: &[EigenCoeffs]) -> Tps {
    let mut u = Tps::constant(0.0, BLOCK_ORDER - 3);
    for (fp, c) in history.iter().enumerate().take(f + 1) {
        if c.is_zero() {
            continue;
        }
        u = u + lags.blocks[f - fp].contract(c);
    }
    u
}

/// Rows: heat-source equivalence for each α, then flux equivalence for each
/// (i, α), in the order of the unknowns. `history` holds the solved steps
/// before `f`.
pub fn assemble_equivalent_system(
    problem: &InhomogeneityProblem,
    f: usize,
    history: &[EigenCoeffs],
    lags: &LagBlocks,
) -> Result<EquivalentSystem, EimError> {
    if history.len() < f || lags.len() <= f {
        return Err(EimError::Params(format!("step {f} needs {f} solved steps and {} lag blocks", f + 1)));
    }
    let layout = unknown_layout(problem.order);
    let n = layout.len();
    let (k0, ki) = (problem.matrix.k, problem.inhomogeneity.k);
    let (c0, ci) = (problem.matrix.cp, problem.inhomogeneity.cp);
    let dt = problem.grid.dt;
    let t_now = problem.grid.time(f + 1);
    let t_prev = problem.grid.time(f);
    let x3 = problem.center[2];
    let u0_now = problem.undisturbed(x3, t_now)?;
    let u0_prev = problem.undisturbed(x3, t_prev)?;
    // response of the current step to each unit unknown
    let responses: Vec<Tps> = layout
        .iter()
        .map(|u| {
            let mut c = EigenCoeffs::default();
            *coeff_mut(&mut c, u) = 1.0;
            lags.blocks[0].contract(&c)
        })
        .collect();
    let past = &history[..f];
    let h_now = history_series(lags, f, past);
    let h_prev = if f == 0 { Tps::constant(0.0, BLOCK_ORDER - 3) } else { history_series(lags, f - 1, past) };
    let mut matrix = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for (row, unk) in layout.iter().enumerate() {
        let fac = monomial_factor(&unk.alpha);
        match unk.comp {
            None => {
                // (C^I - C⁰) ∂^α (u(t_f+1) - u(t_f)) / dt - ∂^α Q* = 0
                let axes = &unk.alpha;
                let w = (ci - c0) / dt;
                for (j, r) in responses.iter().enumerate() {
                    matrix[row * n + j] = w * r.deriv_axes(axes);
                }
                matrix[row * n + row] -= fac;
                let known = u0_now.deriv_axes(axes) - u0_prev.deriv_axes(axes) + h_now.deriv_axes(axes) - h_prev.deriv_axes(axes);
                rhs[row] = -w * known;
            }
            Some(i) => {
                // (K^I - K⁰) ∂^α ∂_i u + K⁰ ∂^α u*_i = 0
                let mut axes = unk.alpha.clone();
                axes.push(i);
                let w = ki - k0;
                for (j, r) in responses.iter().enumerate() {
                    matrix[row * n + j] = w * r.deriv_axes(&axes);
                }
                matrix[row * n + row] += k0 * fac;
                rhs[row] = -w * (u0_now.deriv_axes(&axes) + h_now.deriv_axes(&axes));
            }
        }
    }
    Ok(EquivalentSystem { n, matrix, rhs })
}

/// LU factorisation with partial pivoting, in place; returns the pivot order.
fn lu_factor(a: &mut [f64], n: usize) -> Option<Vec<usize>> {
    let mut piv: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs()))?;
        if a[p * n + k] == 0.0 {
            return None;
        }
        if p != k {
            for c in 0..n {
                a.swap(k * n + c, p * n + c);
            }
            piv.swap(k, p);
        }
        for i in k + 1..n {
            let m = a[i * n + k] / a[k * n + k];
            a[i * n + k] = m;
            for c in k + 1..n {
                a[i * n + c] -= m * a[k * n + c];
            }
        }
    }
    Some(piv)
}

fn lu_solve(lu: &[f64], piv: &[usize], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x: Vec<f64> = piv.iter().map(|&p| b[p]).collect();
    for i in 0..n {
        for k in 0..i {
            x[i] -= lu[i * n + k] * x[k];
        }
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            x[i] -= lu[i * n + k] * x[k];
        }
        x[i] /= lu[i * n + i];
    }
    x
}

impl EquivalentSystem {
    /// Solve with a 1-norm condition number of the row-equilibrated matrix.
    pub fn solve(&self) -> (Option<Vec<f64>>, f64) {
        let n = self.n;
        let mut a = self.matrix.clone();
        let mut b = self.rhs.clone();
        for i in 0..n {
            let s = a[i * n..(i + 1) * n].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if s > 0.0 {
                a[i * n..(i + 1) * n].iter_mut().for_each(|v| *v /= s);
                b[i] /= s;
            }
        }
        let norm1 = |m: &[f64]| (0..n).map(|c| (0..n).map(|r| m[r * n + c].abs()).sum::<f64>()).fold(0.0, f64::max);
        let a_norm = norm1(&a);
        let Some(piv) = lu_factor(&mut a, n) else {
            return (None, f64::INFINITY);
        };
        let mut inv = vec![0.0; n * n];
        for c in 0..n {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            let col = lu_solve(&a, &piv, n, &e);
            for r in 0..n {
                inv[r * n + c] = col[r];
            }
        }
        let cond = a_norm * norm1(&inv);
        (Some(lu_solve(&a, &piv, n, &b)), cond)
    }
}

fn asymmetry(c: &EigenCoeffs) -> f64 {
    let mut scale = c.q2.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut diff = 0.0f64;
    for p in 0..3 {
        for q in 0..3 {
            diff = diff.max((c.q2[p][q] - c.q2[q][p]).abs());
        }
    }
    let q = if scale > 0.0 { diff / scale } else { 0.0 };
    scale = c.u2.iter().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    diff = 0.0;
    for i in 0..3 {
        for p in 0..3 {
            for r in 0..3 {
                diff = diff.max((c.u2[i][p][r] - c.u2[i][r][p]).abs());
            }
        }
    }
    q.max(if scale > 0.0 { diff / scale } else { 0.0 })
}

/// Eigen-field history and the worst condition number met on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct EimSolution {
    pub coeffs: Vec<EigenCoeffs>,
    pub max_condition: f64,
}

/// March over all steps; lag blocks are computed once and reused.
pub fn solve_history(problem: &InhomogeneityProblem, exec: Exec) -> Result<EimSolution, EimError> {
    problem.validate()?;
    let steps = problem.grid.steps;
    let lags = LagBlocks::new(problem, steps, exec);
    let layout = unknown_layout(problem.order);
    let mut coeffs = Vec::with_capacity(steps);
    let mut max_condition = 0.0f64;
    for f in 0..steps {
        let sys = assemble_equivalent_system(problem, f, &coeffs, &lags)?;
        let (x, cond) = sys.solve();
        max_condition = max_condition.max(cond);
        let x = match x {
            Some(x) if cond <= MAX_CONDITION => x,
            _ => return Err(EimError::Conditioning { step: f, condition: cond }),
        };
        let mut c = EigenCoeffs::default();
        for (u, v) in layout.iter().zip(&x) {
            *coeff_mut(&mut c, u) = *v;
        }
        let asym = asymmetry(&c);
        if asym > SYMMETRY_TOL {
            return Err(EimError::Asymmetric { step: f, asymmetry: asym });
        }
        coeffs.push(c);
    }
    Ok(EimSolution { coeffs, max_condition })
}

/// Eigen-gradient u* at local position xl during step f.
fn eigen_gradient(c: &EigenCoeffs, xl: Vec3) -> Vec3 {
    std::array::from_fn(|i| {
        let mut v = c.u0[i];
        for p in 0..3 {
            v += c.u1[i][p] * xl[p];
            for q in 0..3 {
                v += c.u2[i][p][q] * xl[p] * xl[q];
            }
        }
        v
    })
}

/// Temperature and flux at (x, t). In the matrix q = -K⁰∇u; inside the
/// sphere the equivalent constitutive law q = -K⁰(∇u - u*) is used.
pub fn total_field(problem: &InhomogeneityProblem, coeffs: &[EigenCoeffs], x: Vec3, t: f64) -> Result<(f64, Vec3), EimError> {
    let base = problem.undisturbed(x[2], t)?;
    let (du, grad) = disturbance(problem, coeffs, x, t);
    let mut g = grad;
    g[2] += base.dx[0];
    let xl = sub(x, problem.center);
    let inside = xl.iter().map(|v| v * v).sum::<f64>() < problem.radius * problem.radius;
    if inside {
        if let Some(c) = active_step(&problem.grid, t).and_then(|f| coeffs.get(f)) {
            let us = eigen_gradient(c, xl);
            for i in 0..3 {
                g[i] -= us[i];
            }
        }
    }
    let k0 = problem.matrix.k;
    Ok((base.u + du, g.map(|v| -k0 * v)))
}

/// Step whose eigen-fields act at t (a grid time belongs to the step it ends).
fn active_step(grid: &TimeGrid, t: f64) -> Option<usize> {
    let s = ((t - grid.t0) / grid.dt).ceil();
    if s < 1.0 {
        None
    } else {
        Some((s as usize - 1).min(grid.steps.saturating_sub(1)))
    }
}

/// Disturbed temperature and its gradient.
pub fn disturbance(problem: &InhomogeneityProblem, coeffs: &[EigenCoeffs], x: Vec3, t: f64) -> (f64, Vec3) {
    let xl = sub(x, problem.center);
    let mut u = Tps::constant(0.0, 1);
    for (f, c) in coeffs.iter().enumerate() {
        let window = problem.grid.window(f);
        if t <= window.0 || c.is_zero() {
            continue;
        }
        let ts = sphere_tensor_tps(problem.radius, xl, t, window, &problem.matrix, 4);
        u = u + ts.contract(c).truncate(1);
    }
    (u.value(), std::array::from_fn(|i| u.deriv_axes(&[i])))
}

/// Root-mean-square residual C^I ∂u/∂t - K^I ∇²u of the inhomogeneity's own
/// equation at the centre and at ±a/2 along x₁ and x₃; the Laplacian by
/// central differences (h = a/20) and the time derivative by the backward
/// difference over one step.
pub fn interior_residual(problem: &InhomogeneityProblem, coeffs: &[EigenCoeffs], t: f64) -> Result<f64, EimError> {
    let a = problem.radius;
    let c = problem.center;
    let probes = [[0.0, 0.0, 0.0], [0.5 * a, 0.0, 0.0], [-0.5 * a, 0.0, 0.0], [0.0, 0.0, 0.5 * a], [0.0, 0.0, -0.5 * a]];
    let h = a / 20.0;
    let dt = problem.grid.dt;
    let temp = |x: Vec3, t: f64| -> Result<f64, EimError> { Ok(problem.undisturbed(x[2], t)?.u + disturbance(problem, coeffs, x, t).0) };
    let mut sum = 0.0;
    for p in probes {
        let x = [c[0] + p[0], c[1] + p[1], c[2] + p[2]];
        let u = temp(x, t)?;
        let mut lap = 0.0;
        for i in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            lap += (temp(xp, t)? - 2.0 * u + temp(xm, t)?) / (h * h);
        }
        let ut = (u - temp(x, t - dt)?) / dt;
        let r = problem.inhomogeneity.cp * ut - problem.inhomogeneity.k * lap;
        sum += r * r;
    }
    Ok((sum / probes.len() as f64).sqrt())
}

/// Largest |u⁰| on the vertical line through the sphere centre at time t.
pub fn max_undisturbed(problem: &InhomogeneityProblem, t: f64) -> Result<f64, EimError> {
    let l = problem.slab.thickness;
    let mut m = 0.0f64;
    for k in 0..=200 {
        m = m.max(problem.undisturbed(l * k as f64 / 200.0, t)?.u.abs());
    }
    Ok(m)
}

/// JSON problem description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EimConfig {
    pub matrix: MaterialConfig,
    pub inhomogeneity: MaterialConfig,
    pub sphere: SphereConfig,
    pub slab: SlabConfig,
    pub time: TimeConfig,
    pub order: Order,
    pub observation: ObservationConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "Cp")]
    pub cp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereConfig {
    pub center: Vec3,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlabConfig {
    pub thickness: f64,
    pub top_bc: TopBc,
    pub bottom_bc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub dt: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    pub start: Vec3,
    pub end: Vec3,
    pub samples: usize,
    pub times: Vec<f64>,
}

impl EimConfig {
    pub fn problem(&self) -> Result<InhomogeneityProblem, EimError> {
        let mat = |m: &MaterialConfig| Material::new(m.k, m.cp).map_err(|e| EimError::Params(e.to_string()));
        let matrix = mat(&self.matrix)?;
        let p = InhomogeneityProblem {
            matrix,
            inhomogeneity: mat(&self.inhomogeneity)?,
            center: self.sphere.center,
            radius: self.sphere.radius,
            slab: Slab { thickness: self.slab.thickness, top: self.slab.top_bc, bottom: self.slab.bottom_bc, mat: matrix },
            grid: TimeGrid::new(0.0, self.time.dt, self.time.steps).map_err(|e| EimError::Params(e.to_string()))?,
            order: self.order,
        };
        p.validate()?;
        if self.observation.samples < 2 {
            return Err(EimError::Params("observation line needs at least two samples".into()));
        }
        Ok(p)
    }

    /// Observation points, evenly spaced from start to end.
    pub fn observation_points(&self) -> Vec<Vec3> {
        let o = &self.observation;
        (0..o.samples)
            .map(|k| {
                let s = k as f64 / (o.samples - 1) as f64;
                std::array::from_fn(|i| o.start[i] + s * (o.end[i] - o.start[i]))
            })
            .collect()
    }
}
