//! Brute-force reference values: adaptive volume and time quadrature of the
//! defining integrals, a discrete-Fourier evaluator for cuboids, a two-sided
//! jump estimator and field-map export.
//!
//! Nothing here uses the moment series, so these routines can referee the
//! series kernels.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{add, cross, dot, norm, scale, sub, Material, Polyhedron, Vec3};
use crate::kernels_sphere_ellipsoid::Ellipsoid;
use crate::par::Exec;
use crate::specfun::{erfc_unchecked, gauss_legendre, integrate, QuadratureSpec};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid oracle parameters: {0}")]
    Params(String),
    #[error("quadrature did not reach tolerance: value {value:e}, error estimate {error:e} after {cells} cells")]
    Accuracy { value: f64, error: f64, cells: usize },
    #[error("grid under-resolved: {outer_fraction:e} of the spectral energy lies in the outer 10% of modes")]
    Resolution { outer_fraction: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("sidecar serialisation failed: {0}")]
    Json(String),
}

/// Integration region.
#[derive(Debug, Clone, Copy)]
pub enum Region<'a> {
    Polyhedron(&'a Polyhedron),
    Ellipsoid(&'a Ellipsoid),
}

/// Polynomial weight on the source point x'.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weight {
    One,
    Linear(usize),
    Quadratic(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub cells: usize,
}

/// Limits of the adaptive volume quadrature.
#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_cells: usize,
    pub exec: Exec,
}

impl QuadOptions {
    pub fn new(rel_tol: f64) -> Self {
        Self { rel_tol, abs_tol: 0.0, max_cells: 400_000, exec: Exec::default() }
    }
}

// Grundmann–Möller rules on the n-simplex as barycentric points and weights
// normalised to sum to one.
type SimplexRule = Vec<(Vec<f64>, f64)>;

fn gm_rule(s: usize, n: usize) -> SimplexRule {
    let (n, s) = (n as i32, s as i32);
    let d = 2 * s + 1;
    let fact = |k: i32| (1..=k).fold(1.0, |a, j| a * j as f64);
    let mut out = Vec::new();
    for i in 0..=s {
        let denom = (d + n - 2 * i) as f64;
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let w = sign * 2f64.powi(-2 * s) * denom.powi(d) / (fact(i) * fact(d + n - i)) * fact(n);
        // all compositions of s - i into n + 1 parts
        let mut beta = vec![0i32; n as usize + 1];
        compositions(s - i, 0, &mut beta, &mut |b| {
            out.push((b.iter().map(|&bj| (2 * bj + 1) as f64 / denom).collect(), w));
        });
    }
    out
}

fn compositions(rest: i32, k: usize, beta: &mut Vec<i32>, emit: &mut impl FnMut(&[i32])) {
    if k + 1 == beta.len() {
        beta[k] = rest;
        emit(beta);
        return;
    }
    for b in 0..=rest {
        beta[k] = b;
        compositions(rest - b, k + 1, beta, emit);
    }
}

fn tri_rules() -> &'static (SimplexRule, SimplexRule) {
    static RULES: OnceLock<(SimplexRule, SimplexRule)> = OnceLock::new();
    RULES.get_or_init(|| (gm_rule(3, 2), gm_rule(2, 2)))
}

fn gl_rules() -> &'static [(Vec<f64>, Vec<f64>); 2] {
    static RULES: OnceLock<[(Vec<f64>, Vec<f64>); 2]> = OnceLock::new();
    RULES.get_or_init(|| [gauss_legendre(6), gauss_legendre(4)])
}

/// Piece of a closed surface: a planar triangle, or a (μ = cos γ, θ) box of an ellipsoid.
#[derive(Debug, Clone)]
enum Patch {
    Tri([Vec3; 3]),
    Ell { lo: [f64; 2], hi: [f64; 2], axes: Vec3 },
}

#[derive(Debug, Clone)]
struct Cell {
    patch: Patch,
    value: f64,
    error: f64,
    id: u64,
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Cell {}
impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error).then(other.id.cmp(&self.id))
    }
}

fn ellipsoid_point(mu: f64, th: f64, a: Vec3) -> (Vec3, Vec3) {
    let s = (1.0 - mu * mu).max(0.0).sqrt();
    let (st, ct) = th.sin_cos();
    let y = [a[0] * s * ct, a[1] * s * st, a[2] * mu];
    // outward area vector per unit dμ dθ
    let n = [a[1] * a[2] * s * ct, a[0] * a[2] * s * st, a[0] * a[1] * mu];
    (y, n)
}

impl Patch {
    /// Surface integral of f(y, dA) with two rules; dA is the outward area vector.
    fn integrate<F: Fn(Vec3, Vec3) -> f64>(&self, f: &F) -> (f64, f64) {
        match self {
            Patch::Tri(v) => {
                let area = scale(cross(sub(v[1], v[0]), sub(v[2], v[0])), 0.5);
                let (hi, lo) = tri_rules();
                let q = |rule: &SimplexRule| {
                    rule.iter()
                        .map(|(b, w)| {
                            let y = std::array::from_fn(|i| b[0] * v[0][i] + b[1] * v[1][i] + b[2] * v[2][i]);
                            w * f(y, area)
                        })
                        .sum::<f64>()
                };
                let a = q(hi);
                (a, (a - q(lo)).abs())
            }
            Patch::Ell { lo, hi, axes } => {
                let half = [0.5 * (hi[0] - lo[0]), 0.5 * (hi[1] - lo[1])];
                let mid = [0.5 * (hi[0] + lo[0]), 0.5 * (hi[1] + lo[1])];
                let q = |(x, w): &(Vec<f64>, Vec<f64>)| {
                    let mut acc = 0.0;
                    for (a, wa) in x.iter().zip(w) {
                        for (b, wb) in x.iter().zip(w) {
                            let (y, n) = ellipsoid_point(mid[0] + half[0] * a, mid[1] + half[1] * b, *axes);
                            acc += wa * wb * f(y, n);
                        }
                    }
                    acc * half[0] * half[1]
                };
                let [r6, r4] = gl_rules();
                let a = q(r6);
                (a, (a - q(r4)).abs())
            }
        }
    }

    /// Centre and a radius enclosing the patch.
    fn ball(&self) -> (Vec3, f64) {
        let pts: Vec<Vec3> = match self {
            Patch::Tri(v) => v.to_vec(),
            Patch::Ell { lo, hi, axes } => [
                (lo[0], lo[1]),
                (lo[0], hi[1]),
                (hi[0], lo[1]),
                (hi[0], hi[1]),
                (lo[0], 0.5 * (lo[1] + hi[1])),
                (hi[0], 0.5 * (lo[1] + hi[1])),
            ]
            .iter()
            .map(|&(m, t)| ellipsoid_point(m, t, *axes).0)
            .collect(),
        };
        let c = match self {
            Patch::Tri(v) => scale(add(add(v[0], v[1]), v[2]), 1.0 / 3.0),
            Patch::Ell { lo, hi, axes } => ellipsoid_point(0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), *axes).0,
        };
        let mut r = pts.iter().fold(0.0f64, |m, p| m.max(norm(sub(*p, c))));
        if let Patch::Ell { hi, lo, axes } = self {
            // curved patches bulge past their corners
            let amax = axes.iter().fold(0.0f64, |m, v| m.max(*v));
            r += amax * (hi[0] - lo[0]).max(hi[1] - lo[1]).powi(2) * 0.5;
        }
        (c, r)
    }

    fn split(&self) -> [Patch; 2] {
        match self {
            Patch::Tri(v) => {
                let k = (0..3).max_by(|&a, &b| norm(sub(v[(a + 1) % 3], v[a])).total_cmp(&norm(sub(v[(b + 1) % 3], v[b])))).unwrap();
                let (i, j) = (k, (k + 1) % 3);
                let m = scale(add(v[i], v[j]), 0.5);
                let mut a = *v;
                let mut b = *v;
                a[j] = m;
                b[i] = m;
                [Patch::Tri(a), Patch::Tri(b)]
            }
            Patch::Ell { lo, hi, axes } => {
                // compare physical lengths of the two parameter directions
                let r = axes.iter().fold(0.0f64, |m, v| m.max(*v));
                let s = (1.0 - (0.5 * (lo[0] + hi[0])).powi(2)).max(0.0).sqrt();
                let len_mu = (hi[0] - lo[0]) * r;
                let len_th = (hi[1] - lo[1]) * r * s;
                let k = if len_mu >= len_th { 0 } else { 1 };
                let mid = 0.5 * (lo[k] + hi[k]);
                let (mut h1, mut l2) = (*hi, *lo);
                h1[k] = mid;
                l2[k] = mid;
                [Patch::Ell { lo: *lo, hi: h1, axes: *axes }, Patch::Ell { lo: l2, hi: *hi, axes: *axes }]
            }
        }
    }
}

fn initial_patches(region: Region) -> Vec<Patch> {
    match region {
        Region::Polyhedron(poly) => {
            let vs = poly.vertices();
            let mut out = Vec::new();
            for face in poly.faces() {
                for k in 1..face.len() - 1 {
                    out.push(Patch::Tri([vs[face[0]], vs[face[k]], vs[face[k + 1]]]));
                }
            }
            out
        }
        Region::Ellipsoid(e) => {
            let mut out = Vec::new();
            for i in 0..4 {
                for j in 0..8 {
                    let lo = [-1.0 + 0.5 * i as f64, j as f64 * PI / 4.0];
                    let hi = [-0.5 + 0.5 * i as f64, (j + 1) as f64 * PI / 4.0];
                    out.push(Patch::Ell { lo, hi, axes: e.a });
                }
            }
            out
        }
    }
}

/// Adaptive integral of f(y, dA) over the closed boundary of the region; the
/// worst patches are bisected until the summed error estimate meets the
/// tolerance.
///
/// With a focus (point, length) the patches are first graded towards the
/// point until each is smaller than half of max(distance, length), so peaks
/// narrower than the initial patches are not missed.
pub fn quad_boundary<F>(region: Region, f: F, focus: Option<(Vec3, f64)>, opts: &QuadOptions) -> Result<QuadResult, OracleError>
where
    F: Fn(Vec3, Vec3) -> f64 + Sync + Send,
{
    if !(opts.rel_tol > 0.0 || opts.abs_tol > 0.0) {
        return Err(OracleError::Params("a positive tolerance is required".into()));
    }
    let mut patches = initial_patches(region);
    if let Some((x, len)) = focus {
        if !(len > 0.0) {
            return Err(OracleError::Params(format!("focus length must be positive, got {len}")));
        }
        let mut done = Vec::new();
        while let Some(p) = patches.pop() {
            let (c, r) = p.ball();
            let dist = (norm(sub(x, c)) - r).max(0.0);
            if 2.0 * r > 0.5 * dist.max(len) && done.len() + patches.len() < opts.max_cells {
                patches.extend(p.split());
            } else {
                done.push(p);
            }
        }
        patches = done;
    }
    let mut next_id = 0u64;
    let evaluated = opts.exec.map(&patches, |p| p.integrate(&f));
    let mut heap = BinaryHeap::new();
    for (patch, (value, error)) in patches.into_iter().zip(evaluated) {
        heap.push(Cell { patch, value, error, id: next_id });
        next_id += 1;
    }
    let totals = |h: &BinaryHeap<Cell>| {
        let mut cells: Vec<&Cell> = h.iter().collect();
        cells.sort_by_key(|c| c.id);
        cells.iter().fold((0.0, 0.0), |(v, e), c| (v + c.value, e + c.error))
    };
    let (mut value, mut error) = totals(&heap);
    let batch = if opts.exec.is_parallel() { 64 } else { 16 };
    let mut since_refresh = 0usize;
    loop {
        if error <= opts.abs_tol.max(opts.rel_tol * value.abs()) || heap.is_empty() {
            // the running sums drift; confirm before stopping
            (value, error) = totals(&heap);
            if error <= opts.abs_tol.max(opts.rel_tol * value.abs()) || heap.is_empty() {
                break;
            }
        }
        if heap.len() >= opts.max_cells {
            (value, error) = totals(&heap);
            return Err(OracleError::Accuracy { value, error, cells: heap.len() });
        }
        let mut work = Vec::with_capacity(batch);
        while work.len() < batch {
            match heap.pop() {
                Some(c) => work.push(c),
                None => break,
            }
        }
        let children: Vec<Patch> = work.iter().flat_map(|c| c.patch.split()).collect();
        let evaluated = opts.exec.map(&children, |p| p.integrate(&f));
        for c in &work {
            value -= c.value;
            error -= c.error;
        }
        for (patch, (v, e)) in children.into_iter().zip(evaluated) {
            value += v;
            error += e;
            heap.push(Cell { patch, value: v, error: e, id: next_id });
            next_id += 1;
        }
        since_refresh += 1;
        if since_refresh == 256 {
            since_refresh = 0;
            (value, error) = totals(&heap);
        }
    }
    // summed in creation order so results do not depend on scheduling
    (value, error) = totals(&heap);
    Ok(QuadResult { value, error, cells: heap.len() })
}

/// Winding number of the region's boundary about x: 1 inside, 0 outside,
/// fractional on the surface.
pub fn winding_number(region: Region, x: Vec3) -> f64 {
    match region {
        Region::Polyhedron(poly) => {
            let vs = poly.vertices();
            let mut omega = 0.0;
            for face in poly.faces() {
                for k in 1..face.len() - 1 {
                    let (a, b, c) = (sub(vs[face[0]], x), sub(vs[face[k]], x), sub(vs[face[k + 1]], x));
                    let (la, lb, lc) = (norm(a), norm(b), norm(c));
                    let num = dot(a, cross(b, c));
                    if num.abs() <= 1e-14 * la * lb * lc {
                        // x in the plane of the triangle
                        continue;
                    }
                    let den = la * lb * lc + dot(a, b) * lc + dot(a, c) * lb + dot(b, c) * la;
                    omega += 2.0 * num.atan2(den);
                }
            }
            omega / (4.0 * PI)
        }
        Region::Ellipsoid(e) => {
            let q: f64 = (0..3).map(|i| (x[i] / e.a[i]).powi(2)).sum();
            if q < 1.0 {
                1.0
            } else if q > 1.0 {
                0.0
            } else {
                0.5
            }
        }
    }
}

// ∫_R^∞ r^k e^{-r²/z} dr for k = 2, 3, 4.
fn gaussian_tails(r: f64, z: f64) -> [f64; 3] {
    let sz = z.sqrt();
    let e = (-r * r / z).exp();
    let t0 = 0.5 * (PI * z).sqrt() * erfc_unchecked(r / sz);
    let t1 = 0.5 * z * e;
    let t2 = 0.5 * z * (r * e + t0);
    let t3 = 0.5 * z * (r * r * e + 2.0 * t1);
    let t4 = 0.5 * z * (r * r * r * e + 3.0 * t2);
    [t2, t3, t4]
}

/// w(x + rω) = c0 + c1 r + c2 r².
fn weight_coeffs(weight: Weight, x: Vec3, w: Vec3) -> [f64; 3] {
    match weight {
        Weight::One => [1.0, 0.0, 0.0],
        Weight::Linear(p) => [x[p], w[p], 0.0],
        Weight::Quadratic(p, q) => [x[p] * x[q], x[p] * w[q] + x[q] * w[p], w[p] * w[q]],
    }
}

/// (1/Cp) ∫_Ω w(x') G(x - x', τ) dx'.
///
/// Along each ray from x the Gaussian moment is known in closed form, so by
/// the divergence theorem the volume integral becomes
/// wind(x)·(whole-space moment) - ∮ (y - x)·n/|y - x|³ · tail(|y - x|) dA,
/// and only the smooth surface integral is done adaptively. The tails decay
/// away from x, so exterior values keep their relative accuracy.
pub fn quad_spatial_weighted(
    region: Region,
    x: Vec3,
    tau: f64,
    mat: &Material,
    weight: Weight,
    opts: &QuadOptions,
) -> Result<QuadResult, OracleError> {
    if !(tau > 0.0) {
        return Err(OracleError::Params(format!("tau must be positive, got {tau}")));
    }
    let max_index = match weight {
        Weight::One => 0,
        Weight::Linear(p) => p,
        Weight::Quadratic(p, q) => p.max(q),
    };
    if max_index > 2 {
        return Err(OracleError::Params(format!("weight index {max_index} out of range")));
    }
    let z = 4.0 * mat.alpha * tau;
    let pre = (PI * z).powf(-1.5) / mat.cp;
    let whole = match weight {
        Weight::One => 1.0,
        Weight::Linear(p) => x[p],
        Weight::Quadratic(p, q) => x[p] * x[q] + if p == q { 0.5 * z } else { 0.0 },
    } / mat.cp;
    let wind = winding_number(region, x);
    let snapped = wind.round();
    let on_surface = (wind - snapped).abs() > 1e-6;
    let full = gaussian_tails(0.0, z);
    let r = quad_boundary(
        region,
        move |y, da| {
            let d = sub(y, x);
            let rho = norm(d);
            if rho == 0.0 {
                return 0.0;
            }
            let w = scale(d, 1.0 / rho);
            let c = weight_coeffs(weight, x, w);
            let t = gaussian_tails(rho, z);
            let mut radial = -(c[0] * t[0] + c[1] * t[1] + c[2] * t[2]);
            if on_surface {
                radial += c[0] * full[0] + c[1] * full[1] + c[2] * full[2];
            }
            pre * dot(d, da) / (rho * rho * rho) * radial
        },
        Some((x, z.sqrt())),
        opts,
    )?;
    let base = if on_surface { 0.0 } else { snapped * whole };
    Ok(QuadResult { value: base + r.value, ..r })
}

/// Spatial tensor (1/Cp) ∫_Ω G(x - x', τ) dx' to relative tolerance `tol`.
pub fn quad_spatial(region: Region, x: Vec3, tau: f64, mat: &Material, tol: f64) -> Result<QuadResult, OracleError> {
    let mut opts = QuadOptions::new(tol);
    // exterior values can underflow; anything below this is zero for all uses
    opts.abs_tol = 1e-300;
    quad_spatial_weighted(region, x, tau, mat, Weight::One, &opts)
}

/// ∫_{t_prev}^{t_f} (2α(t-t'))ⁿ L(t - t') dt' for a supplied spatial tensor τ ↦ L(τ),
/// with τ = s² so the t' → t end is smooth.
pub fn quad_time_with<L>(spatial: L, t: f64, window: (f64, f64), n: usize, mat: &Material, tol: f64) -> Result<QuadResult, OracleError>
where
    L: Fn(f64) -> Result<f64, OracleError>,
{
    let (t_prev, t_f) = window;
    if t <= t_prev || t_f <= t_prev {
        return Ok(QuadResult { value: 0.0, error: 0.0, cells: 0 });
    }
    let (s1, s2) = ((t - t_prev).sqrt(), (t - t_f.min(t)).sqrt());
    let first_err = std::cell::RefCell::new(None);
    let integrand = |s: f64| {
        if s <= 0.0 {
            return 0.0;
        }
        let tau = s * s;
        match spatial(tau) {
            Ok(v) => 2.0 * s * (2.0 * mat.alpha * tau).powi(n as i32) * v,
            Err(e) => {
                first_err.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        }
    };
    let spec = QuadratureSpec::new(200, 0.0, tol).map_err(|e| OracleError::Params(e.to_string()))?;
    let r = integrate(integrand, s2, s1, &spec);
    if let Some(e) = first_err.into_inner() {
        return Err(e);
    }
    match r {
        Ok(i) => Ok(QuadResult { value: i.value, error: i.error, cells: i.intervals }),
        Err(e) => Err(OracleError::Params(e.to_string())),
    }
}

/// Time tensor Cⁿ of the region by nested adaptive quadrature.
pub fn quad_time(
    region: Region,
    x: Vec3,
    t: f64,
    window: (f64, f64),
    n: usize,
    mat: &Material,
    tol: f64,
) -> Result<QuadResult, OracleError> {
    let mut inner = QuadOptions::new(tol * 0.1);
    inner.abs_tol = 1e-300;
    quad_time_with(|tau| quad_spatial_weighted(region, x, tau, mat, Weight::One, &inner).map(|r| r.value), t, window, n, mat, tol)
}

fn integrate_complex<F: Fn(f64) -> Complex64>(f: F, a: f64, b: f64, tol: f64) -> Result<Complex64, OracleError> {
    if b <= a {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let spec = QuadratureSpec::new(400, 1e-300, tol).map_err(|e| OracleError::Params(e.to_string()))?;
    let re = integrate(|s| f(s).re, a, b, &spec).map_err(|e| OracleError::Params(e.to_string()))?;
    let im = integrate(|s| f(s).im, a, b, &spec).map_err(|e| OracleError::Params(e.to_string()))?;
    Ok(Complex64::new(re.value, im.value))
}

/// sin(βd)/β, continuous at β = 0.
fn sin_over(beta: Complex64, d: f64) -> Complex64 {
    let z = beta * d;
    if z.norm() < 1e-6 {
        d * (1.0 - z * z / 6.0)
    } else {
        z.sin() / beta
    }
}

/// Helmholtz potential A⁰(x) = ∫ e^{iβ|x-x'|}/|x-x'| dx' of the exact ball of
/// radius `a` at distance `d` from its centre, and its radial derivative.
///
/// The value averages the kernel over spherical shells about the centre, which
/// leaves one radial quadrature; the derivative is the surface form
/// -∮ e^{iβs}/s n dA reduced to the polar angle.
pub fn ball_helmholtz(a: f64, d: f64, beta: Complex64, tol: f64) -> Result<(Complex64, Complex64), OracleError> {
    if !(a > 0.0) || !(d >= 0.0) || beta.im < 0.0 {
        return Err(OracleError::Params(format!("ball radius {a}, distance {d}, beta {beta}")));
    }
    let i = Complex64::i();
    let value = if d < 1e-12 * a {
        4.0 * PI * integrate_complex(|r| r * (i * beta * r).exp(), 0.0, a, tol)?
    } else {
        // shell of radius r: ∫ e^{iβs} ds over s ∈ [|d-r|, d+r]
        let near = integrate_complex(|r| r * (i * beta * d).exp() * sin_over(beta, r), 0.0, d.min(a), tol)?;
        let far = integrate_complex(|r| r * (i * beta * r).exp() * sin_over(beta, d), d.min(a), a, tol)?;
        4.0 * PI / d * (near + far)
    };
    // μ = 1 - w² removes the 1/s singularity when d = a
    let flux = integrate_complex(
        |w| {
            let mu = 1.0 - w * w;
            let s = ((d - a) * (d - a) + 2.0 * a * d * w * w).sqrt();
            if s == 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            (i * beta * s).exp() / s * mu * 2.0 * w
        },
        0.0,
        2f64.sqrt(),
        tol,
    )?;
    Ok((value, -2.0 * PI * a * a * flux))
}

/// Plain Monte Carlo estimate of ∫_Ω f by uniform sampling of the bounding
/// box, for spot checks; returns (estimate, standard error).
pub fn quad_monte_carlo<F: Fn(Vec3) -> f64>(region: Region, f: F, samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = match region {
        Region::Polyhedron(p) => p.bbox(),
        Region::Ellipsoid(e) => (e.a.map(|v| -v), e.a),
    };
    let vol: f64 = (0..3).map(|i| hi[i] - lo[i]).product();
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..samples {
        let y: Vec3 = std::array::from_fn(|i| lo[i] + rng.gen::<f64>() * (hi[i] - lo[i]));
        let v = if winding_number(region, y) > 0.5 { f(y) * vol } else { 0.0 };
        sum += v;
        sum2 += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    (mean, ((sum2 / n - mean * mean).max(0.0) / n).sqrt())
}

/// Periodic grid for the discrete-Fourier cuboid evaluator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    /// Output points per axis (power of two).
    pub n: usize,
    /// Period of the box per axis (m).
    pub extent: f64,
    /// Normal axis of the evaluation plane and its offset.
    pub normal_axis: usize,
    pub offset: f64,
    /// Odd factor by which the Fourier modes exceed the output grid.
    pub oversample: usize,
}

impl GridSpec {
    pub fn h(&self) -> f64 {
        self.extent / self.n as f64
    }

    /// Grid with at least `min_extent` whose spacing puts the faces of a cuboid
    /// of side `l` half-way between grid points.
    pub fn aligned(n: usize, min_extent: f64, l: f64) -> Result<Self, OracleError> {
        let m = ((l * n as f64 / min_extent - 1.0) / 2.0).floor();
        if m < 0.0 {
            return Err(OracleError::Params(format!("{n} points cannot span {min_extent} m around a {l} m cuboid")));
        }
        Ok(Self { n, extent: n as f64 * l / (2.0 * m + 1.0), normal_axis: 0, offset: 0.0, oversample: 3 })
    }

    pub fn validate(&self, l: f64) -> Result<(), OracleError> {
        if !self.n.is_power_of_two() || self.n < 8 {
            return Err(OracleError::Params(format!("grid size {} is not a power of two >= 8", self.n)));
        }
        if !(self.extent >= 4.0 * l) {
            return Err(OracleError::Params(format!("extent {} is below 4x the inclusion size {l}", self.extent)));
        }
        if self.normal_axis > 2 || self.oversample.is_multiple_of(2) {
            return Err(OracleError::Params("normal axis must be 0..=2 and oversampling odd".into()));
        }
        Ok(())
    }

    /// In-plane axes (u, v) in increasing order.
    pub fn plane_axes(&self) -> (usize, usize) {
        match self.normal_axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }

    /// Output coordinates along an in-plane axis.
    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|j| (j as f64 - (self.n / 2) as f64) * self.h()).collect()
    }
}

/// A scalar field on an evaluation plane, row-major over (u, v).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    pub name: String,
    pub units: String,
    pub axes: (usize, usize),
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub values: Vec<f64>,
}

impl FieldMap {
    pub fn at(&self, iu: usize, iv: usize) -> f64 {
        self.values[iu * self.v.len() + iv]
    }

    /// CSV with columns x_u, x_v, value at 17 significant digits.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), OracleError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "x{},x{},{}", self.axes.0 + 1, self.axes.1 + 1, self.name)?;
        for (iu, xu) in self.u.iter().enumerate() {
            for (iv, xv) in self.v.iter().enumerate() {
                writeln!(w, "{:.16e},{:.16e},{:.16e}", xu, xv, self.at(iu, iv))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Raw little-endian f64 values, row-major, plus a JSON sidecar `<path>.json`.
    pub fn write_raw(&self, path: impl AsRef<Path>) -> Result<(), OracleError> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path)?);
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        #[derive(Serialize)]
        struct Sidecar<'a> {
            name: &'a str,
            units: &'a str,
            dtype: &'static str,
            order: &'static str,
            shape: [usize; 2],
            axes: [String; 2],
            extent: [[f64; 2]; 2],
        }
        let side = Sidecar {
            name: &self.name,
            units: &self.units,
            dtype: "f64le",
            order: "row-major",
            shape: [self.u.len(), self.v.len()],
            axes: [format!("x{}", self.axes.0 + 1), format!("x{}", self.axes.1 + 1)],
            extent: [[self.u[0], *self.u.last().unwrap_or(&0.0)], [self.v[0], *self.v.last().unwrap_or(&0.0)]],
        };
        let json = serde_json::to_string_pretty(&side).map_err(|e| OracleError::Json(e.to_string()))?;
        let mut side_path = path.as_os_str().to_owned();
        side_path.push(".json");
        std::fs::write(side_path, json)?;
        Ok(())
    }
}

/// L̄, ∂₃L̄ and ∂₃₃L̄ of a cuboid on an evaluation plane.
#[derive(Debug, Clone)]
pub struct CuboidMaps {
    pub grid: GridSpec,
    pub lbar: FieldMap,
    pub lbar_3: FieldMap,
    pub lbar_33: FieldMap,
    /// Fraction of the L̄ spectral energy in the outer 10% of modes.
    pub outer_energy_fraction: f64,
}

/// Fourier transform of the centred cube indicator along one axis: 2 sin(kl/2)/k.
fn theta_1d(k: f64, l: f64) -> f64 {
    if k == 0.0 {
        l
    } else {
        2.0 * (0.5 * k * l).sin() / k
    }
}

/// Time Eshelby maps of a centred cube of side l, summed as a Fourier series on
/// the periodic box: F(k) = Θ̃(k) (e^{-αk²T2} - e^{-αk²T1}) / (K k²), derivatives by
/// (i k₃)^d, plane values by summing over the normal wave number and a 2D
/// inverse FFT. Faces should sit half-way between grid points (see
/// [`GridSpec::aligned`]); the series is then accurate from two cells off a face.
pub fn fft_cuboid_maps(l: f64, t: f64, window: (f64, f64), mat: &Material, grid: &GridSpec, exec: Exec) -> Result<CuboidMaps, OracleError> {
    grid.validate(l)?;
    let (t_prev, t_f) = window;
    if !(t_f > t_prev) {
        return Err(OracleError::Params(format!("empty window ({t_prev}, {t_f})")));
    }
    let (t1, t2) = ((t - t_prev).max(0.0), (t - t_f.min(t)).max(0.0));
    let m = grid.n * grid.oversample;
    let big_e = grid.extent;
    let half = (m / 2) as i64;
    // Nyquist modes are dropped so every retained mode has its mirror
    let ks: Vec<f64> = (0..m)
        .map(|j| {
            let jj = if (j as i64) < half { j as i64 } else { j as i64 - m as i64 };
            if jj == -half {
                f64::NAN
            } else {
                2.0 * PI * jj as f64 / big_e
            }
        })
        .collect();
    let th: Vec<f64> = ks.iter().map(|k| if k.is_nan() { 0.0 } else { theta_1d(*k, l) }).collect();
    let e1: Vec<f64> = ks.iter().map(|k| if k.is_nan() { 0.0 } else { (-mat.alpha * k * k * t1).exp() }).collect();
    let e2: Vec<f64> = ks.iter().map(|k| if k.is_nan() { 0.0 } else { (-mat.alpha * k * k * t2).exp() }).collect();
    let outer = |j: usize| {
        let jj = if (j as i64) < half { j as i64 } else { j as i64 - m as i64 };
        jj.unsigned_abs() as f64 >= 0.9 * (half - 1) as f64
    };
    let (ua, va) = grid.plane_axes();
    let na = grid.normal_axis;
    let phase: Vec<Complex64> =
        ks.iter().map(|k| if k.is_nan() { Complex64::new(0.0, 0.0) } else { Complex64::from_polar(1.0, k * grid.offset) }).collect();
    // rows over the u axis; each returns three spectral rows and energy sums
    let rows = exec.map_range(m, |ju| {
        let mut s = [vec![Complex64::new(0.0, 0.0); m], vec![Complex64::new(0.0, 0.0); m], vec![Complex64::new(0.0, 0.0); m]];
        let (mut total, mut out_e) = (0.0, 0.0);
        if th[ju] == 0.0 && ks[ju].is_nan() {
            return (s, total, out_e);
        }
        for jv in 0..m {
            if ks[jv].is_nan() {
                continue;
            }
            let mut acc = [Complex64::new(0.0, 0.0); 3];
            for jn in 0..m {
                if ks[jn].is_nan() {
                    continue;
                }
                let mut kk = [0.0; 3];
                kk[ua] = ks[ju];
                kk[va] = ks[jv];
                kk[na] = ks[jn];
                let k2 = kk[0] * kk[0] + kk[1] * kk[1] + kk[2] * kk[2];
                let g = if k2 == 0.0 { (t1 - t2) / mat.cp } else { (e2[ju] * e2[jv] * e2[jn] - e1[ju] * e1[jv] * e1[jn]) / (mat.k * k2) };
                let f = th[ju] * th[jv] * th[jn] * g;
                let e = f * f;
                total += e;
                if outer(ju) || outer(jv) || outer(jn) {
                    out_e += e;
                }
                let fc = phase[jn] * f;
                let k3 = kk[2];
                acc[0] += fc;
                acc[1] += fc * Complex64::new(0.0, k3);
                acc[2] += fc * (-k3 * k3);
            }
            for d in 0..3 {
                s[d][jv] = acc[d];
            }
        }
        (s, total, out_e)
    });
    let total: f64 = rows.iter().map(|r| r.1).sum();
    let out_e: f64 = rows.iter().map(|r| r.2).sum();
    let outer_energy_fraction = if total > 0.0 { out_e / total } else { 0.0 };
    if outer_energy_fraction > 1e-6 {
        return Err(OracleError::Resolution { outer_fraction: outer_energy_fraction });
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(m);
    let coords = grid.coords();
    let norm_f = 1.0 / (big_e * big_e * big_e);
    let fine = |j: usize| ((j as i64 - (grid.n / 2) as i64) * grid.oversample as i64).rem_euclid(m as i64) as usize;
    let mut maps = Vec::with_capacity(3);
    for d in 0..3 {
        // inverse transform along v for every row, then along u for the kept columns
        let mut data: Vec<Vec<Complex64>> = rows.iter().map(|r| r.0[d].clone()).collect();
        let fft_ref = &fft;
        data = exec.map(&data, |row| {
            let mut b = row.clone();
            fft_ref.process(&mut b);
            b
        });
        let cols: Vec<usize> = (0..grid.n).map(fine).collect();
        let col_vals = exec.map(&cols, |&jv| {
            let mut b: Vec<Complex64> = data.iter().map(|row| row[jv]).collect();
            fft_ref.process(&mut b);
            b
        });
        let mut values = vec![0.0; grid.n * grid.n];
        for iu in 0..grid.n {
            for (iv, col) in col_vals.iter().enumerate() {
                values[iu * grid.n + iv] = col[fine(iu)].re * norm_f;
            }
        }
        maps.push(values);
    }
    let name = |s: &str, units: &str, values: Vec<f64>| FieldMap {
        name: s.to_string(),
        units: units.to_string(),
        axes: (ua, va),
        u: coords.clone(),
        v: coords.clone(),
        values,
    };
    let mut it = maps.into_iter();
    Ok(CuboidMaps {
        grid: *grid,
        lbar: name("lbar", "m^3 K/W", it.next().unwrap()),
        lbar_3: name("lbar_3", "m^2 K/W", it.next().unwrap()),
        lbar_33: name("lbar_33", "m K/W", it.next().unwrap()),
        outer_energy_fraction,
    })
}

/// Two-sided jump f(x + δn) - f(x - δn) extrapolated to δ → 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpReport {
    pub jump: f64,
    /// Raw differences at 4h, 2h, h.
    pub samples: [f64; 3],
    /// False when the raw differences do not approach the limit monotonically.
    pub reliable: bool,
}

/// Jump of a sampled field across the plane through `point` with unit `normal`.
/// The one-sided expansions make J(δ) = J₀ + aδ + bδ², removed by Richardson
/// extrapolation over δ = 4h, 2h, h.
pub fn jump_measure<F: Fn(Vec3) -> f64>(sampler: F, point: Vec3, normal: Vec3, h: f64) -> Result<JumpReport, OracleError> {
    if !(h > 0.0) {
        return Err(OracleError::Params(format!("offset must be positive, got {h}")));
    }
    let nn = norm(normal);
    if !(nn > 0.0) {
        return Err(OracleError::Params("normal must be non-zero".into()));
    }
    let n = scale(normal, 1.0 / nn);
    let j = |d: f64| sampler(add(point, scale(n, d))) - sampler(sub(point, scale(n, d)));
    let samples = [j(4.0 * h), j(2.0 * h), j(h)];
    let jump = (8.0 * samples[2] - 6.0 * samples[1] + samples[0]) / 3.0;
    let d1 = samples[1] - samples[0];
    let d2 = samples[2] - samples[1];
    let tiny = 1e-12 * jump.abs().max(samples.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let reliable = d1 * d2 >= 0.0 || (d1.abs() <= tiny && d2.abs() <= tiny);
    if !reliable {
        log::warn!("jump estimate {jump} from non-monotone samples {samples:?}");
    }
    Ok(JumpReport { jump, samples, reliable })
}
