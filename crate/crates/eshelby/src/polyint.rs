//! Exact polyhedral moments W_p(x) = ∫_Ω |x - x'|^p dx'.
//!
//! Every series kernel in the crate is a linear combination of these moments.
//! Per face I with outward normal n and signed plane distance a, and per edge
//! J with in-plane inward distance b and edge coordinates w±, the face integral
//! of r^p is Σ_J [E_{p+2}(w+) - E_{p+2}(w-)] / (p+2) where
//!
//!   E_q(w) = ∫_0^w b/(b²+w'²) [ (s²+w'²)^{q/2} - |a|^q ] dw',   s² = a² + b².
//!
//! E_q = a² E_{q-2} + b P_{q-2} with P_k(w) = ∫_0^w (s²+w'²)^{k/2} dw', which gives
//! polynomial recursions for even q and asinh/atan2 closed forms for odd q.
//! The volume follows from the divergence theorem, W_p = Σ_I h_I/(p+3) ∫_I r^p,
//! and the gradient from Stokes, ∂_i W_p = -Σ_I n_i ∫_I r^p.

use log::debug;

use crate::geometry::{add, cross, dot, norm, scale, sub, Polyhedron, Vec3};
use crate::tps::{Scalar, Tps};

/// Distance below which a field point counts as lying on an edge line or a face plane.
pub const EDGE_TOL: f64 = 1e-9;

/// Diagnostics attached to evaluated quantities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalFlags {
    /// a truncated series failed its convergence test
    pub series_unconverged: bool,
    /// the field point was moved off an edge line
    pub nudged: bool,
    /// derivatives were taken at a point on a face plane (one-sided)
    pub near_interface: bool,
}

impl EvalFlags {
    pub fn merge(self, o: EvalFlags) -> EvalFlags {
        EvalFlags {
            series_unconverged: self.series_unconverged || o.series_unconverged,
            nudged: self.nudged || o.nudged,
            near_interface: self.near_interface || o.near_interface,
        }
    }

    pub fn any(&self) -> bool {
        self.series_unconverged || self.nudged || self.near_interface
    }
}

/// Which moments to compute: even p = 0, 2, .., even_max and odd p = -1, 1, .., odd_max.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MomentRequest {
    pub even_max: Option<usize>,
    pub odd_max: Option<i32>,
}

impl MomentRequest {
    pub fn even(max_p: usize) -> Self {
        Self { even_max: Some(max_p), odd_max: None }
    }

    pub fn odd(max_p: i32) -> Self {
        Self { even_max: None, odd_max: Some(max_p) }
    }

    /// All p from -1 to `max_p`.
    pub fn all(max_p: i32) -> Self {
        let even = if max_p >= 0 { Some((max_p as usize) & !1) } else { None };
        let odd = if max_p >= -1 { Some(if max_p % 2 == 0 { max_p - 1 } else { max_p }) } else { None };
        Self { even_max: even, odd_max: odd }
    }

    fn n_even(&self) -> usize {
        self.even_max.map_or(0, |m| m / 2 + 1)
    }

    fn n_odd(&self) -> usize {
        self.odd_max.map_or(0, |m| if m < -1 { 0 } else { ((m + 1) / 2 + 1) as usize })
    }
}

/// Moments indexed by power p.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet<T> {
    /// p = 0, 2, 4, ..
    pub even: Vec<T>,
    /// p = -1, 1, 3, ..
    pub odd: Vec<T>,
    pub flags: EvalFlags,
}

impl<T> MomentSet<T> {
    pub fn get(&self, p: i32) -> &T {
        if p >= 0 && p % 2 == 0 {
            &self.even[(p / 2) as usize]
        } else {
            &self.odd[((p + 1) / 2) as usize]
        }
    }

    pub fn has(&self, p: i32) -> bool {
        if p >= 0 && p % 2 == 0 {
            ((p / 2) as usize) < self.even.len()
        } else {
            p >= -1 && (((p + 1) / 2) as usize) < self.odd.len()
        }
    }

    pub fn map<U, F: Fn(&T) -> U>(&self, f: F) -> MomentSet<U> {
        MomentSet { even: self.even.iter().map(&f).collect(), odd: self.odd.iter().map(&f).collect(), flags: self.flags }
    }
}

/// Move `x` off any edge line it (nearly) lies on.
pub fn prepare_point(poly: &Polyhedron, x: Vec3) -> (Vec3, EvalFlags) {
    let mut flags = EvalFlags::default();
    let mut x = x;
    for attempt in 0..4 {
        let mut moved = false;
        'faces: for (fi, f) in poly.faces().iter().enumerate() {
            let n = poly.normal(fi);
            for j in 0..f.len() {
                let (vm, vp) = poly.edge(fi, j);
                let d = sub(vp, vm);
                let eta = scale(d, 1.0 / norm(d));
                let r = sub(x, vm);
                let perp = sub(r, scale(eta, dot(r, eta)));
                if norm(perp) < EDGE_TOL {
                    let lambda = cross(eta, n);
                    x = add(x, scale(lambda, EDGE_TOL * (1 + attempt) as f64));
                    moved = true;
                    break 'faces;
                }
            }
        }
        if !moved {
            break;
        }
        if !flags.nudged {
            debug!("field point lies on an edge line; nudged by {EDGE_TOL:e} m");
        }
        flags.nudged = true;
    }
    (x, flags)
}

/// Accumulate sign·E_q(w) into the even (q = 2, 4, ..) and odd (q = 1, 3, ..) buffers.
#[allow(clippy::too_many_arguments)]
fn edge_terms<T: Scalar>(a2: &T, absa: &T, b: &T, s2: &T, s: &T, w: &T, sign: f64, even: &mut [T], odd: &mut [T]) {
    let w2 = w.clone() * w.clone();
    let rho2 = s2.clone() + w2.clone();
    if !even.is_empty() {
        // q = 2k + 2, P_{2k} = R_k
        let mut rpow = w.cst(1.0);
        let mut rk = w.clone();
        let mut e = b.clone() * rk.clone();
        even[0] = even[0].clone() + e.clone() * sign;
        for k in 1..even.len() {
            rpow = rpow * rho2.clone();
            let kf = k as f64;
            rk = (w.clone() * rpow.clone() + s2.clone() * rk * (2.0 * kf)) / (2.0 * kf + 1.0);
            e = a2.clone() * e + b.clone() * rk.clone();
            even[k] = even[k].clone() + e.clone() * sign;
        }
    }
    if !odd.is_empty() {
        let r = rho2.sqrt();
        // |a| - R written without cancellation
        let bw2 = b.clone() * b.clone() + w2.clone();
        let amr = -(bw2 / (absa.clone() + r.clone()));
        let num = w.clone() * b.clone() * amr;
        let den = b.clone() * b.clone() * r.clone() + absa.clone() * w2;
        let a2em1 = absa.clone() * num.atan2(&den);
        let mut p = (w.clone() / s.clone()).asinh(); // P_{-1}
        let mut e = a2em1 + b.clone() * p.clone(); // E_1
        odd[0] = odd[0].clone() + e.clone() * sign;
        let mut rq = r.clone(); // R^q for q = 1, 3, ..
        for k in 1..odd.len() {
            let q = (2 * k - 1) as f64; // P_q from P_{q-2}
            p = (w.clone() * rq.clone() + s2.clone() * p * q) / (q + 1.0);
            e = a2.clone() * e + b.clone() * p.clone();
            odd[k] = odd[k].clone() + e.clone() * sign;
            rq = rq * rho2.clone();
        }
    }
}

/// Per-face edge sums S_q = Σ_J ΔE_q for the requested q, and h = -a.
struct FaceSums<T> {
    h: T,
    even: Vec<T>,
    odd: Vec<T>,
}

fn face_sums<T: Scalar>(poly: &Polyhedron, fi: usize, x: &[T; 3], req: &MomentRequest, flags: &mut EvalFlags) -> FaceSums<T> {
    let zero = x[0].cst(0.0);
    let ne = req.n_even();
    let no = req.n_odd();
    let f = &poly.faces()[fi];
    let n = poly.normal(fi);
    let v0 = poly.vertices()[f[0]];
    let a = (x[0].clone() - v0[0]) * n[0] + (x[1].clone() - v0[1]) * n[1] + (x[2].clone() - v0[2]) * n[2];
    if a.value().abs() < EDGE_TOL {
        flags.near_interface = true;
    }
    let absa = a.abs_branch();
    let a2 = a.clone() * a.clone();
    let mut even = vec![zero.clone(); ne];
    let mut odd = vec![zero.clone(); no];
    for j in 0..f.len() {
        let (vm, vp) = poly.edge(fi, j);
        let d = sub(vp, vm);
        let eta = scale(d, 1.0 / norm(d));
        let lambda = cross(eta, n);
        // b > 0 when the projected point is on the inner side of the edge
        let b = -((x[0].clone() - vm[0]) * lambda[0] + (x[1].clone() - vm[1]) * lambda[1] + (x[2].clone() - vm[2]) * lambda[2]);
        let xe = (x[0].clone() * eta[0]) + (x[1].clone() * eta[1]) + (x[2].clone() * eta[2]);
        let wp = -(xe.clone() - dot(vp, eta));
        let wm = -(xe - dot(vm, eta));
        let s2 = a2.clone() + b.clone() * b.clone();
        if s2.value() == 0.0 {
            // on the edge line: every term carries a factor b or |a|, so the values vanish
            continue;
        }
        let s = s2.sqrt();
        edge_terms(&a2, &absa, &b, &s2, &s, &wp, 1.0, &mut even, &mut odd);
        edge_terms(&a2, &absa, &b, &s2, &s, &wm, -1.0, &mut even, &mut odd);
    }
    FaceSums { h: -a, even, odd }
}

// S index for power p: even p uses q = p + 2 -> slot p/2; odd p uses q = p + 2 -> slot (p+1)/2
fn slot(p: i32) -> usize {
    if p % 2 == 0 {
        (p / 2) as usize
    } else {
        ((p + 1) / 2) as usize
    }
}

fn volume_moments<T: Scalar>(poly: &Polyhedron, x: &[T; 3], req: &MomentRequest) -> MomentSet<T> {
    let zero = x[0].cst(0.0);
    let mut flags = EvalFlags::default();
    let mut even = vec![zero.clone(); req.n_even()];
    let mut odd = vec![zero.clone(); req.n_odd()];
    for fi in 0..poly.num_faces() {
        let fs = face_sums(poly, fi, x, req, &mut flags);
        for (k, e) in even.iter_mut().enumerate() {
            let p = 2 * k as i32;
            *e = e.clone() + fs.h.clone() * fs.even[slot(p)].clone() / (((p + 2) * (p + 3)) as f64);
        }
        for (k, o) in odd.iter_mut().enumerate() {
            let p = 2 * k as i32 - 1;
            *o = o.clone() + fs.h.clone() * fs.odd[slot(p)].clone() / (((p + 2) * (p + 3)) as f64);
        }
    }
    MomentSet { even, odd, flags }
}

fn stokes_gradient<T: Scalar>(poly: &Polyhedron, x: &[T; 3], req: &MomentRequest) -> MomentSet<[T; 3]> {
    let zero = x[0].cst(0.0);
    let z3 = [zero.clone(), zero.clone(), zero.clone()];
    let mut flags = EvalFlags::default();
    let mut even = vec![z3.clone(); req.n_even()];
    let mut odd = vec![z3.clone(); req.n_odd()];
    for fi in 0..poly.num_faces() {
        let n = poly.normal(fi);
        let fs = face_sums(poly, fi, x, req, &mut flags);
        for (k, g) in even.iter_mut().enumerate() {
            let p = 2 * k as i32;
            let face = fs.even[slot(p)].clone() / ((p + 2) as f64);
            for i in 0..3 {
                g[i] = g[i].clone() - face.clone() * n[i];
            }
        }
        for (k, g) in odd.iter_mut().enumerate() {
            let p = 2 * k as i32 - 1;
            let face = fs.odd[slot(p)].clone() / ((p + 2) as f64);
            for i in 0..3 {
                g[i] = g[i].clone() - face.clone() * n[i];
            }
        }
    }
    MomentSet { even, odd, flags }
}

/// Moment values at `x`.
pub fn moments_value(poly: &Polyhedron, x: Vec3, req: &MomentRequest) -> MomentSet<f64> {
    let (x, pflags) = prepare_point(poly, x);
    let mut m = volume_moments(poly, &x, req);
    m.flags = m.flags.merge(pflags);
    m.flags.near_interface = false; // values are continuous across faces
    m
}

/// Moment gradients ∂_i W_p at `x` by the surface (Stokes) route.
pub fn moments_gradient(poly: &Polyhedron, x: Vec3, req: &MomentRequest) -> MomentSet<Vec3> {
    let (x, pflags) = prepare_point(poly, x);
    let mut m = stokes_gradient(poly, &x, req);
    m.flags = m.flags.merge(pflags);
    m.flags.near_interface = false;
    m
}

/// Taylor series of each moment about `x` to total order `order`.
pub fn moments_tps(poly: &Polyhedron, x: Vec3, req: &MomentRequest, order: usize) -> MomentSet<Tps> {
    let (x, pflags) = prepare_point(poly, x);
    let values = volume_moments(poly, &x, req);
    if order == 0 {
        let mut m = values.map(|v| Tps::constant(*v, 0));
        m.flags = pflags;
        return m;
    }
    let xt = Tps::point(x, order - 1);
    let grads = stokes_gradient(poly, &xt, req);
    let build = |v: &f64, g: &[Tps; 3]| Tps::from_value_and_gradient(*v, g);
    let even = values.even.iter().zip(&grads.even).map(|(v, g)| build(v, g)).collect();
    let odd = values.odd.iter().zip(&grads.odd).map(|(v, g)| build(v, g)).collect();
    let mut flags = pflags.merge(grads.flags);
    // first derivatives are continuous; only order >= 2 is one-sided on a face plane
    flags.near_interface = grads.flags.near_interface && order >= 2;
    MomentSet { even, odd, flags }
}

/// Face integral ∫_face |x - x'|^p dA' (used by tests and the harmonic jump study).
pub fn face_integral(poly: &Polyhedron, face: usize, x: Vec3, p: i32) -> f64 {
    let req = if p % 2 == 0 { MomentRequest::even(p as usize) } else { MomentRequest::odd(p) };
    let mut flags = EvalFlags::default();
    let fs = face_sums(poly, face, &x, &req, &mut flags);
    let s = if p % 2 == 0 { &fs.even } else { &fs.odd };
    s[slot(p)] / (p + 2) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_cuboid, tessellate_sphere};
    use crate::specfun::{integrate, QuadratureSpec};
    use std::f64::consts::PI;

    fn cube() -> Polyhedron {
        make_cuboid(0.2, 0.2, 0.2, [0.0; 3]).unwrap()
    }

    // ∫_{-h}^{h} ∫ ∫ polynomial in closed form for W_2 = ∫|x-x'|² over a box centered at 0
    fn box_w2(l: [f64; 3], x: Vec3) -> f64 {
        let v = l[0] * l[1] * l[2];
        let mut s = 0.0;
        for i in 0..3 {
            s += v * (x[i] * x[i] + l[i] * l[i] / 12.0);
        }
        s
    }

    #[test]
    fn zeroth_moment_is_volume() {
        for x in [[0.0; 3], [0.3, -0.2, 0.5], [0.05, 0.02, 0.1]] {
            let m = moments_value(&cube(), x, &MomentRequest::even(4));
            assert!((m.get(0) - 0.008).abs() < 1e-15);
            assert!((m.get(2) - box_w2([0.2; 3], x)).abs() < 1e-15);
            let s = tessellate_sphere(0.1, 2).unwrap();
            let ms = moments_value(&s, x, &MomentRequest::even(0));
            assert!((ms.get(0) - s.volume()).abs() < 1e-15);
        }
    }

    #[test]
    fn newtonian_potential_of_cube_center() {
        // ∫_{[0,1]^3} dV/r = 3/2 ln(2+√3) - π/4, and the centered unit cube is 8 octants of half size
        let c = make_cuboid(1.0, 1.0, 1.0, [0.0; 3]).unwrap();
        let m = moments_value(&c, [0.0; 3], &MomentRequest::odd(-1));
        let exact = 3.0 * (2.0 + 3f64.sqrt()).ln() - PI / 2.0;
        assert!((m.get(-1) - exact).abs() < 1e-13, "{} vs {exact}", m.get(-1));
    }

    #[test]
    fn sphere_interior_newtonian_potential() {
        let s = tessellate_sphere(0.1, 5).unwrap();
        for z in [0.0, 0.03, 0.07] {
            let m = moments_value(&s, [0.0, 0.0, z], &MomentRequest::odd(1));
            let exact = 2.0 * PI * (0.01 - z * z / 3.0);
            assert!((m.get(-1) / exact - 1.0).abs() < 2e-3);
        }
    }

    #[test]
    fn face_integral_against_quadrature() {
        // top face z = 0.1 of the cube, x off-plane: ∫∫ (a² + (u-x)² + (v-y)²)^{p/2}
        let c = cube();
        let x = [0.03, -0.17, 0.25];
        let spec = QuadratureSpec::new(4000, 1e-15, 1e-12).unwrap();
        for p in [-1, 0, 1, 2, 3, 5] {
            let inner = |u: f64| {
                integrate(
                    |v: f64| {
                        let r2 = (u - x[0]).powi(2) + (v - x[1]).powi(2) + (0.1 - x[2]).powi(2);
                        r2.powf(p as f64 / 2.0)
                    },
                    -0.1,
                    0.1,
                    &spec,
                )
                .unwrap()
                .value
            };
            let q = integrate(inner, -0.1, 0.1, &spec).unwrap().value;
            let v = face_integral(&c, 1, x, p);
            assert!(((v - q) / q).abs() < 1e-11, "p = {p}: {v} vs {q}");
        }
    }

    #[test]
    fn in_plane_point_face_integral() {
        // x in the face plane inside the square: ∫ dA/ρ = ∮ ρ_max(θ) dθ
        let c = cube();
        let spec = QuadratureSpec::new(4000, 1e-15, 1e-13).unwrap();
        let x = [0.02, 0.04, 0.1];
        let reach = |th: f64| {
            let (ct, st) = (th.cos(), th.sin());
            let tx = if ct > 0.0 {
                (0.1 - x[0]) / ct
            } else if ct < 0.0 {
                (-0.1 - x[0]) / ct
            } else {
                f64::INFINITY
            };
            let ty = if st > 0.0 {
                (0.1 - x[1]) / st
            } else if st < 0.0 {
                (-0.1 - x[1]) / st
            } else {
                f64::INFINITY
            };
            tx.min(ty)
        };
        // split at the corner directions so each piece is smooth
        let mut cuts: Vec<f64> = [[0.1, 0.1], [-0.1, 0.1], [-0.1, -0.1], [0.1, -0.1]]
            .iter()
            .map(|c| (c[1] - x[1]).atan2(c[0] - x[0]).rem_euclid(2.0 * PI))
            .collect();
        cuts.push(0.0);
        cuts.push(2.0 * PI);
        cuts.sort_by(f64::total_cmp);
        let q: f64 = cuts.windows(2).map(|w| integrate(reach, w[0], w[1], &spec).unwrap().value).sum();
        let v = face_integral(&c, 1, x, -1);
        assert!(((v - q) / q).abs() < 1e-12, "{v} vs {q}");
        // outside the square the integrand is smooth
        let x = [0.3, 0.05, 0.1];
        let q = integrate(
            |u: f64| integrate(|v: f64| 1.0 / ((u - x[0]).powi(2) + (v - x[1]).powi(2)).sqrt(), -0.1, 0.1, &spec).unwrap().value,
            -0.1,
            0.1,
            &spec,
        )
        .unwrap()
        .value;
        let v = face_integral(&c, 1, x, -1);
        assert!(((v - q) / q).abs() < 1e-12, "{v} vs {q}");
    }

    #[test]
    fn stokes_gradient_matches_finite_differences() {
        let c = make_cuboid(0.2, 0.3, 0.25, [0.01, -0.02, 0.0]).unwrap();
        let req = MomentRequest::all(5);
        let h = 1e-6;
        for x in [[0.31, 0.1, -0.05], [0.02, 0.03, 0.01], [0.05, -0.4, 0.2]] {
            let g = moments_gradient(&c, x, &req);
            for p in -1..=5 {
                for i in 0..3 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[i] += h;
                    xm[i] -= h;
                    let fd = (moments_value(&c, xp, &req).get(p) - moments_value(&c, xm, &req).get(p)) / (2.0 * h);
                    let an = g.get(p)[i];
                    let scale = g.get(p).iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    assert!((an - fd).abs() < 1e-6 * scale + 1e-10, "p = {p}, i = {i}: {an} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn tps_derivatives_are_consistent() {
        let c = cube();
        let req = MomentRequest::all(4);
        let x = [0.13, 0.04, -0.02];
        let t = moments_tps(&c, x, &req, 3);
        let h = 1e-4;
        for p in -1..=4 {
            // second derivative ∂₁∂₂ against finite differences of the gradient
            let gp = moments_gradient(&c, [x[0] + h, x[1], x[2]], &req);
            let gm = moments_gradient(&c, [x[0] - h, x[1], x[2]], &req);
            let fd = (gp.get(p)[1] - gm.get(p)[1]) / (2.0 * h);
            let an = t.get(p).deriv([1, 1, 0]);
            assert!((an - fd).abs() < 1e-6 * (1.0 + an.abs()), "p = {p}: {an} vs {fd}");
            assert!((t.get(p).value() - moments_value(&c, x, &req).get(p)).abs() < 1e-15);
        }
        // Newtonian potential is harmonic outside and ∇²W_{-1} = -4π inside
        let tin = moments_tps(&c, [0.01, 0.02, 0.03], &MomentRequest::odd(-1), 2);
        let lap = |t: &Tps| t.deriv([2, 0, 0]) + t.deriv([0, 2, 0]) + t.deriv([0, 0, 2]);
        assert!((lap(tin.get(-1)) + 4.0 * PI).abs() < 1e-9);
        assert!(lap(t.get(-1)).abs() < 1e-9);
        // ∇² r^2 = 6 ⇒ ∇²W_2 = 6 V
        assert!((lap(t.get(2)) - 6.0 * 0.008).abs() < 1e-12);
    }

    #[test]
    fn edge_line_points_are_nudged() {
        let c = cube();
        // on the extension of the top-front edge line
        let m = moments_value(&c, [0.5, -0.1, 0.1], &MomentRequest::all(3));
        assert!(m.flags.nudged);
        assert!(m.even.iter().chain(&m.odd).all(|v| v.is_finite()));
        let t = moments_tps(&c, [0.0, 0.0, 0.1], &MomentRequest::all(1), 2);
        assert!(t.flags.near_interface);
        assert!(!t.flags.nudged);
    }

    #[test]
    fn triangulation_does_not_change_moments() {
        let c = make_cuboid(0.2, 0.3, 0.1, [0.0; 3]).unwrap();
        let t = c.triangulated();
        let req = MomentRequest::all(7);
        for x in [[0.4, 0.1, 0.2], [0.01, 0.02, -0.03]] {
            let a = moments_value(&c, x, &req);
            let b = moments_value(&t, x, &req);
            for p in -1..=7 {
                assert!((a.get(p) - b.get(p)).abs() < 1e-12 * a.get(p).abs());
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn translation_invariance(x in prop::array::uniform3(-0.5f64..0.5), d in prop::array::uniform3(-0.3f64..0.3)) {
                let c = cube();
                let moved = c.translated(d);
                let req = MomentRequest::all(5);
                let a = moments_value(&c, x, &req);
                let b = moments_value(&moved, add(x, d), &req);
                for p in -1..=5 {
                    prop_assert!((a.get(p) - b.get(p)).abs() <= 1e-11 * a.get(p).abs().max(1e-6));
                }
            }

            #[test]
            fn moments_are_positive_and_ordered(x in prop::array::uniform3(-0.5f64..0.5)) {
                let m = moments_value(&cube(), x, &MomentRequest::all(4));
                for p in -1..=4 {
                    prop_assert!(*m.get(p) > 0.0);
                }
            }
        }
    }
}
