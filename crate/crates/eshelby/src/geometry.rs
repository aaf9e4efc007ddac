//! Polyhedral meshes, generators and the per-edge transformed coordinates.
//!
//! Faces are vertex loops, counter-clockwise seen from outside. Polygonal
//! faces are kept as polygons; [`Polyhedron::triangulated`] fans them into
//! triangles when a triangle-only mesh is wanted.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = [f64; 3];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}
#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}
#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}
#[inline]
pub fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("mesh is not watertight; offending edges: {0:?}")]
    Topology(Vec<(usize, usize)>),
    #[error("face {face} is not planar (deviation {deviation:e})")]
    NonPlanar { face: usize, deviation: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Thermal material constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    /// conductivity K, W/(m·K)
    pub k: f64,
    /// volumetric heat capacity Cp, J/(m³·K)
    pub cp: f64,
    /// diffusivity α = K/Cp, m²/s
    pub alpha: f64,
}

impl Material {
    pub fn new(k: f64, cp: f64) -> Result<Self, GeometryError> {
        if !(k > 0.0 && cp > 0.0) || !k.is_finite() || !cp.is_finite() {
            return Err(GeometryError::Precondition(format!("K = {k} and Cp = {cp} must be positive")));
        }
        Ok(Self { k, cp, alpha: k / cp })
    }

    /// Material from conductivity and diffusivity.
    pub fn from_diffusivity(k: f64, alpha: f64) -> Result<Self, GeometryError> {
        if !(alpha > 0.0) {
            return Err(GeometryError::Precondition(format!("alpha = {alpha} must be positive")));
        }
        let m = Self::new(k, k / alpha)?;
        Ok(Self { alpha, ..m })
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.k > 0.0 && self.cp > 0.0) {
            return Err(GeometryError::Precondition("K and Cp must be positive".into()));
        }
        if (self.alpha * self.cp - self.k).abs() > 1e-12 * self.k {
            return Err(GeometryError::Precondition(format!("alpha·Cp = {} differs from K = {}", self.alpha * self.cp, self.k)));
        }
        Ok(())
    }
}

/// Closed, outward-oriented polyhedral surface.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    vertices: Vec<Vec3>,
    faces: Vec<Vec<usize>>,
    normals: Vec<Vec3>,
}

/// Per (face, edge, field point) transformed coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformedCoords {
    /// signed distance to the face plane, positive on the outward side
    pub a: f64,
    /// signed distance from the projected point to the edge line, positive outside the edge
    pub b: f64,
    pub l_plus: f64,
    pub l_minus: f64,
    /// outward face normal ξ⁰
    pub xi: Vec3,
    /// in-plane outward edge normal λ⁰ = η⁰ × ξ⁰
    pub lambda: Vec3,
    /// edge direction η⁰ from v⁻ to v⁺
    pub eta: Vec3,
}

fn newell_normal(vertices: &[Vec3], face: &[usize]) -> Vec3 {
    let mut n = [0.0; 3];
    for j in 0..face.len() {
        let p = vertices[face[j]];
        let q = vertices[face[(j + 1) % face.len()]];
        n[0] += (p[1] - q[1]) * (p[2] + q[2]);
        n[1] += (p[2] - q[2]) * (p[0] + q[0]);
        n[2] += (p[0] - q[0]) * (p[1] + q[1]);
    }
    n
}

impl Polyhedron {
    /// Build and validate a polyhedron. Faces are re-oriented if the signed volume is negative.
    pub fn new(vertices: Vec<Vec3>, mut faces: Vec<Vec<usize>>) -> Result<Self, GeometryError> {
        if faces.is_empty() {
            return Err(GeometryError::Precondition("no faces".into()));
        }
        for (i, f) in faces.iter().enumerate() {
            if f.len() < 3 {
                return Err(GeometryError::Parse(format!("face {i} has fewer than 3 vertices")));
            }
            if let Some(&bad) = f.iter().find(|&&v| v >= vertices.len()) {
                return Err(GeometryError::Parse(format!("face {i} references vertex {bad}")));
            }
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeometryError::Parse("non-finite vertex coordinate".into()));
        }
        check_watertight(&faces)?;

        let diag = bbox_diagonal(&vertices);
        let mut normals = Vec::with_capacity(faces.len());
        for (i, f) in faces.iter().enumerate() {
            let n = newell_normal(&vertices, f);
            let len = norm(n);
            if len <= 1e-300 {
                return Err(GeometryError::Precondition(format!("face {i} has zero area")));
            }
            let n = scale(n, 1.0 / len);
            let p0 = vertices[f[0]];
            let dev = f.iter().map(|&v| dot(sub(vertices[v], p0), n).abs()).fold(0.0, f64::max);
            if dev > 1e-9 * diag {
                return Err(GeometryError::NonPlanar { face: i, deviation: dev });
            }
            normals.push(n);
        }
        let mut poly = Self { vertices, faces: Vec::new(), normals };
        poly.faces = std::mem::take(&mut faces);
        let vol = poly.signed_volume();
        if vol < 0.0 {
            for f in poly.faces.iter_mut() {
                f.reverse();
            }
            for n in poly.normals.iter_mut() {
                *n = scale(*n, -1.0);
            }
        }
        if poly.signed_volume() <= 0.0 {
            return Err(GeometryError::Precondition("polyhedron has zero volume".into()));
        }
        Ok(poly)
    }

    /// The empty region: no faces, zero volume. Every domain integral over it is 0.
    pub fn empty() -> Self {
        Self { vertices: Vec::new(), faces: Vec::new(), normals: Vec::new() }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[Vec<usize>] {
        &self.faces
    }

    pub fn normal(&self, face: usize) -> Vec3 {
        self.normals[face]
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Edge `edge` of `face` as (v⁻, v⁺).
    pub fn edge(&self, face: usize, edge: usize) -> (Vec3, Vec3) {
        let f = &self.faces[face];
        (self.vertices[f[edge]], self.vertices[f[(edge + 1) % f.len()]])
    }

    fn signed_volume(&self) -> f64 {
        let mut v = 0.0;
        for f in &self.faces {
            let p0 = self.vertices[f[0]];
            for j in 1..f.len() - 1 {
                v += dot(p0, cross(self.vertices[f[j]], self.vertices[f[j + 1]]));
            }
        }
        v / 6.0
    }

    pub fn volume(&self) -> f64 {
        self.signed_volume()
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * norm(newell_normal(&self.vertices, &self.faces[face]))
    }

    /// Σ area·normal over all faces; zero for a closed surface.
    pub fn area_vector_sum(&self) -> Vec3 {
        (0..self.faces.len()).fold([0.0; 3], |acc, i| add(acc, scale(self.normals[i], self.face_area(i))))
    }

    pub fn bbox(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for i in 0..3 {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        (lo, hi)
    }

    /// Largest vertex distance from the origin.
    pub fn circumradius(&self) -> f64 {
        self.vertices.iter().map(|v| norm(*v)).fold(0.0, f64::max)
    }

    /// Fan-triangulate every polygonal face.
    pub fn triangulated(&self) -> Self {
        let mut faces = Vec::new();
        let mut normals = Vec::new();
        for (i, f) in self.faces.iter().enumerate() {
            for j in 1..f.len() - 1 {
                faces.push(vec![f[0], f[j], f[j + 1]]);
                normals.push(self.normals[i]);
            }
        }
        Self { vertices: self.vertices.clone(), faces, normals }
    }

    /// Rigid translation.
    pub fn translated(&self, d: Vec3) -> Self {
        Self { vertices: self.vertices.iter().map(|v| add(*v, d)).collect(), faces: self.faces.clone(), normals: self.normals.clone() }
    }

    /// Serialize in the OFF format accepted by [`parse_off`].
    pub fn to_off(&self) -> String {
        let mut s = format!("OFF\n{} {} 0\n", self.vertices.len(), self.faces.len());
        for v in &self.vertices {
            s.push_str(&format!("{:.17e} {:.17e} {:.17e}\n", v[0], v[1], v[2]));
        }
        for f in &self.faces {
            s.push_str(&f.len().to_string());
            for i in f {
                s.push_str(&format!(" {i}"));
            }
            s.push('\n');
        }
        s
    }
}

fn bbox_diagonal(vertices: &[Vec3]) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for v in vertices {
        for i in 0..3 {
            lo[i] = lo[i].min(v[i]);
            hi[i] = hi[i].max(v[i]);
        }
    }
    norm(sub(hi, lo))
}

fn check_watertight(faces: &[Vec<usize>]) -> Result<(), GeometryError> {
    let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
    for f in faces {
        for j in 0..f.len() {
            *directed.entry((f[j], f[(j + 1) % f.len()])).or_default() += 1;
        }
    }
    let mut bad: Vec<(usize, usize)> = Vec::new();
    for (&(a, b), &count) in &directed {
        let back = directed.get(&(b, a)).copied().unwrap_or(0);
        if count != 1 || back != 1 {
            let key = (a.min(b), a.max(b));
            if !bad.contains(&key) {
                bad.push(key);
            }
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        bad.sort_unstable();
        Err(GeometryError::Topology(bad))
    }
}

/// Parse OFF text: "OFF", "nV nF 0", nV vertex lines, nF face lines "k i1 .. ik".
pub fn parse_off(text: &str) -> Result<Polyhedron, GeometryError> {
    let mut lines = text.lines().map(|l| l.split('#').next().unwrap_or("").trim()).filter(|l| !l.is_empty());
    let header = lines.next().ok_or_else(|| GeometryError::Parse("empty file".into()))?;
    if header != "OFF" {
        return Err(GeometryError::Parse(format!("expected OFF header, got {header:?}")));
    }
    let counts = lines.next().ok_or_else(|| GeometryError::Parse("missing counts line".into()))?;
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse().map_err(|e| GeometryError::Parse(format!("bad count {t:?}: {e}"))))
        .collect::<Result<_, _>>()?;
    if counts.len() < 2 {
        return Err(GeometryError::Parse("counts line needs nV nF".into()));
    }
    let (nv, nf) = (counts[0], counts[1]);
    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let l = lines.next().ok_or_else(|| GeometryError::Parse(format!("missing vertex {i}")))?;
        let v: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse().map_err(|e| GeometryError::Parse(format!("bad coordinate {t:?}: {e}"))))
            .collect::<Result<_, _>>()?;
        if v.len() != 3 {
            return Err(GeometryError::Parse(format!("vertex {i} needs 3 coordinates")));
        }
        vertices.push([v[0], v[1], v[2]]);
    }
    let mut faces = Vec::with_capacity(nf);
    for i in 0..nf {
        let l = lines.next().ok_or_else(|| GeometryError::Parse(format!("missing face {i}")))?;
        let idx: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse().map_err(|e| GeometryError::Parse(format!("bad index {t:?}: {e}"))))
            .collect::<Result<_, _>>()?;
        if idx.is_empty() || idx[0] + 1 != idx.len() {
            return Err(GeometryError::Parse(format!("face {i}: vertex count does not match")));
        }
        faces.push(idx[1..].to_vec());
    }
    Polyhedron::new(vertices, faces)
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Polyhedron, GeometryError> {
    parse_off(&std::fs::read_to_string(path)?)
}

/// Axis-aligned box.
pub fn make_cuboid(lx: f64, ly: f64, lz: f64, center: Vec3) -> Result<Polyhedron, GeometryError> {
    if !(lx > 0.0 && ly > 0.0 && lz > 0.0) {
        return Err(GeometryError::Precondition(format!("cuboid sides must be positive: {lx} {ly} {lz}")));
    }
    let (hx, hy, hz) = (lx / 2.0, ly / 2.0, lz / 2.0);
    let mut v = Vec::with_capacity(8);
    for &z in &[-hz, hz] {
        for &(x, y) in &[(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)] {
            v.push(add([x, y, z], center));
        }
    }
    let faces = vec![
        vec![0, 3, 2, 1], // bottom, normal -z
        vec![4, 5, 6, 7], // top
        vec![0, 1, 5, 4], // -y
        vec![1, 2, 6, 5], // +x
        vec![2, 3, 7, 6], // +y
        vec![3, 0, 4, 7], // -x
    ];
    Polyhedron::new(v, faces)
}

/// Inscribed polyhedral sphere from a subdivided icosahedron; 20·4^refinement triangles.
pub fn tessellate_sphere(radius: f64, refinement: u32) -> Result<Polyhedron, GeometryError> {
    if !(radius > 0.0) {
        return Err(GeometryError::Precondition(format!("radius {radius} must be positive")));
    }
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .into_iter()
    .map(normalize)
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..refinement {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                verts.push(normalize(scale(add(verts[a], verts[b]), 0.5)));
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let ab = midpoint(f[0], f[1], &mut verts);
            let bc = midpoint(f[1], f[2], &mut verts);
            let ca = midpoint(f[2], f[0], &mut verts);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    let vertices = verts.into_iter().map(|v| scale(v, radius)).collect();
    Polyhedron::new(vertices, faces.into_iter().map(|f| f.to_vec()).collect())
}

/// Transformed coordinates of field point `x` for edge `edge` of face `face`.
pub fn transformed_coords(poly: &Polyhedron, face: usize, edge: usize, x: Vec3) -> TransformedCoords {
    let (vm, vp) = poly.edge(face, edge);
    let xi = poly.normal(face);
    let eta = normalize(sub(vp, vm));
    let lambda = cross(eta, xi);
    let dp = sub(x, vp);
    TransformedCoords { a: dot(dp, xi), b: dot(dp, lambda), l_plus: dot(dp, eta), l_minus: dot(sub(x, vm), eta), xi, lambda, eta }
}
