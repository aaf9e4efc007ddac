//! `verify-sphere`: polyhedral spatial and time tensors of tessellated spheres
//! along the x₃ axis against the sphere closed forms, plus an n_max sweep.

use anyhow::{anyhow, Result};
use serde::{Deserialize, Serialize};

use eshelby::geometry::{tessellate_sphere, Material};
use eshelby::kernels_sphere_ellipsoid::{sphere_c, sphere_l};
use eshelby::kernels_transient::{c_nf_sweep, spatial_l_sweep, SeriesParams};
use eshelby::Exec;

use crate::output::{linspace, Gate, Report, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub level: u32,
    pub n_max: Vec<usize>,
    /// Largest |x₃| in radii.
    pub span: f64,
    pub samples: usize,
    pub tau: f64,
    /// Error level that defines the breakdown radius (%).
    pub tolerance_pct: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { level: 5, n_max: vec![0, 1, 2, 3, 6, 10], span: 10.0, samples: 101, tau: 2.0, tolerance_pct: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SphereConfig {
    pub radius: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub alpha: f64,
    pub times: Vec<f64>,
    pub levels: Vec<u32>,
    pub samples: usize,
    pub span: f64,
    pub n_max: usize,
    pub gate_pct: f64,
    pub sweep: SweepConfig,
}

impl Default for SphereConfig {
    fn default() -> Self {
        Self {
            radius: 0.1,
            k: 0.05,
            alpha: 0.05,
            times: vec![2.0, 5.0],
            levels: vec![2, 3, 4],
            samples: 101,
            span: 2.5,
            n_max: 10,
            gate_pct: 2.0,
            sweep: SweepConfig::default(),
        }
    }
}

fn max_rel(got: &[f64], want: &[f64]) -> f64 {
    got.iter().zip(want).fold(0.0f64, |m, (g, w)| m.max((g - w).abs() / w.abs()))
}

fn comparison_table(zs: &[f64], faces: &[usize], values: &[Vec<f64>], reference: &[f64]) -> Table {
    let mut cols = vec!["x3".to_string()];
    cols.extend(faces.iter().map(|f| format!("faces_{f}")));
    cols.push("reference".into());
    let mut t = Table::with_columns(cols);
    for (k, z) in zs.iter().enumerate() {
        let mut row = vec![*z];
        row.extend(values.iter().map(|v| v[k]));
        row.push(reference[k]);
        t.push(row);
    }
    t
}

pub fn run(cfg: &SphereConfig, exec: Exec) -> Result<Report> {
    if cfg.levels.is_empty() || cfg.times.is_empty() || cfg.samples < 2 {
        return Err(anyhow!("need at least one level, one time and two samples"));
    }
    let a = cfg.radius;
    let mat = Material::from_diffusivity(cfg.k, cfg.alpha)?;
    let sp = SeriesParams::new(cfg.n_max)?;
    let zs = linspace(-cfg.span * a, cfg.span * a, cfg.samples);
    let pts: Vec<[f64; 3]> = zs.iter().map(|z| [0.0, 0.0, *z]).collect();
    let meshes = cfg.levels.iter().map(|&l| tessellate_sphere(a, l)).collect::<Result<Vec<_>, _>>()?;
    let faces: Vec<usize> = meshes.iter().map(|m| m.num_faces()).collect();

    let mut report = Report::default();
    let mut flagged = 0usize;
    let mut coarse_c0 = Vec::new();
    for &t in &cfg.times {
        let l_ref: Vec<f64> = zs.iter().map(|z| sphere_l(a, z.abs(), t, &mat)).collect();
        let c_ref: Vec<f64> = zs.iter().map(|z| sphere_c(a, z.abs(), t, (0.0, t), &mat, 0)).collect();
        let mut l_vals = Vec::new();
        let mut c_vals = Vec::new();
        for mesh in &meshes {
            let l = spatial_l_sweep(mesh, &pts, t, &mat, &sp, exec);
            let c = c_nf_sweep(mesh, &pts, t, (0.0, t), 0, &mat, &sp, exec)?;
            flagged += l.iter().chain(&c).filter(|e| e.flags != Default::default()).count();
            l_vals.push(l.iter().map(|e| e.value).collect::<Vec<_>>());
            c_vals.push(c.iter().map(|e| e.value).collect::<Vec<_>>());
        }
        let l_err: Vec<f64> = l_vals.iter().map(|v| max_rel(v, &l_ref)).collect();
        let c_err: Vec<f64> = c_vals.iter().map(|v| max_rel(v, &c_ref)).collect();
        report.tables.push((format!("sphere_l_t{t}"), comparison_table(&zs, &faces, &l_vals, &l_ref)));
        report.tables.push((format!("sphere_c0_t{t}"), comparison_table(&zs, &faces, &c_vals, &c_ref)));
        report.gates.push(Gate::at_most(
            &format!("l_finest_t{t}"),
            100.0 * l_err[l_err.len() - 1],
            cfg.gate_pct,
            "spatial L max relative error at the finest mesh (%)",
        ));
        report.gates.push(Gate::at_most(
            &format!("c0_finest_t{t}"),
            100.0 * c_err[c_err.len() - 1],
            cfg.gate_pct,
            "time tensor C0 (window [0, t]) max relative error at the finest mesh (%)",
        ));
        report.metric(&format!("l_max_rel_error_t{t}"), &l_err);
        report.metric(&format!("c0_max_rel_error_t{t}"), &c_err);
        // the ordering is about absolute differences, which accumulate as C0 grows
        coarse_c0.push(c_vals[0].iter().zip(&c_ref).fold(0.0f64, |m, (g, w)| m.max((g - w).abs())));
    }
    if coarse_c0.len() > 1 {
        let (first, last) = (coarse_c0[0], coarse_c0[coarse_c0.len() - 1]);
        report.gates.push(Gate::flag(
            "coarse_error_grows_with_time",
            last > first,
            format!("coarsest-mesh max |C0 - ref| {last:e} at the last time vs {first:e} at the first"),
        ));
    }
    report.metric("faces", &faces);
    report.metric("flagged_evaluations", flagged);

    sweep(cfg, &mat, exec, &mut report)?;
    Ok(report)
}

fn sweep(cfg: &SphereConfig, mat: &Material, exec: Exec, report: &mut Report) -> Result<()> {
    let s = &cfg.sweep;
    if s.n_max.is_empty() || s.samples < 2 {
        return Ok(());
    }
    let a = cfg.radius;
    let mesh = tessellate_sphere(a, s.level)?;
    let zs = linspace(0.0, s.span * a, s.samples);
    let pts: Vec<[f64; 3]> = zs.iter().map(|z| [0.0, 0.0, *z]).collect();
    let reference: Vec<f64> = zs.iter().map(|z| sphere_l(a, *z, s.tau, mat)).collect();
    let mut cols = vec!["x3".to_string()];
    cols.extend(s.n_max.iter().map(|n| format!("n_max_{n}")));
    cols.push("reference".into());
    let mut errs = Vec::new();
    let mut vals = Vec::new();
    for &n in &s.n_max {
        let v: Vec<f64> = spatial_l_sweep(&mesh, &pts, s.tau, mat, &SeriesParams::new(n)?, exec).iter().map(|e| e.value).collect();
        errs.push(v.iter().zip(&reference).map(|(g, w)| (g - w).abs() / w.abs()).collect::<Vec<_>>());
        vals.push(v);
    }
    let mut t = Table::with_columns(cols);
    for (k, z) in zs.iter().enumerate() {
        let mut row = vec![*z];
        row.extend(vals.iter().map(|v| v[k]));
        row.push(reference[k]);
        t.push(row);
    }
    report.tables.push(("nmax_sweep".into(), t));

    // breakdown radius: first |x₃| whose error exceeds the tolerance
    let tol = s.tolerance_pct / 100.0;
    let breakdown: Vec<Option<f64>> = errs.iter().map(|e| e.iter().position(|v| *v > tol).map(|k| zs[k])).collect();
    let radius = |b: &Option<f64>| b.unwrap_or(f64::INFINITY);
    let ordered = breakdown.windows(2).all(|w| radius(&w[0]) <= radius(&w[1]));
    report.gates.push(Gate::flag(
        "breakdown_radius_ordering",
        ordered,
        format!("breakdown radii (m) for n_max {:?}: {:?}", s.n_max, breakdown),
    ));
    let max_err = |n: usize, lo: f64, hi: f64| {
        let j = s.n_max.iter().position(|m| *m == n)?;
        Some(zs.iter().zip(&errs[j]).filter(|(z, _)| **z >= lo && **z <= hi).fold(0.0f64, |m, (_, e)| m.max(*e)))
    };
    if let Some(e) = max_err(10, 0.0, 10.0 * a) {
        report.gates.push(Gate::at_most("n_max_10_within_10a", 100.0 * e, 1.0, "max error for |x3| <= 10a (%)"));
    }
    if let Some(e) = max_err(6, 0.0, 5.0 * a) {
        report.gates.push(Gate::at_most("n_max_6_within_5a", 100.0 * e, 1.0, "max error for |x3| <= 5a (%)"));
    }
    if let Some(e) = max_err(2, 3.5 * a * (1.0 + 1e-12), f64::INFINITY) {
        report.gates.push(Gate::above("n_max_2_beyond_3.5a", 100.0 * e, 5.0, "max error for |x3| > 3.5a (%)"));
    }
    report.metric("sweep_faces", mesh.num_faces());
    report.metric("sweep_breakdown_radius", &breakdown);
    Ok(())
}
