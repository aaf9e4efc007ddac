//! `verify-helmholtz`: Helmholtz potential A⁰ and ∂₃A⁰ of tessellated spheres
//! along the x₃ axis against the exact-ball quadrature reference.

use std::f64::consts::PI;

use anyhow::{anyhow, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use eshelby::geometry::tessellate_sphere;
use eshelby::kernels_harmonic::{a_n, grad_a_n, HarmonicParams};
use eshelby::kernels_transient::SeriesParams;
use eshelby::oracle::ball_helmholtz;
use eshelby::Exec;

use crate::output::{linspace, Gate, Report, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HelmholtzConfig {
    /// Sphere radius (m).
    pub radius: f64,
    /// Complex wave number [Re, Im] (1/m).
    pub beta: [f64; 2],
    /// Icosphere refinement levels, coarsest first.
    pub levels: Vec<u32>,
    pub samples: usize,
    /// Half-length of the sample line in radii.
    pub span: f64,
    pub n_max: usize,
    /// Gate on the finest-mesh relative error (%).
    pub gate_pct: f64,
    /// Gate on the β = 0 Newtonian limit at the finest mesh (%).
    pub limit_gate_pct: f64,
    pub reference_tol: f64,
}

impl Default for HelmholtzConfig {
    fn default() -> Self {
        Self {
            radius: 0.1,
            beta: [10.0, 10.0],
            levels: vec![3, 4, 5],
            samples: 101,
            span: 2.5,
            n_max: 40,
            gate_pct: 3.0,
            limit_gate_pct: 0.1,
            reference_tol: 1e-10,
        }
    }
}

pub fn run(cfg: &HelmholtzConfig, exec: Exec) -> Result<Report> {
    if cfg.levels.is_empty() || cfg.samples < 2 || !(cfg.radius > 0.0) {
        return Err(anyhow!("need at least one level, two samples and a positive radius"));
    }
    let a = cfg.radius;
    let beta = Complex64::new(cfg.beta[0], cfg.beta[1]);
    let hp = HarmonicParams::new(beta)?;
    let sp = SeriesParams::new(cfg.n_max)?;
    let zs = linspace(-cfg.span * a, cfg.span * a, cfg.samples);

    let reference: Vec<(Complex64, Complex64)> = exec
        .map(&zs, |&z| ball_helmholtz(a, z.abs(), beta, cfg.reference_tol).map(|(v, g)| (v, g * z.signum())))
        .into_iter()
        .collect::<Result<_, _>>()?;

    let mut meshes = Vec::new();
    let mut values = Vec::new();
    for &level in &cfg.levels {
        let mesh = tessellate_sphere(a, level)?;
        let vals: Vec<(Complex64, Complex64)> = exec
            .map(&zs, |&z| {
                let x = [0.0, 0.0, z];
                Ok::<_, anyhow::Error>((a_n(&mesh, x, &hp, 0, &sp)?, grad_a_n(&mesh, x, &hp, 0, &sp)?[2]))
            })
            .into_iter()
            .collect::<Result<_, _>>()?;
        values.push(vals);
        meshes.push(mesh);
    }

    let mut report = Report::default();
    let faces: Vec<usize> = meshes.iter().map(|m| m.num_faces()).collect();
    let mut cols = vec!["x3".to_string()];
    cols.extend(faces.iter().map(|f| format!("faces_{f}")));
    cols.push("reference".into());
    type Part = (&'static str, fn(&(Complex64, Complex64)) -> f64);
    let parts: [Part; 4] = [
        ("helmholtz_phi_re", |v| v.0.re),
        ("helmholtz_phi_im", |v| v.0.im),
        ("helmholtz_phi_3_re", |v| v.1.re),
        ("helmholtz_phi_3_im", |v| v.1.im),
    ];
    for (name, pick) in parts {
        let mut t = Table::with_columns(cols.clone());
        for (k, z) in zs.iter().enumerate() {
            let mut row = vec![*z];
            row.extend(values.iter().map(|v| pick(&v[k])));
            row.push(pick(&reference[k]));
            t.push(row);
        }
        report.tables.push((name.into(), t));
    }

    // Φ is pointwise relative; ∂₃Φ vanishes at the centre, so it is scaled by its maximum
    let ref_max_g = reference.iter().fold(0.0f64, |m, r| m.max(r.1.norm()));
    let errs: Vec<(f64, f64)> = values
        .iter()
        .map(|v| {
            v.iter().zip(&reference).fold((0.0f64, 0.0f64), |(e0, e1), (got, r)| {
                (e0.max((got.0 - r.0).norm() / r.0.norm()), e1.max((got.1 - r.1).norm() / ref_max_g))
            })
        })
        .collect();
    let (fine, coarse) = (errs[errs.len() - 1], errs[0]);
    report.gates.push(Gate::at_most("phi_finest", 100.0 * fine.0, cfg.gate_pct, "max |A0 - ref| / |ref| at the finest mesh (%)"));
    report.gates.push(Gate::at_most("phi_3_finest", 100.0 * fine.1, cfg.gate_pct, "max |dA0/dx3 - ref| / max|ref| at the finest mesh (%)"));
    if errs.len() > 1 {
        report.gates.push(Gate::flag(
            "refinement_reduces_error",
            coarse.0 > fine.0 && coarse.1 > fine.1,
            format!("coarsest {:?} vs finest {:?}", coarse, fine),
        ));
    }

    // β → 0: Newtonian potential 2π(a² - x²/3) inside the ball
    let zero = HarmonicParams::new(Complex64::new(0.0, 0.0))?;
    let finest = meshes.last().expect("levels checked non-empty");
    let inner: Vec<f64> = zs.iter().copied().filter(|z| z.abs() <= a).collect();
    let limit_err = exec
        .map(&inner, |&z| {
            let got = a_n(finest, [0.0, 0.0, z], &zero, 0, &sp)?;
            let want = 2.0 * PI * (a * a - z * z / 3.0);
            Ok::<_, anyhow::Error>((got - want).norm() / want)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0f64, f64::max);
    report.gates.push(Gate::at_most(
        "newtonian_limit",
        100.0 * limit_err,
        cfg.limit_gate_pct,
        "beta = 0 A0 against 2 pi (a^2 - x^2/3) inside the ball at the finest mesh (%)",
    ));

    report.metric("beta", cfg.beta);
    report.metric("radius", a);
    report.metric("faces", &faces);
    report.metric("phi_max_rel_error", errs.iter().map(|e| e.0).collect::<Vec<_>>());
    report.metric("phi_3_max_scaled_error", errs.iter().map(|e| e.1).collect::<Vec<_>>());
    report.metric("newtonian_limit_rel_error", limit_err);
    Ok(report)
}
