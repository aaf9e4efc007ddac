//! `cuboid-maps`: series and Fourier-grid maps of the cuboid tensors on the
//! x₂–x₃ plane, their difference, and the face-jump report.

use std::f64::consts::PI;

use anyhow::{anyhow, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use eshelby::geometry::{make_cuboid, Material, Polyhedron};
use eshelby::kernels_harmonic::{phi_tps, HarmonicParams};
use eshelby::kernels_transient::{c_nf, grad_c_nf, higher_derivs_c, spatial_l_tps, HigherDerivs, SeriesParams};
use eshelby::oracle::{fft_cuboid_maps, jump_measure, GridSpec};
use eshelby::Exec;

use crate::output::{Gate, Report, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n: usize,
    pub min_extent: f64,
    pub oversample: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n: 128, min_extent: 2.0, oversample: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CuboidConfig {
    pub side: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub alpha: f64,
    pub times: Vec<f64>,
    /// Time at which the series and Fourier maps are gated and the jumps measured.
    pub compare_time: f64,
    pub grid: GridConfig,
    /// Half-width of the square plot window on the x₂–x₃ plane (m).
    pub window: f64,
    pub n_max: usize,
    /// Harmonic series truncation and wave number for the harmonic jump.
    pub harmonic_n_max: usize,
    pub beta: [f64; 2],
    /// Base offset of the two-sided jump samples (m).
    pub jump_offset: f64,
    /// Jump gate (%).
    pub gate_pct: f64,
    /// Series vs Fourier gate (%).
    pub map_gate_pct: f64,
    pub symmetry_tol: f64,
}

impl Default for CuboidConfig {
    fn default() -> Self {
        Self {
            side: 0.2,
            k: 0.05,
            alpha: 0.05,
            times: vec![0.5, 2.0, 5.0],
            compare_time: 2.0,
            grid: GridConfig::default(),
            window: 0.5,
            n_max: 30,
            harmonic_n_max: 40,
            beta: [10.0, 10.0],
            jump_offset: 5e-4,
            gate_pct: 2.0,
            map_gate_pct: 1.0,
            symmetry_tol: 1e-8,
        }
    }
}

/// Series values at one plane point: L, L_3, L_33 at τ = t and L̄, L̄_3, L̄_33 for the window [0, t].
fn series_point(poly: &Polyhedron, x: [f64; 3], t: f64, mat: &Material, sp: &SeriesParams) -> Result<[f64; 6]> {
    let l = spatial_l_tps(poly, x, t, mat, sp, 2).value;
    let c = c_nf(poly, x, t, 0.0, t, 0, mat, sp)?.value;
    let g = grad_c_nf(poly, x, t, 0.0, t, 0, mat, sp)?.value;
    let h = match higher_derivs_c(poly, x, t, 0.0, t, 0, mat, sp, 2)?.value {
        HigherDerivs::Second(m) => m[2][2],
        HigherDerivs::Third(_) => unreachable!("order 2 requested"),
    };
    Ok([l.value(), l.deriv_axes(&[2]), l.deriv_axes(&[2, 2]), c, g[2], h])
}

/// Distance from (x₂, x₃) to the boundary of the square cross-section.
fn face_distance(x2: f64, x3: f64, half: f64) -> f64 {
    let (a, b) = (x2.abs() - half, x3.abs() - half);
    if a <= 0.0 && b <= 0.0 {
        (-a).min(-b)
    } else {
        (a.max(0.0).powi(2) + b.max(0.0).powi(2)).sqrt()
    }
}

pub fn run(cfg: &CuboidConfig, exec: Exec) -> Result<Report> {
    if cfg.times.is_empty() || !cfg.times.contains(&cfg.compare_time) {
        return Err(anyhow!("compare_time {} must be one of the map times", cfg.compare_time));
    }
    let l = cfg.side;
    let mat = Material::from_diffusivity(cfg.k, cfg.alpha)?;
    let sp = SeriesParams::new(cfg.n_max)?;
    let cube = make_cuboid(l, l, l, [0.0; 3])?;
    let mut grid = GridSpec::aligned(cfg.grid.n, cfg.grid.min_extent, l)?;
    grid.oversample = cfg.grid.oversample;
    let coords = grid.coords();
    let n = grid.n;
    let h = grid.h();
    // grid indices inside the plot window; the series is not meant for the far periodic box
    let idx: Vec<usize> = (0..n).filter(|&j| coords[j].abs() <= cfg.window + 1e-12).collect();
    let m = idx.len();
    if m == 0 {
        return Err(anyhow!("plot window {} holds no grid points", cfg.window));
    }
    let plane: Vec<[f64; 3]> = (0..m * m).map(|k| [0.0, coords[idx[k / m]], coords[idx[k % m]]]).collect();

    let mut report = Report::default();
    let mut lbar_max = Vec::new();
    for &t in &cfg.times {
        let series = exec.map(&plane, |x| series_point(&cube, *x, t, &mat, &sp)).into_iter().collect::<Result<Vec<_>>>()?;
        let fft = fft_cuboid_maps(l, t, (0.0, t), &mat, &grid, exec)?;
        let fft_maps = [&fft.lbar, &fft.lbar_3, &fft.lbar_33];
        let mut table = Table::new(&[
            "x2",
            "x3",
            "l_series",
            "l_3_series",
            "l_33_series",
            "lbar_series",
            "lbar_fft",
            "lbar_diff",
            "lbar_3_series",
            "lbar_3_fft",
            "lbar_3_diff",
            "lbar_33_series",
            "lbar_33_fft",
            "lbar_33_diff",
        ]);
        // max|series - fft| and max|fft| over points two cells or more from the faces
        let mut diff = [0.0f64; 3];
        let mut scale = [0.0f64; 3];
        for (k, x) in plane.iter().enumerate() {
            let s = series[k];
            let (iu, iv) = (idx[k / m], idx[k % m]);
            let f: Vec<f64> = fft_maps.iter().map(|fm| fm.at(iu, iv)).collect();
            let mut row = vec![x[1], x[2], s[0], s[1], s[2]];
            for d in 0..3 {
                row.extend([s[3 + d], f[d], s[3 + d] - f[d]]);
                if face_distance(x[1], x[2], 0.5 * l) >= 2.0 * h {
                    diff[d] = diff[d].max((s[3 + d] - f[d]).abs());
                    scale[d] = scale[d].max(f[d].abs());
                }
            }
            table.push(row);
        }
        report.tables.push((format!("cuboid_t{t}"), table));
        let names = ["lbar", "lbar_3", "lbar_33"];
        let agreement: Vec<f64> = (0..3).map(|d| diff[d] / scale[d]).collect();
        if t == cfg.compare_time {
            for d in 0..3 {
                report.gates.push(Gate::at_most(
                    &format!("map_agreement_{}", names[d]),
                    100.0 * agreement[d],
                    cfg.map_gate_pct,
                    format!("max|series - fft| / max|fft| at t = {t} s, two cells or more from the faces (%)"),
                ));
            }
            // spatial L map is centro-symmetric (the window is symmetric about index n/2)
            let mut asym = 0.0f64;
            let mut lmax = 0.0f64;
            let mirror = |j: usize| idx.iter().position(|&i| i == n - idx[j]);
            for ju in 0..m {
                for jv in 0..m {
                    let (Some(mu), Some(mv)) = (mirror(ju), mirror(jv)) else { continue };
                    let a = series[ju * m + jv][0];
                    let b = series[mu * m + mv][0];
                    asym = asym.max((a - b).abs());
                    lmax = lmax.max(a.abs());
                }
            }
            report.gates.push(Gate::at_most(
                "l_centro_symmetry",
                asym / lmax,
                cfg.symmetry_tol,
                "max |L(x) - L(-x)| / max|L| on the series map",
            ));
        }
        report.metric(&format!("map_agreement_t{t}"), &agreement);
        report.metric(&format!("fft_outer_energy_fraction_t{t}"), fft.outer_energy_fraction);
        lbar_max.push(series.iter().fold(0.0f64, |m, s| m.max(s[3].abs())));
    }
    report.gates.push(Gate::flag(
        "lbar_grows_with_time",
        lbar_max.windows(2).all(|w| w[1] > w[0]),
        format!("max lbar per map time {:?}", lbar_max),
    ));
    report.metric("grid", grid);
    report.metric("lbar_max", &lbar_max);

    jumps(cfg, &cube, &mat, &sp, &mut report)?;
    Ok(report)
}

/// Jumps of the second normal derivatives across the top face, outside minus inside.
fn jumps(cfg: &CuboidConfig, cube: &Polyhedron, mat: &Material, sp: &SeriesParams, report: &mut Report) -> Result<()> {
    let t = cfg.compare_time;
    let face = [0.0, 0.0, 0.5 * cfg.side];
    let normal = [0.0, 0.0, 1.0];
    let inv_k = 1.0 / cfg.k;
    let lbar_33 = |x: [f64; 3]| match higher_derivs_c(cube, x, t, 0.0, t, 0, mat, sp, 2).map(|e| e.value) {
        Ok(HigherDerivs::Second(m)) => m[2][2],
        _ => f64::NAN,
    };
    let l_33 = |x: [f64; 3]| spatial_l_tps(cube, x, t, mat, sp, 2).value.deriv_axes(&[2, 2]);
    let hp = HarmonicParams::new(Complex64::new(cfg.beta[0], cfg.beta[1]))?;
    let hsp = SeriesParams::new(cfg.harmonic_n_max)?;
    let harm = |x: [f64; 3]| phi_tps(cube, x, &hp, &hsp, 2).map(|p| p.phi.deriv([0, 0, 2]).re / (4.0 * PI * cfg.k)).unwrap_or(f64::NAN);

    let jt = jump_measure(lbar_33, face, normal, cfg.jump_offset)?;
    let js = jump_measure(l_33, face, normal, cfg.jump_offset)?;
    let jh = jump_measure(harm, face, normal, cfg.jump_offset)?;
    report.gates.push(Gate::at_most(
        "jump_lbar_33",
        100.0 * (jt.jump - inv_k).abs() / inv_k,
        cfg.gate_pct,
        format!("time tensor jump {} against 1/K = {inv_k} (%)", jt.jump),
    ));
    report.gates.push(Gate::at_most("jump_l_33", js.jump.abs(), 1e-3 * inv_k, "spatial tensor jump against 0, limit 1e-3/K"));
    report.gates.push(Gate::at_most(
        "jump_harmonic_33",
        100.0 * (jh.jump - inv_k).abs() / inv_k,
        cfg.gate_pct,
        format!("harmonic Re L^H_33 jump {} against 1/K (%)", jh.jump),
    ));
    report.metric(
        "jumps",
        serde_json::json!({
            "lbar_33": {"jump": jt.jump, "samples": jt.samples, "reliable": jt.reliable},
            "l_33": {"jump": js.jump, "samples": js.samples, "reliable": js.reliable},
            "harmonic_33": {"jump": jh.jump, "samples": jh.samples, "reliable": jh.reliable},
        }),
    );
    Ok(())
}
