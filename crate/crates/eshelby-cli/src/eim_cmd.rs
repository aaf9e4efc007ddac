//! `eim`: the sphere-in-slab problem solved with uniform, linear and
//! quadratic eigen-fields, centreline profiles and property gates.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use eshelby::eim::{
    disturbance, interior_residual, max_undisturbed, slab_undisturbed, solve_history, total_field, EimConfig, InhomogeneityProblem, Order,
    TopBc,
};
use eshelby::kernels_transient::{EigenCoeffs, TimeGrid};
use eshelby::Exec;

use crate::output::{Gate, Report, Table};

/// The block configuration shipped with the tool.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/eim_block.json");

/// Config plus the gate settings that come from the command line.
#[derive(Debug, Clone, Serialize)]
pub struct EimRun {
    pub problem: EimConfig,
    /// Far-field disturbance limit, % of max|u⁰| on the centreline.
    pub far_field_pct: f64,
    /// Tolerance on the steady gradient ratio (%).
    pub steady_pct: f64,
}

impl EimRun {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
            None => DEFAULT_CONFIG.to_string(),
        };
        let problem: EimConfig = serde_json::from_str(&text).context("parsing EIM config")?;
        Ok(Self { problem, far_field_pct: 1.0, steady_pct: 1.0 })
    }
}

fn order_name(o: Order) -> &'static str {
    match o {
        Order::Uniform => "uniform",
        Order::Linear => "linear",
        Order::Quadratic => "quadratic",
    }
}

/// Constitutive mismatch just inside the interface: the equivalent flux
/// -K⁰(∇u - u*) against the inhomogeneity's own -K^I ∇u, normal components at
/// the poles and at the x₁ equator points, as a fraction of the largest
/// centreline |q₃|. The equivalence is imposed only at the centre, so this
/// grows with the distance the polynomial eigen-fields have to carry it.
fn interface_mismatch(p: &InhomogeneityProblem, coeffs: &[EigenCoeffs], t: f64, q_scale: f64) -> Result<f64> {
    let c = p.center;
    let h = p.radius / 100.0;
    let mut worst = 0.0f64;
    for (axis, s) in [(2, -1.0), (2, 1.0), (0, -1.0), (0, 1.0)] {
        let at = |r: f64| {
            let mut x = c;
            x[axis] += s * r;
            x
        };
        let r = p.radius - 2.0 * h;
        let (_, q) = total_field(p, coeffs, at(r), t)?;
        let du_dn = (total_field(p, coeffs, at(r + h), t)?.0 - total_field(p, coeffs, at(r - h), t)?.0) / (2.0 * h);
        let own = -p.inhomogeneity.k * du_dn;
        worst = worst.max((s * q[axis] - own).abs() / q_scale);
    }
    Ok(worst)
}

/// Interior gradient over the far-field gradient after a long constant-BC run
/// with uniform eigen-fields.
fn steady_ratio(base: &InhomogeneityProblem, exec: Exec) -> Result<(f64, f64)> {
    let mut p = *base;
    p.slab.top = TopBc::Const { value: 10.0 };
    p.slab.bottom = 0.0;
    p.order = Order::Uniform;
    // about 1.25 diffusion times across the slab
    let t_end = 1.25 * p.slab.thickness.powi(2) / p.matrix.alpha;
    p.grid = TimeGrid::new(0.0, t_end / 200.0, 200)?;
    let sol = solve_history(&p, exec)?;
    let t = p.grid.end();
    let (_, q) = total_field(&p, &sol.coeffs, p.center, t)?;
    let grad_in = q[2] / -p.inhomogeneity.k;
    let far = slab_undisturbed(&p.slab, p.center[2], t)?.dx[0];
    let (k0, ki) = (p.matrix.k, p.inhomogeneity.k);
    Ok((grad_in / far, 3.0 * k0 / (ki + 2.0 * k0)))
}

pub fn run(cfg: &EimRun, exec: Exec) -> Result<Report> {
    let base = cfg.problem.problem()?;
    let pts = cfg.problem.observation_points();
    let times = &cfg.problem.observation.times;
    let mut report = Report::default();

    let mut solutions = Vec::new();
    for order in Order::all() {
        let mut p = base;
        p.order = order;
        let sol = solve_history(&p, exec)?;
        report.metric(&format!("max_condition_{}", order_name(order)), sol.max_condition);
        solutions.push((p, sol.coeffs));
    }
    let matching = base.matrix == base.inhomogeneity;

    let mut residual_ok = true;
    let mut residuals = Vec::new();
    let mut mismatch = vec![0.0f64; 3];
    let mut far_worst = vec![0.0f64; 3];
    let mut max_du = 0.0f64;
    for &t in times {
        let mut cols = vec!["x3".to_string(), "u0".into(), "q3_0".into()];
        for o in Order::all() {
            let n = order_name(o);
            cols.extend([format!("u_{n}"), format!("q3_{n}"), format!("du_{n}")]);
        }
        let mut table = Table::with_columns(cols);
        let rows: Vec<Vec<f64>> = exec
            .map(&pts, |x| {
                let u0 = slab_undisturbed(&base.slab, x[2], t)?;
                let mut row = vec![x[2], u0.u, -base.matrix.k * u0.dx[0]];
                for (p, coeffs) in &solutions {
                    let (u, q) = total_field(p, coeffs, *x, t)?;
                    row.extend([u, q[2], disturbance(p, coeffs, *x, t).0]);
                }
                Ok::<_, anyhow::Error>(row)
            })
            .into_iter()
            .collect::<Result<_>>()?;
        let q_scale = rows.iter().flat_map(|r| [r[4], r[7], r[10]]).fold(0.0f64, |m, v| m.max(v.abs()));
        for r in &rows {
            max_du = max_du.max(r[5].abs()).max(r[8].abs()).max(r[11].abs());
        }
        for row in rows {
            table.push(row);
        }
        report.tables.push((format!("eim_t{t}"), table));

        let u_scale = max_undisturbed(&base, t)?;
        let mut res_t = Vec::new();
        for (j, (p, coeffs)) in solutions.iter().enumerate() {
            res_t.push(interior_residual(p, coeffs, t)?);
            if q_scale > 0.0 {
                mismatch[j] = mismatch[j].max(interface_mismatch(p, coeffs, t, q_scale)?);
            }
            let c = p.center;
            for s in [-1.0, 1.0] {
                for axis in [0, 2] {
                    let mut x = c;
                    x[axis] += s * 5.0 * p.radius;
                    if x[2] <= 0.0 || x[2] >= p.slab.thickness {
                        continue;
                    }
                    let du = disturbance(p, coeffs, x, t).0.abs();
                    if u_scale > 0.0 {
                        far_worst[j] = far_worst[j].max(du / u_scale);
                    }
                }
            }
        }
        if !matching {
            residual_ok &= res_t[0] > res_t[1] && res_t[1] > res_t[2];
        }
        residuals.push(res_t);
    }

    if matching {
        report.gates.push(Gate::flag("matching_media_zero_disturbance", max_du == 0.0, format!("max |du| over all profiles {max_du:e}")));
    } else {
        report.gates.push(Gate::flag(
            "residual_decreases_with_order",
            residual_ok,
            format!("interior residual (uniform, linear, quadratic) per time {:?}", residuals),
        ));
        report.gates.push(Gate::flag(
            "uniform_largest_interface_mismatch",
            mismatch[0] > mismatch[1] && mismatch[0] > mismatch[2],
            format!("interface constitutive mismatch per order {:?}", mismatch),
        ));
        let (ratio, want) = steady_ratio(&base, exec)?;
        report.gates.push(Gate::at_most(
            "steady_gradient_ratio",
            100.0 * (ratio - want).abs() / want,
            cfg.steady_pct,
            format!("interior/far gradient {ratio} against 3K0/(KI + 2K0) = {want} (%)"),
        ));
        report.metric("steady_gradient_ratio", ratio);
    }
    report.gates.push(Gate::at_most(
        "far_field_disturbance",
        100.0 * far_worst.iter().fold(0.0f64, |m, v| m.max(*v)),
        cfg.far_field_pct,
        "max |du| at 5 radii from the centre over orders and times, % of max|u0| on the centreline",
    ));
    report.metric("interior_residual", &residuals);
    report.metric("interface_mismatch", &mismatch);
    report.metric("far_field_ratio", &far_worst);
    report.metric("max_abs_disturbance", max_du);
    Ok(report)
}
