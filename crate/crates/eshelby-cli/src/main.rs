//! `eshelby`: reproduces the verification studies and runs the EIM solver.
//!
//! Every command writes CSV tables with JSON sidecars and a `summary.json`
//! into `--out`, and exits non-zero when any gate fails.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use eshelby::Exec;
use eshelby_cli::output::{load_config, write_report, Report};
use eshelby_cli::{cuboid, eim_cmd, helmholtz, init_thread_pool, sphere};

#[derive(Parser)]
#[command(name = "eshelby", version, about = "Generalized Eshelby tensors: verification studies and EIM solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config; built-in defaults when omitted. Unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Override the series truncation n_max.
    #[arg(long)]
    n_max: Option<usize>,
    /// Override the main gate, in percent.
    #[arg(long)]
    gate: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Helmholtz potential of tessellated spheres against exact-ball quadrature.
    VerifyHelmholtz(Common),
    /// Sphere spatial and time tensors against the closed forms, with an n_max sweep.
    VerifySphere(Common),
    /// Series and Fourier-grid cuboid maps, their difference and the jump report.
    CuboidMaps(Common),
    /// Equivalent inclusion method for the sphere-in-slab block.
    Eim(Common),
}

fn finish<C: Serialize>(name: &str, common: &Common, cfg: &C, report: Report) -> Result<bool> {
    write_report(&common.out, name, cfg, &report)?;
    for g in &report.gates {
        let status = if g.pass { "PASS" } else { "FAIL" };
        println!("{status} {:<36} value {:.6e} limit {:.6e}  {}", g.name, g.value, g.limit, g.detail);
    }
    Ok(report.passed())
}

fn run(cli: Cli) -> Result<bool> {
    let exec = Exec::Parallel;
    match cli.command {
        Command::VerifyHelmholtz(c) => {
            let mut cfg: helmholtz::HelmholtzConfig = load_config(c.config.as_deref())?;
            if let Some(n) = c.n_max {
                cfg.n_max = n;
            }
            if let Some(g) = c.gate {
                cfg.gate_pct = g;
            }
            let r = helmholtz::run(&cfg, exec)?;
            finish("verify-helmholtz", &c, &cfg, r)
        }
        Command::VerifySphere(c) => {
            let mut cfg: sphere::SphereConfig = load_config(c.config.as_deref())?;
            if let Some(n) = c.n_max {
                cfg.n_max = n;
            }
            if let Some(g) = c.gate {
                cfg.gate_pct = g;
            }
            let r = sphere::run(&cfg, exec)?;
            finish("verify-sphere", &c, &cfg, r)
        }
        Command::CuboidMaps(c) => {
            let mut cfg: cuboid::CuboidConfig = load_config(c.config.as_deref())?;
            if let Some(n) = c.n_max {
                cfg.n_max = n;
            }
            if let Some(g) = c.gate {
                cfg.gate_pct = g;
            }
            let r = cuboid::run(&cfg, exec)?;
            finish("cuboid-maps", &c, &cfg, r)
        }
        Command::Eim(c) => {
            let mut cfg = eim_cmd::EimRun::load(c.config.as_deref())?;
            if c.n_max.is_some() {
                log::warn!("--n-max has no effect on the sphere EIM (closed-form tensors)");
            }
            if let Some(g) = c.gate {
                cfg.far_field_pct = g;
            }
            let r = eim_cmd::run(&cfg, exec)?;
            finish("eim", &c, &cfg, r)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = init_thread_pool() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
