//! Command implementations behind the `eshelby` binary. Each command returns
//! a [`output::Report`] (tables, gates, metrics); the binary writes it out and
//! maps the gates to the exit status.

// `!(x > 0.0)` guards are deliberate: they reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cuboid;
pub mod eim_cmd;
pub mod helmholtz;
pub mod output;
pub mod sphere;

/// Caps the rayon global pool at `ESHELBY_THREADS` when set.
pub fn init_thread_pool() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("ESHELBY_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| anyhow::anyhow!("ESHELBY_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            anyhow::bail!("ESHELBY_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}
