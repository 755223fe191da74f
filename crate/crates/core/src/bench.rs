//! Per-iteration wall time of the nodewise ADMM and the graphical-lasso ADMM.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::admm::{AdmmConfig, NodewiseLasso, WeightMatrix};
use crate::error::{Error, Result};
use crate::jgl::{sample_cov, GraphicalLasso};
use crate::linalg::center_scale;
use crate::sim::{simulate, SimulationSpec};

/// Common-edge fraction of the simulated data; iteration cost does not depend on it.
pub const BENCH_EDGE_FRACTION: f64 = 5e-3;
pub const BENCH_LAMBDA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub warmup: usize,
    pub min_iters: usize,
    /// Keep iterating past `min_iters` until this much time has been measured.
    pub min_seconds: f64,
    pub step_size: f64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            warmup: 2,
            min_iters: 5,
            min_seconds: 0.2,
            step_size: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub p: usize,
    pub n: usize,
    pub sns_iter_seconds: f64,
    pub jgl_iter_seconds: f64,
    pub sns_iters: usize,
    pub jgl_iters: usize,
}

fn time_steps<F>(opts: &BenchOptions, mut step: F) -> Result<(f64, usize)>
where
    F: FnMut() -> Result<()>,
{
    for _ in 0..opts.warmup {
        step()?;
    }
    let start = Instant::now();
    let mut iters = 0;
    loop {
        step()?;
        iters += 1;
        let elapsed = start.elapsed().as_secs_f64();
        if iters >= opts.min_iters && elapsed >= opts.min_seconds {
            return Ok((elapsed / iters as f64, iters));
        }
    }
}

/// Times single iterations of both solvers on the first subpopulation of a
/// simulated `(p, n, K)` scenario, on one worker thread. Setup (factorizations,
/// sample covariance) is excluded.
pub fn bench_iteration(p: usize, n: usize, k: usize, seed: u64, opts: &BenchOptions) -> Result<BenchRecord> {
    if opts.min_iters == 0 {
        return Err(Error::Dimension("need at least one timed iteration".into()));
    }
    let spec = SimulationSpec {
        p,
        k,
        n,
        s: BENCH_EDGE_FRACTION,
        rho: 0.0,
        seed,
    };
    let scenario = simulate(&spec)?;
    let x = center_scale(&scenario.data[0])?;
    let config = AdmmConfig {
        step_size: opts.step_size,
        ..AdmmConfig::default()
    };
    let weights = WeightMatrix::uniform(p);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    pool.install(|| {
        let lasso = NodewiseLasso::new(&x, &weights, &config)?;
        let mut run = lasso.start(BENCH_LAMBDA)?;
        let (sns, sns_iters) = time_steps(opts, || run.step().map(drop))?;

        let glasso = GraphicalLasso::new(&sample_cov(&x), &weights, &config)?;
        let mut run = glasso.start(BENCH_LAMBDA)?;
        let (jgl, jgl_iters) = time_steps(opts, || run.step().map(drop))?;
        Ok(BenchRecord {
            p,
            n,
            sns_iter_seconds: sns,
            jgl_iter_seconds: jgl,
            sns_iters,
            jgl_iters,
        })
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Dimension("need at least two (x, y) pairs".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::NonFiniteInput("log-log fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Dimension("all x values are equal".into()));
    }
    Ok(sxy / sxx)
}
