//! Reference solvers used to check the production solvers.
//!
//! Nothing here shares code with the ADMM path beyond the weight container.
//! The routines favour simplicity over speed and are meant for `p ≤ 20`.

use nalgebra::DMatrix;

use crate::admm::{soft_threshold, WeightMatrix};
use crate::error::{Error, Result};
use crate::linalg::DataMatrix;

pub const MAX_SWEEPS: usize = 100_000;
/// A sweep that lowers the objective by less than this (and moves no
/// coordinate by more than [`STEP_TOL`]) ends the descent.
pub const OBJECTIVE_TOL: f64 = 1e-10;
pub const STEP_TOL: f64 = 1e-10;

/// Cyclic coordinate descent on the same nodewise objective as
/// [`crate::admm::admm_weighted_lasso`], loss scaled by the data's own `n`.
pub fn coordinate_descent_oracle(x: &DataMatrix, lambda: f64, weights: &WeightMatrix) -> Result<DMatrix<f64>> {
    coordinate_descent_oracle_scaled(x, lambda, weights, x.nrows() as f64)
}

pub fn coordinate_descent_oracle_scaled(
    x: &DataMatrix,
    lambda: f64,
    weights: &WeightMatrix,
    n_loss: f64,
) -> Result<DMatrix<f64>> {
    let xv = x.values();
    let p = xv.ncols();
    if weights.dim() != p {
        return Err(Error::Dimension("weights do not match data".into()));
    }
    let gram = xv.tr_mul(xv) / n_loss;
    let mut theta = DMatrix::zeros(p, p);
    for j in 0..p {
        let active: Vec<usize> = (0..p).filter(|&l| weights.is_free(l, j)).collect();
        let mut coef = vec![0.0; p];
        // fitted[l] = Σ_m gram[l, m] · coef[m]
        let mut fitted = vec![0.0; p];
        let node_objective = |coef: &[f64], fitted: &[f64]| {
            let mut quad = 0.0;
            let mut lin = 0.0;
            let mut pen = 0.0;
            for &l in &active {
                quad += coef[l] * fitted[l];
                lin += gram[(l, j)] * coef[l];
                pen += weights.tau(l, j) * coef[l].abs();
            }
            0.5 * gram[(j, j)] - lin + 0.5 * quad + lambda * pen
        };
        let mut obj = node_objective(&coef, &fitted);
        let mut sweeps = 0;
        loop {
            if sweeps == MAX_SWEEPS {
                return Err(Error::NotConverged { iterations: sweeps });
            }
            sweeps += 1;
            let mut max_step = 0.0f64;
            for &l in &active {
                let curv = gram[(l, l)];
                if curv <= 0.0 {
                    continue;
                }
                let partial = gram[(l, j)] - fitted[l] + curv * coef[l];
                let new = soft_threshold(partial, lambda * weights.tau(l, j)) / curv;
                let delta = new - coef[l];
                if delta != 0.0 {
                    for m in 0..p {
                        fitted[m] += gram[(m, l)] * delta;
                    }
                    coef[l] = new;
                    max_step = max_step.max(delta.abs());
                }
            }
            let next = node_objective(&coef, &fitted);
            let decrease = obj - next;
            obj = next;
            if decrease < OBJECTIVE_TOL && max_step < STEP_TOL {
                break;
            }
        }
        for &l in &active {
            theta[(l, j)] = coef[l];
        }
    }
    Ok(theta)
}
