//! Weighted graphical lasso by ADMM, used as the comparison baseline.
//!
//! Minimizes `tr(SΩ) − log det Ω + λ Σ_{l≠j} q_lj |ω_lj|` per subpopulation
//! with the split `Ω = Z`. The diagonal is not penalized.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{soft_threshold, AdmmConfig, Residuals, WeightMatrix};
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, DataMatrix};
use crate::pipeline::{CoefficientSet, MultiEdgeSet, DEFAULT_LAMBDA_INIT};

/// `S = XᵀX / n`.
pub fn sample_cov(x: &DataMatrix) -> DMatrix<f64> {
    let xv = x.values();
    let s = xv.tr_mul(xv) / xv.nrows() as f64;
    (&s + s.transpose()) * 0.5
}

/// Positive root of `b ω² − μ ω − 1 = 0`.
pub fn eigen_map(mu: f64, b: f64) -> f64 {
    if mu >= 0.0 {
        (mu + (mu * mu + 4.0 * b).sqrt()) / (2.0 * b)
    } else {
        // same root, written without cancellation
        2.0 / ((mu * mu + 4.0 * b).sqrt() - mu)
    }
}

#[derive(Debug, Clone)]
pub struct GlassoState {
    pub omega: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub step_size: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JglReport {
    /// The split iterate `Z`: symmetric, exact zeros off the support.
    pub precision: DMatrix<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
}

impl JglReport {
    pub fn into_result(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
            })
        }
    }
}

fn check_weights(weights: &WeightMatrix, p: usize) -> Result<()> {
    if weights.dim() != p {
        return Err(Error::Dimension(format!("weights are {0}×{0}, covariance is {p}×{p}", weights.dim())));
    }
    for l in 0..p {
        for j in (l + 1)..p {
            let same_kind = weights.is_excluded(l, j) == weights.is_excluded(j, l);
            if !same_kind || (weights.is_free(l, j) && weights.tau(l, j) != weights.tau(j, l)) {
                return Err(Error::InvalidWeights(format!("weights are not symmetric at ({l}, {j})")));
            }
        }
    }
    Ok(())
}

/// A weighted graphical-lasso problem for one covariance matrix.
#[derive(Debug, Clone)]
pub struct GraphicalLasso {
    cov: DMatrix<f64>,
    weights: WeightMatrix,
    config: AdmmConfig,
}

impl GraphicalLasso {
    pub fn new(cov: &DMatrix<f64>, weights: &WeightMatrix, config: &AdmmConfig) -> Result<Self> {
        let p = cov.nrows();
        if !cov.is_square() || p == 0 {
            return Err(Error::Dimension(format!("covariance is {}×{}", cov.nrows(), cov.ncols())));
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("covariance has a non-finite entry".into()));
        }
        if (cov - cov.transpose()).amax() > 1e-10 * cov.amax().max(1.0) {
            return Err(Error::Dimension("covariance is not symmetric".into()));
        }
        if !(config.step_size > 0.0) {
            return Err(Error::InvalidWeights(format!("step size must be positive, got {}", config.step_size)));
        }
        check_weights(weights, p)?;
        Ok(Self {
            cov: cov.clone(),
            weights: weights.clone(),
            config: *config,
        })
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn start(&self, lambda: f64) -> Result<GlassoRun<'_>> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::NonFiniteInput(format!("lambda must be finite and non-negative, got {lambda}")));
        }
        let p = self.dim();
        Ok(GlassoRun {
            problem: self,
            lambda,
            state: GlassoState {
                omega: DMatrix::identity(p, p),
                z: DMatrix::identity(p, p),
                u: DMatrix::zeros(p, p),
                step_size: self.config.step_size,
                iterations: 0,
            },
        })
    }

    pub fn solve(&self, lambda: f64) -> Result<JglReport> {
        let mut run = self.start(lambda)?;
        let mut last = Residuals {
            primal: f64::INFINITY,
            dual: f64::INFINITY,
            small: false,
        };
        let mut converged = false;
        while run.state.iterations < self.config.max_iter {
            last = run.step()?;
            if last.small {
                converged = true;
                break;
            }
        }
        Ok(JglReport {
            precision: run.state.z,
            iterations: run.state.iterations,
            primal_residual: last.primal,
            dual_residual: last.dual,
            converged,
        })
    }
}

#[derive(Debug, Clone)]
pub struct GlassoRun<'p> {
    problem: &'p GraphicalLasso,
    lambda: f64,
    state: GlassoState,
}

impl GlassoRun<'_> {
    pub fn state(&self) -> &GlassoState {
        &self.state
    }

    /// Eigenvalues of the latest `Ω` iterate, ascending.
    pub fn omega_eigenvalues(&self) -> Result<DVector<f64>> {
        Ok(sym_eigen(&self.state.omega)?.1)
    }

    /// One `(Ω, Z, U)` sweep.
    pub fn step(&mut self) -> Result<Residuals> {
        let prob = self.problem;
        let b = self.state.step_size;
        let p = prob.dim();
        let st = &mut self.state;

        let mut a = (&st.z - &st.u) * b - &prob.cov;
        a = (&a + a.transpose()) * 0.5;
        let (y, mu) = sym_eigen(&a)?;
        let mut scaled = y.clone();
        for (c, &m) in mu.iter().enumerate() {
            scaled.column_mut(c).scale_mut(eigen_map(m, b));
        }
        let omega = scaled * y.transpose();
        st.omega = (&omega + omega.transpose()) * 0.5;

        let mut primal_sq = 0.0;
        let mut dual_sq = 0.0;
        for j in 0..p {
            for l in 0..p {
                let w = st.omega[(l, j)] + st.u[(l, j)];
                let z_new = if l == j {
                    w
                } else if prob.weights.is_excluded(l, j) {
                    0.0
                } else {
                    soft_threshold(w, self.lambda * prob.weights.tau(l, j) / b)
                };
                let dz = z_new - st.z[(l, j)];
                dual_sq += dz * dz;
                let gap = st.omega[(l, j)] - z_new;
                primal_sq += gap * gap;
                st.z[(l, j)] = z_new;
                st.u[(l, j)] += gap;
            }
        }
        st.iterations += 1;
        if st.omega.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite iterate at step {}", st.iterations)));
        }

        let cfg = &prob.config;
        let primal = primal_sq.sqrt();
        let dual = b * dual_sq.sqrt();
        let scale_p = 1f64.max(st.omega.norm()).max(st.z.norm());
        let scale_d = 1f64.max(st.u.norm());
        Ok(Residuals {
            primal,
            dual,
            small: primal <= cfg.tol_primal * scale_p && dual <= cfg.tol_dual * scale_d,
        })
    }
}

/// Fits one weighted graphical lasso from `Z⁰ = I`, `U⁰ = 0` and returns `Z`.
pub fn jgl_fit(cov: &DMatrix<f64>, lambda: f64, weights: &WeightMatrix, config: &AdmmConfig) -> Result<JglReport> {
    GraphicalLasso::new(cov, weights, config)?.solve(lambda)
}

/// Penalized negative log-likelihood `tr(SΩ) − log det Ω + λ Σ_{l≠j} q_lj |ω_lj|`,
/// `+∞` when `Ω` is not positive definite.
pub fn glasso_objective(cov: &DMatrix<f64>, omega: &DMatrix<f64>, lambda: f64, weights: &WeightMatrix) -> f64 {
    let Some(chol) = omega.clone().cholesky() else {
        return f64::INFINITY;
    };
    let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let trace = (cov.component_mul(omega)).sum();
    let p = omega.nrows();
    let mut pen = 0.0;
    for j in 0..p {
        for l in 0..p {
            if l == j {
                continue;
            }
            let w = omega[(l, j)];
            if weights.is_excluded(l, j) {
                if w != 0.0 {
                    return f64::INFINITY;
                }
            } else {
                pen += weights.tau(l, j) * w.abs();
            }
        }
    }
    trace - logdet + lambda * pen
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JglConfig {
    pub lambda_init: f64,
    pub admm: AdmmConfig,
}

impl Default for JglConfig {
    fn default() -> Self {
        Self {
            lambda_init: DEFAULT_LAMBDA_INIT,
            admm: AdmmConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct JglFit {
    pub precisions: Vec<DMatrix<f64>>,
    pub reports: Vec<JglSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JglSummary {
    pub subpopulation: usize,
    pub stage: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl JglFit {
    pub fn all_converged(&self) -> bool {
        self.reports.iter().all(|r| r.converged)
    }

    /// Off-diagonal parts of the precision estimates, usable wherever a
    /// [`CoefficientSet`] is expected (support is symmetric).
    pub fn coefficients(&self) -> CoefficientSet {
        let mats = self
            .precisions
            .iter()
            .map(|m| {
                let mut m = m.clone();
                m.fill_diagonal(0.0);
                m
            })
            .collect();
        CoefficientSet::new(mats).expect("precisions are square with a common dimension")
    }

    pub fn edges(&self) -> MultiEdgeSet {
        let p = self.precisions.first().map_or(0, |m| m.nrows());
        let sets = self.precisions.iter().map(|m| {
            (0..p)
                .flat_map(|j| ((j + 1)..p).map(move |l| (j, l)))
                .filter(|&(j, l)| m[(j, l)] != 0.0)
                .collect::<Vec<_>>()
        });
        MultiEdgeSet::new(p, sets).expect("indices are in range")
    }
}

/// `q_lj = ½ (Σ_k |ω̂_lj^(k)|)^{-1/2}` off the diagonal, excluded where the sum is zero.
pub fn precision_weights(estimates: &[DMatrix<f64>]) -> Result<WeightMatrix> {
    let p = estimates.first().map_or(0, |m| m.nrows());
    let mut tau = DMatrix::zeros(p, p);
    let mut excluded = DMatrix::from_element(p, p, false);
    for j in 0..p {
        for l in 0..p {
            if l == j {
                continue;
            }
            let total: f64 = estimates.iter().map(|m| m[(l, j)].abs()).sum();
            if total > 0.0 {
                tau[(l, j)] = 0.5 / total.sqrt();
            } else {
                excluded[(l, j)] = true;
            }
        }
    }
    WeightMatrix::with_exclusions(tau, excluded)
}

fn covariances(data: &[DataMatrix]) -> Result<Vec<DMatrix<f64>>> {
    let first = data.first().ok_or_else(|| Error::Dimension("no subpopulations".into()))?;
    let p = first.ncols();
    for (k, x) in data.iter().enumerate() {
        if x.ncols() != p {
            return Err(Error::Dimension(format!("subpopulation {k} has {} variables, expected {p}", x.ncols())));
        }
        if !x.is_standardized() {
            return Err(Error::Dimension(format!("subpopulation {k} is not standardized")));
        }
    }
    Ok(data.iter().map(sample_cov).collect())
}

/// Per-subpopulation weighted graphical lasso with weights shared across
/// subpopulations, built once from an unweighted fit at `lambda_init`.
#[derive(Debug, Clone)]
pub struct JglPath {
    weights: WeightMatrix,
    problems: Vec<GraphicalLasso>,
    initial: Vec<JglSummary>,
}

impl JglPath {
    pub fn new(data: &[DataMatrix], config: &JglConfig) -> Result<Self> {
        let covs = covariances(data)?;
        let p = covs[0].nrows();
        let uniform = WeightMatrix::uniform(p);
        let init = covs
            .par_iter()
            .map(|s| jgl_fit(s, config.lambda_init, &uniform, &config.admm))
            .collect::<Result<Vec<_>>>()?;
        let initial = summarize(&init, 0);
        let estimates: Vec<_> = init.into_iter().map(|r| r.precision).collect();
        if estimates.iter().all(|m| (0..p).all(|j| (0..p).all(|l| l == j || m[(l, j)] == 0.0))) {
            return Err(Error::EmptyInitializer);
        }
        let weights = precision_weights(&estimates)?;
        let problems = covs
            .iter()
            .map(|s| GraphicalLasso::new(s, &weights, &config.admm))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            weights,
            problems,
            initial,
        })
    }

    /// Unweighted per-subpopulation graphical lasso (`q ≡ 1`).
    pub fn unweighted(data: &[DataMatrix], admm: &AdmmConfig) -> Result<Self> {
        let covs = covariances(data)?;
        let weights = WeightMatrix::uniform(covs[0].nrows());
        let problems = covs
            .iter()
            .map(|s| GraphicalLasso::new(s, &weights, admm))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            weights,
            problems,
            initial: Vec::new(),
        })
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    pub fn fit(&self, lambda: f64) -> Result<JglFit> {
        let reports = self
            .problems
            .par_iter()
            .map(|prob| prob.solve(lambda))
            .collect::<Result<Vec<_>>>()?;
        let mut summaries = self.initial.clone();
        summaries.extend(summarize(&reports, 1));
        Ok(JglFit {
            precisions: reports.into_iter().map(|r| r.precision).collect(),
            reports: summaries,
        })
    }
}

fn summarize(reports: &[JglReport], stage: usize) -> Vec<JglSummary> {
    reports
        .iter()
        .enumerate()
        .map(|(k, r)| JglSummary {
            subpopulation: k,
            stage,
            iterations: r.iterations,
            converged: r.converged,
        })
        .collect()
}

pub fn jgl_pipeline(data: &[DataMatrix], lambda: f64, config: &JglConfig) -> Result<JglFit> {
    JglPath::new(data, config)?.fit(lambda)
}
