//! Weighted-lasso ADMM over all `p` node regressions of one subpopulation.
//!
//! The problem is
//!
//! ```text
//! minimize (1/2n) ‖X (I − Θ)‖²_F + λ Σ_{l≠j} τ_lj |θ_lj|   subject to diag(Θ) = 0
//! ```
//!
//! split as `v = r` over the stacked off-diagonal coefficients. Column `j` of
//! every `p × p` iterate holds node `j`'s coefficient vector, so the stacked
//! `p(p−1)` vectors are the off-diagonal entries read column by column.
//!
//! The `v`-update is block diagonal in the nodes. Nodes without excluded
//! entries share one factor of `X Xᵀ + nb I` and are solved together through
//! the Woodbury identity; nodes with excluded entries get their own reduced
//! design with the excluded columns removed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DataMatrix, GramShiftFactor};

/// `sign(z) · max(|z| − t, 0)`.
#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    (z - t).max(0.0) - (-z - t).max(0.0)
}

/// Penalty weights `τ_lj`; `τ_lj` scales the penalty on the coefficient of
/// variable `l` in node `j`'s regression. Infinite weights are tracked as an
/// exclusion mask instead.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    tau: DMatrix<f64>,
    excluded: DMatrix<bool>,
}

impl WeightMatrix {
    /// All off-diagonal weights equal to one.
    pub fn uniform(p: usize) -> Self {
        let mut tau = DMatrix::from_element(p, p, 1.0);
        tau.fill_diagonal(0.0);
        Self {
            tau,
            excluded: DMatrix::from_element(p, p, false),
        }
    }

    /// Builds weights from `tau`; `+∞` entries become exclusions. The diagonal
    /// is ignored.
    pub fn new(tau: DMatrix<f64>) -> Result<Self> {
        let excluded = tau.map(|t| t == f64::INFINITY);
        Self::with_exclusions(tau, excluded)
    }

    pub fn with_exclusions(mut tau: DMatrix<f64>, excluded: DMatrix<bool>) -> Result<Self> {
        if !tau.is_square() || tau.shape() != excluded.shape() {
            return Err(Error::Dimension("weights must be square and match the mask".into()));
        }
        let p = tau.nrows();
        for j in 0..p {
            for l in 0..p {
                if l == j {
                    continue;
                }
                if excluded[(l, j)] {
                    tau[(l, j)] = f64::INFINITY;
                    continue;
                }
                let t = tau[(l, j)];
                if !(t >= 0.0) || !t.is_finite() {
                    return Err(Error::InvalidWeights(format!("τ[{l},{j}] = {t}")));
                }
            }
        }
        tau.fill_diagonal(0.0);
        let mut excluded = excluded;
        excluded.fill_diagonal(false);
        Ok(Self { tau, excluded })
    }

    pub fn dim(&self) -> usize {
        self.tau.nrows()
    }

    pub fn tau(&self, l: usize, j: usize) -> f64 {
        self.tau[(l, j)]
    }

    pub fn tau_matrix(&self) -> &DMatrix<f64> {
        &self.tau
    }

    pub fn is_excluded(&self, l: usize, j: usize) -> bool {
        self.excluded[(l, j)]
    }

    /// Off-diagonal and not excluded.
    pub fn is_free(&self, l: usize, j: usize) -> bool {
        l != j && !self.excluded[(l, j)]
    }

    pub fn excluded_count(&self) -> usize {
        self.excluded.iter().filter(|&&e| e).count()
    }

    /// Smallest finite off-diagonal weight, if any.
    pub fn min_free_weight(&self) -> Option<f64> {
        let p = self.dim();
        (0..p)
            .flat_map(|j| (0..p).map(move |l| (l, j)))
            .filter(|&(l, j)| self.is_free(l, j))
            .map(|(l, j)| self.tau[(l, j)])
            .min_by(f64::total_cmp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub step_size: f64,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_iter: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            step_size: 1.0,
            tol_primal: 1e-6,
            tol_dual: 1e-6,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// The split iterate `r`: zero diagonal, excluded entries exactly zero.
    pub coefficients: DMatrix<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub kkt_residual: f64,
    pub converged: bool,
}

impl SolveReport {
    /// Turns a non-converged report into [`Error::NotConverged`].
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

/// ADMM iterates. `v`, `r`, `u` are stored as `p × p` matrices with a zero
/// diagonal; [`AdmmState::stacked`] gives the `p(p−1)` vector view.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub v: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub step_size: f64,
    pub iterations: usize,
}

impl AdmmState {
    fn zeros(p: usize, step_size: f64) -> Self {
        Self {
            v: DMatrix::zeros(p, p),
            r: DMatrix::zeros(p, p),
            u: DMatrix::zeros(p, p),
            step_size,
            iterations: 0,
        }
    }

    /// Off-diagonal entries of `m` stacked node by node: `(θ_{1,−1}, …, θ_{p,−p})`.
    pub fn stacked(m: &DMatrix<f64>) -> DVector<f64> {
        let p = m.nrows();
        DVector::from_iterator(
            p * p.saturating_sub(1),
            (0..p).flat_map(|j| (0..p).filter(move |&l| l != j).map(move |l| m[(l, j)])),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    /// Residuals are below their scaled tolerances (KKT not yet checked).
    pub small: bool,
}

#[derive(Debug, Clone)]
enum BlockSolver {
    /// Nothing left to estimate for this node.
    Empty,
    /// `(X_Sᵀ X_S + cI)` factored directly, used when `|S| ≤ n`.
    Primal(Cholesky<f64, Dyn>),
    /// `(X_S X_Sᵀ + cI)` factored, applied through the Woodbury identity.
    Dual {
        design: DMatrix<f64>,
        chol: Cholesky<f64, Dyn>,
    },
}

#[derive(Debug, Clone)]
struct ReducedBlock {
    node: usize,
    active: Vec<usize>,
    solver: BlockSolver,
}

impl ReducedBlock {
    fn build(x: &DMatrix<f64>, node: usize, active: Vec<usize>, shift: f64) -> Result<Self> {
        let n = x.nrows();
        let m = active.len();
        let solver = if m == 0 {
            BlockSolver::Empty
        } else {
            let design = x.select_columns(&active);
            if m <= n {
                let mut a = design.tr_mul(&design);
                for i in 0..m {
                    a[(i, i)] += shift;
                }
                BlockSolver::Primal(
                    Cholesky::new(a).ok_or_else(|| Error::Numerical(format!("block {node} factorization failed")))?,
                )
            } else {
                let mut a = &design * design.transpose();
                for i in 0..n {
                    a[(i, i)] += shift;
                }
                let chol = Cholesky::new(a)
                    .ok_or_else(|| Error::Numerical(format!("block {node} factorization failed")))?;
                BlockSolver::Dual { design, chol }
            }
        };
        Ok(Self { node, active, solver })
    }

    /// `(X_Sᵀ X_S + cI)⁻¹ w`.
    fn apply(&self, w: &DVector<f64>, shift: f64) -> DVector<f64> {
        match &self.solver {
            BlockSolver::Empty => DVector::zeros(0),
            BlockSolver::Primal(chol) => chol.solve(w),
            BlockSolver::Dual { design, chol } => {
                let inner = chol.solve(&(design * w));
                (w - design.tr_mul(&inner)) / shift
            }
        }
    }
}

/// A weighted nodewise-lasso problem with every factorization done up front.
///
/// Factorizations depend on the data, the weights' exclusion pattern, the step
/// size and the loss scale, but not on `λ`, so one preparation serves a whole
/// `λ` grid.
#[derive(Debug, Clone)]
pub struct NodewiseLasso {
    x: DataMatrix,
    weights: WeightMatrix,
    n_loss: f64,
    config: AdmmConfig,
    shift: f64,
    full_nodes: Vec<usize>,
    shared: Option<GramShiftFactor>,
    reduced: Vec<ReducedBlock>,
    /// Column `j`: `(X_Sᵀ X_S + cI)⁻¹ X_Sᵀ Xⱼ`, the data part of the `v`-update.
    base: DMatrix<f64>,
}

impl NodewiseLasso {
    /// Prepares the problem with the loss scaled by the data's own `n`.
    pub fn new(x: &DataMatrix, weights: &WeightMatrix, config: &AdmmConfig) -> Result<Self> {
        Self::with_loss_scale(x, weights, x.nrows() as f64, config)
    }

    /// Prepares the problem with loss factor `1/(2 n_loss)`.
    pub fn with_loss_scale(
        x: &DataMatrix,
        weights: &WeightMatrix,
        n_loss: f64,
        config: &AdmmConfig,
    ) -> Result<Self> {
        let p = x.ncols();
        if weights.dim() != p {
            return Err(Error::Dimension(format!(
                "weights are {}×{}, data has {p} columns",
                weights.dim(),
                weights.dim()
            )));
        }
        if !(config.step_size > 0.0) || !config.step_size.is_finite() {
            return Err(Error::Numerical(format!(
                "step size must be positive, got {}",
                config.step_size
            )));
        }
        if !(n_loss > 0.0) {
            return Err(Error::Dimension("loss scale must be positive".into()));
        }
        let xv = x.values();
        let shift = n_loss * config.step_size;

        let mut full_nodes = Vec::new();
        let mut reduced_specs = Vec::new();
        for j in 0..p {
            let active: Vec<usize> = (0..p).filter(|&l| weights.is_free(l, j)).collect();
            if active.len() + 1 == p {
                full_nodes.push(j);
            } else {
                reduced_specs.push((j, active));
            }
        }

        let mut base = DMatrix::zeros(p, p);
        let shared = if full_nodes.is_empty() {
            None
        } else {
            let factor = GramShiftFactor::with_loss_scale(x, config.step_size, n_loss)?;
            // Xᵀ Xⱼ for the full nodes, then one batched inverse application.
            let cross = xv.tr_mul(&xv.select_columns(&full_nodes));
            let solved = factor.apply_columns(&cross, &full_nodes)?;
            for (c, &j) in full_nodes.iter().enumerate() {
                base.set_column(j, &solved.column(c));
            }
            Some(factor)
        };

        let reduced = reduced_specs
            .into_par_iter()
            .map(|(j, active)| ReducedBlock::build(xv, j, active, shift))
            .collect::<Result<Vec<_>>>()?;
        for block in &reduced {
            if block.active.is_empty() {
                continue;
            }
            let xj = xv.column(block.node);
            let rhs = DVector::from_iterator(
                block.active.len(),
                block.active.iter().map(|&l| xv.column(l).dot(&xj)),
            );
            let sol = block.apply(&rhs, shift);
            for (i, &l) in block.active.iter().enumerate() {
                base[(l, block.node)] = sol[i];
            }
        }

        Ok(Self {
            x: x.clone(),
            weights: weights.clone(),
            n_loss,
            config: *config,
            shift,
            full_nodes,
            shared,
            reduced,
            base,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn config(&self) -> &AdmmConfig {
        &self.config
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    pub fn loss_scale(&self) -> f64 {
        self.n_loss
    }

    /// Starts an iteration at `v = r = u = 0`.
    pub fn start(&self, lambda: f64) -> Result<AdmmRun<'_>> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Dimension(format!("λ must be a finite non-negative number, got {lambda}")));
        }
        let p = self.dim();
        let b = self.config.step_size;
        let thresholds = self.weights.tau_matrix().map(|t| lambda * t / b);
        Ok(AdmmRun {
            problem: self,
            lambda,
            thresholds,
            state: AdmmState::zeros(p, b),
        })
    }

    /// Runs ADMM to convergence or `max_iter`. A run that hits `max_iter`
    /// returns its last iterate with `converged = false`.
    pub fn solve(&self, lambda: f64) -> Result<SolveReport> {
        let mut run = self.start(lambda)?;
        let tol = self.config.tol_primal;
        let mut last = Residuals {
            primal: f64::INFINITY,
            dual: f64::INFINITY,
            small: false,
        };
        let mut kkt = f64::INFINITY;
        let mut converged = false;
        while run.state.iterations < self.config.max_iter {
            last = run.step()?;
            if last.small {
                kkt = run.kkt_residual();
                if kkt <= 10.0 * tol {
                    converged = true;
                    break;
                }
            }
        }
        if !converged {
            kkt = run.kkt_residual();
        }
        Ok(SolveReport {
            coefficients: run.state.r,
            iterations: run.state.iterations,
            primal_residual: last.primal,
            dual_residual: last.dual,
            kkt_residual: kkt,
            converged,
        })
    }

    fn v_update(&self, state: &mut AdmmState) -> Result<()> {
        let p = self.dim();
        let shift = self.shift;
        if let Some(factor) = &self.shared {
            let nodes = &self.full_nodes;
            let rhs = if nodes.len() == p {
                (&state.r - &state.u) * shift
            } else {
                DMatrix::from_fn(p, nodes.len(), |l, c| {
                    let j = nodes[c];
                    shift * (state.r[(l, j)] - state.u[(l, j)])
                })
            };
            let solved = factor.apply_columns(&rhs, nodes)?;
            if nodes.len() == p {
                state.v = solved + &self.base;
            } else {
                for (c, &j) in nodes.iter().enumerate() {
                    let col = solved.column(c) + self.base.column(j);
                    state.v.set_column(j, &col);
                }
            }
        }
        let r = &state.r;
        let u = &state.u;
        let updates: Vec<DVector<f64>> = self
            .reduced
            .par_iter()
            .map(|block| {
                let w = DVector::from_iterator(
                    block.active.len(),
                    block.active.iter().map(|&l| shift * (r[(l, block.node)] - u[(l, block.node)])),
                );
                block.apply(&w, shift)
            })
            .collect();
        for (block, sol) in self.reduced.iter().zip(updates) {
            let j = block.node;
            state.v.column_mut(j).fill(0.0);
            for (i, &l) in block.active.iter().enumerate() {
                state.v[(l, j)] = self.base[(l, j)] + sol[i];
            }
        }
        Ok(())
    }
}

/// One ADMM run in progress; exposes single iterations for benchmarking.
#[derive(Debug, Clone)]
pub struct AdmmRun<'p> {
    problem: &'p NodewiseLasso,
    lambda: f64,
    thresholds: DMatrix<f64>,
    state: AdmmState,
}

impl AdmmRun<'_> {
    pub fn state(&self) -> &AdmmState {
        &self.state
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// One full `(v, r, u)` sweep over all node blocks.
    pub fn step(&mut self) -> Result<Residuals> {
        let problem = self.problem;
        let cfg = &problem.config;
        let b = cfg.step_size;
        problem.v_update(&mut self.state)?;

        let p = problem.dim();
        let st = &mut self.state;
        let mut dual_sq = 0.0;
        let mut primal_sq = 0.0;
        for j in 0..p {
            for l in 0..p {
                if !problem.weights.is_free(l, j) {
                    st.r[(l, j)] = 0.0;
                    st.u[(l, j)] = 0.0;
                    continue;
                }
                let v = st.v[(l, j)];
                let u = st.u[(l, j)];
                let r_new = soft_threshold(v + u, self.thresholds[(l, j)]);
                let dr = r_new - st.r[(l, j)];
                dual_sq += dr * dr;
                let gap = v - r_new;
                primal_sq += gap * gap;
                st.r[(l, j)] = r_new;
                st.u[(l, j)] = u + gap;
            }
        }
        st.iterations += 1;

        let primal = primal_sq.sqrt();
        let dual = b * dual_sq.sqrt();
        let scale_p = 1f64.max(st.v.norm()).max(st.r.norm());
        let scale_d = 1f64.max(st.u.norm());
        Ok(Residuals {
            primal,
            dual,
            small: primal <= cfg.tol_primal * scale_p && dual <= cfg.tol_dual * scale_d,
        })
    }

    /// KKT residual of the current split iterate `r`.
    pub fn kkt_residual(&self) -> f64 {
        kkt_residual_scaled(
            &self.problem.x,
            &self.state.r,
            self.lambda,
            &self.problem.weights,
            self.problem.n_loss,
        )
    }
}

/// Solves the weighted nodewise lasso with the loss scaled by the data's `n`.
pub fn admm_weighted_lasso(
    x: &DataMatrix,
    lambda: f64,
    weights: &WeightMatrix,
    config: &AdmmConfig,
) -> Result<SolveReport> {
    NodewiseLasso::new(x, weights, config)?.solve(lambda)
}

/// Optimality gap of `theta` measured on the stationarity conditions, divided
/// by `n`.
///
/// For every free entry with gradient component `g = X_lᵀ(Xⱼ − X₋ⱼθⱼ) / n`:
/// `|g − λτ sign θ|` when `θ_lj ≠ 0`, and `max(0, |g| − λτ)` when `θ_lj = 0`.
/// Returns the maximum over all free entries.
pub fn kkt_residual(x: &DataMatrix, theta: &DMatrix<f64>, lambda: f64, weights: &WeightMatrix) -> f64 {
    kkt_residual_scaled(x, theta, lambda, weights, x.nrows() as f64)
}

pub fn kkt_residual_scaled(
    x: &DataMatrix,
    theta: &DMatrix<f64>,
    lambda: f64,
    weights: &WeightMatrix,
    n_loss: f64,
) -> f64 {
    let grad = loss_gradient(x, theta, n_loss);
    let p = theta.nrows();
    let mut worst = 0.0f64;
    for j in 0..p {
        for l in 0..p {
            if !weights.is_free(l, j) {
                continue;
            }
            let g = grad[(l, j)];
            let pen = lambda * weights.tau(l, j);
            let th = theta[(l, j)];
            let gap = if th != 0.0 {
                (g - pen * th.signum()).abs()
            } else {
                (g.abs() - pen).max(0.0)
            };
            worst = worst.max(gap);
        }
    }
    worst
}

/// `Xᵀ X (I − Θ) / n_loss`; entry `(l, j)` is `X_lᵀ (Xⱼ − X θⱼ) / n_loss`.
fn loss_gradient(x: &DataMatrix, theta: &DMatrix<f64>, n_loss: f64) -> DMatrix<f64> {
    let xv = x.values();
    let resid = xv - xv * theta;
    xv.tr_mul(&resid) / n_loss
}

/// `(1/2n) ‖X (I − Θ)‖²_F + λ Σ τ_lj |θ_lj|`. Returns `+∞` when an excluded
/// or diagonal entry is nonzero.
pub fn objective(
    x: &DataMatrix,
    theta: &DMatrix<f64>,
    lambda: f64,
    weights: &WeightMatrix,
    n_loss: f64,
) -> f64 {
    let xv = x.values();
    let p = theta.nrows();
    let mut penalty = 0.0;
    for j in 0..p {
        for l in 0..p {
            let th = theta[(l, j)];
            if th == 0.0 {
                continue;
            }
            if !weights.is_free(l, j) {
                return f64::INFINITY;
            }
            penalty += weights.tau(l, j) * th.abs();
        }
    }
    let resid = xv - xv * theta;
    resid.norm_squared() / (2.0 * n_loss) + lambda * penalty
}

/// Smallest `λ` at which `Θ = 0` satisfies the optimality conditions.
pub fn full_shrinkage_lambda(x: &DataMatrix, weights: &WeightMatrix, n_loss: f64) -> f64 {
    let xv = x.values();
    let gram = xv.tr_mul(xv) / n_loss;
    let p = gram.nrows();
    let mut lam = 0.0f64;
    for j in 0..p {
        for l in 0..p {
            if weights.is_free(l, j) {
                let t = weights.tau(l, j);
                let g = gram[(l, j)].abs();
                if g > 0.0 {
                    lam = lam.max(if t > 0.0 { g / t } else { f64::INFINITY });
                }
            }
        }
    }
    lam
}
