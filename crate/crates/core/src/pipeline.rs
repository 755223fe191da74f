//! Simultaneous neighborhood selection across `K` subpopulations.
//!
//! The grouped penalty `λ Σ_{l≠j} (Σ_k |θ_lj^(k)|)^{1/2}` is linearized around
//! an initial estimate, which turns the joint problem into `K` independent
//! weighted lassos sharing the weights `τ_lj = ½ (Σ_k |θ̂_lj^(k)|)^{-1/2}`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{AdmmConfig, NodewiseLasso, SolveReport, WeightMatrix};
use crate::error::{Error, Result};
use crate::linalg::DataMatrix;

/// Initializer penalty used when none is given.
pub const DEFAULT_LAMBDA_INIT: f64 = 0.05;

/// Per-subpopulation `p × p` coefficient matrices; column `j` holds node `j`'s
/// regression coefficients and every diagonal is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    matrices: Vec<DMatrix<f64>>,
}

impl CoefficientSet {
    pub fn new(matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        let p = match matrices.first() {
            Some(m) => m.nrows(),
            None => return Err(Error::Dimension("no subpopulations".into())),
        };
        for (k, m) in matrices.iter().enumerate() {
            if m.shape() != (p, p) {
                return Err(Error::Dimension(format!(
                    "subpopulation {k} is {}×{}, expected {p}×{p}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if (0..p).any(|i| m[(i, i)] != 0.0) {
                return Err(Error::Dimension(format!("subpopulation {k} has a nonzero diagonal")));
            }
        }
        Ok(Self { matrices })
    }

    pub fn zeros(k: usize, p: usize) -> Self {
        Self {
            matrices: vec![DMatrix::zeros(p, p); k],
        }
    }

    pub fn subpopulations(&self) -> usize {
        self.matrices.len()
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn get(&self, k: usize) -> &DMatrix<f64> {
        &self.matrices[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        self.matrices.iter()
    }

    pub fn into_inner(self) -> Vec<DMatrix<f64>> {
        self.matrices
    }

    pub fn is_all_zero(&self) -> bool {
        self.matrices.iter().all(|m| m.iter().all(|&v| v == 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeRule {
    /// Both directed neighborhood indicators must be nonzero.
    #[default]
    And,
    /// Either indicator suffices.
    Or,
}

impl FromStr for EdgeRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "and" => Ok(EdgeRule::And),
            "or" => Ok(EdgeRule::Or),
            other => Err(format!("unknown edge rule `{other}` (expected `and` or `or`)")),
        }
    }
}

impl fmt::Display for EdgeRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeRule::And => "and",
            EdgeRule::Or => "or",
        })
    }
}

/// One undirected edge set per subpopulation; pairs are stored as `(i, j)`
/// with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiEdgeSet {
    p: usize,
    sets: Vec<BTreeSet<(usize, usize)>>,
}

impl MultiEdgeSet {
    /// Canonicalizes pair order; rejects self-loops and out-of-range vertices.
    pub fn new<I>(p: usize, sets: I) -> Result<Self>
    where
        I: IntoIterator,
        I::Item: IntoIterator<Item = (usize, usize)>,
    {
        let mut out = Vec::new();
        for set in sets {
            let mut canon = BTreeSet::new();
            for (i, j) in set {
                if i == j {
                    return Err(Error::Dimension(format!("self-loop at vertex {i}")));
                }
                if i >= p || j >= p {
                    return Err(Error::Dimension(format!("edge ({i}, {j}) out of range for p = {p}")));
                }
                canon.insert((i.min(j), i.max(j)));
            }
            out.push(canon);
        }
        Ok(Self { p, sets: out })
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn subpopulations(&self) -> usize {
        self.sets.len()
    }

    pub fn edges(&self, k: usize) -> &BTreeSet<(usize, usize)> {
        &self.sets[k]
    }

    pub fn contains(&self, k: usize, i: usize, j: usize) -> bool {
        self.sets[k].contains(&(i.min(j), i.max(j)))
    }

    pub fn total_edges(&self) -> usize {
        self.sets.iter().map(BTreeSet::len).sum()
    }
}

/// Edge `(i, j)` is present in subpopulation `k` according to whether
/// `θ_ij^(k)` and `θ_ji^(k)` are nonzero, combined by `rule`.
pub fn assemble_edges(theta: &CoefficientSet, rule: EdgeRule) -> MultiEdgeSet {
    let p = theta.dim();
    let sets = theta
        .iter()
        .map(|m| {
            let mut set = BTreeSet::new();
            for i in 0..p {
                for j in (i + 1)..p {
                    let (a, b) = (m[(i, j)] != 0.0, m[(j, i)] != 0.0);
                    let present = match rule {
                        EdgeRule::And => a && b,
                        EdgeRule::Or => a || b,
                    };
                    if present {
                        set.insert((i, j));
                    }
                }
            }
            set
        })
        .collect();
    MultiEdgeSet { p, sets }
}

/// LLA weights from an estimate: `τ_lj = ½ (Σ_k |θ_lj^(k)|)^{-1/2}`, with
/// entries whose sum is zero excluded (infinite weight).
pub fn lla_weights(init: &CoefficientSet) -> WeightMatrix {
    let p = init.dim();
    let mut tau = DMatrix::zeros(p, p);
    let mut excluded = DMatrix::from_element(p, p, false);
    for j in 0..p {
        for l in 0..p {
            if l == j {
                continue;
            }
            let total: f64 = init.iter().map(|m| m[(l, j)].abs()).sum();
            if total > 0.0 {
                tau[(l, j)] = 0.5 / total.sqrt();
            } else {
                excluded[(l, j)] = true;
            }
        }
    }
    WeightMatrix::with_exclusions(tau, excluded).expect("LLA weights are finite and positive")
}

/// `2 (λ₁ λ₂ Σ_k |θ^(k)|)^{1/2}`: the grouped penalty one entry contributes
/// once the common and individual factors are optimized out.
pub fn penalty_factorization_value(theta_entry: &[f64], lambda1: f64, lambda2: f64) -> f64 {
    let total: f64 = theta_entry.iter().map(|t| t.abs()).sum();
    2.0 * (lambda1 * lambda2 * total).sqrt()
}

/// The common factor `η ≥ 0` attaining [`penalty_factorization_value`]:
/// `η* = (λ₁ λ₂ Σ_k |θ^(k)|)^{1/2} / λ₁`.
pub fn optimal_common_factor(theta_entry: &[f64], lambda1: f64, lambda2: f64) -> f64 {
    let total: f64 = theta_entry.iter().map(|t| t.abs()).sum();
    (lambda1 * lambda2 * total).sqrt() / lambda1
}

/// `λ₁ η + λ₂ Σ_k |γ^(k)|` with `γ^(k) = θ^(k) / η`, i.e. the factored penalty of
/// one entry for a given common factor. Zero entries need `η = 0`.
pub fn factored_penalty(eta: f64, theta_entry: &[f64], lambda1: f64, lambda2: f64) -> f64 {
    let total: f64 = theta_entry.iter().map(|t| t.abs()).sum();
    if total == 0.0 {
        return lambda1 * eta;
    }
    if eta <= 0.0 {
        return f64::INFINITY;
    }
    lambda1 * eta + lambda2 * total / eta
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnsConfig {
    /// `λ = 2 (λ₁ λ₂)^{1/2}`; only the product of the two factor penalties
    /// affects the estimate.
    pub lambda: f64,
    pub lambda_init: f64,
    pub lla_steps: usize,
    pub edge_rule: EdgeRule,
    pub admm: AdmmConfig,
}

impl SnsConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            lambda_init: DEFAULT_LAMBDA_INIT,
            lla_steps: 1,
            edge_rule: EdgeRule::And,
            admm: AdmmConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lla_steps == 0 {
            return Err(Error::Dimension("lla_steps must be at least 1".into()));
        }
        check_lambda(self.lambda)?;
        check_lambda(self.lambda_init)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Dimension(format!("λ must be finite and non-negative, got {lambda}")))
    }
}

/// Diagnostics of one weighted-lasso solve inside a pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveSummary {
    pub subpopulation: usize,
    /// 0 for the initializer, `t` for LLA step `t`.
    pub stage: usize,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineFit {
    pub coefficients: CoefficientSet,
    pub solves: Vec<SolveSummary>,
}

impl PipelineFit {
    pub fn all_converged(&self) -> bool {
        self.solves.iter().all(|s| s.converged)
    }

    pub fn edges(&self, rule: EdgeRule) -> MultiEdgeSet {
        assemble_edges(&self.coefficients, rule)
    }
}

fn check_data(data: &[DataMatrix]) -> Result<usize> {
    let first = data.first().ok_or_else(|| Error::Dimension("no subpopulations".into()))?;
    let p = first.ncols();
    for (k, x) in data.iter().enumerate() {
        if x.ncols() != p {
            return Err(Error::Dimension(format!(
                "subpopulation {k} has {} variables, expected {p}",
                x.ncols()
            )));
        }
        if !x.is_standardized() {
            return Err(Error::Dimension(format!("subpopulation {k} is not standardized")));
        }
    }
    if p < 2 {
        return Err(Error::Dimension("need at least 2 variables".into()));
    }
    Ok(p)
}

fn collect_fit(reports: Vec<SolveReport>, stage: usize) -> Result<PipelineFit> {
    let solves = reports
        .iter()
        .enumerate()
        .map(|(k, r)| SolveSummary {
            subpopulation: k,
            stage,
            iterations: r.iterations,
            kkt_residual: r.kkt_residual,
            converged: r.converged,
        })
        .collect();
    let coefficients = CoefficientSet::new(reports.into_iter().map(|r| r.coefficients).collect())?;
    Ok(PipelineFit { coefficients, solves })
}

/// Individual neighborhood selection: an unweighted lasso per node and per
/// subpopulation, each with its own `n`. Factorizations are reused across `λ`.
#[derive(Debug, Clone)]
pub struct InsPath {
    problems: Vec<NodewiseLasso>,
}

impl InsPath {
    pub fn new(data: &[DataMatrix], admm: &AdmmConfig) -> Result<Self> {
        let p = check_data(data)?;
        let weights = WeightMatrix::uniform(p);
        let problems = data
            .par_iter()
            .map(|x| NodewiseLasso::new(x, &weights, admm))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { problems })
    }

    pub fn fit(&self, lambda: f64) -> Result<PipelineFit> {
        check_lambda(lambda)?;
        let reports = self
            .problems
            .par_iter()
            .map(|prob| prob.solve(lambda))
            .collect::<Result<Vec<_>>>()?;
        collect_fit(reports, 0)
    }
}

pub fn ins_fit(data: &[DataMatrix], lambda_init: f64, admm: &AdmmConfig) -> Result<PipelineFit> {
    InsPath::new(data, admm)?.fit(lambda_init)
}

/// One LLA step from a fixed estimate: the weights and every factorization are
/// built once, then any number of `λ` values can be fitted.
#[derive(Debug, Clone)]
pub struct SnsPath {
    weights: WeightMatrix,
    problems: Vec<NodewiseLasso>,
}

impl SnsPath {
    pub fn new(data: &[DataMatrix], estimate: &CoefficientSet, admm: &AdmmConfig) -> Result<Self> {
        let p = check_data(data)?;
        if estimate.subpopulations() != data.len() || estimate.dim() != p {
            return Err(Error::Dimension(format!(
                "estimate has K = {}, p = {}; data has K = {}, p = {p}",
                estimate.subpopulations(),
                estimate.dim(),
                data.len()
            )));
        }
        let n_loss = data.iter().map(DataMatrix::nrows).max().unwrap_or(0) as f64;
        let weights = lla_weights(estimate);
        let problems = data
            .par_iter()
            .map(|x| NodewiseLasso::with_loss_scale(x, &weights, n_loss, admm))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { weights, problems })
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    pub fn fit(&self, lambda: f64) -> Result<PipelineFit> {
        check_lambda(lambda)?;
        let reports = self
            .problems
            .par_iter()
            .map(|prob| prob.solve(lambda))
            .collect::<Result<Vec<_>>>()?;
        collect_fit(reports, 1)
    }
}

/// Runs `config.lla_steps` LLA steps starting from `init`, or from
/// [`ins_fit`] at `config.lambda_init` when no initial estimate is given.
/// The loss of every subpopulation is scaled by `n = max_k n_k`.
pub fn sns_fit(data: &[DataMatrix], config: &SnsConfig, init: Option<&CoefficientSet>) -> Result<PipelineFit> {
    config.validate()?;
    check_data(data)?;
    let mut solves = Vec::new();
    let mut current = match init {
        Some(c) => c.clone(),
        None => {
            let fit = ins_fit(data, config.lambda_init, &config.admm)?;
            solves.extend(fit.solves);
            fit.coefficients
        }
    };
    if current.is_all_zero() {
        return Err(Error::EmptyInitializer);
    }
    for step in 1..=config.lla_steps {
        let fit = SnsPath::new(data, &current, &config.admm)?.fit(config.lambda)?;
        solves.extend(fit.solves.into_iter().map(|s| SolveSummary { stage: step, ..s }));
        current = fit.coefficients;
    }
    Ok(PipelineFit {
        coefficients: current,
        solves,
    })
}
