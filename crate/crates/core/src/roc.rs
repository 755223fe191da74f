//! Average true/false positive rates over subpopulations and ROC areas.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::MultiEdgeSet;

pub const DEFAULT_GRID_POINTS: usize = 100;
pub const DEFAULT_GRID_MIN: f64 = 1e-5;
pub const DEFAULT_GRID_MAX: f64 = 1.0;

/// `points` equally spaced values from `lo` to `hi`, ascending.
pub fn lambda_grid(points: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if points == 0 || !(lo <= hi) || !lo.is_finite() || !hi.is_finite() || lo < 0.0 {
        return Err(Error::Dimension(format!("bad grid: {points} points in [{lo}, {hi}]")));
    }
    if points == 1 {
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points)
        .map(|i| if i + 1 == points { hi } else { lo + step * i as f64 })
        .collect())
}

pub fn default_grid() -> Vec<f64> {
    lambda_grid(DEFAULT_GRID_POINTS, DEFAULT_GRID_MIN, DEFAULT_GRID_MAX).expect("static grid is valid")
}

/// Off-diagonal support `{(j, l) : j < l, ω_jl ≠ 0}`.
pub fn truth_support(omega: &DMatrix<f64>) -> BTreeSet<(usize, usize)> {
    let p = omega.nrows();
    (0..p)
        .flat_map(|j| ((j + 1)..p).map(move |l| (j, l)))
        .filter(|&(j, l)| omega[(j, l)] != 0.0)
        .collect()
}

/// True edge sets on `p` vertices, checked for the degenerate cases that
/// leave a rate undefined.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthSets {
    p: usize,
    sets: Vec<BTreeSet<(usize, usize)>>,
}

impl TruthSets {
    pub fn new(p: usize, sets: Vec<BTreeSet<(usize, usize)>>) -> Result<Self> {
        let pairs = p * p.saturating_sub(1) / 2;
        for (k, set) in sets.iter().enumerate() {
            if set.iter().any(|&(j, l)| j >= l || l >= p) {
                return Err(Error::Dimension(format!("subpopulation {k} has an edge outside j < l < {p}")));
            }
            if set.is_empty() {
                return Err(Error::DegenerateTruth {
                    subpopulation: k,
                    missing: "edges",
                });
            }
            if set.len() == pairs {
                return Err(Error::DegenerateTruth {
                    subpopulation: k,
                    missing: "non-edges",
                });
            }
        }
        if sets.is_empty() {
            return Err(Error::Dimension("no subpopulations".into()));
        }
        Ok(Self { p, sets })
    }

    pub fn from_precisions(precisions: &[DMatrix<f64>]) -> Result<Self> {
        let p = precisions.first().map_or(0, |m| m.nrows());
        Self::new(p, precisions.iter().map(truth_support).collect())
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn sets(&self) -> &[BTreeSet<(usize, usize)>] {
        &self.sets
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub lambda: f64,
    pub afpr: f64,
    pub atpr: f64,
}

/// `(AFPR, ATPR)` of one estimated multi-graph.
pub fn rates(truth: &TruthSets, estimate: &MultiEdgeSet) -> Result<(f64, f64)> {
    if estimate.dim() != truth.p || estimate.subpopulations() != truth.sets.len() {
        return Err(Error::Dimension(format!(
            "estimate has p = {}, K = {}; truth has p = {}, K = {}",
            estimate.dim(),
            estimate.subpopulations(),
            truth.p,
            truth.sets.len()
        )));
    }
    let pairs = truth.p * (truth.p - 1) / 2;
    let k = truth.sets.len() as f64;
    let mut tpr = 0.0;
    let mut fpr = 0.0;
    for (i, set) in truth.sets.iter().enumerate() {
        let est = estimate.edges(i);
        let hits = est.intersection(set).count();
        let false_pos = est.len() - hits;
        tpr += hits as f64 / set.len() as f64;
        fpr += false_pos as f64 / (pairs - set.len()) as f64;
    }
    Ok((fpr / k, tpr / k))
}

/// Trapezoid area under `(AFPR, ATPR)` points sorted by AFPR (ties by ATPR),
/// with `(0, 0)` and `(1, 1)` added.
pub fn auc(points: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(points.len() + 2);
    pts.push((0.0, 0.0));
    pts.extend_from_slice(points);
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn from_points(points: Vec<RocPoint>) -> Self {
        let pairs: Vec<_> = points.iter().map(|q| (q.afpr, q.atpr)).collect();
        Self {
            auc: auc(&pairs),
            points,
        }
    }
}

/// Evaluates `fit` at every `λ` of an ascending grid.
pub fn roc_curve<F>(truth: &TruthSets, grid: &[f64], mut fit: F) -> Result<RocCurve>
where
    F: FnMut(f64) -> Result<MultiEdgeSet>,
{
    if grid.is_empty() {
        return Err(Error::Dimension("empty lambda grid".into()));
    }
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Dimension("lambda grid is not ascending".into()));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let (afpr, atpr) = rates(truth, &fit(lambda)?)?;
        points.push(RocPoint { lambda, afpr, atpr });
    }
    Ok(RocCurve::from_points(points))
}

/// Pointwise mean of curves evaluated on the same grid; the area is
/// recomputed from the averaged points.
pub fn average_curves(curves: &[RocCurve]) -> Result<RocCurve> {
    let first = curves.first().ok_or_else(|| Error::Dimension("no curves to average".into()))?;
    let m = curves.len() as f64;
    let mut points = first.points.clone();
    for c in &curves[1..] {
        if c.points.len() != points.len() || c.points.iter().zip(&points).any(|(a, b)| a.lambda != b.lambda) {
            return Err(Error::Dimension("curves use different grids".into()));
        }
        for (acc, q) in points.iter_mut().zip(&c.points) {
            acc.afpr += q.afpr;
            acc.atpr += q.atpr;
        }
    }
    if curves.len() > 1 {
        for q in &mut points {
            q.afpr /= m;
            q.atpr /= m;
        }
    }
    Ok(RocCurve::from_points(points))
}
