//! Synthetic multi-graph scenarios: shared and individual edge sets, diagonally
//! dominant precision matrices and Gaussian samples.
//!
//! Every random draw comes from ChaCha20 seeded with `seed_from_u64(seed)`,
//! one stream per purpose, so each piece of a scenario can be regenerated on
//! its own.

use std::collections::BTreeSet;

use nalgebra::{Cholesky, DMatrix};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier recorded in run manifests.
pub const PRNG_ID: &str = "chacha20 (rand_chacha 0.9, seed_from_u64, one stream per purpose)";

const EDGE_STREAM: u64 = 0;
const PRECISION_STREAM: u64 = 1 << 16;
const DATA_STREAM: u64 = 1 << 32;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed of replicate `r` of an experiment seeded with `seed`.
pub fn replicate_seed(seed: u64, replicate: u64) -> u64 {
    // splitmix64 finalizer, so neighbouring replicates do not share structure
    let mut z = seed.wrapping_add(replicate.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub p: usize,
    pub k: usize,
    pub n: usize,
    /// Common edges as a fraction of `C(p, 2)`.
    pub s: f64,
    /// Individual edges per subpopulation as a fraction of the common count.
    pub rho: f64,
    pub seed: u64,
}

impl SimulationSpec {
    pub fn pair_count(&self) -> usize {
        self.p * self.p.saturating_sub(1) / 2
    }

    pub fn common_count(&self) -> usize {
        (self.s * self.pair_count() as f64).round() as usize
    }

    pub fn individual_count(&self) -> usize {
        (self.rho * self.common_count() as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::InfeasibleSpec(format!("p must be at least 2, got {}", self.p)));
        }
        if self.k == 0 {
            return Err(Error::InfeasibleSpec("K must be at least 1".into()));
        }
        if self.n < 2 {
            return Err(Error::InfeasibleSpec(format!("n must be at least 2, got {}", self.n)));
        }
        if !(0.0..=1.0).contains(&self.s) {
            return Err(Error::InfeasibleSpec(format!("s must lie in [0, 1], got {}", self.s)));
        }
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(Error::InfeasibleSpec(format!("rho must be non-negative, got {}", self.rho)));
        }
        let a = self.common_count();
        let m = self.individual_count();
        if a + self.k * m > self.pair_count() {
            return Err(Error::InfeasibleSpec(format!(
                "{a} common + {} x {m} individual edges exceed the {} available pairs",
                self.k,
                self.pair_count()
            )));
        }
        if self.k == 1 && m > 0 {
            return Err(Error::InfeasibleSpec(
                "with K = 1 the individual set is its own intersection and must be empty".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSets {
    pub common: BTreeSet<(usize, usize)>,
    pub individual: Vec<BTreeSet<(usize, usize)>>,
}

impl EdgeSets {
    /// `E^(k) = A ∪ B^(k)`.
    pub fn full(&self, k: usize) -> BTreeSet<(usize, usize)> {
        self.common.union(&self.individual[k]).copied().collect()
    }
}

/// All pairs `(j, l)` with `j < l`, lexicographically.
fn all_pairs(p: usize) -> Vec<(usize, usize)> {
    (0..p).flat_map(|j| ((j + 1)..p).map(move |l| (j, l))).collect()
}

/// Draws the common set `A` and the individual sets `B^(k)`.
///
/// `A` is a uniform draw without replacement from all pairs. The individual
/// sets come from a single draw of `K · |B|` distinct pairs outside `A`, dealt
/// round-robin, so they are pairwise disjoint.
pub fn gen_edge_sets(spec: &SimulationSpec) -> Result<EdgeSets> {
    spec.validate()?;
    let pairs = all_pairs(spec.p);
    let mut rng = stream_rng(spec.seed, EDGE_STREAM);
    let a_count = spec.common_count();
    let picked = index::sample(&mut rng, pairs.len(), a_count);
    let common: BTreeSet<_> = picked.iter().map(|i| pairs[i]).collect();

    let rest: Vec<_> = pairs.iter().copied().filter(|e| !common.contains(e)).collect();
    let m = spec.individual_count();
    let drawn = index::sample(&mut rng, rest.len(), spec.k * m);
    let mut individual = vec![BTreeSet::new(); spec.k];
    for (t, i) in drawn.iter().enumerate() {
        individual[t % spec.k].insert(rest[i]);
    }
    Ok(EdgeSets { common, individual })
}

/// Gershgorin-dominant precision matrix with off-diagonal support `edges`.
///
/// For each edge `(j, l)`, `j < l`, in ascending order, draws `a ~ U(0.5, 1)`
/// then a Rademacher sign and sets `A[j, l] = ±a`; `C = (A + Aᵀ)/2` and
/// `ω_jj = Σ_{q≠j} |c_jq| + 1`. Only the upper triangle of `A` is filled, so
/// `|c_jl| ∈ [0.25, 0.5]`.
pub fn gen_precision_with(p: usize, edges: &BTreeSet<(usize, usize)>, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    let mut omega = DMatrix::zeros(p, p);
    for &(j, l) in edges {
        if j >= l || l >= p {
            return Err(Error::Dimension(format!("edge ({j}, {l}) is not a pair j < l < {p}")));
        }
        let a: f64 = rng.random_range(0.5..1.0);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let c = 0.5 * a * sign;
        omega[(j, l)] = c;
        omega[(l, j)] = c;
    }
    for j in 0..p {
        let off: f64 = omega.column(j).iter().map(|v| v.abs()).sum();
        omega[(j, j)] = off + 1.0;
    }
    Ok(omega)
}

pub fn gen_precision(p: usize, edges: &BTreeSet<(usize, usize)>, seed: u64) -> Result<DMatrix<f64>> {
    gen_precision_with(p, edges, &mut ChaCha20Rng::seed_from_u64(seed))
}

/// `n` rows drawn i.i.d. from `N(0, Ω⁻¹)`: `z ~ N(0, I)` and `Lᵀ x = z` with
/// `Ω = L Lᵀ`. Rows are generated in order, `p` normals each.
pub fn sample_mvn_with(omega: &DMatrix<f64>, n: usize, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    let p = omega.nrows();
    let chol = Cholesky::new(omega.clone()).ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    let mut z = DMatrix::zeros(p, n);
    for i in 0..n {
        for j in 0..p {
            z[(j, i)] = rng.sample(StandardNormal);
        }
    }
    let x = l
        .tr_solve_lower_triangular(&z)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    Ok(x.transpose())
}

pub fn sample_mvn(omega: &DMatrix<f64>, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    sample_mvn_with(omega, n, &mut ChaCha20Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub edge_sets: EdgeSets,
    pub precisions: Vec<DMatrix<f64>>,
}

impl GroundTruth {
    pub fn edges(&self, k: usize) -> BTreeSet<(usize, usize)> {
        self.edge_sets.full(k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: SimulationSpec,
    pub truth: GroundTruth,
    /// Raw (unstandardized) `n × p` samples per subpopulation.
    pub data: Vec<DMatrix<f64>>,
}

pub fn gen_truth(spec: &SimulationSpec) -> Result<GroundTruth> {
    let edge_sets = gen_edge_sets(spec)?;
    let precisions = (0..spec.k)
        .map(|k| {
            let mut rng = stream_rng(spec.seed, PRECISION_STREAM + k as u64);
            gen_precision_with(spec.p, &edge_sets.full(k), &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GroundTruth { edge_sets, precisions })
}

/// Draws `n` samples for subpopulation `k` of a scenario seeded with `seed`.
pub fn sample_subpopulation(omega: &DMatrix<f64>, n: usize, seed: u64, k: usize) -> Result<DMatrix<f64>> {
    sample_mvn_with(omega, n, &mut stream_rng(seed, DATA_STREAM + k as u64))
}

pub fn simulate(spec: &SimulationSpec) -> Result<Scenario> {
    let truth = gen_truth(spec)?;
    let data = truth
        .precisions
        .iter()
        .enumerate()
        .map(|(k, omega)| sample_subpopulation(omega, spec.n, spec.seed, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scenario {
        spec: *spec,
        truth,
        data,
    })
}
