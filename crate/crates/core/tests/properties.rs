use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use sns_core::admm::soft_threshold;
use sns_core::jgl::eigen_map;
use sns_core::linalg::{center_scale, factor_gram_shift, sym_eigen, woodbury_apply};
use sns_core::pipeline::{assemble_edges, CoefficientSet, EdgeRule, MultiEdgeSet};
use sns_core::roc::{rates, TruthSets};
use sns_core::sim::{gen_edge_sets, gen_truth, simulate, SimulationSpec};

fn feasible_spec() -> impl Strategy<Value = SimulationSpec> {
    (4usize..25, 2usize..4, 0.0f64..0.3, 0.0f64..1.0, any::<u64>())
        .prop_map(|(p, k, s, rho, seed)| SimulationSpec { p, k, n: 5, s, rho, seed })
        .prop_filter("pair budget", |sp| sp.validate().is_ok())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigen_map_is_positive(mu in -1e6f64..1e6, b in 1e-3f64..1e3) {
        let w = eigen_map(mu, b);
        prop_assert!(w > 0.0);
        prop_assert!((b * w - mu - 1.0 / w).abs() <= 1e-9 * (1.0 + mu.abs()));
    }

    #[test]
    fn soft_threshold_shrinks(z in -10.0f64..10.0, t in 0.0f64..5.0) {
        let s = soft_threshold(z, t);
        prop_assert!(s.abs() <= z.abs());
        prop_assert!(s == 0.0 || s.signum() == z.signum());
        prop_assert!(((z - s).abs() - t.min(z.abs())).abs() < 1e-12);
    }

    #[test]
    fn edge_sets_satisfy_the_constraints(spec in feasible_spec()) {
        let e = gen_edge_sets(&spec).unwrap();
        prop_assert_eq!(e.common.len(), spec.common_count());
        let mut union = BTreeSet::new();
        for b in &e.individual {
            prop_assert_eq!(b.len(), spec.individual_count());
            prop_assert!(b.is_disjoint(&e.common));
            union.extend(b.iter().copied());
        }
        let mut inter = e.individual[0].clone();
        for b in &e.individual[1..] {
            inter = inter.intersection(b).copied().collect();
        }
        prop_assert!(inter.is_empty());
        prop_assert!(union.iter().all(|&(j, l)| j < l && l < spec.p));
    }

    #[test]
    fn precisions_are_dominant_with_exact_support(spec in feasible_spec()) {
        let truth = gen_truth(&spec).unwrap();
        for (k, om) in truth.precisions.iter().enumerate() {
            prop_assert_eq!(om, &om.transpose());
            let (_, vals) = sym_eigen(om).unwrap();
            prop_assert!(vals[0] >= 1.0 - 1e-10);
            let support: BTreeSet<_> = (0..spec.p)
                .flat_map(|j| ((j + 1)..spec.p).map(move |l| (j, l)))
                .filter(|&(j, l)| om[(j, l)] != 0.0)
                .collect();
            prop_assert_eq!(&support, &truth.edges(k));
            for &(j, l) in &support {
                prop_assert!((0.25..=0.5).contains(&om[(j, l)].abs()));
            }
        }
    }

    #[test]
    fn simulation_is_reproducible(seed in any::<u64>()) {
        let spec = SimulationSpec { p: 6, k: 2, n: 8, s: 0.2, rho: 0.5, seed };
        prop_assert_eq!(simulate(&spec).unwrap(), simulate(&spec).unwrap());
    }

    #[test]
    fn rates_follow_support_nesting(
        seed in any::<u64>(),
        keep in proptest::collection::vec(any::<bool>(), 45),
        extra in proptest::collection::vec(any::<bool>(), 45),
    ) {
        let spec = SimulationSpec { p: 10, k: 2, n: 5, s: 0.2, rho: 0.5, seed };
        let truth = gen_truth(&spec).unwrap();
        let truth = TruthSets::from_precisions(&truth.precisions).unwrap();
        let pairs: Vec<_> = (0..10).flat_map(|j| ((j + 1)..10).map(move |l| (j, l))).collect();
        let big: Vec<_> = pairs.iter().zip(&extra).filter(|(_, &e)| e).map(|(&q, _)| q).collect();
        let small: Vec<_> = big.iter().zip(&keep).filter(|(_, &k)| k).map(|(&q, _)| q).collect();
        let (f1, t1) = rates(&truth, &MultiEdgeSet::new(10, vec![big.clone(), big]).unwrap()).unwrap();
        let (f2, t2) = rates(&truth, &MultiEdgeSet::new(10, vec![small.clone(), small]).unwrap()).unwrap();
        prop_assert!(t2 <= t1 && f2 <= f1);
        prop_assert!((0.0..=1.0).contains(&t1) && (0.0..=1.0).contains(&f1));
    }

    #[test]
    fn and_edges_are_a_subset_of_or_edges(
        entries in proptest::collection::vec(prop_oneof![Just(0.0), -1.0f64..1.0], 36),
    ) {
        let mut m = DMatrix::from_vec(6, 6, entries);
        m.fill_diagonal(0.0);
        let c = CoefficientSet::new(vec![m.clone()]).unwrap();
        let and = assemble_edges(&c, EdgeRule::And);
        let or = assemble_edges(&c, EdgeRule::Or);
        prop_assert!(and.edges(0).is_subset(or.edges(0)));
        let sym = CoefficientSet::new(vec![m.map(|v| v.abs()) + m.transpose().map(|v| v.abs())]).unwrap();
        prop_assert_eq!(assemble_edges(&sym, EdgeRule::And), assemble_edges(&sym, EdgeRule::Or));
    }

    #[test]
    fn woodbury_matches_dense_solve(
        n in 2usize..12, p in 2usize..12, b in 0.05f64..5.0, seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let raw = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        prop_assume!(center_scale(&raw).is_ok());
        let x = center_scale(&raw).unwrap();
        let factor = factor_gram_shift(&x, b).unwrap();
        let j = rng.random_range(0..p);
        let v = DVector::from_fn(p - 1, |_, _| rng.random_range(-1.0..1.0));
        let got = woodbury_apply(&factor, &x, j, &v).unwrap();
        let others: Vec<usize> = (0..p).filter(|&l| l != j).collect();
        let z = x.values().select_columns(&others);
        let dense = z.tr_mul(&z) + DMatrix::identity(p - 1, p - 1) * factor.shift();
        let want = dense.lu().solve(&v).unwrap();
        prop_assert!((&got - &want).norm() <= 1e-8 * want.norm().max(1e-300));
    }
}
