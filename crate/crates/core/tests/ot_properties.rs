mod common;

use common::*;
use corel::ot::{cost_matrix, sinkhorn, DocDistribution, Epsilon, SinkhornConfig};
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::Rng;

fn dist(id: &str, support: Array2<f64>) -> DocDistribution {
    DocDistribution::uniform(id, support).unwrap()
}

fn max_scaled(scale: f64) -> SinkhornConfig {
    SinkhornConfig {
        epsilon: Epsilon::MaxScaled(scale),
        max_iters: 200_000,
        tolerance: 1e-8,
    }
}

#[test]
fn exact_oracle_on_hand_instances() {
    // permutation optimum: swap beats identity
    let c = array![[1.0, 0.0], [0.0, 1.0]];
    assert_eq!(exact_ot(&c), 0.0);
    // 1x3: unique coupling, mean of the row
    let c = array![[3.0, 6.0, 9.0]];
    assert!((exact_ot(&c) - 6.0).abs() < 1e-12);
    // 2x3 with a split column
    let c = array![[0.0, 0.0, 5.0], [5.0, 5.0, 0.0]];
    // row 1 must send 1/6 of its 1/2 to a non-zero cell
    assert!((exact_ot(&c) - 5.0 / 6.0).abs() < 1e-12);
}

#[test]
fn sinkhorn_matches_exact_transport() {
    let mut rng = rng(2024);
    for case in 0..50 {
        let (n1, n2, d) = (
            rng.gen_range(1..=4),
            rng.gen_range(1..=4),
            rng.gen_range(1..=3),
        );
        let a = dist("a", random_matrix(n1, d, 1.0, &mut rng));
        let b = dist("b", random_matrix(n2, d, 1.0, &mut rng));
        let exact = exact_ot(&cost_matrix(&a, &b).unwrap());
        let r = sinkhorn(&a, &b, &max_scaled(1e-3)).unwrap();
        assert!(r.converged, "case {case}");
        assert!(
            r.marginal_violation < 1e-6,
            "case {case}: {}",
            r.marginal_violation
        );
        let rel = (r.cost - exact).abs() / exact.max(1e-12);
        assert!(
            rel < 0.02,
            "case {case}: sinkhorn {} vs exact {exact}",
            r.cost
        );
    }
}

#[test]
fn identical_distributions_have_small_cost() {
    let mut rng = rng(5);
    for _ in 0..10 {
        let support = random_matrix(rng.gen_range(2..=5), 3, 1.0, &mut rng);
        let a = dist("a", support.clone());
        let c = cost_matrix(&a, &a).unwrap();
        let mean = c.mean().unwrap();
        let cfg = SinkhornConfig {
            epsilon: Epsilon::MeanScaled(0.01),
            ..SinkhornConfig::default()
        };
        let r = sinkhorn(&a, &dist("b", support), &cfg).unwrap();
        assert!(r.cost < 0.05 * mean, "{} vs mean {mean}", r.cost);
    }
}

#[test]
fn cost_recomputes_from_plan() {
    let mut rng = rng(8);
    let a = dist("a", random_matrix(4, 3, 1.0, &mut rng));
    let b = dist("b", random_matrix(3, 3, 1.0, &mut rng));
    let r = sinkhorn(&a, &b, &SinkhornConfig::default()).unwrap();
    let c = cost_matrix(&a, &b).unwrap();
    assert!(((&c * &r.plan).sum() - r.cost).abs() < 1e-10);
    assert!(r.plan.iter().all(|&g| g >= 0.0));
}

fn support_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, usize, usize)> {
    (1usize..=4, 1usize..=4).prop_flat_map(|(n1, n2)| {
        (
            prop::collection::vec(-2.0f64..2.0, n1 * 2),
            prop::collection::vec(-2.0f64..2.0, n2 * 2),
            Just(n1),
            Just(n2),
        )
    })
}

fn build(values: &[f64], n: usize) -> Array2<f64> {
    Array2::from_shape_vec((n, 2), values.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symmetric_under_argument_swap((va, vb, n1, n2) in support_strategy()) {
        let a = dist("a", build(&va, n1));
        let b = dist("b", build(&vb, n2));
        let cfg = SinkhornConfig { epsilon: Epsilon::MeanScaled(0.1), max_iters: 100_000, tolerance: 1e-13 };
        let ab = sinkhorn(&a, &b, &cfg).unwrap().cost;
        let ba = sinkhorn(&b, &a, &cfg).unwrap().cost;
        prop_assert!((ab - ba).abs() < 1e-9, "{} vs {}", ab, ba);
    }

    #[test]
    fn invariant_under_common_translation((va, vb, n1, n2) in support_strategy(), shift in prop::array::uniform2(-3.0f64..3.0)) {
        let a = build(&va, n1);
        let b = build(&vb, n2);
        let t = ndarray::Array1::from(shift.to_vec());
        let cfg = SinkhornConfig { tolerance: 1e-12, max_iters: 100_000, ..SinkhornConfig::default() };
        let base = sinkhorn(&dist("a", a.clone()), &dist("b", b.clone()), &cfg).unwrap().cost;
        let moved = sinkhorn(&dist("a", &a + &t), &dist("b", &b + &t), &cfg).unwrap().cost;
        prop_assert!((base - moved).abs() < 1e-8 * (1.0 + base), "{} vs {}", base, moved);
    }

    #[test]
    fn transport_cost_grows_with_regularization((va, vb, n1, n2) in support_strategy()) {
        let a = dist("a", build(&va, n1));
        let b = dist("b", build(&vb, n2));
        let exact = exact_ot(&cost_matrix(&a, &b).unwrap());
        // the smallest epsilon may undershoot the optimum by about the marginal tolerance
        let mut previous = exact - 1e-6 * (1.0 + exact);
        for scale in [0.01, 0.1, 1.0, 10.0] {
            let cost = sinkhorn(&a, &b, &max_scaled(scale)).unwrap().cost;
            prop_assert!(cost >= previous - 1e-9, "scale {}: {} < {}", scale, cost, previous);
            previous = cost;
        }
    }

    #[test]
    fn plan_has_requested_marginals((va, vb, n1, n2) in support_strategy()) {
        let a = dist("a", build(&va, n1));
        let b = dist("b", build(&vb, n2));
        let r = sinkhorn(&a, &b, &SinkhornConfig::default()).unwrap();
        prop_assume!(r.converged);
        for (i, row) in r.plan.rows().into_iter().enumerate() {
            prop_assert!((row.sum() - a.weights[i]).abs() < 1e-6);
        }
        for (j, col) in r.plan.columns().into_iter().enumerate() {
            prop_assert!((col.sum() - b.weights[j]).abs() < 1e-6);
        }
    }
}
