use bsde_core::driver::{
    classical_driver, estimate_h3, h1_driver, h1_field, path_driver, plain_driver, precompute_context, psi_envelope,
    sample_martingale_pairs, w1_distance, AtomicMeasure, GroundMetric, H3Config, PathFunctional, ScalarRule,
};
use bsde_core::martingale::{close_martingale, m2_distance, square_bracket, Martingale};
use bsde_core::solver::{picard_solve, PicardStart, SolverConfig};
use bsde_core::space::{
    build_jump_walk_space, build_random_walk_space, conditional_expectation, FilteredSpace, RandomVariable,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_terminal(space: &FilteredSpace, dim: usize, seed: u64) -> RandomVariable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RandomVariable::from_leaf_fn(space, dim, |_, out| {
        for v in out.iter_mut() {
            *v = rng.random_range(-2.0..2.0);
        }
    })
}

fn random_space(kind: u8) -> FilteredSpace {
    match kind {
        0 => build_random_walk_space(1, 5, 1.0).unwrap(),
        1 => build_random_walk_space(2, 3, 0.5).unwrap(),
        _ => build_jump_walk_space(4, 1.0, 0.2, 0.5).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tower_property(kind in 0u8..3, seed in any::<u64>(), j in 0usize..4, gap in 0usize..3) {
        let s = random_space(kind);
        let x = random_terminal(&s, 2, seed);
        let k = (j + gap).min(s.steps());
        let j = j.min(k);
        let inner = conditional_expectation(&s, &x, k).unwrap();
        let lifted = RandomVariable::from_leaf_fn(&s, 2, |leaf, out| {
            let node = s.ancestor(s.leaf_node(leaf), k);
            out.copy_from_slice(inner.value(node - s.level(k).start));
        });
        let twice = conditional_expectation(&s, &lifted, j).unwrap();
        let once = conditional_expectation(&s, &x, j).unwrap();
        for idx in 0..s.level_width(j) {
            for (a, b) in twice.value(idx).iter().zip(once.value(idx)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bracket_scales_quadratically(kind in 0u8..3, seed in any::<u64>(), kappa in prop::sample::select(vec![-2.0, 0.5, 3.0])) {
        let s = random_space(kind);
        let m = close_martingale(&s, &random_terminal(&s, 1, seed)).unwrap();
        let base = square_bracket(&s, &m);
        let scaled = square_bracket(&s, &m.scaled(kappa));
        for node in 0..s.node_count() {
            prop_assert!((scaled.at(node) - kappa * kappa * base.at(node)).abs() < 1e-12 * (1.0 + base.at(node)));
        }
    }

    #[test]
    fn m2_triangle_inequality(kind in 0u8..3, seed in any::<u64>()) {
        let s = random_space(kind);
        let m: Vec<Martingale> = (0..3).map(|i| close_martingale(&s, &random_terminal(&s, 1, seed ^ i)).unwrap()).collect();
        let d = |a: &Martingale, b: &Martingale| m2_distance(&s, a, b).unwrap();
        prop_assert!(d(&m[0], &m[2]) <= d(&m[0], &m[1]) + d(&m[1], &m[2]) + 1e-10);
    }

    #[test]
    fn h1_tower_consistency(kind in 0u8..3, seed in any::<u64>()) {
        let s = random_space(kind);
        let m = close_martingale(&s, &random_terminal(&s, 1, seed)).unwrap();
        let h = h1_field(&s, &m);
        let bracket = square_bracket(&s, &m);
        for t in 1..=s.steps() {
            for sl in 0..t {
                let x = RandomVariable::from_leaf_fn(&s, 1, |leaf, out| {
                    let node_t = s.ancestor(s.leaf_node(leaf), t);
                    let node_s = s.ancestor(node_t, sl);
                    out[0] = h.value(node_t)[0] + bracket.at(node_t) - bracket.at(node_s);
                });
                let e = conditional_expectation(&s, &x, sl).unwrap();
                for (idx, node) in s.level(sl).enumerate() {
                    prop_assert!((e.value(idx)[0] - h.value(node)[0]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn w1_is_a_metric(seed in any::<u64>(), dim in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut measure = |n: usize| {
            let atoms: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = weights.iter().sum();
            AtomicMeasure::new(dim, atoms, weights.iter().map(|w| w / total).collect()).unwrap()
        };
        let (a, b, c) = (measure(3), measure(4), measure(2));
        let w = |x: &AtomicMeasure, y: &AtomicMeasure| w1_distance(x, y, GroundMetric::Euclidean, 64).unwrap();
        prop_assert_eq!(w(&a, &b), w(&b, &a));
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-10);
        prop_assert!(w(&a, &a).abs() < 1e-12);
    }

    #[test]
    fn envelope_dominates_pointwise(kind in 0u8..2, seed in any::<u64>(), radius in 0.1f64..3.0) {
        let s = random_space(kind);
        let drivers = [
            plain_driver(1, ScalarRule::Cubic { a3: -1.0, a: 0.5, b: 0.0, c: 0.3, c_t: 0.0 }),
            classical_driver(1, ScalarRule::affine(-2.0, 1.0, 0.1)),
            h1_driver(1, ScalarRule::Arctan { a: -1.0, s: 0.5, b: 0.5, c: 0.0, c_t: 0.0 }),
            path_driver(1, ScalarRule::ClippedAffine { a: -1.0, b: 0.5, c: 0.0, c_t: 1.0, lo: -1.0, hi: 1.0 }, PathFunctional::SupAbs),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for d in &drivers {
            let ctx0 = precompute_context(&s, &Martingale::zero(&s, 1), None, &d.feature_request()).unwrap();
            let env = psi_envelope(d, &s, &ctx0, radius, 8).unwrap();
            let bound = d.bind(&s, &ctx0).unwrap();
            let (mut f0, mut fy) = ([0.0], [0.0]);
            for node in 0..s.level(s.steps()).start {
                let y = rng.random_range(-radius..=radius);
                let k = s.level_of(node);
                bound.eval(k, node, &[0.0], &mut f0);
                bound.eval(k, node, &[y], &mut fy);
                prop_assert!((fy[0] - f0[0]).abs() <= env.field.value(node)[0] + 1e-12);
            }
        }
    }

    #[test]
    fn h3_witness_reproduces(seed in any::<u64>()) {
        let s = build_random_walk_space(1, 4, 1.0).unwrap();
        let d = h1_driver(1, ScalarRule::affine(-1.0, 0.7, 0.0));
        let pairs = sample_martingale_pairs(&s, 1, 6, seed);
        let cfg = H3Config { levels: vec![0, 2], ys: vec![vec![0.0]], source_y: None };
        let report = estimate_h3(&d, &s, &pairs, &cfg).unwrap();
        let w = report.h3_witness.unwrap();
        let (m, mp) = &pairs[w.pair];
        let single = estimate_h3(&d, &s, &[(m.clone(), mp.clone())], &H3Config { levels: vec![w.level], ..cfg }).unwrap();
        prop_assert!((single.lambda_hat.unwrap() - report.lambda_hat.unwrap()).abs() < 1e-10);
    }
}

#[test]
fn solutions_are_martingales_and_deterministic() {
    let s = build_random_walk_space(1, 6, 1.0).unwrap();
    let xi = random_terminal(&s, 1, 3);
    let d = h1_driver(1, ScalarRule::affine(-1.0, 0.5, 0.0));
    let a = picard_solve(&s, &xi, &d, &SolverConfig::default(), &PicardStart::Zero).unwrap();
    let b = picard_solve(&s, &xi, &d, &SolverConfig::default(), &PicardStart::Zero).unwrap();
    assert_eq!(a.solution, b.solution);
    let dev = a.solution.m.max_martingale_deviation(&s).map_or(0.0, |(_, v)| v);
    assert!(dev < 1e-10);
}

#[test]
fn contraction_when_whole_grid_is_admissible() {
    let s = build_random_walk_space(1, 6, 0.25).unwrap();
    let d = h1_driver(1, ScalarRule::affine(-1.0, 0.2, 0.0)).with_declared_lambda(0.05);
    let xi = random_terminal(&s, 1, 8);
    let out = picard_solve(&s, &xi, &d, &SolverConfig::default(), &PicardStart::Zero).unwrap();
    for n in 3..=out.trace.len() {
        assert!(out.trace.ratio(n).unwrap() <= 0.999);
    }
}

#[test]
fn uniqueness_from_closed_terminal_start() {
    let s = build_random_walk_space(1, 5, 1.0).unwrap();
    let xi = random_terminal(&s, 1, 1);
    let d = h1_driver(1, ScalarRule::affine(-1.0, 0.5, 0.0));
    let cfg = SolverConfig::default();
    let a = picard_solve(&s, &xi, &d, &cfg, &PicardStart::Zero).unwrap().solution;
    let m0 = close_martingale(&s, &random_terminal(&s, 1, 99)).unwrap();
    let b = picard_solve(&s, &xi, &d, &cfg, &PicardStart::Martingale(m0))
        .unwrap()
        .solution;
    let dist = bsde_core::solver::combined_distance(&s, &a.y, &a.m, &b.y, &b.m);
    assert!(dist < 10.0 * cfg.picard_tol);
}
