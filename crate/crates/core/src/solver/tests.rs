use approx::assert_abs_diff_eq;

use super::*;
use crate::driver::{
    anticipated_driver, h1_driver, path_driver, plain_driver, precompute_context, sample_martingale_pairs, Delay,
    PathFunctional, ScalarRule,
};
use crate::martingale::Martingale;
use crate::space::{build_random_walk_space, closure};

fn noise_terminal(space: &FilteredSpace) -> RandomVariable {
    RandomVariable::from_terminal_noise(space, 1, |b, out| out[0] = b[0])
}

fn frozen(space: &FilteredSpace, driver: &Driver) -> FrozenContext {
    let y = AdaptedProcess::zeros(space, driver.dim());
    precompute_context(
        space,
        &Martingale::zero(space, driver.dim()),
        Some(&y),
        &driver.feature_request(),
    )
    .unwrap()
}

fn linear_decay_value(steps: usize, scheme: Scheme) -> f64 {
    let s = build_random_walk_space(1, steps, 1.0).unwrap();
    let d = plain_driver(1, ScalarRule::affine(-1.0, 0.0, 0.0));
    let cfg = SolverConfig {
        scheme,
        ..SolverConfig::default()
    };
    let sol = solve_frozen(&s, &RandomVariable::constant(&s, &[1.0]), &d, &frozen(&s, &d), &cfg).unwrap();
    sol.y.value(0)[0]
}

#[test]
fn zero_driver_is_closure() {
    let s = build_random_walk_space(1, 5, 1.0).unwrap();
    let d = plain_driver(1, ScalarRule::affine(0.0, 0.0, 0.0));
    let sol = solve_frozen(&s, &noise_terminal(&s), &d, &frozen(&s, &d), &SolverConfig::default()).unwrap();
    let b = Martingale::driving_noise(&s);
    for node in 0..s.node_count() {
        assert_abs_diff_eq!(sol.y.value(node)[0], s.noise(node)[0], epsilon = 1e-14);
        assert_abs_diff_eq!(sol.m.value(node)[0], b.value(node)[0], epsilon = 1e-14);
    }
    assert!(sol.max_residual < 1e-14);
}

#[test]
fn implicit_linear_recursion() {
    let s = build_random_walk_space(1, 4, 1.0).unwrap();
    let d = plain_driver(1, ScalarRule::affine(-1.0, 0.0, 0.0));
    let ctx = frozen(&s, &d);
    let xi = RandomVariable::constant(&s, &[1.0]);
    let sol = solve_frozen(&s, &xi, &d, &ctx, &SolverConfig::default()).unwrap();
    assert_abs_diff_eq!(sol.y.value(0)[0], 0.4096, epsilon = 1e-12);
    assert!(sol.m.process().values().iter().all(|v| v.abs() < 1e-12));
    assert!(residual_check(&s, &xi, &d, &ctx, &sol).unwrap() < 1e-12);
}

#[test]
fn constant_driver_shifts_by_remaining_time() {
    let s = build_random_walk_space(1, 4, 1.0).unwrap();
    let d = plain_driver(1, ScalarRule::affine(0.0, 0.0, 0.7));
    for scheme in [Scheme::Implicit, Scheme::Explicit] {
        let cfg = SolverConfig {
            scheme,
            ..SolverConfig::default()
        };
        let sol = solve_frozen(&s, &noise_terminal(&s), &d, &frozen(&s, &d), &cfg).unwrap();
        for node in 0..s.node_count() {
            let t = s.grid().time(s.level_of(node));
            assert_abs_diff_eq!(
                sol.y.value(node)[0],
                s.noise(node)[0] + 0.7 * (1.0 - t),
                epsilon = 1e-13
            );
            assert_abs_diff_eq!(sol.m.value(node)[0], s.noise(node)[0], epsilon = 1e-13);
        }
    }
}

#[test]
fn corrupted_solution_is_detected() {
    let s = build_random_walk_space(1, 4, 1.0).unwrap();
    let d = plain_driver(1, ScalarRule::affine(-1.0, 0.0, 0.0));
    let ctx = frozen(&s, &d);
    let xi = noise_terminal(&s);
    let mut sol = solve_frozen(&s, &xi, &d, &ctx, &SolverConfig::default()).unwrap();
    sol.y.value_mut(5)[0] += 1.0;
    let r = residual_check(&s, &xi, &d, &ctx, &sol).unwrap();
    assert!(r >= 1.0 - s.dt() * 1.0, "residual {r}");
}

#[test]
fn implicit_precondition_is_enforced() {
    let s = build_random_walk_space(1, 2, 1.0).unwrap();
    let d = plain_driver(1, ScalarRule::affine(3.0, 0.0, 0.0));
    let r = solve_frozen(&s, &noise_terminal(&s), &d, &frozen(&s, &d), &SolverConfig::default());
    assert!(matches!(r, Err(SolverError::Precondition { .. })));
    let explicit = SolverConfig {
        scheme: Scheme::Explicit,
        ..SolverConfig::default()
    };
    assert!(solve_frozen(&s, &noise_terminal(&s), &d, &frozen(&s, &d), &explicit).is_ok());
}

#[test]
fn cubic_driver_root_at_every_node() {
    let s = build_random_walk_space(1, 6, 1.0).unwrap();
    let d = plain_driver(
        1,
        ScalarRule::Cubic {
            a3: -1.0,
            a: 0.0,
            b: 0.0,
            c: 0.0,
            c_t: 0.0,
        },
    );
    let xi = RandomVariable::from_terminal_noise(&s, 1, |b, out| out[0] = 3.0 * b[0]);
    let sol = solve_frozen(&s, &xi, &d, &frozen(&s, &d), &SolverConfig::default()).unwrap();
    assert!(sol.max_residual < 1e-10);
}

#[test]
fn zero_data_gives_zero_solution() {
    let s = build_random_walk_space(2, 3, 1.0).unwrap();
    let d = h1_driver(1, ScalarRule::affine(-1.0, 0.5, 0.0));
    let xi = RandomVariable::constant(&s, &[0.0]);
    let out = picard_solve(&s, &xi, &d, &SolverConfig::default(), &PicardStart::Zero).unwrap();
    assert!(out.solution.y.values().iter().all(|v| *v == 0.0));
    assert!(out.solution.m.process().values().iter().all(|v| *v == 0.0));
}

#[test]
fn scheme_gap_shrinks_with_steps() {
    let mut gaps = Vec::new();
    for steps in [4, 8, 16] {
        let dt = 1.0 / steps as f64;
        let gap = (linear_decay_value(steps, Scheme::Implicit) - linear_decay_value(steps, Scheme::Explicit)).abs();
        assert!(gap <= 0.5 * dt, "N = {steps}: gap {gap}");
        gaps.push(gap);
    }
    assert!(gaps[1] < gaps[0] && gaps[2] < gaps[1]);
}

#[test]
fn m_insensitive_driver_converges_at_second_iterate() {
    let s = build_random_walk_space(1, 4, 1.0).unwrap();
    let d = h1_driver(1, ScalarRule::affine(-1.0, 0.0, 0.3));
    let out = picard_solve(
        &s,
        &noise_terminal(&s),
        &d,
        &SolverConfig::default(),
        &PicardStart::Zero,
    )
    .unwrap();
    assert_eq!(out.trace.len(), 2);
    assert!(out.trace.deltas[1] < 1e-10);
}

#[test]
fn h1_coupled_matches_oracle() {
    let s = build_random_walk_space(1, 6, 1.0).unwrap();
    let d = h1_driver(1, ScalarRule::affine(-1.0, 0.5, 0.0));
    let xi = noise_terminal(&s);
    let out = picard_solve(&s, &xi, &d, &SolverConfig::default(), &PicardStart::Zero).unwrap();
    let oracle = oracle_global_solve(&s, &xi, &d, &OracleConfig::default()).unwrap();
    let dist = combined_distance(&s, &out.solution.y, &out.solution.m, &oracle.y, &oracle.m);
    assert!(dist < 1e-9, "distance {dist}");
    for n in 3..=out.trace.len() {
        assert!(out.trace.ratio(n).unwrap() < 1.0);
    }
}

#[test]
fn anticipated_driver_matches_oracle() {
    let s = build_random_walk_space(1, 6, 1.0).unwrap();
    let d = anticipated_driver(1, ScalarRule::affine(-1.0, 0.5, 0.0), Delay::Constant(1), Some(0.0));
    let xi = RandomVariable::from_terminal_noise(&s, 1, |b, out| out[0] = b[0] * b[0]);
    let out = picard_solve(&s, &xi, &d, &SolverConfig::default(), &PicardStart::Zero).unwrap();
    assert!(out.solution.max_residual < 1e-10);
    let oracle = oracle_global_solve(&s, &xi, &d, &OracleConfig::default()).unwrap();
    let dist = combined_distance(&s, &out.solution.y, &out.solution.m, &oracle.y, &oracle.m);
    assert!(dist < 1e-9, "distance {dist}");
}

#[test]
fn path_driver_converges() {
    let s = build_random_walk_space(1, 6, 1.0).unwrap();
    let d = path_driver(1, ScalarRule::affine(-1.0, 0.5, 0.0), PathFunctional::SupAbs);
    let out = picard_solve(
        &s,
        &noise_terminal(&s),
        &d,
        &SolverConfig::default(),
        &PicardStart::Zero,
    )
    .unwrap();
    assert!(out.trace.len() <= 60);
    assert!(out.solution.max_residual < 1e-10);
}

#[test]
fn full_freeze_of_feature_free_driver_is_immediate() {
    let s = build_random_walk_space(1, 4, 1.0).unwrap();
    let d = plain_driver(
        1,
        ScalarRule::Affine {
            a: 0.0,
            b: 0.0,
            c: 1.0,
            c_t: -1.0,
        },
    );
    let out = picard_solve_full_freeze(
        &s,
        &noise_terminal(&s),
        &d,
        &SolverConfig::default(),
        &PicardStart::Zero,
    )
    .unwrap();
    assert_eq!(out.trace.len(), 2);
}

#[test]
fn full_freeze_future_y_matches_oracle() {
    let s = build_random_walk_space(1, 6, 1.0).unwrap();
    let d = h1_driver(1, ScalarRule::affine(-1.0, 0.5, 0.0)).with_frozen_y(1);
    let xi = noise_terminal(&s);
    let out = picard_solve_full_freeze(&s, &xi, &d, &SolverConfig::default(), &PicardStart::Zero).unwrap();
    let oracle = oracle_global_solve(&s, &xi, &d, &OracleConfig::default()).unwrap();
    let dist = combined_distance(&s, &out.solution.y, &out.solution.m, &oracle.y, &oracle.m);
    assert!(dist < 1e-9, "distance {dist}");
}

#[test]
fn full_freeze_pointwise_matches_schemes() {
    let s = build_random_walk_space(1, 5, 1.0).unwrap();
    let xi = RandomVariable::from_terminal_noise(&s, 1, |b, out| out[0] = 1.0 + b[0]);
    let g = ScalarRule::affine(-1.0, 0.0, 0.0);
    let direct = plain_driver(1, g.clone());
    let ctx = frozen(&s, &direct);
    for (offset, scheme) in [(0, Scheme::Implicit), (1, Scheme::Explicit)] {
        let cfg = SolverConfig {
            scheme,
            ..SolverConfig::default()
        };
        let reference = solve_frozen(&s, &xi, &direct, &ctx, &cfg).unwrap();
        let ff = plain_driver(1, g.clone()).with_frozen_y(offset);
        let out = picard_solve_full_freeze(&s, &xi, &ff, &SolverConfig::default(), &PicardStart::Zero).unwrap();
        let dist = combined_distance(&s, &out.solution.y, &out.solution.m, &reference.y, &reference.m);
        assert!(dist < 1e-9, "offset {offset}: distance {dist}");
    }
}

#[test]
fn oracle_reproduces_closed_forms() {
    let s = build_random_walk_space(1, 4, 1.0).unwrap();
    let zero = plain_driver(1, ScalarRule::affine(0.0, 0.0, 0.0));
    let xi = RandomVariable::from_terminal_noise(&s, 1, |b, out| out[0] = b[0] * b[0]);
    let sol = oracle_global_solve(&s, &xi, &zero, &OracleConfig::default()).unwrap();
    let c = closure(&s, &xi).unwrap();
    for node in 0..s.node_count() {
        assert_abs_diff_eq!(sol.y.value(node)[0], c.value(node)[0], epsilon = 1e-12);
    }
    let lin = plain_driver(1, ScalarRule::affine(-1.0, 0.0, 0.0));
    let sol = oracle_global_solve(
        &s,
        &RandomVariable::constant(&s, &[1.0]),
        &lin,
        &OracleConfig::default(),
    )
    .unwrap();
    assert_abs_diff_eq!(sol.y.value(0)[0], 0.4096, epsilon = 1e-12);
}

#[test]
fn oracle_refuses_large_trees() {
    let s = build_random_walk_space(1, 12, 1.0).unwrap();
    let d = plain_driver(1, ScalarRule::affine(0.0, 0.0, 0.0));
    assert!(matches!(
        oracle_global_solve(&s, &noise_terminal(&s), &d, &OracleConfig::default()),
        Err(SolverError::OracleInconclusive(_))
    ));
}

#[test]
fn fixed_point_is_stationary() {
    let s = build_random_walk_space(1, 5, 1.0).unwrap();
    let d = h1_driver(1, ScalarRule::affine(-1.0, 0.5, 0.0));
    let xi = noise_terminal(&s);
    let cfg = SolverConfig::default();
    let out = picard_solve(&s, &xi, &d, &cfg, &PicardStart::Zero).unwrap();
    let ctx = precompute_context(&s, &out.solution.m, None, &d.feature_request()).unwrap();
    let again = solve_frozen(&s, &xi, &d, &ctx, &cfg).unwrap();
    let step = combined_distance(&s, &again.y, &again.m, &out.solution.y, &out.solution.m);
    assert!(step < 2.0 * cfg.picard_tol);
}

#[test]
fn distinct_starts_reach_the_same_solution() {
    let s = build_random_walk_space(1, 5, 1.0).unwrap();
    let d = h1_driver(1, ScalarRule::affine(-1.0, 0.5, 0.0));
    let xi = noise_terminal(&s);
    let cfg = SolverConfig::default();
    let base = picard_solve(&s, &xi, &d, &cfg, &PicardStart::Zero).unwrap().solution;
    for (m0, _) in sample_martingale_pairs(&s, 1, 2, 11) {
        let other = picard_solve(&s, &xi, &d, &cfg, &PicardStart::Martingale(m0))
            .unwrap()
            .solution;
        assert!(combined_distance(&s, &base.y, &base.m, &other.y, &other.m) < 1e-9);
    }
}

#[test]
fn sequential_and_parallel_agree_bitwise() {
    let s = build_random_walk_space(1, 11, 1.0).unwrap();
    let d = h1_driver(1, ScalarRule::affine(-1.0, 0.5, 0.0));
    let xi = RandomVariable::from_terminal_noise(&s, 1, |b, out| out[0] = b[0].sin());
    let run = |execution| {
        let cfg = SolverConfig {
            execution,
            ..SolverConfig::default()
        };
        picard_solve(&s, &xi, &d, &cfg, &PicardStart::Zero).unwrap()
    };
    let a = run(Execution::Sequential);
    let b = run(Execution::Parallel);
    assert_eq!(a.solution, b.solution);
    assert_eq!(a.trace, b.trace);
}
