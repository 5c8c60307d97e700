use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::driver::{classical_driver, h1_driver, plain_driver, ScalarRule};
use crate::space::build_random_walk_space;

fn noise_terminal(space: &FilteredSpace) -> RandomVariable {
    RandomVariable::from_terminal_noise(space, 1, |b, out| out[0] = b[0])
}

#[test]
fn lemma_constants_at_unit_lambda() {
    let c = lemma61_constants(1.0, 0.0, 1.0 / 34.0);
    assert_eq!(c.max_width, 1.0 / 34.0);
    assert!(c.admissible);
    assert_eq!(c.beta_nu, 17.0);
    assert_abs_diff_eq!(c.beta, 1.0 + 0.5 * 0.5f64.exp(), epsilon = 1e-12);
    assert!(!lemma61_constants(1.0, 0.0, 1.0 / 34.0 + 1e-15).admissible);
}

#[test]
fn lemma_constants_without_lambda() {
    for mu in [0.0, 0.3, 2.0] {
        let c = lemma61_constants(0.0, mu, 0.1);
        assert_eq!(c.nu, 0.0);
        assert_eq!(c.beta_nu, 1.0 + 2.0 * mu);
    }
    assert_eq!(lemma61_constants(0.0, -1.0, 0.1).mu_plus, 0.0);
}

#[test]
fn partitions_round_down() {
    let s = build_random_walk_space(1, 10, 1.0).unwrap();
    assert_eq!(Partition::uniform(&s, 0.35).unwrap().boundaries(), &[0, 3, 6, 9, 10]);
    assert_eq!(Partition::uniform(&s, 0.3).unwrap().boundaries(), &[0, 3, 6, 9, 10]);
    assert_eq!(Partition::whole(&s).cell_count(), 1);
    assert!(Partition::uniform(&s, 0.05).is_err());
    assert!(Partition::from_boundaries(&s, vec![0, 4, 4, 10]).is_err());
    let p = Partition::admissible(&s, 0.0, 0.0).unwrap();
    assert!(p.max_width(&s) <= 0.5);
}

#[test]
fn qn_instance() {
    let q = qn_bound(1, 1.0, 1.0, 3);
    assert_abs_diff_eq!(q * q, 0.375, epsilon = 1e-12);
    assert_eq!(qn_bound(3, 0.0, 2.0, 5), 0.0);
}

fn small_h1(kappa: f64) -> Driver {
    h1_driver(1, ScalarRule::affine(-1.0, kappa, 0.0)).with_declared_lambda(0.01)
}

#[test]
fn identical_frozen_martingales_give_zero_lhs() {
    let s = build_random_walk_space(1, 5, 0.25).unwrap();
    let h = Martingale::driving_noise(&s);
    let r = check_lemma61(
        &s,
        &noise_terminal(&s),
        &small_h1(0.1),
        &h,
        &h,
        &Partition::whole(&s),
        &SolverConfig::default(),
    )
    .unwrap();
    for c in &r.cells {
        assert!(c.lhs.abs() < 1e-12);
        assert!(c.bracket_term.abs() < 1e-12);
    }
    assert_eq!(r.violations, 0);
}

#[test]
fn zero_against_noise_has_positive_slack() {
    let s = build_random_walk_space(1, 5, 0.25).unwrap();
    let r = check_lemma61(
        &s,
        &noise_terminal(&s),
        &small_h1(0.1),
        &Martingale::zero(&s, 1),
        &Martingale::driving_noise(&s),
        &Partition::whole(&s),
        &SolverConfig::default(),
    )
    .unwrap();
    assert!(r.cells.iter().all(|c| c.slack > 0.0));
    assert!(r.observed_lambda.unwrap() < r.declared_lambda);
}

#[test]
fn under_declared_lambda_is_refused() {
    let s = build_random_walk_space(1, 5, 0.25).unwrap();
    let d = h1_driver(1, ScalarRule::affine(-1.0, 4.0, 0.0)).with_declared_lambda(0.01);
    let r = check_lemma61(
        &s,
        &noise_terminal(&s),
        &d,
        &Martingale::zero(&s, 1),
        &Martingale::driving_noise(&s),
        &Partition::whole(&s),
        &SolverConfig::default(),
    );
    assert!(matches!(r, Err(VerifyError::InadmissiblePartition { .. })));
}

#[test]
fn undeclared_lambda_is_an_error() {
    let s = build_random_walk_space(1, 2, 0.25).unwrap();
    let d = h1_driver(1, ScalarRule::affine(-1.0, 0.1, 0.0));
    let h = Martingale::zero(&s, 1);
    let r = check_lemma61(
        &s,
        &noise_terminal(&s),
        &d,
        &h,
        &h,
        &Partition::whole(&s),
        &SolverConfig::default(),
    );
    assert!(matches!(r, Err(VerifyError::UndeclaredLambda)));
}

#[test]
fn convergence_of_m_insensitive_driver_is_vacuous() {
    let s = build_random_walk_space(1, 4, 1.0).unwrap();
    let d = plain_driver(1, ScalarRule::affine(-1.0, 0.0, 0.2));
    let out = picard_solve(
        &s,
        &noise_terminal(&s),
        &d,
        &SolverConfig::default(),
        &PicardStart::Zero,
    )
    .unwrap();
    let c = lemma61_constants(0.0, 0.0, 0.5);
    let rep = convergence_report(&out.trace, &c, 2, out.trace.first_gap().unwrap());
    assert!(rep.vacuous);
    assert!(rep.rows.iter().skip(1).all(|r| r.delta < 1e-10));
    assert!(rep.rows.iter().all(|r| r.q_n.unwrap_or(0.0) == 0.0));
}

#[test]
fn coupled_ratios_sit_below_the_rate() {
    let s = build_random_walk_space(1, 6, 1.0).unwrap();
    let d = h1_driver(1, ScalarRule::affine(-1.0, 0.5, 0.0));
    let out = picard_solve(
        &s,
        &noise_terminal(&s),
        &d,
        &SolverConfig::default(),
        &PicardStart::Zero,
    )
    .unwrap();
    let c = lemma61_constants(0.0, 0.0, 0.5);
    let rep = convergence_report(&out.trace, &c, 2, out.trace.first_gap().unwrap());
    assert!(!rep.vacuous);
    let last = rep.rows.last().unwrap().ratio.unwrap();
    assert!(last <= rep.max_q_ratio.unwrap() + 0.1, "ratio {last}");
    assert!(rep.constant.unwrap().is_finite());
}

#[test]
fn apriori_zero_data_is_vacuous() {
    let s = build_random_walk_space(1, 3, 1.0).unwrap();
    let d = plain_driver(1, ScalarRule::affine(0.0, 0.0, 0.0));
    let xi = RandomVariable::constant(&s, &[0.0]);
    let out = picard_solve(&s, &xi, &d, &SolverConfig::default(), &PicardStart::Zero).unwrap();
    let r = apriori_report(&s, &xi, &d, &out.context, &out.solution).unwrap();
    assert!(r.vacuous && !r.violation);
    assert_eq!(r.ratio, None);
}

#[test]
fn apriori_single_step_noise() {
    let s = build_random_walk_space(1, 1, 1.0).unwrap();
    let d = plain_driver(1, ScalarRule::affine(0.0, 0.0, 0.0));
    let xi = noise_terminal(&s);
    let out = picard_solve(&s, &xi, &d, &SolverConfig::default(), &PicardStart::Zero).unwrap();
    let r = apriori_report(&s, &xi, &d, &out.context, &out.solution).unwrap();
    assert_abs_diff_eq!(r.lhs, 2.0, epsilon = 1e-14);
    assert_abs_diff_eq!(r.rhs0, 1.0, epsilon = 1e-14);
    assert_abs_diff_eq!(r.ratio.unwrap(), 2.0, epsilon = 1e-14);
    assert_eq!(r.lhs1, Some(0.0));
}

#[test]
fn apriori_ratio_is_scale_invariant_for_linear_drivers() {
    let s = build_random_walk_space(1, 5, 1.0).unwrap();
    let d = classical_driver(1, ScalarRule::affine(-0.5, 0.3, 0.0));
    let ratio = |kappa: f64| {
        let xi = RandomVariable::from_terminal_noise(&s, 1, |b, out| out[0] = kappa * (1.0 + b[0] - 0.5 * b[0] * b[0]));
        let out = picard_solve(&s, &xi, &d, &SolverConfig::default(), &PicardStart::Zero).unwrap();
        apriori_report(&s, &xi, &d, &out.context, &out.solution)
            .unwrap()
            .ratio
            .unwrap()
    };
    let base = ratio(1.0);
    for kappa in [0.5, 2.0, 10.0] {
        assert_abs_diff_eq!(ratio(kappa), base, epsilon = 1e-10);
    }
}

#[test]
fn uniqueness_of_m_insensitive_driver() {
    let s = build_random_walk_space(1, 4, 1.0).unwrap();
    let d = plain_driver(1, ScalarRule::affine(-1.0, 0.0, 0.1));
    let r = uniqueness_probe(&s, &noise_terminal(&s), &d, &SolverConfig::default(), false, 3, 5).unwrap();
    assert!(r.max_distance < 1e-12);
}

#[test]
fn uniqueness_of_coupled_drivers() {
    let s = build_random_walk_space(1, 5, 1.0).unwrap();
    let xi = noise_terminal(&s);
    let cfg = SolverConfig::default();
    let d = h1_driver(1, ScalarRule::affine(-1.0, 0.5, 0.0));
    assert!(uniqueness_probe(&s, &xi, &d, &cfg, false, 3, 9).unwrap().max_distance < 1e-9);
    let ff = d.with_frozen_y(1);
    assert!(uniqueness_probe(&s, &xi, &ff, &cfg, true, 3, 9).unwrap().max_distance < 1e-9);
}

proptest! {
    #[test]
    fn beta_increases_in_each_argument(
        lambda in 0.0f64..4.0,
        mu in 0.0f64..4.0,
        w in 1e-3f64..0.5,
        step in 1e-3f64..1.0,
    ) {
        let base = lemma61_constants(lambda, mu, w).beta;
        prop_assert!(base >= 1.0);
        prop_assert!(lemma61_constants(lambda + step, mu, w).beta > base);
        prop_assert!(lemma61_constants(lambda, mu + step, w).beta > base);
        prop_assert!(lemma61_constants(lambda, mu, w + step).beta > base);
    }

    #[test]
    fn q_ratio_identity(p in 1usize..5, n in 1usize..20, b in 0.01f64..10.0, beta in 1.0f64..5.0) {
        let lhs = qn_bound(p, b, beta, n + 1).powi(2) / qn_bound(p, b, beta, n).powi(2);
        let rhs = ((n + 1) as f64 / n as f64).powi(p as i32) / 4.0;
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn identical_pairs_have_zero_lhs(seed in 0u64..200) {
        let s = build_random_walk_space(1, 4, 0.25).unwrap();
        let (h, _) = sample_martingale_pairs(&s, 1, 1, seed).remove(0);
        let r = check_lemma61(
            &s,
            &noise_terminal(&s),
            &small_h1(0.05),
            &h,
            &h,
            &Partition::whole(&s),
            &SolverConfig::default(),
        )
        .unwrap();
        prop_assert!(r.cells.iter().all(|c| c.lhs.abs() < 1e-12));
    }
}
