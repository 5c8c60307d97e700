//! build -> solve -> requested verifications, entirely in memory.

use bsde_core::driver::{
    estimate_h3, estimate_monotonicity, precompute_context, psi_envelope, sample_martingale_pairs, AssumptionReport,
    Driver, H3Config, SamplerConfig,
};
use bsde_core::martingale::Martingale;
use bsde_core::solver::{
    picard_solve, picard_solve_full_freeze, IterationTrace, PicardOutput, PicardStart, Solution, SolverError,
};
use bsde_core::space::{AdaptedProcess, FilteredSpace, RandomVariable};
use bsde_core::verify::{
    apriori_report, check_lemma61, convergence_report, lemma61_constants, max_admissible_width, uniqueness_probe,
    Partition, VerifyError,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;
use crate::scenario::{streams, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage {
    pub name: &'static str,
    /// `ok`, `failed` or `violation`.
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Scalar results used by sweeps.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Summary {
    pub iterations: Option<usize>,
    pub last_delta: Option<f64>,
    pub y0: Option<f64>,
    pub max_residual: Option<f64>,
    pub lambda_hat: Option<f64>,
    pub mu_hat: Option<f64>,
    pub apriori_ratio: Option<f64>,
    pub uniqueness_distance: Option<f64>,
    pub lemma61_min_slack: Option<f64>,
}

pub struct Problem {
    pub space: FilteredSpace,
    pub xi: RandomVariable,
    pub driver: Driver,
}

pub struct RunOutcome {
    pub problem: Problem,
    pub solution: Option<Solution>,
    pub trace: Option<IterationTrace>,
    /// `q_n` bound per trace row, when the convergence report ran.
    pub q_bounds: Vec<Option<f64>>,
    pub reports: Vec<(&'static str, Value)>,
    pub stages: Vec<Stage>,
    pub summary: Summary,
    /// First solver failure, else first violation.
    pub error: Option<CliError>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.error.as_ref().map_or(0, |e| e.code)
    }

    fn stage(&mut self, name: &'static str, result: Result<(), CliError>) {
        let (status, detail) = match result {
            Ok(()) => ("ok", None),
            Err(e) => {
                let status = if e.code == crate::error::EXIT_VIOLATION {
                    "violation"
                } else {
                    "failed"
                };
                let detail = e.message.clone();
                if self
                    .error
                    .as_ref()
                    .is_none_or(|prev| prev.code == crate::error::EXIT_VIOLATION && e.code != prev.code)
                {
                    self.error = Some(e);
                }
                (status, Some(detail))
            }
        };
        self.stages.push(Stage { name, status, detail });
    }
}

pub fn solver_error(e: SolverError) -> CliError {
    match e {
        SolverError::Root { .. }
        | SolverError::Residual { .. }
        | SolverError::MaxIterations { .. }
        | SolverError::OracleInconclusive(_) => CliError::solver(e.to_string()),
        other => CliError::input(other.to_string()),
    }
}

fn verify_error(e: VerifyError) -> CliError {
    match e {
        VerifyError::InadmissiblePartition { .. } => CliError::violation(e.to_string()),
        VerifyError::Inconclusive(_) => CliError::solver(e.to_string()),
        VerifyError::Solver(s) => solver_error(s),
        other => CliError::input(other.to_string()),
    }
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

pub fn build(scenario: &Scenario) -> Result<Problem, CliError> {
    let space = scenario.build_space()?;
    let xi = scenario.terminal_value(&space)?;
    let driver = scenario
        .driver
        .build(scenario.dim)
        .map_err(|e| CliError::input(format!("driver: {e}")))?;
    scenario.solver.validate().map_err(solver_error)?;
    Ok(Problem { space, xi, driver })
}

pub fn solve(problem: &Problem, scenario: &Scenario, start: &PicardStart) -> Result<PicardOutput, SolverError> {
    let Problem { space, xi, driver } = problem;
    if driver.is_y_frozen() {
        picard_solve_full_freeze(space, xi, driver, &scenario.solver, start)
    } else {
        picard_solve(space, xi, driver, &scenario.solver, start)
    }
}

fn partition(problem: &Problem, scenario: &Scenario, lambda: f64) -> Result<Partition, CliError> {
    let space = &problem.space;
    let levels = &scenario.solver.partition_levels;
    let result = if levels.is_empty() {
        Partition::admissible(space, lambda, problem.driver.declared_mu_plus())
    } else {
        let mut b = vec![0];
        b.extend(levels.iter().copied());
        b.push(space.steps());
        b.dedup();
        Partition::from_boundaries(space, b)
    };
    result.map_err(verify_error)
}

fn declared_lambda(problem: &Problem, stage: &str) -> Result<f64, CliError> {
    problem
        .driver
        .declared_lambda(&problem.space)
        .ok_or_else(|| CliError::input(format!("{stage} needs a declared lambda for this driver family")))
}

/// Input errors abort before anything is solved; solver failures and
/// violations are recorded in the outcome.
pub fn run(scenario: &Scenario) -> Result<RunOutcome, CliError> {
    let problem = build(scenario)?;
    let toggles = &scenario.verify;
    // Input checks for the requested stages, before the solve.
    if toggles.lemma61 || toggles.convergence {
        declared_lambda(&problem, if toggles.lemma61 { "lemma61" } else { "convergence" })?;
    }
    let mut outcome = RunOutcome {
        problem,
        solution: None,
        trace: None,
        q_bounds: Vec::new(),
        reports: Vec::new(),
        stages: Vec::new(),
        summary: Summary::default(),
        error: None,
    };
    let solved = match solve(&outcome.problem, scenario, &PicardStart::Zero) {
        Ok(out) => {
            outcome.stage("solve", Ok(()));
            out
        }
        Err(e) => {
            if let SolverError::MaxIterations { trace, .. } = &e {
                outcome.trace = Some((**trace).clone());
            }
            let err = solver_error(e);
            if err.code == crate::error::EXIT_INPUT {
                return Err(err);
            }
            outcome.stage("solve", Err(err));
            return Ok(outcome);
        }
    };
    let PicardOutput {
        solution,
        trace,
        context,
    } = solved;
    outcome.summary.iterations = Some(trace.len());
    outcome.summary.last_delta = trace.deltas.last().copied();
    outcome.summary.y0 = Some(solution.y.value(0)[0]);
    outcome.summary.max_residual = Some(solution.max_residual);
    outcome.reports.push((
        "residual",
        json!({
            "max_residual": solution.max_residual,
            "tolerance": scenario.solver.residual_tol,
            "scheme": solution.scheme,
        }),
    ));

    if toggles.convergence {
        let r = convergence(&mut outcome, scenario, &trace);
        outcome.stage("convergence", r);
    }
    if toggles.lemma61 {
        let r = lemma61(&mut outcome, scenario);
        outcome.stage("lemma61", r);
    }
    if toggles.apriori {
        let Problem { space, xi, driver } = &outcome.problem;
        let r = apriori_report(space, xi, driver, &context, &solution)
            .map_err(verify_error)
            .and_then(|rep| {
                outcome.summary.apriori_ratio = rep.ratio;
                let violation = rep.violation;
                outcome.reports.push(("apriori", to_json(&rep)));
                if violation {
                    Err(CliError::violation(
                        "a priori right-hand side vanishes with a nonzero solution",
                    ))
                } else {
                    Ok(())
                }
            });
        outcome.stage("apriori", r);
    }
    if toggles.uniqueness {
        let r = uniqueness(&mut outcome, scenario);
        outcome.stage("uniqueness", r);
    }
    if toggles.assumptions {
        let r = assumptions(&mut outcome, scenario, &solution.y);
        outcome.stage("assumptions", r);
    }
    outcome.trace = Some(trace);
    outcome.solution = Some(solution);
    Ok(outcome)
}

fn convergence(outcome: &mut RunOutcome, scenario: &Scenario, trace: &IterationTrace) -> Result<(), CliError> {
    let lambda = declared_lambda(&outcome.problem, "convergence")?;
    let mu_plus = outcome.problem.driver.declared_mu_plus();
    let horizon = outcome.problem.space.grid().horizon();
    // The rate only needs the cell count and width, so cells need not sit on the grid.
    let (cells, width) = if scenario.solver.partition_levels.is_empty() {
        let p = (horizon / max_admissible_width(lambda, mu_plus)).ceil().max(1.0);
        (p as usize, horizon / p)
    } else {
        let part = partition(&outcome.problem, scenario, lambda)?;
        (part.cell_count(), part.max_width(&outcome.problem.space))
    };
    let constants = lemma61_constants(lambda, mu_plus, width);
    let rep = convergence_report(trace, &constants, cells, trace.first_gap().unwrap_or(0.0));
    outcome.q_bounds = rep.rows.iter().map(|r| r.q_n).collect();
    outcome.reports.push(("convergence", to_json(&rep)));
    Ok(())
}

fn lemma61(outcome: &mut RunOutcome, scenario: &Scenario) -> Result<(), CliError> {
    let Problem { space, xi, driver } = &outcome.problem;
    let lambda = declared_lambda(&outcome.problem, "lemma61")?;
    let part = partition(&outcome.problem, scenario, lambda)?;
    let pairs = sample_martingale_pairs(
        space,
        driver.dim(),
        scenario.verify.lemma61_pairs,
        scenario.derive_seed(streams::LEMMA61),
    );
    let mut reports = Vec::new();
    let mut violations = 0;
    let mut refused = None;
    let mut min_slack = f64::INFINITY;
    for (h1, h2) in &pairs {
        match check_lemma61(space, xi, driver, h1, h2, &part, &scenario.solver) {
            Ok(rep) => {
                violations += rep.violations;
                min_slack = rep.cells.iter().map(|c| c.slack).fold(min_slack, f64::min);
                reports.push(to_json(&rep));
            }
            Err(e) => {
                let err = verify_error(e);
                if err.code != crate::error::EXIT_VIOLATION {
                    return Err(err);
                }
                refused.get_or_insert(err);
            }
        }
    }
    outcome.summary.lemma61_min_slack = min_slack.is_finite().then_some(min_slack);
    outcome.reports.push((
        "lemma61",
        json!({
            "partition": part.boundaries(),
            "pairs": reports,
            "violations": violations,
            "refused": refused.as_ref().map(|e| e.message.clone()),
            "min_slack": outcome.summary.lemma61_min_slack,
        }),
    ));
    if let Some(e) = refused {
        return Err(e);
    }
    if violations > 0 {
        return Err(CliError::violation(format!(
            "{violations} cells violate the one-cell estimate"
        )));
    }
    Ok(())
}

fn uniqueness(outcome: &mut RunOutcome, scenario: &Scenario) -> Result<(), CliError> {
    let Problem { space, xi, driver } = &outcome.problem;
    let rep = uniqueness_probe(
        space,
        xi,
        driver,
        &scenario.solver,
        driver.is_y_frozen(),
        scenario.verify.uniqueness_starts,
        scenario.derive_seed(streams::UNIQUENESS),
    )
    .map_err(verify_error)?;
    let limit = 10.0 * scenario.solver.picard_tol;
    outcome.summary.uniqueness_distance = Some(rep.max_distance);
    let distance = rep.max_distance;
    let mut value = to_json(&rep);
    value["limit"] = json!(limit);
    outcome.reports.push(("uniqueness", value));
    if distance >= limit {
        return Err(CliError::violation(format!(
            "solutions from distinct starts differ by {distance}, limit {limit}"
        )));
    }
    Ok(())
}

fn assumptions(outcome: &mut RunOutcome, scenario: &Scenario, y: &AdaptedProcess) -> Result<(), CliError> {
    let Problem { space, driver, .. } = &outcome.problem;
    let toggles = &scenario.verify;
    let l = driver.dim();
    let req = driver.feature_request();
    let source_y = req.needs_y().then(|| y.clone());
    let driver_err = |e: bsde_core::driver::DriverError| CliError::input(e.to_string());

    let ctx0 = precompute_context(space, &Martingale::zero(space, l), source_y.as_ref(), &req).map_err(driver_err)?;
    let psi = psi_envelope(driver, space, &ctx0, toggles.probe_radius, 9).map_err(driver_err)?;
    let mono = estimate_monotonicity(
        driver,
        space,
        std::slice::from_ref(&ctx0),
        SamplerConfig {
            samples: toggles.probe_samples,
            radius: toggles.probe_radius,
            seed: scenario.derive_seed(streams::MONOTONICITY),
        },
    )
    .map_err(driver_err)?;
    let mut report = AssumptionReport::default().merge(mono).with_psi(&psi);
    if driver.is_m_sensitive() {
        let pairs = sample_martingale_pairs(space, l, toggles.h3_pairs, scenario.derive_seed(streams::H3));
        let cfg = H3Config {
            levels: (0..space.steps()).collect(),
            ys: vec![vec![0.0; l]],
            source_y,
        };
        report = report.merge(estimate_h3(driver, space, &pairs, &cfg).map_err(driver_err)?);
    }
    outcome.summary.mu_hat = report.mu_hat;
    outcome.summary.lambda_hat = report.lambda_hat;
    let mut value = to_json(&report);
    value["declared_mu"] = json!(driver.declared_mu());
    value["declared_lambda"] = json!(driver.declared_lambda(space));
    outcome.reports.push(("assumptions", value));
    Ok(())
}
