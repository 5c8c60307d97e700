//! Constants and inequality reports attached to the fixed-point argument:
//! cell admissibility and `beta`, the `q_n` rate, a priori ratios, and
//! convergence and uniqueness summaries.
//!
//! Every report is `Serialize`; flat row types are provided for CSV export.

use serde::Serialize;
use thiserror::Error;

use crate::driver::{
    precompute_context, sample_martingale_pairs, Driver, DriverError, FrozenContext, DEGENERATE_ENERGY,
};
use crate::martingale::{bracket_energy, predictable_increments, Martingale};
use crate::solver::{
    combined_distance, driver_values, picard_solve, picard_solve_full_freeze, solve_frozen, IterationTrace,
    PicardStart, Solution, SolverConfig, SolverError,
};
use crate::space::{level_second_moment, running_max_sq, sq_norm, AdaptedProcess, FilteredSpace, RandomVariable};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("inadmissible partition: cell width {width} exceeds {limit} for lambda = {lambda}, mu+ = {mu_plus}")]
    InadmissiblePartition {
        width: f64,
        limit: f64,
        lambda: f64,
        mu_plus: f64,
    },
    #[error("the driver has no declared lambda")]
    UndeclaredLambda,
    #[error("inconclusive: {0}")]
    Inconclusive(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Driver(#[from] DriverError),
}

/// Constants of the one-cell estimate for a cell of width `w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma61Constants {
    pub lambda: f64,
    pub mu_plus: f64,
    pub width: f64,
    /// `w <= 1 / (2 (1 + 16 lambda + mu+))`.
    pub admissible: bool,
    pub max_width: f64,
    pub nu: f64,
    pub beta_nu: f64,
    pub beta: f64,
}

/// Largest admissible cell width `1 / (2 (1 + 16 lambda + mu+))`.
pub fn max_admissible_width(lambda: f64, mu_plus: f64) -> f64 {
    1.0 / (2.0 * (1.0 + 16.0 * lambda + mu_plus.max(0.0)))
}

/// `nu = 16 lambda`, `beta_nu = 1 + nu + 2 mu+`, `beta = 1 + beta_nu w exp(beta_nu w)`.
/// A negative `mu` is clamped to `mu+ = 0`.
pub fn lemma61_constants(lambda: f64, mu: f64, width: f64) -> Lemma61Constants {
    let mu_plus = mu.max(0.0);
    let max_width = max_admissible_width(lambda, mu_plus);
    let nu = 16.0 * lambda;
    let beta_nu = 1.0 + nu + 2.0 * mu_plus;
    let bw = beta_nu * width;
    Lemma61Constants {
        lambda,
        mu_plus,
        width,
        admissible: width <= max_width,
        max_width,
        nu,
        beta_nu,
        beta: 1.0 + bw * bw.exp(),
    }
}

/// Cells aligned to grid levels, given by their boundary levels `0 = a_0 < ... < a_p = N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Partition {
    boundaries: Vec<usize>,
}

impl Partition {
    pub fn from_boundaries(space: &FilteredSpace, boundaries: Vec<usize>) -> Result<Self, VerifyError> {
        let ok = boundaries.len() >= 2
            && boundaries[0] == 0
            && *boundaries.last().unwrap() == space.steps()
            && boundaries.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(VerifyError::InvalidInput(format!(
                "partition boundaries {boundaries:?} must increase strictly from 0 to {}",
                space.steps()
            )));
        }
        Ok(Self { boundaries })
    }

    /// One cell covering the whole grid.
    pub fn whole(space: &FilteredSpace) -> Self {
        Self {
            boundaries: vec![0, space.steps()],
        }
    }

    /// Cells of `floor(width / dt)` steps; the last cell takes the remainder.
    pub fn uniform(space: &FilteredSpace, width: f64) -> Result<Self, VerifyError> {
        let per = (width / space.dt() * (1.0 + 1e-12)).floor();
        if !(per >= 1.0) {
            return Err(VerifyError::InvalidInput(format!(
                "cell width {width} is shorter than one step {}",
                space.dt()
            )));
        }
        let per = (per as usize).min(space.steps());
        let mut boundaries: Vec<usize> = (0..space.steps()).step_by(per).collect();
        boundaries.push(space.steps());
        Ok(Self { boundaries })
    }

    /// Widest uniform partition admissible for `(lambda, mu+)`.
    pub fn admissible(space: &FilteredSpace, lambda: f64, mu_plus: f64) -> Result<Self, VerifyError> {
        Self::uniform(space, max_admissible_width(lambda, mu_plus))
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn cell_count(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// `(a, b)` level pairs.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.boundaries.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn max_width(&self, space: &FilteredSpace) -> f64 {
        self.cells()
            .map(|(a, b)| (b - a) as f64 * space.dt())
            .fold(0.0, f64::max)
    }

    fn check_admissible(&self, space: &FilteredSpace, lambda: f64, mu_plus: f64) -> Result<(), VerifyError> {
        let width = self.max_width(space);
        let limit = max_admissible_width(lambda, mu_plus);
        if width > limit * (1.0 + 1e-12) {
            return Err(VerifyError::InadmissiblePartition {
                width,
                limit,
                lambda,
                mu_plus,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellReport {
    pub a_level: usize,
    pub b_level: usize,
    pub a: f64,
    pub b: f64,
    /// `sup_{a<=t<=b} E|Y1_t - Y2_t|^2 + E([M1 - M2]_b - [M1 - M2]_a)`.
    pub lhs: f64,
    /// `beta E|Y1_b - Y2_b|^2`.
    pub terminal_term: f64,
    /// `1/4 E([H1 - H2]_T - [H1 - H2]_a)`.
    pub bracket_term: f64,
    pub slack: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma61Report {
    pub inequality: &'static str,
    pub declared_lambda: f64,
    /// Largest ratio of `E sum_{k >= a} |f(Y1, H1) - f(Y1, H2)|^2 dt` to the
    /// bracket energy of `H1 - H2` after `a`, over the cell starts.
    pub observed_lambda: Option<f64>,
    pub constants: Lemma61Constants,
    pub cells: Vec<CellReport>,
    pub violations: usize,
}

const LEMMA61_INEQUALITY: &str = "sup_[a,b] E|Y1-Y2|^2 + E[M1-M2]_[a,b] <= beta E|Y1_b-Y2_b|^2 + 1/4 E[H1-H2]_[a,T]";
const SLACK_TOL: f64 = 1e-12;

fn context_for(space: &FilteredSpace, driver: &Driver, h: &Martingale) -> Result<FrozenContext, VerifyError> {
    let req = driver.feature_request();
    let y = req.needs_y().then(|| AdaptedProcess::zeros(space, driver.dim()));
    Ok(precompute_context(space, h, y.as_ref(), &req)?)
}

/// Solves the problems frozen at `H1` and `H2` and evaluates the one-cell
/// estimate on every cell of `partition`.
///
/// Admissibility is judged with the larger of the declared `lambda` and the
/// ratio observed for this pair, so an under-declared `lambda` is refused.
/// Drivers that read a frozen `Y` see `Y = 0`.
pub fn check_lemma61(
    space: &FilteredSpace,
    xi: &RandomVariable,
    driver: &Driver,
    h1: &Martingale,
    h2: &Martingale,
    partition: &Partition,
    cfg: &SolverConfig,
) -> Result<Lemma61Report, VerifyError> {
    let declared = driver.declared_lambda(space).ok_or(VerifyError::UndeclaredLambda)?;
    let mu_plus = driver.declared_mu_plus();
    let c1 = context_for(space, driver, h1)?;
    let c2 = context_for(space, driver, h2)?;
    let s1 = solve_frozen(space, xi, driver, &c1, cfg)?;
    let s2 = solve_frozen(space, xi, driver, &c2, cfg)?;

    let n = space.steps();
    let dt = space.dt();
    let l = driver.dim();
    let dh = h1.process().sub(h2.process());
    let pred_h = predictable_increments(space, &dh);
    let tail_h = |a: usize| crate::martingale::energy_from_increments(space, &pred_h, a, n);

    let b1 = driver.bind(space, &c1)?;
    let b2 = driver.bind(space, &c2)?;
    let mut gaps = vec![0.0; n];
    let (mut f1, mut f2) = (vec![0.0; l], vec![0.0; l]);
    for (k, gap) in gaps.iter_mut().enumerate() {
        for node in space.level(k) {
            b1.eval(k, node, s1.y.value(node), &mut f1);
            b2.eval(k, node, s1.y.value(node), &mut f2);
            let sq: f64 = f1.iter().zip(&f2).map(|(u, v)| (u - v) * (u - v)).sum();
            *gap += space.node_prob(node) * sq * dt;
        }
    }
    let observed = partition
        .cells()
        .filter_map(|(a, _)| {
            let den = tail_h(a);
            (den > DEGENERATE_ENERGY).then(|| gaps[a..].iter().sum::<f64>() / den)
        })
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |x| x.max(r))));
    let lambda = observed.map_or(declared, |o| o.max(declared));
    partition.check_admissible(space, lambda, mu_plus)?;
    let constants = lemma61_constants(lambda, mu_plus, partition.max_width(space));

    let dy = s1.y.sub(&s2.y);
    let dm = s1.m.process().sub(s2.m.process());
    let cells: Vec<CellReport> = partition
        .cells()
        .map(|(a, b)| {
            let width = (b - a) as f64 * dt;
            let beta = lemma61_constants(lambda, mu_plus, width).beta;
            let sup = (a..=b).map(|k| level_second_moment(space, &dy, k)).fold(0.0, f64::max);
            let lhs = sup + bracket_energy(space, &dm, a, b);
            let terminal_term = beta * level_second_moment(space, &dy, b);
            let bracket_term = 0.25 * tail_h(a);
            let slack = terminal_term + bracket_term - lhs;
            CellReport {
                a_level: a,
                b_level: b,
                a: space.grid().time(a),
                b: space.grid().time(b),
                lhs,
                terminal_term,
                bracket_term,
                slack,
                violated: slack < -SLACK_TOL * (1.0 + lhs),
            }
        })
        .collect();
    let violations = cells.iter().filter(|c| c.violated).count();
    Ok(Lemma61Report {
        inequality: LEMMA61_INEQUALITY,
        declared_lambda: declared,
        observed_lambda: observed,
        constants,
        cells,
        violations,
    })
}

/// `q_n = sqrt(p^2 n^p (1/4)^{n-1} b (1 + beta)^p)` for `p` cells.
pub fn qn_bound(p: usize, b: f64, beta: f64, n: usize) -> f64 {
    let p_f = p as f64;
    (p_f * p_f * (n as f64).powf(p_f) * 0.25f64.powi(n as i32 - 1) * b * (1.0 + beta).powf(p_f)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub delta: f64,
    /// `delta_n / delta_{n-1}`.
    pub ratio: Option<f64>,
    /// `q_{n-1}`, the bound on the step producing iterate `n` (`n >= 3`).
    pub q_n: Option<f64>,
    /// `delta_n / q_{n-1}`.
    pub scaled: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub p: usize,
    pub b: f64,
    pub beta: f64,
    /// No decay can be asserted: `b = 0` or fewer than three iterations.
    pub vacuous: bool,
    /// Smallest `C` with `delta_n <= C q_{n-1}` on the reported rows.
    pub constant: Option<f64>,
    /// `max_n q_{n+1} / q_n` over the reported range.
    pub max_q_ratio: Option<f64>,
    pub rows: Vec<ConvergenceRow>,
}

pub fn convergence_report(trace: &IterationTrace, constants: &Lemma61Constants, p: usize, b: f64) -> ConvergenceReport {
    let beta = constants.beta;
    let len = trace.len();
    let rows: Vec<ConvergenceRow> = (1..=len)
        .map(|n| {
            let delta = trace.deltas[n - 1];
            let q = (n >= 3).then(|| qn_bound(p, b, beta, n - 1));
            ConvergenceRow {
                n,
                delta,
                ratio: trace.ratio(n),
                q_n: q,
                scaled: q.filter(|q| *q > 0.0).map(|q| delta / q),
            }
        })
        .collect();
    let vacuous = !(b > 0.0) || len < 3;
    let constant = rows
        .iter()
        .filter_map(|r| r.scaled)
        .fold(None, |a: Option<f64>, s| Some(a.map_or(s, |x| x.max(s))));
    let max_q_ratio = (len >= 3).then(|| {
        (2..len)
            .map(|n| (((n + 1) as f64 / n as f64).powf(p as f64) / 4.0).sqrt())
            .fold(0.0, f64::max)
    });
    ConvergenceReport {
        p,
        b,
        beta,
        vacuous,
        constant: if vacuous { None } else { constant },
        max_q_ratio,
        rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AprioriReport {
    pub inequality: &'static str,
    /// `E sup_t |Y_t|^2 + E[M]_T`.
    pub lhs: f64,
    /// `E(|xi|^2 + (sum_k |f(t_k, 0, 0)| dt)^2)`.
    pub rhs0: f64,
    pub ratio: Option<f64>,
    /// `0 / 0`.
    pub vacuous: bool,
    /// `RHS0 = 0` with `LHS > 0`.
    pub violation: bool,
    /// Scalar equations only: `E(sum_k |f(t_k, Y, M)| dt)^2`.
    pub lhs1: Option<f64>,
    pub ratio1: Option<f64>,
}

const APRIORI_INEQUALITY: &str = "E sup|Y|^2 + E[M]_T <= C E(|xi|^2 + (int |f(r,0,0)| dr)^2)";

/// Path-wise `(sum_k |f_k| dt)^2` in expectation, with `f` given on interior nodes.
fn integrated_abs_sq(space: &FilteredSpace, l: usize, f: &[f64]) -> f64 {
    let dt = space.dt();
    let mut acc = vec![0.0; space.node_count()];
    for node in 1..space.node_count() {
        let parent = space.parent(node).expect("non-root");
        acc[node] = acc[parent] + sq_norm(&f[parent * l..(parent + 1) * l]).sqrt() * dt;
    }
    (0..space.leaf_count())
        .map(|leaf| {
            let node = space.leaf_node(leaf);
            space.node_prob(node) * acc[node] * acc[node]
        })
        .sum()
}

fn ratio_of(num: f64, den: f64) -> (Option<f64>, bool, bool) {
    if den > 0.0 {
        (Some(num / den), false, false)
    } else if num > 0.0 {
        (None, false, true)
    } else {
        (None, true, false)
    }
}

/// Exact moments of the a priori estimates for `solution`, which was solved
/// against `ctx`.
pub fn apriori_report(
    space: &FilteredSpace,
    xi: &RandomVariable,
    driver: &Driver,
    ctx: &FrozenContext,
    solution: &Solution,
) -> Result<AprioriReport, VerifyError> {
    let l = driver.dim();
    let run = running_max_sq(space, &solution.y);
    let sup: f64 = (0..space.leaf_count())
        .map(|leaf| {
            let node = space.leaf_node(leaf);
            space.node_prob(node) * run[node]
        })
        .sum();
    let lhs = sup + bracket_energy(space, solution.m.process(), 0, space.steps());

    let zero_ctx = context_for(space, driver, &Martingale::zero(space, l))?;
    let zero_bound = driver.bind(space, &zero_ctx)?;
    let f0 = driver_values(
        space,
        &zero_bound,
        &AdaptedProcess::zeros(space, l),
        crate::solver::Scheme::Implicit,
    );
    let xi_sq: f64 = (0..space.leaf_count())
        .map(|leaf| space.node_prob(space.leaf_node(leaf)) * sq_norm(xi.value(leaf)))
        .sum();
    let rhs0 = xi_sq + integrated_abs_sq(space, l, &f0);
    let (ratio, vacuous, violation) = ratio_of(lhs, rhs0);

    let (lhs1, ratio1) = if l == 1 {
        let bound = driver.bind(space, ctx)?;
        let f = driver_values(space, &bound, &solution.y, solution.scheme);
        let lhs1 = integrated_abs_sq(space, l, &f);
        (Some(lhs1), ratio_of(lhs1, rhs0).0)
    } else {
        (None, None)
    };
    Ok(AprioriReport {
        inequality: APRIORI_INEQUALITY,
        lhs,
        rhs0,
        ratio,
        vacuous,
        violation,
        lhs1,
        ratio1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub starts: usize,
    pub seed: u64,
    pub max_distance: f64,
    pub iterations: Vec<usize>,
}

/// Runs the iteration from `M^0 = 0` and from `starts - 1` sampled
/// martingales and reports the largest pairwise combined distance.
pub fn uniqueness_probe(
    space: &FilteredSpace,
    xi: &RandomVariable,
    driver: &Driver,
    cfg: &SolverConfig,
    full_freeze: bool,
    starts: usize,
    seed: u64,
) -> Result<UniquenessReport, VerifyError> {
    if starts < 2 {
        return Err(VerifyError::InvalidInput("uniqueness needs at least two starts".into()));
    }
    let mut inits = vec![PicardStart::Zero];
    inits.extend(
        sample_martingale_pairs(space, driver.dim(), starts - 1, seed)
            .into_iter()
            .map(|(m, _)| PicardStart::Martingale(m)),
    );
    let mut solutions = Vec::with_capacity(starts);
    let mut iterations = Vec::with_capacity(starts);
    for (s, init) in inits.iter().enumerate() {
        let out = if full_freeze {
            picard_solve_full_freeze(space, xi, driver, cfg, init)
        } else {
            picard_solve(space, xi, driver, cfg, init)
        }
        .map_err(|e| VerifyError::Inconclusive(format!("start {s}: {e}")))?;
        iterations.push(out.trace.len());
        solutions.push(out.solution);
    }
    let mut max_distance = 0.0f64;
    for i in 0..solutions.len() {
        for j in i + 1..solutions.len() {
            let (a, b) = (&solutions[i], &solutions[j]);
            max_distance = max_distance.max(combined_distance(space, &a.y, &a.m, &b.y, &b.m));
        }
    }
    Ok(UniquenessReport {
        starts,
        seed,
        max_distance,
        iterations,
    })
}

#[cfg(test)]
mod tests;
