//! Inner backward solver for a frozen driver, outer Picard iterations over
//! the martingale (and optionally `Y`), and a brute-force global oracle.

mod oracle;
mod picard;
mod root;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driver::{BoundDriver, Driver, DriverError, FrozenContext};
use crate::exec::Execution;
use crate::martingale::{bracket_energy, Martingale, MartingaleError};
use crate::space::{
    level_second_moment, running_max_sq, sq_norm, AdaptedProcess, FilteredSpace, RandomVariable, SpaceError,
};

pub use oracle::{oracle_global_solve, OracleConfig, ORACLE_DAMPING, ORACLE_MAX_NODES};
pub use picard::{picard_solve, picard_solve_full_freeze, IterationTrace, PicardOutput, PicardStart, TraceRow};
pub use root::{node_root_solve, RootFailure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// `Y = E(Y_next) + dt f(Y)`, one root solve per node.
    #[default]
    Implicit,
    /// `Y = E(Y_next) + dt f(E(Y_next))`.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub scheme: Scheme,
    pub root_tol: f64,
    pub root_max_iter: usize,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    /// Backtracking factor of the multi-dimensional Newton step, and the
    /// relaxation of the derivative-free fixed-point fallback.
    pub damping: f64,
    /// Bound on the pathwise residual accepted from an inner solve, relative
    /// to `1 + max |Y|`.
    pub residual_tol: f64,
    /// Levels at which diagnostics split the grid into cells.
    pub partition_levels: Vec<usize>,
    pub execution: Execution,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Implicit,
            root_tol: 1e-12,
            root_max_iter: 200,
            picard_tol: 1e-10,
            picard_max_iter: 60,
            damping: 0.5,
            residual_tol: 1e-10,
            partition_levels: Vec::new(),
            execution: Execution::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(SolverError::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive("root_tol", self.root_tol)?;
        positive("picard_tol", self.picard_tol)?;
        positive("residual_tol", self.residual_tol)?;
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(SolverError::InvalidConfig(format!(
                "damping must lie in (0, 1), got {}",
                self.damping
            )));
        }
        if self.root_max_iter == 0 || self.picard_max_iter == 0 {
            return Err(SolverError::InvalidConfig("iteration limits must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("implicit scheme needs dt * mu+ < 1, got dt = {dt}, mu+ = {mu_plus}")]
    Precondition { dt: f64, mu_plus: f64 },
    #[error("root solve failed at node {node}: {failure}")]
    Root { node: usize, failure: RootFailure },
    #[error("pathwise residual {residual} exceeds tolerance {tolerance}")]
    Residual { residual: f64, tolerance: f64 },
    #[error(
        "Picard iteration did not reach tolerance after {iterations} iterations (last delta {last_delta}): {diagnosis}"
    )]
    MaxIterations {
        iterations: usize,
        last_delta: f64,
        diagnosis: String,
        trace: Box<IterationTrace>,
    },
    #[error("oracle inconclusive: {0}")]
    OracleInconclusive(String),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error(transparent)]
    Martingale(#[from] MartingaleError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// `(Y, M)` with the driver integral and pathwise residual statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub y: AdaptedProcess,
    pub m: Martingale,
    pub scheme: Scheme,
    /// `sum_{k < level} f_k dt` along the path to each node.
    pub driver_integral: AdaptedProcess,
    /// Largest residual along each leaf's path.
    pub leaf_residuals: Vec<f64>,
    pub max_residual: f64,
}

impl Solution {
    pub fn dim(&self) -> usize {
        self.y.dim()
    }
}

fn check_dims(xi: &RandomVariable, driver: &Driver, ctx: &FrozenContext) -> Result<(), SolverError> {
    let l = driver.dim();
    for found in [xi.dim(), ctx.martingale.dim()] {
        if found != l {
            return Err(SolverError::DimensionMismatch { expected: l, found });
        }
    }
    Ok(())
}

fn check_precondition(space: &FilteredSpace, driver: &Driver, scheme: Scheme) -> Result<(), SolverError> {
    let mu_plus = driver.declared_mu_plus();
    let dt = space.dt();
    if scheme == Scheme::Implicit && !(dt * mu_plus < 1.0) {
        return Err(SolverError::Precondition { dt, mu_plus });
    }
    Ok(())
}

/// `E(Y_next | node)` for every node of level `k`.
fn predictor_level(space: &FilteredSpace, y: &[f64], dim: usize, k: usize) -> Vec<f64> {
    let probs = space.child_probs();
    let b = space.branching();
    let next = space.level(k + 1).start;
    let mut out = vec![0.0; space.level_width(k) * dim];
    for (j, slot) in out.chunks_mut(dim).enumerate() {
        for (c, &p) in probs.iter().enumerate() {
            let child = (next + j * b + c) * dim;
            for i in 0..dim {
                slot[i] += p * y[child + i];
            }
        }
    }
    out
}

/// Backward induction from `Y_N = xi` for a driver frozen in `ctx`.
pub fn solve_frozen(
    space: &FilteredSpace,
    xi: &RandomVariable,
    driver: &Driver,
    ctx: &FrozenContext,
    cfg: &SolverConfig,
) -> Result<Solution, SolverError> {
    cfg.validate()?;
    check_dims(xi, driver, ctx)?;
    check_precondition(space, driver, cfg.scheme)?;
    let bound = driver.bind(space, ctx)?;
    let l = driver.dim();
    let n = space.steps();
    let dt = space.dt();
    let mu_plus = driver.declared_mu_plus();

    let mut y = AdaptedProcess::zeros(space, l);
    let leaf_start = space.leaf_node(0);
    y.values_mut()[leaf_start * l..].copy_from_slice(xi.values());
    let mut increments = vec![0.0; space.node_count() * l];

    for k in (0..n).rev() {
        let range = space.level(k);
        let pred = predictor_level(space, y.values(), l, k);
        let level_values = &mut y.values_mut()[range.start * l..range.end * l];
        let bound = &bound;
        let pred_ref = &pred;
        cfg.execution
            .try_for_each_chunk(level_values, l, |j, out| -> Result<(), SolverError> {
                let node = range.start + j;
                let c = &pred_ref[j * l..(j + 1) * l];
                match cfg.scheme {
                    Scheme::Explicit => {
                        bound.eval(k, node, c, out);
                        for i in 0..l {
                            out[i] = c[i] + dt * out[i];
                        }
                        Ok(())
                    }
                    Scheme::Implicit => {
                        let root = node_root_solve(
                            c,
                            |yy: &[f64], o: &mut [f64]| bound.eval(k, node, yy, o),
                            Some(|yy: &[f64], o: &mut [f64]| diagonal_jacobian(bound, node, yy, o)),
                            dt,
                            mu_plus,
                            cfg,
                        )
                        .map_err(|failure| SolverError::Root { node, failure })?;
                        out.copy_from_slice(&root);
                        Ok(())
                    }
                }
            })?;
        // Martingale increments on the edges below level k.
        let b = space.branching();
        let next = space.level(k + 1).start;
        let yv = y.values();
        for j in 0..space.level_width(k) {
            for c in 0..b {
                let child = next + j * b + c;
                for i in 0..l {
                    increments[child * l + i] = yv[child * l + i] - pred[j * l + i];
                }
            }
        }
    }
    let m = Martingale::from_edge_increments(space, l, &increments);
    let f = driver_values(space, &bound, &y, cfg.scheme);
    finish(space, xi, y, m, &f, cfg)
}

/// Attaches the driver integral and residuals, enforcing the residual tolerance.
pub(crate) fn finish(
    space: &FilteredSpace,
    xi: &RandomVariable,
    y: AdaptedProcess,
    m: Martingale,
    f: &[f64],
    cfg: &SolverConfig,
) -> Result<Solution, SolverError> {
    let (driver_integral, leaf_residuals) = residual_profile(space, xi, f, &y, &m, cfg.execution);
    let max_residual = leaf_residuals.iter().copied().fold(0.0, f64::max);
    let scale = 1.0 + y.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tolerance = cfg.residual_tol * scale;
    if !(max_residual <= tolerance) {
        return Err(SolverError::Residual {
            residual: max_residual,
            tolerance,
        });
    }
    Ok(Solution {
        y,
        m,
        scheme: cfg.scheme,
        driver_integral,
        leaf_residuals,
        max_residual,
    })
}

pub(crate) fn diagonal_jacobian(bound: &BoundDriver, node: usize, y: &[f64], out: &mut [f64]) {
    let l = y.len();
    let mut diag = vec![0.0; l];
    bound.dy(node, y, &mut diag);
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..l {
        out[i * l + i] = diag[i];
    }
}

/// Driver values per non-leaf node under the scheme's evaluation point.
pub(crate) fn driver_values(
    space: &FilteredSpace,
    bound: &BoundDriver,
    y: &AdaptedProcess,
    scheme: Scheme,
) -> Vec<f64> {
    let l = y.dim();
    let n = space.steps();
    let interior = space.level(n).start;
    let mut values = vec![0.0; interior * l];
    for k in 0..n {
        let range = space.level(k);
        let pred = match scheme {
            Scheme::Explicit => Some(predictor_level(space, y.values(), l, k)),
            Scheme::Implicit => None,
        };
        for (j, node) in range.clone().enumerate() {
            let at = match &pred {
                Some(p) => &p[j * l..(j + 1) * l],
                None => y.value(node),
            };
            bound.eval(k, node, at, &mut values[node * l..(node + 1) * l]);
        }
    }
    values
}

/// Driver integral process and, per leaf, the largest
/// `|Y_t - xi - sum_{k>=t} f_k dt + (M_T - M_t)|` along its path.
/// `f` holds the driver value at every non-leaf node.
pub(crate) fn residual_profile(
    space: &FilteredSpace,
    xi: &RandomVariable,
    f: &[f64],
    y: &AdaptedProcess,
    m: &Martingale,
    exec: Execution,
) -> (AdaptedProcess, Vec<f64>) {
    let l = y.dim();
    let n = space.steps();
    let dt = space.dt();
    let mut integral = AdaptedProcess::zeros(space, l);
    for node in 1..space.node_count() {
        let parent = space.parent(node).expect("non-root");
        for i in 0..l {
            let v = integral.value(parent)[i] + f[parent * l + i] * dt;
            integral.value_mut(node)[i] = v;
        }
    }
    let leaf_start = space.leaf_node(0);
    let mut residuals = vec![0.0; space.leaf_count()];
    exec.for_each_chunk(&mut residuals, 1, |leaf, out| {
        let leaf_node = leaf_start + leaf;
        let mut acc: Vec<f64> = (0..l).map(|i| y.value(leaf_node)[i] - xi.value(leaf)[i]).collect();
        let mut worst = sq_norm(&acc);
        let mut node = leaf_node;
        for _ in 0..n {
            let parent = space.parent(node).expect("non-root");
            for i in 0..l {
                acc[i] += y.value(parent)[i] - y.value(node)[i] - f[parent * l + i] * dt + m.value(node)[i]
                    - m.value(parent)[i];
            }
            worst = worst.max(sq_norm(&acc));
            node = parent;
        }
        out[0] = worst.sqrt();
    });
    (integral, residuals)
}

/// Largest pathwise residual of `solution` against the driver frozen in `ctx`,
/// with `f` evaluated per the solution's scheme.
pub fn residual_check(
    space: &FilteredSpace,
    xi: &RandomVariable,
    driver: &Driver,
    ctx: &FrozenContext,
    solution: &Solution,
) -> Result<f64, SolverError> {
    check_dims(xi, driver, ctx)?;
    solution.y.check_shape(space)?;
    let bound = driver.bind(space, ctx)?;
    let f = driver_values(space, &bound, &solution.y, solution.scheme);
    let (_, leaves) = residual_profile(space, xi, &f, &solution.y, &solution.m, Execution::default());
    Ok(leaves.into_iter().fold(0.0, f64::max))
}

/// `sqrt(sup_t E|Y - Y'|^2 + E[M - M']_T)`.
pub fn combined_distance(
    space: &FilteredSpace,
    y: &AdaptedProcess,
    m: &Martingale,
    y2: &AdaptedProcess,
    m2: &Martingale,
) -> f64 {
    combined_parts(space, y, m, y2, m2).0
}

/// `(combined distance, E[M - M']_T, S^2 distance of Y)`.
pub(crate) fn combined_parts(
    space: &FilteredSpace,
    y: &AdaptedProcess,
    m: &Martingale,
    y2: &AdaptedProcess,
    m2: &Martingale,
) -> (f64, f64, f64) {
    let dy = y.sub(y2);
    let sup = (0..=space.steps())
        .map(|k| level_second_moment(space, &dy, k))
        .fold(0.0, f64::max);
    let dm = m.process().sub(m2.process());
    let energy = bracket_energy(space, &dm, 0, space.steps());
    let run = running_max_sq(space, &dy);
    let s2: f64 = (0..space.leaf_count())
        .map(|leaf| {
            let v = space.leaf_node(leaf);
            space.node_prob(v) * run[v]
        })
        .sum();
    ((sup + energy).sqrt(), energy, s2.sqrt())
}

#[cfg(test)]
mod tests;
