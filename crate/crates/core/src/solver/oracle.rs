//! Naive global fixed-point solve used as an independent reference.
//!
//! All node values of `Y` form one unknown vector. Each sweep rebuilds the
//! martingale implied by the current `Y`, recomputes the whole context from
//! it, and moves every non-terminal node a fixed fraction of the way towards
//! `E(Y_next | node) + dt f(t, Y(node), M)`. No per-node root solves and no
//! outer/inner split are involved.

use super::{finish, Scheme, Solution, SolverConfig, SolverError};
use crate::driver::{precompute_context, Driver};
use crate::martingale::Martingale;
use crate::space::{AdaptedProcess, FilteredSpace, RandomVariable};

pub const ORACLE_DAMPING: f64 = 0.25;
pub const ORACLE_MAX_NODES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Stop once the largest undamped update is below this.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_sweeps: 200_000,
        }
    }
}

fn implied_martingale(space: &FilteredSpace, y: &AdaptedProcess) -> Martingale {
    let l = y.dim();
    let probs = space.child_probs();
    let mut m = AdaptedProcess::zeros(space, l);
    for node in 0..space.level(space.steps()).start {
        let mut mean = vec![0.0; l];
        for (c, child) in space.children(node).enumerate() {
            for i in 0..l {
                mean[i] += probs[c] * y.value(child)[i];
            }
        }
        for child in space.children(node) {
            for i in 0..l {
                let v = m.value(node)[i] + y.value(child)[i] - mean[i];
                m.value_mut(child)[i] = v;
            }
        }
    }
    Martingale::from_process_unchecked(m)
}

pub fn oracle_global_solve(
    space: &FilteredSpace,
    xi: &RandomVariable,
    driver: &Driver,
    cfg: &OracleConfig,
) -> Result<Solution, SolverError> {
    if space.node_count() > ORACLE_MAX_NODES {
        return Err(SolverError::OracleInconclusive(format!(
            "{} nodes exceed the oracle limit of {ORACLE_MAX_NODES}",
            space.node_count()
        )));
    }
    let l = driver.dim();
    if xi.dim() != l {
        return Err(SolverError::DimensionMismatch {
            expected: l,
            found: xi.dim(),
        });
    }
    let request = driver.feature_request();
    let n = space.steps();
    let dt = space.dt();
    let interior = space.level(n).start;
    let probs = space.child_probs();

    let mut y = AdaptedProcess::zeros(space, l);
    for leaf in 0..space.leaf_count() {
        y.value_mut(space.leaf_node(leaf)).copy_from_slice(xi.value(leaf));
    }
    let mut target = vec![0.0; interior * l];
    let mut fv = vec![0.0; l];
    for sweep in 0..cfg.max_sweeps {
        let m = implied_martingale(space, &y);
        let ctx = precompute_context(space, &m, request.needs_y().then_some(&y), &request)?;
        let bound = driver.bind(space, &ctx)?;
        let mut update = 0.0f64;
        for node in 0..interior {
            let k = space.level_of(node);
            bound.eval(k, node, y.value(node), &mut fv);
            for i in 0..l {
                let mut mean = 0.0;
                for (c, child) in space.children(node).enumerate() {
                    mean += probs[c] * y.value(child)[i];
                }
                let t = mean + dt * fv[i];
                target[node * l + i] = t;
                update = update.max((t - y.value(node)[i]).abs());
            }
        }
        if !update.is_finite() {
            return Err(SolverError::OracleInconclusive(format!(
                "update became non-finite at sweep {sweep}"
            )));
        }
        if update < cfg.tol {
            let mut f = vec![0.0; interior * l];
            for node in 0..interior {
                bound.eval(
                    space.level_of(node),
                    node,
                    y.value(node),
                    &mut f[node * l..(node + 1) * l],
                );
            }
            let residual_cfg = SolverConfig {
                scheme: Scheme::Implicit,
                residual_tol: 1.0,
                ..SolverConfig::default()
            };
            return finish(space, xi, y, m, &f, &residual_cfg);
        }
        for node in 0..interior {
            for i in 0..l {
                let v = y.value(node)[i];
                y.value_mut(node)[i] = v + ORACLE_DAMPING * (target[node * l + i] - v);
            }
        }
    }
    Err(SolverError::OracleInconclusive(format!(
        "no convergence within {} sweeps",
        cfg.max_sweeps
    )))
}
