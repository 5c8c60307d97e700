//! Outer fixed-point iterations over the frozen martingale (and `Y`).

use serde::Serialize;

use super::{combined_parts, finish, solve_frozen, Solution, SolverConfig, SolverError};
use crate::driver::{precompute_context_with, Driver, FrozenContext};
use crate::martingale::Martingale;
use crate::space::{closure_with, AdaptedProcess, FilteredSpace, RandomVariable};

/// Initial iterate `(Y^0, M^0)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum PicardStart {
    #[default]
    Zero,
    /// `Y^0 = 0` with the given `M^0`.
    Martingale(Martingale),
    Pair(AdaptedProcess, Martingale),
}

/// Per-iteration distances between consecutive iterates.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IterationTrace {
    /// `delta_n = sqrt(sup_t E|Y^n_t - Y^{n-1}_t|^2 + E[M^n - M^{n-1}]_T)`.
    pub deltas: Vec<f64>,
    /// `E[M^n - M^{n-1}]_T`.
    pub martingale_energy: Vec<f64>,
    /// `(E sup_t |Y^n_t - Y^{n-1}_t|^2)^{1/2}`, recorded for comparison.
    pub s2_deltas: Vec<f64>,
    /// Theoretical bounds `q_n`, when constants are supplied.
    pub bounds: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub n: usize,
    pub delta: f64,
    /// `delta_n / delta_{n-1}`.
    pub ratio: Option<f64>,
    pub q_n: Option<f64>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    fn push(&mut self, delta: f64, energy: f64, s2: f64) {
        self.deltas.push(delta);
        self.martingale_energy.push(energy);
        self.s2_deltas.push(s2);
        self.bounds.push(None);
    }

    /// `delta_n / delta_{n-1}` for `n >= 2` (iterations are numbered from 1).
    pub fn ratio(&self, n: usize) -> Option<f64> {
        if n < 2 || n > self.deltas.len() {
            return None;
        }
        let prev = self.deltas[n - 2];
        (prev > 0.0).then(|| self.deltas[n - 1] / prev)
    }

    /// `b = E[M^2 - M^1]_T`, measured from the first two iterates.
    pub fn first_gap(&self) -> Option<f64> {
        self.martingale_energy.get(1).copied()
    }

    /// Stores `q(n)` for every recorded iteration.
    pub fn set_bounds<F: Fn(usize) -> Option<f64>>(&mut self, q: F) {
        self.bounds = (1..=self.deltas.len()).map(q).collect();
    }

    pub fn rows(&self) -> Vec<TraceRow> {
        (1..=self.deltas.len())
            .map(|n| TraceRow {
                n,
                delta: self.deltas[n - 1],
                ratio: self.ratio(n),
                q_n: self.bounds.get(n - 1).copied().flatten(),
            })
            .collect()
    }

    fn diagnosis(&self) -> String {
        let k = self.deltas.len();
        if k >= 3 && self.deltas[k - 1] > self.deltas[k - 2] && self.deltas[k - 2] > self.deltas[k - 3] {
            "distances increasing over the last iterations (diverging)".into()
        } else if k >= 2 && self.deltas[k - 1] >= 0.999 * self.deltas[k - 2] {
            "no contraction in the last iteration (stalled)".into()
        } else {
            "contracting but too slowly for the iteration budget".into()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardOutput {
    pub solution: Solution,
    pub trace: IterationTrace,
    /// Context the returned solution was solved against.
    pub context: FrozenContext,
}

fn initial(
    space: &FilteredSpace,
    dim: usize,
    start: &PicardStart,
) -> Result<(AdaptedProcess, Martingale), SolverError> {
    let (y, m) = match start {
        PicardStart::Zero => (AdaptedProcess::zeros(space, dim), Martingale::zero(space, dim)),
        PicardStart::Martingale(m) => (AdaptedProcess::zeros(space, dim), m.clone()),
        PicardStart::Pair(y, m) => (y.clone(), m.clone()),
    };
    for found in [y.dim(), m.dim()] {
        if found != dim {
            return Err(SolverError::DimensionMismatch { expected: dim, found });
        }
    }
    y.check_shape(space)?;
    m.process().check_shape(space)?;
    Ok((y, m))
}

/// `(Y^n, M^n)` solves the problem with driver frozen at `(Y^{n-1}, M^{n-1})`,
/// starting from `start`, until `delta_n < cfg.picard_tol`.
pub fn picard_solve(
    space: &FilteredSpace,
    xi: &RandomVariable,
    driver: &Driver,
    cfg: &SolverConfig,
    start: &PicardStart,
) -> Result<PicardOutput, SolverError> {
    iterate(space, xi, driver, cfg, start, |ctx, _| {
        solve_frozen(space, xi, driver, ctx, cfg)
    })
}

/// Both arguments frozen: `Y^n_t = E(xi + sum_{k >= t} f(t_k, Y^{n-1}, M^{n-1}) dt | F_t)`,
/// `M^n` the martingale part of that closure.
pub fn picard_solve_full_freeze(
    space: &FilteredSpace,
    xi: &RandomVariable,
    driver: &Driver,
    cfg: &SolverConfig,
    start: &PicardStart,
) -> Result<PicardOutput, SolverError> {
    cfg.validate()?;
    iterate(space, xi, driver, cfg, start, |ctx, y_prev| {
        closure_step(space, xi, driver, ctx, y_prev, cfg)
    })
}

fn iterate<S>(
    space: &FilteredSpace,
    xi: &RandomVariable,
    driver: &Driver,
    cfg: &SolverConfig,
    start: &PicardStart,
    step: S,
) -> Result<PicardOutput, SolverError>
where
    S: Fn(&FrozenContext, &AdaptedProcess) -> Result<Solution, SolverError>,
{
    cfg.validate()?;
    let l = driver.dim();
    if xi.dim() != l {
        return Err(SolverError::DimensionMismatch {
            expected: l,
            found: xi.dim(),
        });
    }
    let request = driver.feature_request();
    let (mut y_prev, mut m_prev) = initial(space, l, start)?;
    let mut trace = IterationTrace::default();
    for _ in 0..cfg.picard_max_iter {
        let source_y = request.needs_y().then_some(&y_prev);
        let ctx = precompute_context_with(space, &m_prev, source_y, &request, cfg.execution)?;
        let sol = step(&ctx, &y_prev)?;
        let (delta, energy, s2) = combined_parts(space, &sol.y, &sol.m, &y_prev, &m_prev);
        trace.push(delta, energy, s2);
        if !delta.is_finite() {
            break;
        }
        if delta < cfg.picard_tol {
            return Ok(PicardOutput {
                solution: sol,
                trace,
                context: ctx,
            });
        }
        y_prev = sol.y;
        m_prev = sol.m;
    }
    Err(SolverError::MaxIterations {
        iterations: trace.len(),
        last_delta: trace.deltas.last().copied().unwrap_or(f64::NAN),
        diagnosis: trace.diagnosis(),
        trace: Box::new(trace),
    })
}

fn closure_step(
    space: &FilteredSpace,
    xi: &RandomVariable,
    driver: &Driver,
    ctx: &FrozenContext,
    y_prev: &AdaptedProcess,
    cfg: &SolverConfig,
) -> Result<Solution, SolverError> {
    let bound = driver.bind(space, ctx)?;
    let l = driver.dim();
    let n = space.steps();
    let dt = space.dt();
    let interior = space.level(n).start;
    let mut f = vec![0.0; interior * l];
    for k in 0..n {
        for node in space.level(k) {
            bound.eval(k, node, y_prev.value(node), &mut f[node * l..(node + 1) * l]);
        }
    }
    let mut integral = vec![0.0; space.node_count() * l];
    for node in 1..space.node_count() {
        let parent = space.parent(node).expect("non-root");
        for i in 0..l {
            integral[node * l + i] = integral[parent * l + i] + f[parent * l + i] * dt;
        }
    }
    let leaf_start = space.leaf_node(0) * l;
    let terminal: Vec<f64> = xi
        .values()
        .iter()
        .zip(&integral[leaf_start..])
        .map(|(x, i)| x + i)
        .collect();
    let closed = closure_with(space, &RandomVariable::from_values(space, l, terminal)?, cfg.execution)?;
    let root = closed.value(0).to_vec();
    let mut y = closed.clone();
    let mut m = closed;
    for node in 0..space.node_count() {
        for i in 0..l {
            y.value_mut(node)[i] -= integral[node * l + i];
            m.value_mut(node)[i] -= root[i];
        }
    }
    finish(space, xi, y, Martingale::from_process_unchecked(m), &f, cfg)
}
