//! Martingale- and `Y`-derived feature fields.

use serde::{Deserialize, Serialize};

use super::context::LawField;
use super::wasserstein::{w1_distance, AtomicMeasure, GroundMetric};
use super::{Delay, DriverError, LawConfig, LawReference};
use crate::exec::Execution;
use crate::martingale::{predictable_increments, represent, Martingale, Representation};
use crate::space::{sq_norm, AdaptedProcess, FilteredSpace};

/// Path functionals `phi` applied to the future-increment path
/// `s -> M_{s∨t} - M_t`, sampled at every grid time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathFunctional {
    Zero,
    /// `sup_s |a_s|`
    SupAbs,
    /// `|a_T|`
    TerminalAbs,
    /// `(N+1)^{-1} sum_s |a_s|`
    MeanAbs,
}

impl PathFunctional {
    /// Lipschitz constant with respect to the sup metric on paths.
    pub fn lipschitz(&self) -> f64 {
        match self {
            PathFunctional::Zero => 0.0,
            _ => 1.0,
        }
    }

    /// Evaluates on a path of `steps + 1` points given by `point(s)`.
    pub fn eval<'p, F>(&self, steps: usize, point: F) -> f64
    where
        F: Fn(usize) -> &'p [f64],
    {
        let norm = |s: usize| sq_norm(point(s)).sqrt();
        match self {
            PathFunctional::Zero => 0.0,
            PathFunctional::SupAbs => (0..=steps).map(norm).fold(0.0, f64::max),
            PathFunctional::TerminalAbs => norm(steps),
            PathFunctional::MeanAbs => (0..=steps).map(norm).sum::<f64>() / (steps + 1) as f64,
        }
    }
}

/// `E([M]_T - [M]_t | F_t)`, accumulated backward from the predictable increments.
pub fn h1_field(space: &FilteredSpace, m: &Martingale) -> AdaptedProcess {
    let pred = predictable_increments(space, m.process());
    let mut values = vec![0.0; space.node_count()];
    let probs = space.child_probs();
    for k in (0..space.steps()).rev() {
        for node in space.level(k) {
            let mut acc = 0.0;
            for (c, child) in space.children(node).enumerate() {
                acc += probs[c] * values[child];
            }
            values[node] = pred[node] + acc;
        }
    }
    AdaptedProcess::from_raw(1, values)
}

/// `sqrt(E(|dM^i|^2 | F_t) / dt)` per component; zero at the leaves.
pub fn carre_field(space: &FilteredSpace, m: &Martingale) -> AdaptedProcess {
    let l = m.dim();
    let dt = space.dt();
    let probs = space.child_probs();
    let mut values = vec![0.0; space.node_count() * l];
    for node in 0..space.level(space.steps()).start {
        let here = m.value(node);
        for (c, child) in space.children(node).enumerate() {
            let there = m.value(child);
            for i in 0..l {
                let d = there[i] - here[i];
                values[node * l + i] += probs[c] * d * d;
            }
        }
        for v in &mut values[node * l..(node + 1) * l] {
            *v = (*v / dt).sqrt();
        }
    }
    AdaptedProcess::from_raw(l, values)
}

/// Conditional expectation of level-`from` values onto level `to <= from`.
pub fn project_to_level(space: &FilteredSpace, dim: usize, values: &[f64], from: usize, to: usize) -> Vec<f64> {
    debug_assert!(to <= from);
    let b = space.branching();
    let probs = space.child_probs();
    let mut current = values.to_vec();
    for level in (to..from).rev() {
        let mut next = vec![0.0; space.level_width(level) * dim];
        for (j, out) in next.chunks_mut(dim).enumerate() {
            for (c, &p) in probs.iter().enumerate() {
                let child = (j * b + c) * dim;
                for i in 0..dim {
                    out[i] += p * current[child + i];
                }
            }
        }
        current = next;
    }
    current
}

fn level_slice<'a>(space: &FilteredSpace, values: &'a [f64], dim: usize, k: usize) -> &'a [f64] {
    let r = space.level(k);
    &values[r.start * dim..r.end * dim]
}

/// `E(phi(M_{.∨t} - M_t) | F_t)` by enumerating every descendant leaf path.
pub fn path_functional_field(space: &FilteredSpace, m: &Martingale, phi: PathFunctional) -> AdaptedProcess {
    path_functional_field_with(space, m, phi, Execution::default())
}

pub(crate) fn path_functional_field_with(
    space: &FilteredSpace,
    m: &Martingale,
    phi: PathFunctional,
    exec: Execution,
) -> AdaptedProcess {
    let n = space.steps();
    let l = m.dim();
    let mut values = vec![0.0; space.node_count()];
    if phi == PathFunctional::Zero {
        return AdaptedProcess::from_raw(1, values);
    }
    for k in 0..n {
        let range = space.level(k);
        let leaves_per_node = space.level_width(n) / space.level_width(k);
        exec.for_each_chunk(&mut values[range.clone()], 1, |j, out| {
            let node = range.start + j;
            let base = m.value(node);
            let start_leaf = j * leaves_per_node;
            let mut acc = 0.0;
            let mut path = vec![0.0; (n + 1) * l];
            for leaf in start_leaf..start_leaf + leaves_per_node {
                let leaf_node = space.leaf_node(leaf);
                fill_future_path(space, m.process(), leaf_node, k, base, &mut path);
                let w = space.node_prob(leaf_node) / space.node_prob(node);
                acc += w * phi.eval(n, |s| &path[s * l..(s + 1) * l]);
            }
            out[0] = acc;
        });
    }
    AdaptedProcess::from_raw(1, values)
}

/// `a_s = X_{anc_s(leaf)} - base` for `s >= k`, zero before.
fn fill_future_path(
    space: &FilteredSpace,
    x: &AdaptedProcess,
    leaf_node: usize,
    k: usize,
    base: &[f64],
    path: &mut [f64],
) {
    let n = space.steps();
    let l = base.len();
    path[..k * l].iter_mut().for_each(|v| *v = 0.0);
    for s in k..=n {
        let anc = space.ancestor(leaf_node, s);
        let v = x.value(anc);
        for i in 0..l {
            path[s * l + i] = v[i] - base[i];
        }
    }
}

/// `E(Z^M_{t+zeta(t)} | F_t)` row sums, with `tail` used for targets at or past the horizon.
pub fn anticipated_field(
    space: &FilteredSpace,
    m: &Martingale,
    delay: &Delay,
    tail: Option<f64>,
) -> Result<AdaptedProcess, DriverError> {
    let rep = represent(space, m)?;
    anticipated_from_representation(space, &rep, delay, tail)
}

pub(crate) fn anticipated_from_representation(
    space: &FilteredSpace,
    rep: &Representation,
    delay: &Delay,
    tail: Option<f64>,
) -> Result<AdaptedProcess, DriverError> {
    let n = space.steps();
    let l = rep.dim;
    let d = rep.noise_dim;
    let sums: Vec<f64> = rep.z.chunks(d).map(|row| row.iter().sum()).collect();
    let mut values = vec![0.0; space.node_count() * l];
    for k in 0..n {
        let target = k + delay.offset(k)?;
        let range = space.level(k);
        let dst = &mut values[range.start * l..range.end * l];
        if target >= n {
            let c = tail.ok_or(DriverError::MissingTail { level: k, target })?;
            dst.iter_mut().for_each(|v| *v = c);
        } else {
            let src = level_slice(space, &sums, l, target);
            dst.copy_from_slice(&project_to_level(space, l, src, target, k));
        }
    }
    if let Some(c) = tail {
        let leaves = space.level(n);
        values[leaves.start * l..].iter_mut().for_each(|v| *v = c);
    }
    Ok(AdaptedProcess::from_raw(l, values))
}

/// `E(Y_{min(t+offset, T)} | F_t)`.
pub fn future_y_field(space: &FilteredSpace, y: &AdaptedProcess, offset: usize) -> AdaptedProcess {
    let n = space.steps();
    let l = y.dim();
    if offset == 0 {
        return y.clone();
    }
    let mut values = vec![0.0; space.node_count() * l];
    for k in 0..=n {
        let target = (k + offset).min(n);
        let src = level_slice(space, y.values(), l, target);
        let range = space.level(k);
        values[range.start * l..range.end * l].copy_from_slice(&project_to_level(space, l, src, target, k));
    }
    AdaptedProcess::from_raw(l, values)
}

/// Laws of the future-increment paths of `m` and their `W1` distance to the
/// reference law, per level (unconditional) or per node (conditional).
pub fn law_field(space: &FilteredSpace, m: &Martingale, cfg: LawConfig) -> Result<LawField, DriverError> {
    law_field_with(space, m, cfg, Execution::default())
}

pub(crate) fn law_field_with(
    space: &FilteredSpace,
    m: &Martingale,
    cfg: LawConfig,
    exec: Execution,
) -> Result<LawField, DriverError> {
    let n = space.steps();
    let l = m.dim();
    let noise = AdaptedProcess::driving_noise(space);
    if cfg.reference == LawReference::DrivingNoise && noise.dim() != l {
        return Err(DriverError::InvalidSpec(format!(
            "driving-noise reference has dimension {} but the martingale has dimension {l}",
            noise.dim()
        )));
    }
    let metric = GroundMetric::PathSup { point_dim: l };
    let path_len = (n + 1) * l;

    // Law of the future paths issued from `node` at level `k`: either its own
    // descendants (conditional) or every leaf (unconditional, node = None).
    let build = |x: &AdaptedProcess, k: usize, node: Option<usize>| -> Result<AtomicMeasure, DriverError> {
        let (leaves, mass) = match node {
            Some(v) => {
                let per = space.level_width(n) / space.level_width(k);
                let j = v - space.level(k).start;
                (j * per..(j + 1) * per, space.node_prob(v))
            }
            None => (0..space.leaf_count(), 1.0),
        };
        let mut items = Vec::with_capacity(leaves.len());
        for leaf in leaves {
            let leaf_node = space.leaf_node(leaf);
            let base = x.value(space.ancestor(leaf_node, k)).to_vec();
            let mut path = vec![0.0; path_len];
            fill_future_path(space, x, leaf_node, k, &base, &mut path);
            items.push((space.node_prob(leaf_node) / mass, path));
        }
        Ok(AtomicMeasure::from_weighted(path_len, items)?)
    };
    let reference = |k: usize, node: Option<usize>| -> Result<AtomicMeasure, DriverError> {
        match cfg.reference {
            LawReference::Zero => Ok(AtomicMeasure::dirac(vec![0.0; path_len])),
            LawReference::DrivingNoise => build(&noise, k, node),
        }
    };

    let mut distance = vec![0.0; space.node_count()];
    let mut level_laws = Vec::new();
    if cfg.per_node {
        for k in 0..=n {
            let range = space.level(k);
            exec.try_for_each_chunk(&mut distance[range.clone()], 1, |j, out| {
                let node = range.start + j;
                let mu = build(m.process(), k, Some(node))?;
                let nu = reference(k, Some(node))?;
                out[0] = w1_distance(&mu, &nu, metric, cfg.cap)?;
                Ok::<(), DriverError>(())
            })?;
        }
    } else {
        let per_level: Vec<Result<(AtomicMeasure, f64), DriverError>> = exec.map_indices(n + 1, |k| {
            let mu = build(m.process(), k, None)?;
            let nu = reference(k, None)?;
            let w = w1_distance(&mu, &nu, metric, cfg.cap)?;
            Ok((mu, w))
        });
        for (k, r) in per_level.into_iter().enumerate() {
            let (mu, w) = r?;
            distance[space.level(k)].iter_mut().for_each(|v| *v = w);
            level_laws.push(mu);
        }
    }
    Ok(LawField {
        config: cfg,
        distance: AdaptedProcess::from_raw(1, distance),
        level_laws,
    })
}
