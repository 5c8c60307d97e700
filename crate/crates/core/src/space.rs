//! Finite filtered probability spaces as non-recombining event trees.
//!
//! Nodes are stored level by level. Level `k` holds `branching^k` nodes and
//! the children of the `j`-th node of level `k` are the nodes
//! `branching*j .. branching*(j+1)` of level `k+1`, in the fixed child order
//! of the space. Every edge out of a node with child rank `c` carries the same
//! probability and driving-noise increment, so both are stored once per rank.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;

/// Default cap on the total number of tree nodes.
pub const DEFAULT_NODE_BUDGET: u64 = 1 << 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("node budget exceeded: tree needs {required} nodes, allowed {allowed}")]
    BudgetExceeded { required: u128, allowed: u64 },
    #[error("invalid space parameter: {0}")]
    InvalidParameter(String),
    #[error("level {level} out of range 0..={steps}")]
    LevelOutOfRange { level: usize, steps: usize },
    #[error("shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Uniform time grid `t_k = k * dt` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self, SpaceError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(SpaceError::InvalidParameter(format!(
                "horizon T must be positive and finite, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(SpaceError::InvalidParameter("step count N must be at least 1".into()));
        }
        Ok(Self {
            horizon,
            steps,
            dt: horizon / steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }
}

/// Serializable recipe for a space. Spaces are always rebuilt from this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceDescriptor {
    Walk {
        d: usize,
        #[serde(rename = "N")]
        steps: usize,
        #[serde(rename = "T")]
        horizon: f64,
    },
    JumpWalk {
        #[serde(rename = "N")]
        steps: usize,
        #[serde(rename = "T")]
        horizon: f64,
        q: f64,
        #[serde(rename = "J")]
        jump: f64,
    },
}

impl SpaceDescriptor {
    pub fn build(&self, budget: u64) -> Result<FilteredSpace, SpaceError> {
        match *self {
            SpaceDescriptor::Walk { d, steps, horizon } => {
                FilteredSpace::random_walk_with_budget(d, steps, horizon, budget)
            }
            SpaceDescriptor::JumpWalk {
                steps,
                horizon,
                q,
                jump,
            } => FilteredSpace::jump_walk_with_budget(steps, horizon, q, jump, budget),
        }
    }

    pub fn steps(&self) -> usize {
        match *self {
            SpaceDescriptor::Walk { steps, .. } | SpaceDescriptor::JumpWalk { steps, .. } => steps,
        }
    }
}

/// The discrete `(Omega, F, P, (F_t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredSpace {
    descriptor: SpaceDescriptor,
    grid: TimeGrid,
    noise_dim: usize,
    branching: usize,
    child_prob: Vec<f64>,
    child_increment: Vec<f64>,
    level_offset: Vec<usize>,
    node_prob: Vec<f64>,
    noise: Vec<f64>,
}

fn required_nodes(branching: u128, steps: usize) -> u128 {
    let mut total: u128 = 0;
    let mut level: u128 = 1;
    for _ in 0..=steps {
        total = total.saturating_add(level);
        level = level.saturating_mul(branching);
    }
    total
}

/// Walk on `{±sqrt(dt)}^d` with `2^d` equiprobable children per node.
pub fn build_random_walk_space(d: usize, steps: usize, horizon: f64) -> Result<FilteredSpace, SpaceError> {
    FilteredSpace::random_walk_with_budget(d, steps, horizon, DEFAULT_NODE_BUDGET)
}

/// Ternary tree with a compensated jump branch of probability `q`.
pub fn build_jump_walk_space(steps: usize, horizon: f64, q: f64, jump: f64) -> Result<FilteredSpace, SpaceError> {
    FilteredSpace::jump_walk_with_budget(steps, horizon, q, jump, DEFAULT_NODE_BUDGET)
}

impl FilteredSpace {
    pub fn random_walk_with_budget(d: usize, steps: usize, horizon: f64, budget: u64) -> Result<Self, SpaceError> {
        if d == 0 {
            return Err(SpaceError::InvalidParameter(
                "walk dimension d must be at least 1".into(),
            ));
        }
        let grid = TimeGrid::new(horizon, steps)?;
        if d >= 64 {
            return Err(SpaceError::BudgetExceeded {
                required: u128::MAX,
                allowed: budget,
            });
        }
        let branching = 1usize << d;
        let sqrt_dt = grid.dt().sqrt();
        let prob = 1.0 / branching as f64;
        let mut child_increment = Vec::with_capacity(branching * d);
        for c in 0..branching {
            for i in 0..d {
                let bit = (c >> (d - 1 - i)) & 1;
                child_increment.push(if bit == 1 { sqrt_dt } else { -sqrt_dt });
            }
        }
        Self::assemble(
            SpaceDescriptor::Walk { d, steps, horizon },
            grid,
            d,
            vec![prob; branching],
            child_increment,
            budget,
        )
    }

    pub fn jump_walk_with_budget(
        steps: usize,
        horizon: f64,
        q: f64,
        jump: f64,
        budget: u64,
    ) -> Result<Self, SpaceError> {
        if !(q > 0.0 && q < 1.0) {
            return Err(SpaceError::InvalidParameter(format!(
                "jump probability q must lie in the open interval (0,1), got {q}"
            )));
        }
        if !(jump.is_finite() && jump != 0.0) {
            return Err(SpaceError::InvalidParameter(format!(
                "jump size J must be finite and nonzero, got {jump}"
            )));
        }
        let grid = TimeGrid::new(horizon, steps)?;
        let sqrt_dt = grid.dt().sqrt();
        let shift = -q * jump;
        let diffusive = 0.5 * (1.0 - q);
        Self::assemble(
            SpaceDescriptor::JumpWalk {
                steps,
                horizon,
                q,
                jump,
            },
            grid,
            1,
            vec![diffusive, diffusive, q],
            vec![-sqrt_dt + shift, sqrt_dt + shift, jump + shift],
            budget,
        )
    }

    fn assemble(
        descriptor: SpaceDescriptor,
        grid: TimeGrid,
        noise_dim: usize,
        child_prob: Vec<f64>,
        child_increment: Vec<f64>,
        budget: u64,
    ) -> Result<Self, SpaceError> {
        let branching = child_prob.len();
        let steps = grid.steps();
        let required = required_nodes(branching as u128, steps);
        if required > budget as u128 {
            return Err(SpaceError::BudgetExceeded {
                required,
                allowed: budget,
            });
        }
        let total = required as usize;
        let mut level_offset = Vec::with_capacity(steps + 2);
        let mut offset = 0usize;
        let mut width = 1usize;
        for _ in 0..=steps {
            level_offset.push(offset);
            offset += width;
            width *= branching;
        }
        level_offset.push(offset);

        let mut node_prob = vec![0.0; total];
        let mut noise = vec![0.0; total * noise_dim];
        node_prob[0] = 1.0;
        for k in 0..steps {
            let parents = level_offset[k]..level_offset[k + 1];
            let child_base = level_offset[k + 1];
            for (j, parent) in parents.enumerate() {
                for c in 0..branching {
                    let child = child_base + j * branching + c;
                    node_prob[child] = node_prob[parent] * child_prob[c];
                    for i in 0..noise_dim {
                        noise[child * noise_dim + i] =
                            noise[parent * noise_dim + i] + child_increment[c * noise_dim + i];
                    }
                }
            }
        }
        let space = Self {
            descriptor,
            grid,
            noise_dim,
            branching,
            child_prob,
            child_increment,
            level_offset,
            node_prob,
            noise,
        };
        space.check_invariants()?;
        Ok(space)
    }

    /// Checks child probabilities, level normalization and the zero-mean
    /// property of the driving-noise increments.
    pub fn check_invariants(&self) -> Result<(), SpaceError> {
        if self.child_prob.iter().any(|&p| !(p > 0.0)) {
            return Err(SpaceError::Invariant("non-positive child probability".into()));
        }
        let sum: f64 = self.child_prob.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(SpaceError::Invariant(format!("child probabilities sum to {sum}")));
        }
        for i in 0..self.noise_dim {
            let mean: f64 = (0..self.branching)
                .map(|c| self.child_prob[c] * self.child_increment[c * self.noise_dim + i])
                .sum();
            if mean.abs() > 1e-12 {
                return Err(SpaceError::Invariant(format!(
                    "noise coordinate {i} has one-step mean {mean}"
                )));
            }
        }
        for k in 0..=self.steps() {
            let total: f64 = self.level(k).map(|n| self.node_prob[n]).sum();
            if (total - 1.0).abs() > 1e-10 {
                return Err(SpaceError::Invariant(format!("level {k} probabilities sum to {total}")));
            }
        }
        Ok(())
    }

    pub fn descriptor(&self) -> &SpaceDescriptor {
        &self.descriptor
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    /// Dimension of the driving noise `B`.
    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn node_count(&self) -> usize {
        self.node_prob.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.level_width(self.steps())
    }

    pub fn level(&self, k: usize) -> Range<usize> {
        self.level_offset[k]..self.level_offset[k + 1]
    }

    pub fn level_width(&self, k: usize) -> usize {
        self.level_offset[k + 1] - self.level_offset[k]
    }

    pub fn level_of(&self, node: usize) -> usize {
        self.level_offset.partition_point(|&o| o <= node) - 1
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        if node == 0 {
            return None;
        }
        let k = self.level_of(node);
        let j = node - self.level_offset[k];
        Some(self.level_offset[k - 1] + j / self.branching)
    }

    /// Child rank of a non-root node within its parent's child list.
    pub fn child_rank(&self, node: usize) -> usize {
        let k = self.level_of(node);
        (node - self.level_offset[k]) % self.branching
    }

    /// Children of a non-leaf node, in the fixed child order.
    pub fn children(&self, node: usize) -> Range<usize> {
        let k = self.level_of(node);
        debug_assert!(k < self.steps(), "leaves have no children");
        let j = node - self.level_offset[k];
        let start = self.level_offset[k + 1] + j * self.branching;
        start..start + self.branching
    }

    pub fn child_probs(&self) -> &[f64] {
        &self.child_prob
    }

    pub fn child_increment(&self, rank: usize) -> &[f64] {
        &self.child_increment[rank * self.noise_dim..(rank + 1) * self.noise_dim]
    }

    pub fn node_prob(&self, node: usize) -> f64 {
        self.node_prob[node]
    }

    /// Value of the driving noise `B` at a node.
    pub fn noise(&self, node: usize) -> &[f64] {
        &self.noise[node * self.noise_dim..(node + 1) * self.noise_dim]
    }

    pub fn leaf_node(&self, leaf: usize) -> usize {
        self.level_offset[self.steps()] + leaf
    }

    /// Ancestor of `node` at level `k` (the node itself when `k` is its level).
    pub fn ancestor(&self, node: usize, k: usize) -> usize {
        let level = self.level_of(node);
        debug_assert!(k <= level);
        let j = node - self.level_offset[level];
        let shift = self.branching.pow((level - k) as u32);
        self.level_offset[k] + j / shift
    }

    /// Nodes on the root-to-node path, root first.
    pub fn path_to(&self, node: usize) -> Vec<usize> {
        let level = self.level_of(node);
        (0..=level).map(|k| self.ancestor(node, k)).collect()
    }

    fn check_level(&self, k: usize) -> Result<(), SpaceError> {
        if k > self.steps() {
            return Err(SpaceError::LevelOutOfRange {
                level: k,
                steps: self.steps(),
            });
        }
        Ok(())
    }
}

/// Node-indexed vector values; adapted by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    dim: usize,
    values: Vec<f64>,
}

impl AdaptedProcess {
    pub fn zeros(space: &FilteredSpace, dim: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; space.node_count() * dim],
        }
    }

    pub fn from_values(space: &FilteredSpace, dim: usize, values: Vec<f64>) -> Result<Self, SpaceError> {
        let expected = space.node_count() * dim;
        if values.len() != expected {
            return Err(SpaceError::ShapeMismatch {
                expected,
                actual: values.len(),
            });
        }
        Ok(Self { dim, values })
    }

    pub(crate) fn from_raw(dim: usize, values: Vec<f64>) -> Self {
        Self { dim, values }
    }

    pub fn from_fn<F>(space: &FilteredSpace, dim: usize, mut f: F) -> Self
    where
        F: FnMut(usize, &mut [f64]),
    {
        let mut values = vec![0.0; space.node_count() * dim];
        if dim > 0 {
            for (node, chunk) in values.chunks_mut(dim).enumerate() {
                f(node, chunk);
            }
        }
        Self { dim, values }
    }

    /// The driving noise `B` itself.
    pub fn driving_noise(space: &FilteredSpace) -> Self {
        Self {
            dim: space.noise_dim(),
            values: space.noise.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    pub fn value(&self, node: usize) -> &[f64] {
        &self.values[node * self.dim..(node + 1) * self.dim]
    }

    pub fn value_mut(&mut self, node: usize) -> &mut [f64] {
        &mut self.values[node * self.dim..(node + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Values at the leaves as a random variable.
    pub fn terminal(&self, space: &FilteredSpace) -> RandomVariable {
        let start = space.leaf_node(0) * self.dim;
        RandomVariable {
            dim: self.dim,
            values: self.values[start..].to_vec(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.values.len(), other.values.len(), "process shape mismatch");
        Self {
            dim: self.dim,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.values.len(), other.values.len(), "process shape mismatch");
        Self {
            dim: self.dim,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        }
    }

    pub(crate) fn check_shape(&self, space: &FilteredSpace) -> Result<(), SpaceError> {
        let expected = space.node_count() * self.dim;
        if self.values.len() != expected {
            return Err(SpaceError::ShapeMismatch {
                expected,
                actual: self.values.len(),
            });
        }
        Ok(())
    }
}

/// Leaf-indexed vector values (an `F_T`-measurable random variable).
#[derive(Debug, Clone, PartialEq)]
pub struct RandomVariable {
    dim: usize,
    values: Vec<f64>,
}

impl RandomVariable {
    pub fn from_values(space: &FilteredSpace, dim: usize, values: Vec<f64>) -> Result<Self, SpaceError> {
        let expected = space.leaf_count() * dim;
        if values.len() != expected {
            return Err(SpaceError::ShapeMismatch {
                expected,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SpaceError::InvalidParameter(
                "random variable has non-finite entries".into(),
            ));
        }
        Ok(Self { dim, values })
    }

    pub fn constant(space: &FilteredSpace, value: &[f64]) -> Self {
        let mut values = Vec::with_capacity(space.leaf_count() * value.len());
        for _ in 0..space.leaf_count() {
            values.extend_from_slice(value);
        }
        Self {
            dim: value.len(),
            values,
        }
    }

    /// Builds `X(leaf) = f(B_T(leaf))`.
    pub fn from_terminal_noise<F>(space: &FilteredSpace, dim: usize, mut f: F) -> Self
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let mut values = vec![0.0; space.leaf_count() * dim];
        for (leaf, chunk) in values.chunks_mut(dim).enumerate() {
            f(space.noise(space.leaf_node(leaf)), chunk);
        }
        Self { dim, values }
    }

    pub fn from_leaf_fn<F>(space: &FilteredSpace, dim: usize, mut f: F) -> Self
    where
        F: FnMut(usize, &mut [f64]),
    {
        let mut values = vec![0.0; space.leaf_count() * dim];
        for (leaf, chunk) in values.chunks_mut(dim).enumerate() {
            f(leaf, chunk);
        }
        Self { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, leaf: usize) -> &[f64] {
        &self.values[leaf * self.dim..(leaf + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    fn check_shape(&self, space: &FilteredSpace) -> Result<(), SpaceError> {
        let expected = space.leaf_count() * self.dim;
        if self.values.len() != expected {
            return Err(SpaceError::ShapeMismatch {
                expected,
                actual: self.values.len(),
            });
        }
        Ok(())
    }
}

/// `E(X | F_{t_k})` as values on the nodes of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelField {
    pub level: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl LevelField {
    pub fn value(&self, index_in_level: usize) -> &[f64] {
        &self.values[index_in_level * self.dim..(index_in_level + 1) * self.dim]
    }

    /// Extends to a whole-tree process: descendants inherit their level-`k`
    /// ancestor's value, earlier levels get the conditional expectation.
    pub fn extend(&self, space: &FilteredSpace) -> AdaptedProcess {
        let dim = self.dim;
        let k = self.level;
        let mut out = AdaptedProcess::zeros(space, dim);
        let base = space.level(k).start;
        for node in space.level(k).start..space.node_count() {
            let anc = space.ancestor(node, k);
            let j = anc - base;
            out.value_mut(node).copy_from_slice(self.value(j));
        }
        for level in (0..k).rev() {
            backward_level(space, &mut out.values, dim, level, Execution::Sequential);
        }
        out
    }
}

/// Fills level `k` of `values` with the child-probability average of level
/// `k+1`, children summed in the fixed rank order.
pub(crate) fn backward_level(space: &FilteredSpace, values: &mut [f64], dim: usize, k: usize, exec: Execution) {
    let range = space.level(k);
    let next = space.level(k + 1);
    let (head, tail) = values.split_at_mut(next.start * dim);
    let level_slice = &mut head[range.start * dim..range.end * dim];
    let b = space.branching();
    let probs = space.child_probs();
    let tail: &[f64] = tail;
    exec.for_each_chunk(level_slice, dim, |j, out| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (c, &p) in probs.iter().enumerate() {
            let child = (j * b + c) * dim;
            for i in 0..dim {
                out[i] += p * tail[child + i];
            }
        }
    });
}

/// `E(X | F_{t_k})` on level `k`, by backward induction from the leaves.
pub fn conditional_expectation(space: &FilteredSpace, x: &RandomVariable, k: usize) -> Result<LevelField, SpaceError> {
    space.check_level(k)?;
    x.check_shape(space)?;
    let dim = x.dim;
    let b = space.branching();
    let probs = space.child_probs();
    let mut current = x.values.clone();
    for level in (k..space.steps()).rev() {
        let width = space.level_width(level);
        let mut next = vec![0.0; width * dim];
        let prev = &current;
        Execution::default().for_each_chunk(&mut next, dim, |j, out| {
            for (c, &p) in probs.iter().enumerate() {
                let child = (j * b + c) * dim;
                for i in 0..dim {
                    out[i] += p * prev[child + i];
                }
            }
        });
        current = next;
    }
    Ok(LevelField {
        level: k,
        dim,
        values: current,
    })
}

/// The closure `t -> E(X | F_t)` at every node.
pub fn closure(space: &FilteredSpace, x: &RandomVariable) -> Result<AdaptedProcess, SpaceError> {
    closure_with(space, x, Execution::default())
}

pub fn closure_with(space: &FilteredSpace, x: &RandomVariable, exec: Execution) -> Result<AdaptedProcess, SpaceError> {
    x.check_shape(space)?;
    let dim = x.dim;
    let mut out = AdaptedProcess::zeros(space, dim);
    let leaf_start = space.leaf_node(0) * dim;
    out.values[leaf_start..].copy_from_slice(&x.values);
    for k in (0..space.steps()).rev() {
        backward_level(space, &mut out.values, dim, k, exec);
    }
    Ok(out)
}

/// `E X`.
pub fn expectation(space: &FilteredSpace, x: &RandomVariable) -> Result<Vec<f64>, SpaceError> {
    Ok(conditional_expectation(space, x, 0)?.values)
}

/// `E Y_{t_k}` for an adapted process, summed over level `k` in node order.
pub fn level_expectation(space: &FilteredSpace, y: &AdaptedProcess, k: usize) -> Vec<f64> {
    let dim = y.dim();
    let mut acc = vec![0.0; dim];
    for node in space.level(k) {
        let p = space.node_prob(node);
        for (a, v) in acc.iter_mut().zip(y.value(node)) {
            *a += p * v;
        }
    }
    acc
}

/// `E |Y_{t_k}|^2`.
pub fn level_second_moment(space: &FilteredSpace, y: &AdaptedProcess, k: usize) -> f64 {
    space
        .level(k)
        .map(|node| space.node_prob(node) * sq_norm(y.value(node)))
        .sum()
}

/// `E Z` for a scalar evaluated per leaf.
pub fn leaf_expectation<F: FnMut(usize) -> f64>(space: &FilteredSpace, mut f: F) -> f64 {
    (0..space.leaf_count())
        .map(|leaf| space.node_prob(space.leaf_node(leaf)) * f(leaf))
        .sum()
}

pub(crate) fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Per-node running maximum of `|Y|^2` along the root-to-node path.
pub fn running_max_sq(space: &FilteredSpace, y: &AdaptedProcess) -> Vec<f64> {
    let mut out = vec![0.0; space.node_count()];
    out[0] = sq_norm(y.value(0));
    for node in 1..space.node_count() {
        let parent = space.parent(node).expect("non-root");
        out[node] = out[parent].max(sq_norm(y.value(node)));
    }
    out
}

/// `(E sup_t |Y_t|^2)^{1/2}` by exact path enumeration.
pub fn s2_norm(space: &FilteredSpace, y: &AdaptedProcess) -> Result<f64, SpaceError> {
    y.check_shape(space)?;
    let run = running_max_sq(space, y);
    Ok(leaf_expectation(space, |leaf| run[space.leaf_node(leaf)]).sqrt())
}

/// `(E sum_{k<N} |Y_{t_k}|^2 dt)^{1/2}`.
pub fn h2_norm(space: &FilteredSpace, y: &AdaptedProcess) -> Result<f64, SpaceError> {
    y.check_shape(space)?;
    let dt = space.dt();
    let total: f64 = (0..space.steps()).map(|k| level_second_moment(space, y, k) * dt).sum();
    Ok(total.sqrt())
}
