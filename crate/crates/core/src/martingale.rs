//! Martingales on the tree: closure, brackets, representation against the
//! driving noise, strong orthogonality and the `M^2` metric.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::space::{closure, sq_norm, AdaptedProcess, FilteredSpace, RandomVariable, SpaceError};

/// Tolerance for the martingale and orthogonality checks.
pub const MARTINGALE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MartingaleError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("martingale must start at zero, root value has norm {0}")]
    NonZeroStart(f64),
    #[error("martingale property fails at node {node}: deviation {deviation}")]
    NotMartingale { node: usize, deviation: f64 },
    #[error("degenerate driving basis at node {node}: probability-weighted second moment is singular")]
    DegenerateBasis { node: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// An adapted process with `M_0 = 0` and the one-step martingale property.
#[derive(Debug, Clone, PartialEq)]
pub struct Martingale {
    process: AdaptedProcess,
}

impl Martingale {
    /// Validates the zero start and the one-step conditional expectation
    /// property within [`MARTINGALE_TOL`].
    pub fn new(space: &FilteredSpace, process: AdaptedProcess) -> Result<Self, MartingaleError> {
        process.check_shape(space)?;
        let m = Self { process };
        m.check(space)?;
        Ok(m)
    }

    /// Wraps a process that is a martingale by construction.
    pub(crate) fn from_process_unchecked(process: AdaptedProcess) -> Self {
        Self { process }
    }

    pub fn zero(space: &FilteredSpace, dim: usize) -> Self {
        Self {
            process: AdaptedProcess::zeros(space, dim),
        }
    }

    /// The driving noise `B`.
    pub fn driving_noise(space: &FilteredSpace) -> Self {
        Self {
            process: AdaptedProcess::driving_noise(space),
        }
    }

    /// Builds `M` from per-edge increments: `M_child = M_parent + increment(child)`.
    /// The increments at each node must have zero conditional mean.
    pub(crate) fn from_edge_increments(space: &FilteredSpace, dim: usize, increments: &[f64]) -> Self {
        let mut process = AdaptedProcess::zeros(space, dim);
        let values = process.values_mut();
        for node in 1..space.node_count() {
            let parent = space.parent(node).expect("non-root");
            for i in 0..dim {
                values[node * dim + i] = values[parent * dim + i] + increments[node * dim + i];
            }
        }
        Self { process }
    }

    pub fn check(&self, space: &FilteredSpace) -> Result<(), MartingaleError> {
        let root = sq_norm(self.process.value(0)).sqrt();
        if root > MARTINGALE_TOL {
            return Err(MartingaleError::NonZeroStart(root));
        }
        let worst = self.max_martingale_deviation(space);
        if let Some((node, deviation)) = worst {
            if deviation > MARTINGALE_TOL {
                return Err(MartingaleError::NotMartingale { node, deviation });
            }
        }
        if !self.process.is_finite() {
            return Err(MartingaleError::Space(SpaceError::InvalidParameter(
                "martingale has non-finite entries".into(),
            )));
        }
        Ok(())
    }

    /// Largest `|sum_c p_c M(child_c) - M(node)|` over non-leaf nodes.
    pub fn max_martingale_deviation(&self, space: &FilteredSpace) -> Option<(usize, f64)> {
        let dim = self.dim();
        let probs = space.child_probs();
        let mut worst: Option<(usize, f64)> = None;
        for node in 0..space.level(space.steps()).start {
            let mut dev = 0.0f64;
            for i in 0..dim {
                let mut avg = 0.0;
                for (c, child) in space.children(node).enumerate() {
                    avg += probs[c] * self.process.value(child)[i];
                }
                dev = dev.max((avg - self.process.value(node)[i]).abs());
            }
            if worst.is_none_or(|(_, w)| dev > w) {
                worst = Some((node, dev));
            }
        }
        worst
    }

    pub fn dim(&self) -> usize {
        self.process.dim()
    }

    pub fn process(&self) -> &AdaptedProcess {
        &self.process
    }

    pub fn into_process(self) -> AdaptedProcess {
        self.process
    }

    pub fn value(&self, node: usize) -> &[f64] {
        self.process.value(node)
    }

    /// Increment on the edge into `node` (zero at the root).
    pub fn increment(&self, space: &FilteredSpace, node: usize, out: &mut [f64]) {
        match space.parent(node) {
            None => out.iter_mut().for_each(|v| *v = 0.0),
            Some(parent) => {
                for ((o, a), b) in out
                    .iter_mut()
                    .zip(self.process.value(node))
                    .zip(self.process.value(parent))
                {
                    *o = a - b;
                }
            }
        }
    }

    pub fn terminal(&self, space: &FilteredSpace) -> RandomVariable {
        self.process.terminal(space)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            process: self.process.scaled(factor),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            process: self.process.add(&other.process),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            process: self.process.sub(&other.process),
        }
    }

    /// Single coordinate `M^i` as a one-dimensional martingale.
    pub fn coordinate(&self, i: usize) -> Self {
        let dim = self.dim();
        let values = self.process.values().chunks(dim).map(|v| v[i]).collect::<Vec<_>>();
        Self {
            process: AdaptedProcess::from_raw(1, values),
        }
    }
}

/// `M_t = E(X | F_t) - E X`.
pub fn close_martingale(space: &FilteredSpace, x: &RandomVariable) -> Result<Martingale, MartingaleError> {
    let mut c = closure(space, x)?;
    let dim = x.dim();
    let mean = c.value(0).to_vec();
    for chunk in c.values_mut().chunks_mut(dim) {
        for (v, m) in chunk.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    Ok(Martingale::from_process_unchecked(c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BracketKind {
    /// Pathwise `[M]`.
    Square,
    /// Compensator `<M>`.
    Predictable,
}

/// Bracket values per node plus the one-step predictable increments
/// `pred(node) = sum_c p_c |M(child_c) - M(node)|^2` (zero at leaves).
#[derive(Debug, Clone, PartialEq)]
pub struct BracketProcess {
    pub kind: BracketKind,
    pub value: Vec<f64>,
    pub pred_increment: Vec<f64>,
}

impl BracketProcess {
    pub fn at(&self, node: usize) -> f64 {
        self.value[node]
    }
}

/// `sum_c p_c |X(child_c) - X(node)|^2` for every non-leaf node.
pub fn predictable_increments(space: &FilteredSpace, x: &AdaptedProcess) -> Vec<f64> {
    let dim = x.dim();
    let probs = space.child_probs();
    let mut out = vec![0.0; space.node_count()];
    for node in 0..space.level(space.steps()).start {
        let here = x.value(node);
        let mut acc = 0.0;
        for (c, child) in space.children(node).enumerate() {
            let there = x.value(child);
            let mut sq = 0.0;
            for i in 0..dim {
                let d = there[i] - here[i];
                sq += d * d;
            }
            acc += probs[c] * sq;
        }
        out[node] = acc;
    }
    out
}

/// Pathwise square bracket `[M]`.
pub fn square_bracket(space: &FilteredSpace, m: &Martingale) -> BracketProcess {
    let x = m.process();
    let mut value = vec![0.0; space.node_count()];
    for node in 1..space.node_count() {
        let parent = space.parent(node).expect("non-root");
        let sq: f64 = x
            .value(node)
            .iter()
            .zip(x.value(parent))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        value[node] = value[parent] + sq;
    }
    BracketProcess {
        kind: BracketKind::Square,
        value,
        pred_increment: predictable_increments(space, x),
    }
}

/// Predictable bracket `<M>`: cumulative sum of the one-step predictable
/// increments of the strict ancestors.
pub fn predictable_bracket(space: &FilteredSpace, m: &Martingale) -> BracketProcess {
    let pred = predictable_increments(space, m.process());
    let mut value = vec![0.0; space.node_count()];
    for node in 1..space.node_count() {
        let parent = space.parent(node).expect("non-root");
        value[node] = value[parent] + pred[parent];
    }
    BracketProcess {
        kind: BracketKind::Predictable,
        value,
        pred_increment: pred,
    }
}

/// `E([X]_{t_to} - [X]_{t_from})` for a martingale-valued process `X`,
/// accumulated level by level from the predictable increments.
pub fn bracket_energy(space: &FilteredSpace, x: &AdaptedProcess, from: usize, to: usize) -> f64 {
    let pred = predictable_increments(space, x);
    energy_from_increments(space, &pred, from, to)
}

pub(crate) fn energy_from_increments(space: &FilteredSpace, pred: &[f64], from: usize, to: usize) -> f64 {
    let mut total = 0.0;
    for k in from..to.min(space.steps()) {
        for node in space.level(k) {
            total += space.node_prob(node) * pred[node];
        }
    }
    total
}

/// `M = int Z dB + L` with `L` strongly orthogonal to every noise coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    /// Martingale dimension `l`.
    pub dim: usize,
    /// Noise dimension `d`.
    pub noise_dim: usize,
    /// Row-major `l x d` coefficient block per node; zero at leaves.
    pub z: Vec<f64>,
    pub residual: Martingale,
}

impl Representation {
    pub fn z_at(&self, node: usize) -> &[f64] {
        let w = self.dim * self.noise_dim;
        &self.z[node * w..(node + 1) * w]
    }

    /// `Z` as an adapted process of dimension `l*d`.
    pub fn z_process(&self, space: &FilteredSpace) -> AdaptedProcess {
        AdaptedProcess::from_values(space, self.dim * self.noise_dim, self.z.clone())
            .expect("coefficient field matches the space")
    }
}

/// Per-node weighted least-squares projection of the child increments of `M`
/// onto the child increments of the driving noise.
pub fn represent(space: &FilteredSpace, m: &Martingale) -> Result<Representation, MartingaleError> {
    let l = m.dim();
    let d = space.noise_dim();
    let b = space.branching();
    let probs = space.child_probs();

    // Edge increments of B are identical at every node, so the Gram matrix is too.
    let mut gram = DMatrix::<f64>::zeros(d, d);
    for c in 0..b {
        let inc = DVector::from_column_slice(space.child_increment(c));
        gram += probs[c] * &inc * inc.transpose();
    }
    let chol = gram
        .clone()
        .cholesky()
        .filter(|ch| ch.l().diagonal().iter().all(|v| *v > 1e-300))
        .ok_or(MartingaleError::DegenerateBasis { node: 0 })?;

    let n_nodes = space.node_count();
    let mut z = vec![0.0; n_nodes * l * d];
    let mut residual_inc = vec![0.0; n_nodes * l];
    let interior = space.level(space.steps()).start;
    let mut dm = vec![0.0; l];
    for node in 0..interior {
        let mut cross = DMatrix::<f64>::zeros(l, d);
        for (c, child) in space.children(node).enumerate() {
            m.increment(space, child, &mut dm);
            let inc = space.child_increment(c);
            for i in 0..l {
                for j in 0..d {
                    cross[(i, j)] += probs[c] * dm[i] * inc[j];
                }
            }
        }
        // Z = C G^{-1}, i.e. G Z^T = C^T.
        let zt = chol.solve(&cross.transpose());
        let block = &mut z[node * l * d..(node + 1) * l * d];
        for i in 0..l {
            for j in 0..d {
                block[i * d + j] = zt[(j, i)];
            }
        }
        for (c, child) in space.children(node).enumerate() {
            m.increment(space, child, &mut dm);
            let inc = space.child_increment(c);
            for i in 0..l {
                let mut proj = 0.0;
                for j in 0..d {
                    proj += block[i * d + j] * inc[j];
                }
                residual_inc[child * l + i] = dm[i] - proj;
            }
        }
    }
    let residual = Martingale::from_edge_increments(space, l, &residual_inc);
    Ok(Representation {
        dim: l,
        noise_dim: d,
        z,
        residual,
    })
}

/// `(E [M - N]_T)^{1/2}`.
pub fn m2_distance(space: &FilteredSpace, m: &Martingale, n: &Martingale) -> Result<f64, MartingaleError> {
    if m.dim() != n.dim() {
        return Err(MartingaleError::DimensionMismatch(m.dim(), n.dim()));
    }
    let diff = m.process().sub(n.process());
    Ok(bracket_energy(space, &diff, 0, space.steps()).sqrt())
}

/// Largest nodewise `|sum_c p_c dM^i dN^j|` over all coordinate pairs.
pub fn max_cross_variation(space: &FilteredSpace, m: &AdaptedProcess, n: &AdaptedProcess) -> f64 {
    let (lm, ln) = (m.dim(), n.dim());
    let probs = space.child_probs();
    let mut worst = 0.0f64;
    for node in 0..space.level(space.steps()).start {
        for i in 0..lm {
            for j in 0..ln {
                let mut acc = 0.0;
                for (c, child) in space.children(node).enumerate() {
                    let dmi = m.value(child)[i] - m.value(node)[i];
                    let dnj = n.value(child)[j] - n.value(node)[j];
                    acc += probs[c] * dmi * dnj;
                }
                worst = worst.max(acc.abs());
            }
        }
    }
    worst
}

/// Nodewise test that `[M, N]` is a martingale.
pub fn strongly_orthogonal(space: &FilteredSpace, m: &Martingale, n: &Martingale) -> bool {
    max_cross_variation(space, m.process(), n.process()) <= MARTINGALE_TOL
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{build_jump_walk_space, build_random_walk_space};
    use approx::assert_abs_diff_eq;

    #[test]
    fn closure_of_terminal_noise_is_noise() {
        let s = build_random_walk_space(1, 4, 1.0).unwrap();
        let x = RandomVariable::from_terminal_noise(&s, 1, |b, o| o[0] = b[0]);
        let m = close_martingale(&s, &x).unwrap();
        for node in 0..s.node_count() {
            assert_abs_diff_eq!(m.value(node)[0], s.noise(node)[0], epsilon = 1e-15);
        }
        let c = close_martingale(&s, &RandomVariable::constant(&s, &[2.0])).unwrap();
        assert!(c.process().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn closure_of_bt_squared() {
        let s = build_random_walk_space(1, 4, 1.0).unwrap();
        let x = RandomVariable::from_terminal_noise(&s, 1, |b, o| o[0] = b[0] * b[0]);
        let m = close_martingale(&s, &x).unwrap();
        m.check(&s).unwrap();
        for node in 0..s.node_count() {
            let t = s.grid().time(s.level_of(node));
            let b = s.noise(node)[0];
            assert_abs_diff_eq!(m.value(node)[0], b * b - t, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_non_martingales() {
        let s = build_random_walk_space(1, 2, 1.0).unwrap();
        let mut p = AdaptedProcess::driving_noise(&s);
        p.value_mut(0)[0] = 0.5;
        assert!(matches!(Martingale::new(&s, p), Err(MartingaleError::NonZeroStart(_))));
        let mut p = AdaptedProcess::driving_noise(&s);
        p.value_mut(3)[0] += 1.0;
        assert!(matches!(
            Martingale::new(&s, p),
            Err(MartingaleError::NotMartingale { node: 1, .. })
        ));
    }

    #[test]
    fn brackets_of_noise() {
        let s = build_random_walk_space(1, 4, 1.0).unwrap();
        let b = Martingale::driving_noise(&s);
        let sq = square_bracket(&s, &b);
        let two_b = square_bracket(&s, &b.scaled(2.0));
        for node in 0..s.node_count() {
            let k = s.level_of(node) as f64;
            assert_abs_diff_eq!(sq.at(node), k * 0.25, epsilon = 1e-15);
            assert_abs_diff_eq!(two_b.at(node), 4.0 * k * 0.25, epsilon = 1e-15);
        }
        let pb = predictable_bracket(&s, &b);
        assert_eq!(pb.kind, BracketKind::Predictable);
        for node in 0..s.node_count() {
            assert_abs_diff_eq!(pb.at(node), sq.at(node), epsilon = 1e-15);
        }
        let z = square_bracket(&s, &Martingale::zero(&s, 1));
        assert!(z.value.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn representation_of_noise_and_square() {
        let s = build_random_walk_space(1, 4, 1.0).unwrap();
        let r = represent(&s, &Martingale::driving_noise(&s)).unwrap();
        for node in 0..s.level(4).start {
            assert_abs_diff_eq!(r.z_at(node)[0], 1.0, epsilon = 1e-14);
        }
        assert!(r.residual.process().values().iter().all(|v| v.abs() < 1e-14));

        let x = RandomVariable::from_terminal_noise(&s, 1, |b, o| o[0] = b[0] * b[0]);
        let m = close_martingale(&s, &x).unwrap();
        let r = represent(&s, &m).unwrap();
        for node in 0..s.level(4).start {
            assert_abs_diff_eq!(r.z_at(node)[0], 2.0 * s.noise(node)[0], epsilon = 1e-12);
        }
        assert!(r.residual.process().values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn jump_residual_is_orthogonal() {
        let s = build_jump_walk_space(3, 1.0, 0.3, 1.5).unwrap();
        let all_jumps = s.leaf_count() - 1;
        let x = RandomVariable::from_leaf_fn(&s, 1, |leaf, o| o[0] = if leaf == all_jumps { 1.0 } else { 0.0 });
        let m = close_martingale(&s, &x).unwrap();
        let r = represent(&s, &m).unwrap();
        let l_norm = r
            .residual
            .process()
            .values()
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        assert!(l_norm > 1e-3);
        r.residual.check(&s).unwrap();
        let b = Martingale::driving_noise(&s);
        assert!(strongly_orthogonal(&s, &r.residual, &b));
        // dM = Z dB + dL on every edge
        let mut dm = [0.0];
        let mut dl = [0.0];
        for node in 1..s.node_count() {
            let parent = s.parent(node).unwrap();
            m.increment(&s, node, &mut dm);
            r.residual.increment(&s, node, &mut dl);
            let db = s.child_increment(s.child_rank(node))[0];
            assert_abs_diff_eq!(dm[0], r.z_at(parent)[0] * db + dl[0], epsilon = 1e-10);
        }
    }

    #[test]
    fn distances_and_orthogonality() {
        let s = build_random_walk_space(2, 3, 2.0).unwrap();
        let b = Martingale::driving_noise(&s);
        assert_eq!(m2_distance(&s, &b, &b).unwrap(), 0.0);
        let b1 = b.coordinate(0);
        let b2 = b.coordinate(1);
        assert_abs_diff_eq!(
            m2_distance(&s, &b1, &Martingale::zero(&s, 1)).unwrap(),
            2.0f64.sqrt(),
            epsilon = 1e-12
        );
        assert!(strongly_orthogonal(&s, &b1, &b2));
        assert!(!strongly_orthogonal(&s, &b1, &b1));
        assert!(m2_distance(&s, &b1, &b).is_err());
    }
}
