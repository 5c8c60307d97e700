//! Exact Wasserstein-1 distance between finite atomic laws.
//!
//! One-dimensional laws use the quantile coupling (integral of `|F - G|`).
//! Everything else is solved as a transportation problem by successive
//! shortest augmenting paths with Dijkstra potentials.

use thiserror::Error;

/// Default support cap for the transportation solver.
pub const DEFAULT_SUPPORT_CAP: usize = 64;

const MASS_EPS: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WassersteinError {
    #[error("support size {size} exceeds the cap {cap}")]
    SupportCapExceeded { size: usize, cap: usize },
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("transport solver failed to converge after {0} augmentations")]
    NoConvergence(usize),
}

/// Ground metric on atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundMetric {
    Euclidean,
    /// Atoms are paths of `point_dim`-vectors; distance is the sup over time
    /// of the Euclidean distance between the two paths.
    PathSup {
        point_dim: usize,
    },
}

impl GroundMetric {
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            GroundMetric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            GroundMetric::PathSup { point_dim } => a
                .chunks(point_dim)
                .zip(b.chunks(point_dim))
                .map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
                .fold(0.0, f64::max),
        }
    }

    fn quantile_applicable(&self, atom_dim: usize) -> bool {
        match *self {
            GroundMetric::Euclidean => atom_dim == 1,
            GroundMetric::PathSup { point_dim } => atom_dim == 1 && point_dim == 1,
        }
    }
}

/// Finite probability measure: `weights[i]` on atom `atoms[i*dim..(i+1)*dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    dim: usize,
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl AtomicMeasure {
    pub fn new(dim: usize, atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self, WassersteinError> {
        if dim == 0 || atoms.len() != dim * weights.len() || weights.is_empty() {
            return Err(WassersteinError::InvalidMeasure(format!(
                "{} atom values for {} weights of dimension {dim}",
                atoms.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || atoms.iter().any(|a| !a.is_finite()) {
            return Err(WassersteinError::InvalidMeasure(
                "weights must be nonnegative and atoms finite".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(WassersteinError::InvalidMeasure(format!("weights sum to {total}")));
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(Self { dim, atoms, weights })
    }

    pub fn dirac(atom: Vec<f64>) -> Self {
        Self {
            dim: atom.len(),
            atoms: atom,
            weights: vec![1.0],
        }
    }

    /// Equal weights on each atom.
    pub fn uniform(dim: usize, atoms: Vec<f64>) -> Result<Self, WassersteinError> {
        let n = atoms.len() / dim.max(1);
        Self::new(dim, atoms, vec![1.0 / n as f64; n])
    }

    /// Builds a measure from weighted atoms, merging bit-identical atoms and
    /// ordering the support lexicographically.
    pub fn from_weighted(dim: usize, items: Vec<(f64, Vec<f64>)>) -> Result<Self, WassersteinError> {
        let mut items = items;
        items.sort_by(|a, b| {
            a.1.iter()
                .zip(&b.1)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut atoms = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        let mut last: Option<Vec<f64>> = None;
        for (w, a) in items {
            if last.as_ref().is_some_and(|l| bits_equal(l, &a)) {
                *weights.last_mut().expect("merged into existing atom") += w;
            } else {
                atoms.extend_from_slice(&a);
                weights.push(w);
                last = Some(a);
            }
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(WassersteinError::InvalidMeasure("zero total mass".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { dim, atoms, weights })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

fn bits_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Exact `W_1(mu, nu)` under the given ground metric.
pub fn w1_distance(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    metric: GroundMetric,
    cap: usize,
) -> Result<f64, WassersteinError> {
    if mu.dim != nu.dim {
        return Err(WassersteinError::InvalidMeasure(format!(
            "atom dimensions differ: {} vs {}",
            mu.dim, nu.dim
        )));
    }
    if metric.quantile_applicable(mu.dim) {
        return Ok(w1_quantile(mu, nu));
    }
    // Against a point mass the product coupling is the only one.
    for (a, b) in [(mu, nu), (nu, mu)] {
        if b.len() == 1 {
            let target = b.atom(0);
            return Ok((0..a.len())
                .map(|i| a.weights[i] * metric.distance(a.atom(i), target))
                .sum());
        }
    }
    for m in [mu, nu] {
        if m.len() > cap {
            return Err(WassersteinError::SupportCapExceeded { size: m.len(), cap });
        }
    }
    // Solve in a canonical argument order so the result is exactly symmetric.
    let key = |m: &AtomicMeasure| {
        (
            m.len(),
            m.weights
                .iter()
                .chain(&m.atoms)
                .map(|x| x.to_bits())
                .collect::<Vec<_>>(),
        )
    };
    if key(mu) <= key(nu) {
        w1_transport(mu, nu, metric)
    } else {
        w1_transport(nu, mu, metric)
    }
}

/// `int |F_mu - F_nu| dx` for scalar atoms.
pub fn w1_quantile(mu: &AtomicMeasure, nu: &AtomicMeasure) -> f64 {
    let mut events: Vec<(f64, f64)> = Vec::with_capacity(mu.len() + nu.len());
    events.extend((0..mu.len()).map(|i| (mu.atoms[i], mu.weights[i])));
    events.extend((0..nu.len()).map(|j| (nu.atoms[j], -nu.weights[j])));
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cdf_gap = 0.0;
    let mut total = 0.0;
    for w in events.windows(2) {
        cdf_gap += w[0].1;
        total += cdf_gap.abs() * (w[1].0 - w[0].0);
    }
    total
}

/// Min-cost transportation by successive shortest paths.
pub fn w1_transport(mu: &AtomicMeasure, nu: &AtomicMeasure, metric: GroundMetric) -> Result<f64, WassersteinError> {
    let n = mu.len();
    let m = nu.len();
    let cost: Vec<f64> = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| metric.distance(mu.atom(i), nu.atom(j)))
        .collect();

    // Node layout: source, supplies 1..=n, demands n+1..=n+m, sink.
    let source = 0;
    let sink = n + m + 1;
    let total_nodes = n + m + 2;
    let supply = |v: usize| v - 1;
    let demand = |v: usize| v - 1 - n;

    let mut sent = vec![0.0; n];
    let mut recv = vec![0.0; m];
    let mut flow = vec![0.0; n * m];

    let mut potential = vec![0.0; total_nodes];
    for j in 0..m {
        potential[n + 1 + j] = (0..n).map(|i| cost[i * m + j]).fold(f64::INFINITY, f64::min);
    }
    potential[sink] = (0..m).map(|j| potential[n + 1 + j]).fold(f64::INFINITY, f64::min);

    let max_rounds = 4 * (n + m) * (n + m) + 16;
    let mut moved = 0.0;
    for _round in 0..max_rounds {
        if 1.0 - moved <= 1e-13 {
            return Ok(transport_cost(&flow, &cost));
        }
        // Dense Dijkstra on reduced costs.
        let mut dist = vec![f64::INFINITY; total_nodes];
        let mut pred = vec![usize::MAX; total_nodes];
        let mut done = vec![false; total_nodes];
        dist[source] = 0.0;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..total_nodes {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            let relax = |v: usize, c: f64, dist: &mut Vec<f64>, pred: &mut Vec<usize>| {
                let reduced = (c + potential[u] - potential[v]).max(0.0);
                if dist[u] + reduced < dist[v] {
                    dist[v] = dist[u] + reduced;
                    pred[v] = u;
                }
            };
            if u == source {
                for i in 0..n {
                    if mu.weights[i] - sent[i] > MASS_EPS {
                        relax(1 + i, 0.0, &mut dist, &mut pred);
                    }
                }
            } else if u == sink {
                for j in 0..m {
                    if recv[j] > MASS_EPS {
                        relax(n + 1 + j, 0.0, &mut dist, &mut pred);
                    }
                }
            } else if u <= n {
                let i = supply(u);
                for j in 0..m {
                    relax(n + 1 + j, cost[i * m + j], &mut dist, &mut pred);
                }
                if sent[i] > MASS_EPS {
                    relax(source, 0.0, &mut dist, &mut pred);
                }
            } else {
                let j = demand(u);
                for i in 0..n {
                    if flow[i * m + j] > MASS_EPS {
                        relax(1 + i, -cost[i * m + j], &mut dist, &mut pred);
                    }
                }
                if nu.weights[j] - recv[j] > MASS_EPS {
                    relax(sink, 0.0, &mut dist, &mut pred);
                }
            }
        }
        if !dist[sink].is_finite() {
            // Remaining mass is numerical dust.
            return Ok(transport_cost(&flow, &cost));
        }
        let reach = dist[sink];
        for v in 0..total_nodes {
            potential[v] += dist[v].min(reach);
        }
        // Bottleneck along the augmenting path.
        let mut push = f64::INFINITY;
        let mut v = sink;
        while v != source {
            let u = pred[v];
            let residual = edge_residual(u, v, n, m, mu, nu, &sent, &recv, &flow);
            push = push.min(residual);
            v = u;
        }
        if !(push > 0.0) || !push.is_finite() {
            return Err(WassersteinError::NoConvergence(_round));
        }
        let mut v = sink;
        while v != source {
            let u = pred[v];
            match (u, v) {
                (s, i) if s == source => sent[supply(i)] += push,
                (i, s) if s == source => sent[supply(i)] -= push,
                (j, t) if t == sink => recv[demand(j)] += push,
                (t, j) if t == sink => recv[demand(j)] -= push,
                (i, j) if i <= n => flow[supply(i) * m + demand(j)] += push,
                (j, i) => flow[supply(i) * m + demand(j)] -= push,
            }
            v = u;
        }
        moved += push;
    }
    Err(WassersteinError::NoConvergence(max_rounds))
}

#[allow(clippy::too_many_arguments)]
fn edge_residual(
    u: usize,
    v: usize,
    n: usize,
    m: usize,
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    sent: &[f64],
    recv: &[f64],
    flow: &[f64],
) -> f64 {
    let source = 0;
    let sink = n + m + 1;
    if u == source {
        mu.weights[v - 1] - sent[v - 1]
    } else if v == source {
        sent[u - 1]
    } else if v == sink {
        nu.weights[u - 1 - n] - recv[u - 1 - n]
    } else if u == sink {
        recv[v - 1 - n]
    } else if u <= n {
        f64::INFINITY
    } else {
        flow[(v - 1) * m + (u - 1 - n)]
    }
}

fn transport_cost(flow: &[f64], cost: &[f64]) -> f64 {
    flow.iter().zip(cost).map(|(f, c)| f * c).sum()
}
