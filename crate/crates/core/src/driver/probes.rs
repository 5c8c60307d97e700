//! Empirical probes of the monotonicity, martingale-sensitivity and growth
//! hypotheses on a driver. Every estimate is a maximum over an explicit
//! sample set and carries a witness that can be re-evaluated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{BoundDriver, Driver, DriverError, FrozenContext};
use crate::exec::Execution;
use crate::martingale::{close_martingale, energy_from_increments, predictable_increments, Martingale};
use crate::space::{sq_norm, AdaptedProcess, FilteredSpace, RandomVariable};

/// Denominators at or below this are treated as a degenerate pair.
pub(crate) const DEGENERATE_ENERGY: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SamplerConfig {
    pub samples: usize,
    /// Both `y` and `y'` are drawn uniformly from `[-radius, radius]^l`.
    pub radius: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            radius: 1.0,
            seed: 0,
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityWitness {
    pub context: usize,
    pub node: usize,
    pub level: usize,
    pub t: f64,
    pub y: Vec<f64>,
    pub y_prime: Vec<f64>,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H3Witness {
    pub pair: usize,
    pub level: usize,
    pub t: f64,
    pub y: Vec<f64>,
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
}

/// Grid approximation of `psi_r(t) = sup_{|y| <= r} |f(t, y, 0) - f(t, 0, 0)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiEnvelope {
    pub radius: f64,
    pub resolution: usize,
    /// Per node; zero at the leaves.
    pub field: AdaptedProcess,
    /// `E (sum_k psi_r(t_k) dt)^2` over all paths.
    pub second_moment: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub mu_hat: Option<f64>,
    pub mu_samples: usize,
    pub mu_witness: Option<MonotonicityWitness>,
    pub lambda_hat: Option<f64>,
    pub h3_samples: usize,
    pub h3_skipped: usize,
    pub h3_witness: Option<H3Witness>,
    pub psi_radius: Option<f64>,
    pub psi_max: Option<f64>,
    pub psi_second_moment: Option<f64>,
}

impl AssumptionReport {
    /// Combines the parts filled by separate probes.
    pub fn merge(mut self, other: AssumptionReport) -> Self {
        if other.mu_hat.is_some() {
            self.mu_hat = other.mu_hat;
            self.mu_samples = other.mu_samples;
            self.mu_witness = other.mu_witness;
        }
        if other.lambda_hat.is_some() || other.h3_samples + other.h3_skipped > 0 {
            self.lambda_hat = other.lambda_hat;
            self.h3_samples = other.h3_samples;
            self.h3_skipped = other.h3_skipped;
            self.h3_witness = other.h3_witness;
        }
        if other.psi_radius.is_some() {
            self.psi_radius = other.psi_radius;
            self.psi_max = other.psi_max;
            self.psi_second_moment = other.psi_second_moment;
        }
        self
    }

    pub fn with_psi(mut self, psi: &PsiEnvelope) -> Self {
        self.psi_radius = Some(psi.radius);
        self.psi_max = Some(psi.max);
        self.psi_second_moment = Some(psi.second_moment);
        self
    }
}

fn bind_all<'a>(
    driver: &'a Driver,
    space: &FilteredSpace,
    contexts: &'a [FrozenContext],
) -> Result<Vec<BoundDriver<'a>>, DriverError> {
    contexts.iter().map(|c| driver.bind(space, c)).collect()
}

fn rayleigh(bound: &BoundDriver, level: usize, node: usize, y: &[f64], yp: &[f64]) -> Option<f64> {
    let l = y.len();
    let mut fy = vec![0.0; l];
    let mut fyp = vec![0.0; l];
    bound.eval(level, node, y, &mut fy);
    bound.eval(level, node, yp, &mut fyp);
    let mut dot = 0.0;
    let mut den = 0.0;
    for i in 0..l {
        let dy = y[i] - yp[i];
        dot += dy * (fy[i] - fyp[i]);
        den += dy * dy;
    }
    (den > 0.0).then(|| dot / den)
}

/// `<y - y', f(y) - f(y')> / |y - y'|^2` at one node.
pub fn monotonicity_ratio(
    driver: &Driver,
    space: &FilteredSpace,
    ctx: &FrozenContext,
    node: usize,
    y: &[f64],
    y_prime: &[f64],
) -> Result<Option<f64>, DriverError> {
    let bound = driver.bind(space, ctx)?;
    Ok(rayleigh(&bound, space.level_of(node), node, y, y_prime))
}

/// Largest sampled monotonicity ratio over non-terminal nodes.
pub fn estimate_monotonicity(
    driver: &Driver,
    space: &FilteredSpace,
    contexts: &[FrozenContext],
    cfg: SamplerConfig,
) -> Result<AssumptionReport, DriverError> {
    if contexts.is_empty() {
        return Err(DriverError::InvalidSpec(
            "monotonicity probe needs at least one context".into(),
        ));
    }
    let bound = bind_all(driver, space, contexts)?;
    let l = driver.dim();
    let interior = space.level(space.steps()).start;
    let r = cfg.radius;
    let samples = Execution::default().map_indices(cfg.samples, |s| {
        let mut rng = stream_rng(cfg.seed, s as u64);
        let c = s % contexts.len();
        let node = rng.random_range(0..interior);
        let y: Vec<f64> = (0..l).map(|_| rng.random_range(-r..=r)).collect();
        let yp: Vec<f64> = (0..l).map(|_| rng.random_range(-r..=r)).collect();
        let level = space.level_of(node);
        rayleigh(&bound[c], level, node, &y, &yp).map(|ratio| MonotonicityWitness {
            context: c,
            node,
            level,
            t: space.grid().time(level),
            y,
            y_prime: yp,
            ratio,
        })
    });
    let mut count = 0;
    let mut best: Option<MonotonicityWitness> = None;
    for w in samples.into_iter().flatten() {
        count += 1;
        if best.as_ref().is_none_or(|b| w.ratio > b.ratio) {
            best = Some(w);
        }
    }
    Ok(AssumptionReport {
        mu_hat: best.as_ref().map(|w| w.ratio),
        mu_samples: count,
        mu_witness: best,
        ..AssumptionReport::default()
    })
}

/// `count` independent pairs of scalar or vector martingales, each the
/// closure of standard normal leaf values, from counter-based streams.
pub fn sample_martingale_pairs(
    space: &FilteredSpace,
    dim: usize,
    count: usize,
    seed: u64,
) -> Vec<(Martingale, Martingale)> {
    let draw = |stream: u64| {
        let mut rng = stream_rng(seed, stream);
        let x = RandomVariable::from_leaf_fn(space, dim, |_, out| {
            for v in out.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        });
        close_martingale(space, &x).expect("leaf values are finite")
    };
    (0..count)
        .map(|i| (draw(2 * i as u64), draw(2 * i as u64 + 1)))
        .collect()
}

/// Where to evaluate the `(H3)` ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct H3Config {
    /// Start levels `t`.
    pub levels: Vec<usize>,
    /// Fixed `y` values.
    pub ys: Vec<Vec<f64>>,
    /// Frozen `Y` for drivers that read one.
    pub source_y: Option<AdaptedProcess>,
}

/// Per-level `E|f(y, M) - f(y, M')|^2 dt`.
fn level_gaps(space: &FilteredSpace, a: &BoundDriver, b: &BoundDriver, y: &[f64]) -> Vec<f64> {
    let l = y.len();
    let dt = space.dt();
    let mut fa = vec![0.0; l];
    let mut fb = vec![0.0; l];
    (0..space.steps())
        .map(|k| {
            let mut acc = 0.0;
            for node in space.level(k) {
                a.eval(k, node, y, &mut fa);
                b.eval(k, node, y, &mut fb);
                let sq: f64 = fa.iter().zip(&fb).map(|(u, v)| (u - v) * (u - v)).sum();
                acc += space.node_prob(node) * sq;
            }
            acc * dt
        })
        .collect()
}

fn energy(space: &FilteredSpace, m: &Martingale, n: &Martingale, level: usize) -> f64 {
    let diff = m.process().sub(n.process());
    let pred = predictable_increments(space, &diff);
    energy_from_increments(space, &pred, level, space.steps())
}

/// Ratio of `E sum_{k >= t} |f(y,M) - f(y,M')|^2 dt` to `E([M - M']_T - [M - M']_t)`,
/// or `None` for a degenerate pair.
pub fn h3_ratio(
    driver: &Driver,
    space: &FilteredSpace,
    a: &FrozenContext,
    b: &FrozenContext,
    level: usize,
    y: &[f64],
) -> Result<Option<f64>, DriverError> {
    let ba = driver.bind(space, a)?;
    let bb = driver.bind(space, b)?;
    let num: f64 = level_gaps(space, &ba, &bb, y)[level.min(space.steps())..].iter().sum();
    let den = energy(space, &a.martingale, &b.martingale, level);
    Ok((den > DEGENERATE_ENERGY).then(|| num / den))
}

/// Largest `(H3)` ratio over the sampled pairs, start levels and `y` values.
pub fn estimate_h3(
    driver: &Driver,
    space: &FilteredSpace,
    pairs: &[(Martingale, Martingale)],
    cfg: &H3Config,
) -> Result<AssumptionReport, DriverError> {
    let req = driver.feature_request();
    let n = space.steps();
    let per_pair = Execution::default().map_indices(
        pairs.len(),
        |p| -> Result<Vec<(usize, Option<H3Witness>)>, DriverError> {
            let (m, mp) = &pairs[p];
            let ca = super::precompute_context(space, m, cfg.source_y.as_ref(), &req)?;
            let cb = super::precompute_context(space, mp, cfg.source_y.as_ref(), &req)?;
            let ba = driver.bind(space, &ca)?;
            let bb = driver.bind(space, &cb)?;
            let diff = m.process().sub(mp.process());
            let pred = predictable_increments(space, &diff);
            let mut out = Vec::new();
            for y in &cfg.ys {
                let gaps = level_gaps(space, &ba, &bb, y);
                for &t in &cfg.levels {
                    let t = t.min(n);
                    let num: f64 = gaps[t..].iter().sum();
                    let den = energy_from_increments(space, &pred, t, n);
                    if den > DEGENERATE_ENERGY {
                        out.push((
                            t,
                            Some(H3Witness {
                                pair: p,
                                level: t,
                                t: space.grid().time(t),
                                y: y.clone(),
                                numerator: num,
                                denominator: den,
                                ratio: num / den,
                            }),
                        ));
                    } else {
                        out.push((t, None));
                    }
                }
            }
            Ok(out)
        },
    );
    let mut report = AssumptionReport::default();
    let mut best: Option<H3Witness> = None;
    for r in per_pair {
        for (_, w) in r? {
            match w {
                None => report.h3_skipped += 1,
                Some(w) => {
                    report.h3_samples += 1;
                    if best.as_ref().is_none_or(|b| w.ratio > b.ratio) {
                        best = Some(w);
                    }
                }
            }
        }
    }
    report.lambda_hat = best.as_ref().map(|w| w.ratio);
    report.h3_witness = best;
    Ok(report)
}

fn ball_grid(dim: usize, radius: f64, resolution: usize, extra: &[f64]) -> Vec<Vec<f64>> {
    let res = resolution.max(2);
    let mut axis: Vec<f64> = (0..res)
        .map(|i| radius * (2.0 * i as f64 / (res - 1) as f64 - 1.0))
        .collect();
    axis.extend(extra.iter().filter(|e| **e <= radius).flat_map(|&e| [-e, e]));
    axis.sort_by(f64::total_cmp);
    axis.dedup();
    let mut points = vec![Vec::new()];
    for _ in 0..dim {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    let limit = radius * radius * (1.0 + 1e-12);
    points.retain(|p| sq_norm(p) <= limit);
    points
}

/// Envelope of `|f(y) - f(0)|` over a grid of the closed ball `|y| <= radius`
/// (including `±radius` and the rule's stationary points on every axis), with
/// `ctx0` built from `M = 0`. In one dimension the grid contains every
/// candidate extremum, so the envelope is exact.
pub fn psi_envelope(
    driver: &Driver,
    space: &FilteredSpace,
    ctx0: &FrozenContext,
    radius: f64,
    resolution: usize,
) -> Result<PsiEnvelope, DriverError> {
    let bound = driver.bind(space, ctx0)?;
    let l = driver.dim();
    let grid = ball_grid(l, radius, resolution, &driver.rule().stationary_points());
    let interior = space.level(space.steps()).start;
    let mut field = vec![0.0; space.node_count()];
    let zero = vec![0.0; l];
    Execution::default().for_each_chunk(&mut field[..interior], 1, |node, out| {
        let level = space.level_of(node);
        let mut f0 = vec![0.0; l];
        let mut fy = vec![0.0; l];
        bound.eval(level, node, &zero, &mut f0);
        let mut sup = 0.0f64;
        for y in &grid {
            bound.eval(level, node, y, &mut fy);
            let d: f64 = fy.iter().zip(&f0).map(|(a, b)| (a - b) * (a - b)).sum();
            sup = sup.max(d.sqrt());
        }
        out[0] = sup;
    });
    let dt = space.dt();
    let mut integral = vec![0.0; space.node_count()];
    for node in 1..space.node_count() {
        let parent = space.parent(node).expect("non-root");
        integral[node] = integral[parent] + field[parent] * dt;
    }
    let second_moment = (0..space.leaf_count())
        .map(|leaf| {
            let v = space.leaf_node(leaf);
            space.node_prob(v) * integral[v] * integral[v]
        })
        .sum();
    let max = field.iter().copied().fold(0.0, f64::max);
    Ok(PsiEnvelope {
        radius,
        resolution,
        field: AdaptedProcess::from_raw(1, field),
        second_moment,
        max,
    })
}
