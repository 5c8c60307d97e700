//! Driver families `f(t, y, M) = g(t, y, h(M)_t)` and their frozen contexts.
//!
//! A [`Driver`] pairs a whitelisted [`ScalarRule`] `g` with a [`Feature`]
//! `h`. Before an inner solve every feature is precomputed from the frozen
//! martingale (and, for full-freeze families, the frozen `Y`) into a
//! [`FrozenContext`]; [`Driver::bind`] then yields a pure per-node evaluator.

mod context;
mod fields;
mod probes;
mod rule;
mod spec;
pub mod wasserstein;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::martingale::MartingaleError;
use crate::space::{FilteredSpace, SpaceError, TimeGrid};

pub use context::{precompute_context, precompute_context_with, FeatureRequest, FrozenContext, LawField};
pub use fields::{
    anticipated_field, carre_field, future_y_field, h1_field, law_field, path_functional_field, project_to_level,
    PathFunctional,
};
pub(crate) use probes::DEGENERATE_ENERGY;
pub use probes::{
    estimate_h3, estimate_monotonicity, h3_ratio, monotonicity_ratio, psi_envelope, sample_martingale_pairs,
    AssumptionReport, H3Config, H3Witness, MonotonicityWitness, PsiEnvelope, SamplerConfig,
};
pub use rule::ScalarRule;
pub use spec::{DriverSpec, FamilyId, RuleSpec};
pub use wasserstein::{w1_distance, AtomicMeasure, GroundMetric, WassersteinError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DriverError {
    #[error("unregistered rule `{0}`")]
    UnregisteredRule(String),
    #[error("invalid driver spec: {0}")]
    InvalidSpec(String),
    #[error("feature needs the frozen Y process but none was supplied")]
    MissingY,
    #[error("delay at level {level} reaches level {target} beyond the horizon and no tail was supplied")]
    MissingTail { level: usize, target: usize },
    #[error("context does not contain the {0} field")]
    MissingFeature(&'static str),
    #[error("dimension mismatch: driver has dimension {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Wasserstein(#[from] WassersteinError),
    #[error(transparent)]
    Martingale(#[from] MartingaleError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Level offsets `zeta(k)` for anticipated fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Delay {
    Constant(usize),
    Levels(Vec<usize>),
}

impl Delay {
    pub fn offset(&self, level: usize) -> Result<usize, DriverError> {
        match self {
            Delay::Constant(j) => Ok(*j),
            Delay::Levels(v) => v
                .get(level)
                .copied()
                .ok_or_else(|| DriverError::InvalidSpec(format!("no delay given for level {level}"))),
        }
    }
}

/// Reference law for the mean-field feature `W1(L(M^t), L(R^t))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawReference {
    #[default]
    Zero,
    DrivingNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LawConfig {
    pub reference: LawReference,
    /// Conditional law at each node instead of the unconditional law per level.
    pub per_node: bool,
    pub cap: usize,
}

impl Default for LawConfig {
    fn default() -> Self {
        Self {
            reference: LawReference::Zero,
            per_node: false,
            cap: wasserstein::DEFAULT_SUPPORT_CAP,
        }
    }
}

/// The quantity `h(M)_t` fed to the rule.
#[derive(Debug, Clone, PartialEq)]
pub enum Feature {
    /// No dependence on `M`.
    None,
    /// Row sums of the representation coefficient `Z`.
    Classical,
    /// `E([M]_T - [M]_t | F_t)`.
    H1,
    /// `E(phi(M_{.∨t} - M_t) | F_t)`.
    Path(PathFunctional),
    /// Row sums of `E(Z_{t+zeta(t)} | F_t)`, with a constant tail value past the horizon.
    Anticipated { delay: Delay, tail: Option<f64> },
    /// `W1` distance between the law of the future-increment path and a reference.
    Law(LawConfig),
    /// `sqrt(d<M^i>/dt)` per component.
    Carre,
}

impl Feature {
    fn name(&self) -> &'static str {
        match self {
            Feature::None => "none",
            Feature::Classical => "representation",
            Feature::H1 => "h1",
            Feature::Path(_) => "path functional",
            Feature::Anticipated { .. } => "anticipated",
            Feature::Law(_) => "law",
            Feature::Carre => "carre",
        }
    }
}

/// Which value is passed as `y` to the rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum YInput {
    /// The unknown at the node.
    #[default]
    Current,
    /// `E(Y_{t+offset} | F_t)` read from the frozen source process.
    Frozen { offset: usize },
}

/// A generator `f(t, y, M)` of dimension `l`, applied componentwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Driver {
    dim: usize,
    rule: ScalarRule,
    feature: Feature,
    y_input: YInput,
    declared_lambda: Option<f64>,
}

pub fn plain_driver(dim: usize, g: ScalarRule) -> Driver {
    Driver::new(dim, g, Feature::None)
}

pub fn classical_driver(dim: usize, g: ScalarRule) -> Driver {
    Driver::new(dim, g, Feature::Classical)
}

pub fn h1_driver(dim: usize, g: ScalarRule) -> Driver {
    Driver::new(dim, g, Feature::H1)
}

pub fn path_driver(dim: usize, g: ScalarRule, phi: PathFunctional) -> Driver {
    Driver::new(dim, g, Feature::Path(phi))
}

pub fn anticipated_driver(dim: usize, g: ScalarRule, delay: Delay, tail: Option<f64>) -> Driver {
    Driver::new(dim, g, Feature::Anticipated { delay, tail })
}

pub fn mckean_vlasov_driver(dim: usize, f_hat: ScalarRule, law: LawConfig) -> Driver {
    Driver::new(dim, f_hat, Feature::Law(law))
}

pub fn carre_driver(dim: usize, g: ScalarRule) -> Driver {
    Driver::new(dim, g, Feature::Carre)
}

impl Driver {
    pub fn new(dim: usize, rule: ScalarRule, feature: Feature) -> Self {
        Self {
            dim: dim.max(1),
            rule,
            feature,
            y_input: YInput::Current,
            declared_lambda: None,
        }
    }

    /// Reads `y` from the frozen source process instead of the unknown.
    pub fn with_frozen_y(mut self, offset: usize) -> Self {
        self.y_input = YInput::Frozen { offset };
        self
    }

    pub fn with_declared_lambda(mut self, lambda: f64) -> Self {
        self.declared_lambda = Some(lambda);
        self
    }

    /// Same driver with the feature coefficient replaced.
    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.rule = self.rule.with_feature_coefficient(kappa);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rule(&self) -> &ScalarRule {
        &self.rule
    }

    pub fn feature(&self) -> &Feature {
        &self.feature
    }

    pub fn y_input(&self) -> YInput {
        self.y_input
    }

    /// Declared one-sided Lipschitz constant in the unknown `y`.
    pub fn declared_mu(&self) -> f64 {
        match self.y_input {
            YInput::Current => self.rule.monotonicity(),
            YInput::Frozen { .. } => 0.0,
        }
    }

    pub fn declared_mu_plus(&self) -> f64 {
        self.declared_mu().max(0.0)
    }

    /// Global Lipschitz constant in the unknown `y`, if one exists.
    pub fn lipschitz_y(&self) -> Option<f64> {
        match self.y_input {
            YInput::Current => self.rule.lipschitz_y(),
            YInput::Frozen { .. } => Some(0.0),
        }
    }

    pub fn is_m_sensitive(&self) -> bool {
        !matches!(self.feature, Feature::None) && self.rule.feature_coefficient() != 0.0
    }

    pub fn is_y_frozen(&self) -> bool {
        matches!(self.y_input, YInput::Frozen { .. })
    }

    /// An `(H3)` constant implied by the rule's constants on `space`, or the
    /// explicitly declared one. `None` when the feature admits no simple bound.
    pub fn declared_lambda(&self, space: &FilteredSpace) -> Option<f64> {
        if let Some(l) = self.declared_lambda {
            return Some(l);
        }
        if !self.is_m_sensitive() {
            return Some(0.0);
        }
        let b2 = self.rule.lipschitz_x().powi(2);
        let horizon = space.grid().horizon();
        let classical = || b2 * space.noise_dim() as f64 * space.dt() / min_gram_eigenvalue(space);
        match &self.feature {
            Feature::None => Some(0.0),
            Feature::Classical => Some(classical()),
            Feature::Anticipated { delay, .. } => {
                let n = space.steps();
                let mut hits = vec![0usize; n];
                for k in 0..n {
                    let target = k + delay.offset(k).ok()?;
                    if target < n {
                        hits[target] += 1;
                    }
                }
                let worst = hits.into_iter().max().unwrap_or(0);
                Some(classical() * worst as f64)
            }
            Feature::Path(phi) => Some(4.0 * b2 * phi.lipschitz().powi(2) * horizon),
            Feature::Law(_) => Some(4.0 * b2 * horizon),
            Feature::Carre => Some(b2),
            Feature::H1 => None,
        }
    }

    /// Fields this driver reads from a context.
    pub fn feature_request(&self) -> FeatureRequest {
        let mut req = FeatureRequest::default();
        match &self.feature {
            Feature::None => {}
            Feature::Classical => req.representation = true,
            Feature::H1 => req.h1 = true,
            Feature::Path(phi) => req.path.push(*phi),
            Feature::Anticipated { delay, tail } => req.anticipated.push((delay.clone(), *tail)),
            Feature::Law(cfg) => req.laws = Some(*cfg),
            Feature::Carre => req.carre = true,
        }
        if let YInput::Frozen { offset } = self.y_input {
            req.y_offsets.push(offset);
        }
        req
    }

    /// Resolves the driver's inputs against a context.
    pub fn bind<'a>(&'a self, space: &FilteredSpace, ctx: &'a FrozenContext) -> Result<BoundDriver<'a>, DriverError> {
        let n = space.node_count();
        if ctx.martingale.dim() != self.dim {
            return Err(DriverError::DimensionMismatch {
                expected: self.dim,
                found: ctx.martingale.dim(),
            });
        }
        let missing = || DriverError::MissingFeature(self.feature.name());
        let (width, values): (usize, Vec<f64>) = match &self.feature {
            Feature::None => (1, vec![0.0; n]),
            Feature::Classical => {
                let rep = ctx.representation.as_ref().ok_or_else(missing)?;
                let d = rep.noise_dim;
                let sums = rep.z.chunks(d).map(|row| row.iter().sum()).collect();
                (self.dim, sums)
            }
            Feature::H1 => (1, ctx.h1.as_ref().ok_or_else(missing)?.values().to_vec()),
            Feature::Path(phi) => {
                let field = ctx.path_fields.iter().find(|(p, _)| p == phi).ok_or_else(missing)?;
                (1, field.1.values().to_vec())
            }
            Feature::Anticipated { delay, tail } => {
                let field = ctx
                    .anticipated
                    .iter()
                    .find(|(d, t, _)| d == delay && t == tail)
                    .ok_or_else(missing)?;
                (self.dim, field.2.values().to_vec())
            }
            Feature::Law(cfg) => {
                let law = ctx.laws.as_ref().filter(|l| l.config == *cfg).ok_or_else(missing)?;
                (1, law.distance.values().to_vec())
            }
            Feature::Carre => (self.dim, ctx.carre.as_ref().ok_or_else(missing)?.values().to_vec()),
        };
        let frozen_y = match self.y_input {
            YInput::Current => None,
            YInput::Frozen { offset } => {
                let field = ctx
                    .y_fields
                    .iter()
                    .find(|(j, _)| *j == offset)
                    .ok_or(DriverError::MissingY)?;
                Some(field.1.values())
            }
        };
        Ok(BoundDriver {
            driver: self,
            grid: *space.grid(),
            width,
            feature: values,
            frozen_y,
        })
    }
}

/// Smallest eigenvalue of the one-step Gram matrix of the noise increments.
pub(crate) fn min_gram_eigenvalue(space: &FilteredSpace) -> f64 {
    let d = space.noise_dim();
    let probs = space.child_probs();
    let mut gram = nalgebra::DMatrix::<f64>::zeros(d, d);
    for (c, p) in probs.iter().enumerate() {
        let inc = nalgebra::DVector::from_column_slice(space.child_increment(c));
        gram += *p * &inc * inc.transpose();
    }
    gram.symmetric_eigenvalues().min()
}

/// A driver resolved against one frozen context.
#[derive(Debug, Clone)]
pub struct BoundDriver<'a> {
    driver: &'a Driver,
    grid: TimeGrid,
    width: usize,
    feature: Vec<f64>,
    frozen_y: Option<&'a [f64]>,
}

impl BoundDriver<'_> {
    pub fn driver(&self) -> &Driver {
        self.driver
    }

    pub fn dim(&self) -> usize {
        self.driver.dim
    }

    /// Feature value read by component `i` at `node`.
    pub fn feature(&self, node: usize, i: usize) -> f64 {
        if self.width == 1 {
            self.feature[node]
        } else {
            self.feature[node * self.width + i]
        }
    }

    /// `y` argument actually passed to the rule.
    fn y_arg(&self, node: usize, y: &[f64], i: usize) -> f64 {
        match self.frozen_y {
            Some(v) => v[node * self.driver.dim + i],
            None => y[i],
        }
    }

    /// `f(t_level, y, M)` at `node`.
    pub fn eval(&self, level: usize, node: usize, y: &[f64], out: &mut [f64]) {
        let t = self.grid.time(level);
        for (i, o) in out.iter_mut().enumerate().take(self.driver.dim) {
            *o = self.driver.rule.eval(t, self.y_arg(node, y, i), self.feature(node, i));
        }
    }

    /// Diagonal of `df/dy` (zero when `y` is frozen).
    pub fn dy(&self, node: usize, y: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.driver.dim) {
            *o = if self.frozen_y.is_some() {
                0.0
            } else {
                self.driver.rule.dy(self.y_arg(node, y, i))
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::martingale::Martingale;
    use crate::space::build_random_walk_space;

    #[test]
    fn classical_on_driving_noise() {
        let s = build_random_walk_space(1, 3, 1.0).unwrap();
        let drv = classical_driver(1, ScalarRule::affine(-1.0, 1.0, 0.0));
        let ctx = precompute_context(&s, &Martingale::driving_noise(&s), None, &drv.feature_request()).unwrap();
        let bound = drv.bind(&s, &ctx).unwrap();
        let mut out = [0.0];
        for node in 0..s.level(3).start {
            bound.eval(s.level_of(node), node, &[0.3], &mut out);
            assert!((out[0] - (-0.3 + 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn h1_driver_at_root() {
        let s = build_random_walk_space(1, 4, 1.0).unwrap();
        let drv = h1_driver(1, ScalarRule::affine(-1.0, 0.5, 0.0));
        let ctx = precompute_context(&s, &Martingale::driving_noise(&s), None, &drv.feature_request()).unwrap();
        let bound = drv.bind(&s, &ctx).unwrap();
        let mut out = [0.0];
        bound.eval(0, 0, &[0.0], &mut out);
        assert!((out[0] - 0.5).abs() < 1e-14);
        bound.eval(0, 0, &[2.0], &mut out);
        assert!((out[0] + 1.5).abs() < 1e-14);
    }

    #[test]
    fn feature_free_driver_ignores_martingale() {
        let s = build_random_walk_space(1, 3, 1.0).unwrap();
        let g = ScalarRule::affine(-2.0, 0.0, 1.0);
        for drv in [
            classical_driver(1, g.clone()),
            h1_driver(1, g.clone()),
            carre_driver(1, g.clone()),
            path_driver(1, g.clone(), PathFunctional::SupAbs),
        ] {
            assert!(!drv.is_m_sensitive());
            assert_eq!(drv.declared_lambda(&s), Some(0.0));
            let ctx = precompute_context(&s, &Martingale::driving_noise(&s), None, &drv.feature_request()).unwrap();
            let bound = drv.bind(&s, &ctx).unwrap();
            let mut out = [0.0];
            bound.eval(1, 2, &[0.5], &mut out);
            assert_eq!(out[0], g.eval(s.grid().time(1), 0.5, 0.0));
        }
    }

    #[test]
    fn missing_field_is_reported() {
        let s = build_random_walk_space(1, 2, 1.0).unwrap();
        let ctx = precompute_context(&s, &Martingale::zero(&s, 1), None, &FeatureRequest::default()).unwrap();
        let drv = h1_driver(1, ScalarRule::affine(0.0, 1.0, 0.0));
        assert!(matches!(drv.bind(&s, &ctx), Err(DriverError::MissingFeature("h1"))));
        let frozen = plain_driver(1, ScalarRule::affine(-1.0, 0.0, 0.0)).with_frozen_y(0);
        assert!(matches!(frozen.bind(&s, &ctx), Err(DriverError::MissingY)));
    }

    #[test]
    fn declared_lambda_on_walk() {
        let s = build_random_walk_space(2, 3, 1.0).unwrap();
        let drv = classical_driver(1, ScalarRule::affine(0.0, 0.5, 0.0));
        assert!((drv.declared_lambda(&s).unwrap() - 0.25 * 2.0).abs() < 1e-12);
        let ant = anticipated_driver(1, ScalarRule::affine(0.0, 1.0, 0.0), Delay::Constant(1), Some(0.0));
        // Level k+1 is reached from level k only.
        assert!((ant.declared_lambda(&s).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(
            h1_driver(1, ScalarRule::affine(0.0, 1.0, 0.0)).declared_lambda(&s),
            None
        );
    }
}
