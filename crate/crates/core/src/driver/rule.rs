//! Whitelisted scalar rules `g(t, y, x)` with declarable constants.
//!
//! Every rule has the shape `g(t, y, x) = A(y) + B(x) + c + c_t * t`, applied
//! componentwise: `y` is one component of the state and `x` is the scalar
//! feature read from the frozen context for that component.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::DriverError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarRule {
    /// `a y + b x + c + c_t t`
    Affine {
        #[serde(default)]
        a: f64,
        #[serde(default)]
        b: f64,
        #[serde(default)]
        c: f64,
        #[serde(default)]
        c_t: f64,
    },
    /// `a y + clamp(b x, lo, hi) + c + c_t t`
    ClippedAffine {
        #[serde(default)]
        a: f64,
        #[serde(default)]
        b: f64,
        #[serde(default)]
        c: f64,
        #[serde(default)]
        c_t: f64,
        lo: f64,
        hi: f64,
    },
    /// `a y + s atan(y) + b atan(x) + c + c_t t`
    Arctan {
        #[serde(default)]
        a: f64,
        #[serde(default)]
        s: f64,
        #[serde(default)]
        b: f64,
        #[serde(default)]
        c: f64,
        #[serde(default)]
        c_t: f64,
    },
    /// `a3 y^3 + a y + b x + c + c_t t`
    Cubic {
        #[serde(default)]
        a3: f64,
        #[serde(default)]
        a: f64,
        #[serde(default)]
        b: f64,
        #[serde(default)]
        c: f64,
        #[serde(default)]
        c_t: f64,
    },
}

impl ScalarRule {
    pub fn affine(a: f64, b: f64, c: f64) -> Self {
        ScalarRule::Affine { a, b, c, c_t: 0.0 }
    }

    /// Looks up a rule by family id. Missing constants default to zero
    /// (`lo`/`hi` default to an unbounded clip).
    pub fn from_name(name: &str, params: &BTreeMap<String, f64>) -> Result<Self, DriverError> {
        let allowed: &[&str] = match name {
            "affine" => &["a", "b", "c", "c_t"],
            "clipped_affine" => &["a", "b", "c", "c_t", "lo", "hi"],
            "arctan" => &["a", "s", "b", "c", "c_t"],
            "cubic" => &["a3", "a", "b", "c", "c_t"],
            _ => return Err(DriverError::UnregisteredRule(name.to_string())),
        };
        if let Some(bad) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(DriverError::InvalidSpec(format!(
                "rule `{name}` has no constant `{bad}`"
            )));
        }
        let get = |k: &str| params.get(k).copied().unwrap_or(0.0);
        let rule = match name {
            "affine" => ScalarRule::Affine {
                a: get("a"),
                b: get("b"),
                c: get("c"),
                c_t: get("c_t"),
            },
            "clipped_affine" => ScalarRule::ClippedAffine {
                a: get("a"),
                b: get("b"),
                c: get("c"),
                c_t: get("c_t"),
                lo: params.get("lo").copied().unwrap_or(f64::NEG_INFINITY),
                hi: params.get("hi").copied().unwrap_or(f64::INFINITY),
            },
            "arctan" => ScalarRule::Arctan {
                a: get("a"),
                s: get("s"),
                b: get("b"),
                c: get("c"),
                c_t: get("c_t"),
            },
            _ => ScalarRule::Cubic {
                a3: get("a3"),
                a: get("a"),
                b: get("b"),
                c: get("c"),
                c_t: get("c_t"),
            },
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        let finite = match *self {
            ScalarRule::Affine { a, b, c, c_t } => [a, b, c, c_t].iter().all(|v| v.is_finite()),
            ScalarRule::ClippedAffine { a, b, c, c_t, lo, hi } => {
                if lo > hi || lo.is_nan() || hi.is_nan() {
                    return Err(DriverError::InvalidSpec(format!(
                        "clip bounds must satisfy lo <= hi, got [{lo}, {hi}]"
                    )));
                }
                [a, b, c, c_t].iter().all(|v| v.is_finite())
            }
            ScalarRule::Arctan { a, s, b, c, c_t } => [a, s, b, c, c_t].iter().all(|v| v.is_finite()),
            ScalarRule::Cubic { a3, a, b, c, c_t } => [a3, a, b, c, c_t].iter().all(|v| v.is_finite()),
        };
        if finite {
            Ok(())
        } else {
            Err(DriverError::InvalidSpec("rule constants must be finite".into()))
        }
    }

    pub fn eval(&self, t: f64, y: f64, x: f64) -> f64 {
        match *self {
            ScalarRule::Affine { a, b, c, c_t } => a * y + b * x + c + c_t * t,
            ScalarRule::ClippedAffine { a, b, c, c_t, lo, hi } => a * y + (b * x).clamp(lo, hi) + c + c_t * t,
            ScalarRule::Arctan { a, s, b, c, c_t } => a * y + s * y.atan() + b * x.atan() + c + c_t * t,
            ScalarRule::Cubic { a3, a, b, c, c_t } => a3 * y * y * y + a * y + b * x + c + c_t * t,
        }
    }

    /// `dg/dy`.
    pub fn dy(&self, y: f64) -> f64 {
        match *self {
            ScalarRule::Affine { a, .. } | ScalarRule::ClippedAffine { a, .. } => a,
            ScalarRule::Arctan { a, s, .. } => a + s / (1.0 + y * y),
            ScalarRule::Cubic { a3, a, .. } => 3.0 * a3 * y * y + a,
        }
    }

    /// One-sided Lipschitz constant in `y`; `+inf` when no global one exists.
    pub fn monotonicity(&self) -> f64 {
        match *self {
            ScalarRule::Affine { a, .. } | ScalarRule::ClippedAffine { a, .. } => a,
            ScalarRule::Arctan { a, s, .. } => a + s.max(0.0),
            ScalarRule::Cubic { a3, a, .. } => {
                if a3 > 0.0 {
                    f64::INFINITY
                } else {
                    a
                }
            }
        }
    }

    /// Global Lipschitz constant in `y`, if any.
    pub fn lipschitz_y(&self) -> Option<f64> {
        match *self {
            ScalarRule::Affine { a, .. } | ScalarRule::ClippedAffine { a, .. } => Some(a.abs()),
            ScalarRule::Arctan { a, s, .. } => Some(a.abs() + s.abs()),
            ScalarRule::Cubic { a3, a, .. } => (a3 == 0.0).then_some(a.abs()),
        }
    }

    /// Nonnegative `y` with `dg/dy = 0`; `g` is odd-symmetric in these around zero.
    pub fn stationary_points(&self) -> Vec<f64> {
        let sq = match *self {
            ScalarRule::Cubic { a3, a, .. } if a3 != 0.0 => -a / (3.0 * a3),
            ScalarRule::Arctan { a, s, .. } if a != 0.0 => -s / a - 1.0,
            _ => f64::NAN,
        };
        if sq > 0.0 {
            vec![sq.sqrt()]
        } else {
            Vec::new()
        }
    }

    /// Lipschitz constant in the feature argument.
    pub fn lipschitz_x(&self) -> f64 {
        match *self {
            ScalarRule::Affine { b, .. }
            | ScalarRule::ClippedAffine { b, .. }
            | ScalarRule::Arctan { b, .. }
            | ScalarRule::Cubic { b, .. } => b.abs(),
        }
    }

    pub fn feature_coefficient(&self) -> f64 {
        match *self {
            ScalarRule::Affine { b, .. }
            | ScalarRule::ClippedAffine { b, .. }
            | ScalarRule::Arctan { b, .. }
            | ScalarRule::Cubic { b, .. } => b,
        }
    }

    pub fn with_feature_coefficient(mut self, kappa: f64) -> Self {
        match &mut self {
            ScalarRule::Affine { b, .. }
            | ScalarRule::ClippedAffine { b, .. }
            | ScalarRule::Arctan { b, .. }
            | ScalarRule::Cubic { b, .. } => *b = kappa,
        }
        self
    }
}
