//! Scenario files: what to build, solve and check.

use std::path::{Path, PathBuf};

use bsde_core::driver::DriverSpec;
use bsde_core::solver::SolverConfig;
use bsde_core::space::{FilteredSpace, RandomVariable, SpaceDescriptor, DEFAULT_NODE_BUDGET};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Terminal condition as a function of the terminal noise `B_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalSpec {
    /// `c + sum_i a_i B_i`
    Linear {
        #[serde(default)]
        constant: f64,
        #[serde(default)]
        coefficients: Vec<f64>,
    },
    /// `c + sum_i a_i B_i + sum_i q_i B_i^2`
    Quadratic {
        #[serde(default)]
        constant: f64,
        #[serde(default)]
        coefficients: Vec<f64>,
        #[serde(default)]
        quadratic: Vec<f64>,
    },
    /// `clamp(c + sum_i a_i B_i, lo, hi)`
    Clipped {
        #[serde(default)]
        constant: f64,
        #[serde(default)]
        coefficients: Vec<f64>,
        lo: f64,
        hi: f64,
    },
}

impl TerminalSpec {
    fn validate(&self, noise_dim: usize) -> Result<(), CliError> {
        let (coefficients, extra) = match self {
            TerminalSpec::Linear { coefficients, .. } => (coefficients, None),
            TerminalSpec::Quadratic {
                coefficients,
                quadratic,
                ..
            } => (coefficients, Some(quadratic)),
            TerminalSpec::Clipped {
                coefficients, lo, hi, ..
            } => {
                if !(lo <= hi) {
                    return Err(CliError::input(format!(
                        "clipped terminal needs lo <= hi, got {lo} > {hi}"
                    )));
                }
                (coefficients, None)
            }
        };
        for v in std::iter::once(coefficients).chain(extra) {
            if v.len() > noise_dim {
                return Err(CliError::input(format!(
                    "terminal has {} coefficients for a {noise_dim}-dimensional noise",
                    v.len()
                )));
            }
        }
        Ok(())
    }

    fn eval(&self, b: &[f64]) -> f64 {
        let linear = |c: f64, a: &[f64]| c + a.iter().zip(b).map(|(a, b)| a * b).sum::<f64>();
        match self {
            TerminalSpec::Linear { constant, coefficients } => linear(*constant, coefficients),
            TerminalSpec::Quadratic {
                constant,
                coefficients,
                quadratic,
            } => linear(*constant, coefficients) + quadratic.iter().zip(b).map(|(q, b)| q * b * b).sum::<f64>(),
            TerminalSpec::Clipped {
                constant,
                coefficients,
                lo,
                hi,
            } => linear(*constant, coefficients).clamp(*lo, *hi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Terminal {
    /// Same expression in every component.
    One(TerminalSpec),
    PerComponent(Vec<TerminalSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyToggles {
    pub lemma61: bool,
    pub lemma61_pairs: usize,
    pub apriori: bool,
    pub uniqueness: bool,
    pub uniqueness_starts: usize,
    pub convergence: bool,
    /// Sampled monotonicity, `(H3)` and growth-envelope estimates.
    pub assumptions: bool,
    pub h3_pairs: usize,
    pub probe_samples: usize,
    pub probe_radius: f64,
}

impl Default for VerifyToggles {
    fn default() -> Self {
        Self {
            lemma61: false,
            lemma61_pairs: 10,
            apriori: false,
            uniqueness: false,
            uniqueness_starts: 3,
            convergence: false,
            assumptions: false,
            h3_pairs: 100,
            probe_samples: 1000,
            probe_radius: 1.0,
        }
    }
}

fn one() -> usize {
    1
}

fn default_budget() -> u64 {
    DEFAULT_NODE_BUDGET
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub space: SpaceDescriptor,
    #[serde(default = "default_budget")]
    pub node_budget: u64,
    /// Dimension `l` of `Y`.
    #[serde(default = "one")]
    pub dim: usize,
    pub terminal: Terminal,
    pub driver: DriverSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub verify: VerifyToggles,
    #[serde(default)]
    pub seed: u64,
    /// Relative paths are taken from the scenario file's directory.
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

/// Independent sub-seeds for the stages that draw random inputs.
pub mod streams {
    pub const LEMMA61: u64 = 1;
    pub const UNIQUENESS: u64 = 2;
    pub const H3: u64 = 3;
    pub const MONOTONICITY: u64 = 4;
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::input(format!("invalid scenario: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical JSON form without the output directory.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("scenario serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output");
        }
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn output_dir(&self, scenario_path: &Path) -> PathBuf {
        if self.output.is_absolute() {
            self.output.clone()
        } else {
            scenario_path.parent().unwrap_or(Path::new(".")).join(&self.output)
        }
    }

    pub fn derive_seed(&self, stream: u64) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng.next_u64()
    }

    pub fn build_space(&self) -> Result<FilteredSpace, CliError> {
        let space = self
            .space
            .build(self.node_budget)
            .map_err(|e| CliError::input(format!("space: {e}")))?;
        if self.dim == 0 {
            return Err(CliError::input("dim must be at least 1"));
        }
        Ok(space)
    }

    pub fn terminal_value(&self, space: &FilteredSpace) -> Result<RandomVariable, CliError> {
        let specs: Vec<&TerminalSpec> = match &self.terminal {
            Terminal::One(t) => vec![t; self.dim],
            Terminal::PerComponent(v) => {
                if v.len() != self.dim {
                    return Err(CliError::input(format!(
                        "{} terminal components for dim {}",
                        v.len(),
                        self.dim
                    )));
                }
                v.iter().collect()
            }
        };
        for t in &specs {
            t.validate(space.noise_dim())?;
        }
        Ok(RandomVariable::from_terminal_noise(space, self.dim, |b, out| {
            for (o, t) in out.iter_mut().zip(&specs) {
                *o = t.eval(b);
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "space": {"kind": "walk", "d": 1, "N": 2, "T": 1.0},
        "terminal": {"family": "quadratic", "coefficients": [1.0], "quadratic": [2.0]},
        "driver": {"family": "plain", "g": {"rule": "affine"}}
    }"#;

    #[test]
    fn hash_ignores_output_only() {
        let a = Scenario::from_json(BASE).unwrap();
        let mut b = a.clone();
        b.output = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 7;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn terminal_expression() {
        let s = Scenario::from_json(BASE).unwrap();
        let space = s.build_space().unwrap();
        let xi = s.terminal_value(&space).unwrap();
        for leaf in 0..space.leaf_count() {
            let b = space.noise(space.leaf_node(leaf))[0];
            assert_eq!(xi.value(leaf)[0], b + 2.0 * b * b);
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = BASE.replace("\"terminal\"", "\"extra\": 1, \"terminal\"");
        assert!(Scenario::from_json(&bad).is_err());
    }

    #[test]
    fn seeds_split_by_stream() {
        let s = Scenario::from_json(BASE).unwrap();
        assert_ne!(s.derive_seed(streams::LEMMA61), s.derive_seed(streams::UNIQUENESS));
        assert_eq!(s.derive_seed(streams::H3), s.derive_seed(streams::H3));
    }
}
