//! Frozen contexts: every feature a driver reads, computed once per outer iteration.

use super::fields::{
    anticipated_from_representation, carre_field, future_y_field, h1_field, law_field_with, path_functional_field_with,
    PathFunctional,
};
use super::wasserstein::AtomicMeasure;
use super::{Delay, DriverError, LawConfig};
use crate::exec::Execution;
use crate::martingale::{predictable_bracket, represent, square_bracket, BracketProcess, Martingale, Representation};
use crate::space::{AdaptedProcess, FilteredSpace};

/// Which fields to populate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureRequest {
    pub representation: bool,
    pub brackets: bool,
    pub h1: bool,
    pub path: Vec<PathFunctional>,
    pub anticipated: Vec<(Delay, Option<f64>)>,
    pub laws: Option<LawConfig>,
    pub carre: bool,
    pub y_offsets: Vec<usize>,
}

impl FeatureRequest {
    pub fn needs_y(&self) -> bool {
        !self.y_offsets.is_empty()
    }
}

/// Future-path laws and the per-node distance feature.
#[derive(Debug, Clone, PartialEq)]
pub struct LawField {
    pub config: LawConfig,
    /// `W1` to the reference law; constant on each level unless per-node.
    pub distance: AdaptedProcess,
    /// Unconditional law at each level (empty in per-node mode).
    pub level_laws: Vec<AtomicMeasure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenContext {
    pub martingale: Martingale,
    pub source_y: Option<AdaptedProcess>,
    pub representation: Option<Representation>,
    pub square_bracket: Option<BracketProcess>,
    pub predictable_bracket: Option<BracketProcess>,
    pub h1: Option<AdaptedProcess>,
    pub path_fields: Vec<(PathFunctional, AdaptedProcess)>,
    pub anticipated: Vec<(Delay, Option<f64>, AdaptedProcess)>,
    pub laws: Option<LawField>,
    pub carre: Option<AdaptedProcess>,
    pub y_fields: Vec<(usize, AdaptedProcess)>,
}

pub fn precompute_context(
    space: &FilteredSpace,
    m: &Martingale,
    y: Option<&AdaptedProcess>,
    request: &FeatureRequest,
) -> Result<FrozenContext, DriverError> {
    precompute_context_with(space, m, y, request, Execution::default())
}

pub fn precompute_context_with(
    space: &FilteredSpace,
    m: &Martingale,
    y: Option<&AdaptedProcess>,
    request: &FeatureRequest,
    exec: Execution,
) -> Result<FrozenContext, DriverError> {
    m.process().check_shape(space)?;
    if request.needs_y() && y.is_none() {
        return Err(DriverError::MissingY);
    }
    if let Some(y) = y {
        y.check_shape(space)?;
        if y.dim() != m.dim() {
            return Err(DriverError::DimensionMismatch {
                expected: m.dim(),
                found: y.dim(),
            });
        }
    }
    let representation = if request.representation || !request.anticipated.is_empty() {
        Some(represent(space, m)?)
    } else {
        None
    };
    let anticipated = match &representation {
        Some(rep) => request
            .anticipated
            .iter()
            .map(|(delay, tail)| {
                anticipated_from_representation(space, rep, delay, *tail).map(|f| (delay.clone(), *tail, f))
            })
            .collect::<Result<_, _>>()?,
        None => Vec::new(),
    };
    let (square, predictable) = if request.brackets {
        (Some(square_bracket(space, m)), Some(predictable_bracket(space, m)))
    } else {
        (None, None)
    };
    let laws = match request.laws {
        Some(cfg) => Some(law_field_with(space, m, cfg, exec)?),
        None => None,
    };
    let y_fields = match y {
        Some(y) => request
            .y_offsets
            .iter()
            .map(|&j| (j, future_y_field(space, y, j)))
            .collect(),
        None => Vec::new(),
    };
    Ok(FrozenContext {
        martingale: m.clone(),
        source_y: y.cloned(),
        representation: if request.representation { representation } else { None },
        square_bracket: square,
        predictable_bracket: predictable,
        h1: request.h1.then(|| h1_field(space, m)),
        path_fields: request
            .path
            .iter()
            .map(|&phi| (phi, path_functional_field_with(space, m, phi, exec)))
            .collect(),
        anticipated,
        laws,
        carre: request.carre.then(|| carre_field(space, m)),
        y_fields,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::build_random_walk_space;

    fn everything() -> FeatureRequest {
        FeatureRequest {
            representation: true,
            brackets: true,
            h1: true,
            path: vec![PathFunctional::SupAbs, PathFunctional::MeanAbs],
            anticipated: vec![(Delay::Constant(1), Some(0.0))],
            laws: Some(LawConfig::default()),
            carre: true,
            y_offsets: vec![0, 1],
        }
    }

    #[test]
    fn zero_martingale_gives_zero_fields() {
        let s = build_random_walk_space(1, 4, 1.0).unwrap();
        let m = Martingale::zero(&s, 1);
        let y = AdaptedProcess::zeros(&s, 1);
        let ctx = precompute_context(&s, &m, Some(&y), &everything()).unwrap();
        let zero = |p: &AdaptedProcess| p.values().iter().all(|v| *v == 0.0);
        assert!(ctx.representation.as_ref().unwrap().z.iter().all(|v| *v == 0.0));
        assert!(zero(ctx.h1.as_ref().unwrap()));
        assert!(zero(ctx.carre.as_ref().unwrap()));
        assert!(ctx.path_fields.iter().all(|(_, f)| zero(f)));
        assert!(ctx.anticipated.iter().all(|(_, _, f)| zero(f)));
        let laws = ctx.laws.as_ref().unwrap();
        assert!(zero(&laws.distance));
        for law in &laws.level_laws {
            assert_eq!(law.len(), 1);
            assert!(law.atom(0).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn requested_fields_only() {
        let s = build_random_walk_space(1, 3, 1.0).unwrap();
        let m = Martingale::driving_noise(&s);
        let req = FeatureRequest {
            h1: true,
            ..FeatureRequest::default()
        };
        let ctx = precompute_context(&s, &m, None, &req).unwrap();
        assert!(ctx.h1.is_some());
        assert!(ctx.representation.is_none() && ctx.carre.is_none() && ctx.laws.is_none());
        assert!(matches!(
            precompute_context(&s, &m, None, &everything()),
            Err(DriverError::MissingY)
        ));
    }

    #[test]
    fn deterministic_and_schedule_independent() {
        let s = build_random_walk_space(2, 5, 1.0).unwrap();
        let m = Martingale::driving_noise(&s).coordinate(0).scaled(1.5);
        let y = AdaptedProcess::from_fn(&s, 1, |node, out| out[0] = s.noise(node)[1].sin());
        let mut req = everything();
        req.laws = None;
        let a = precompute_context_with(&s, &m, Some(&y), &req, Execution::Parallel).unwrap();
        let b = precompute_context_with(&s, &m, Some(&y), &req, Execution::Sequential).unwrap();
        let c = precompute_context(&s, &m, Some(&y), &req).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }
}
