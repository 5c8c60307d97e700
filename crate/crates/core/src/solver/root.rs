//! Per-node implicit step `y - dt f(y) = c`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use super::SolverConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RootFailure {
    pub residual: f64,
    pub iterations: usize,
    pub reason: &'static str,
}

impl fmt::Display for RootFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} after {} iterations (residual {})",
            self.reason, self.iterations, self.residual
        )
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Solves `y - dt f(y) = c`.
///
/// One dimension: a bracket is grown from `c` (finite because `y -> y - dt f(y)`
/// is increasing when `dt mu+ < 1`) and refined by Newton steps that fall
/// back to bisection whenever they leave the bracket. Several dimensions:
/// Newton with backtracking by `cfg.damping` when `jac` is given (row-major
/// `l x l` Jacobian of `f`), otherwise the relaxed fixed point
/// `y <- y - damping (y - c - dt f(y))`.
///
/// Success means `|y - c - dt f(y)| <= cfg.root_tol * max(1, |c|)`.
pub fn node_root_solve<F, J>(
    c: &[f64],
    f: F,
    jac: Option<J>,
    dt: f64,
    mu_plus: f64,
    cfg: &SolverConfig,
) -> Result<Vec<f64>, RootFailure>
where
    F: Fn(&[f64], &mut [f64]),
    J: Fn(&[f64], &mut [f64]),
{
    if !(dt * mu_plus < 1.0) {
        return Err(RootFailure {
            residual: f64::NAN,
            iterations: 0,
            reason: "precondition dt * mu+ < 1 violated",
        });
    }
    let tol = cfg.root_tol * inf_norm(c).max(1.0);
    if c.len() == 1 {
        let f1 = |y: f64| {
            let mut o = [0.0];
            f(&[y], &mut o);
            o[0]
        };
        let df1 = jac.as_ref().map(|j| {
            move |y: f64| {
                let mut o = [0.0];
                j(&[y], &mut o);
                o[0]
            }
        });
        return scalar_root(c[0], f1, df1, dt, mu_plus, tol, cfg.root_max_iter).map(|y| vec![y]);
    }
    vector_root(c, &f, jac.as_ref(), dt, tol, cfg)
}

fn scalar_root<F, D>(
    c: f64,
    f: F,
    df: Option<D>,
    dt: f64,
    mu_plus: f64,
    tol: f64,
    max_iter: usize,
) -> Result<f64, RootFailure>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let phi = |y: f64| y - dt * f(y) - c;
    let p0 = phi(c);
    if p0 == 0.0 {
        return Ok(c);
    }
    if !p0.is_finite() {
        return Err(RootFailure {
            residual: p0,
            iterations: 0,
            reason: "non-finite driver value",
        });
    }
    // The slope of phi is at least 1 - dt mu+, which bounds the distance to the root.
    let slope = 1.0 - dt * mu_plus;
    let mut step = (p0.abs() / slope).max(f64::MIN_POSITIVE);
    let (mut lo, mut hi) = if p0 < 0.0 { (c, c + step) } else { (c - step, c) };
    let mut iterations = 0;
    loop {
        let (probe, bad) = if p0 < 0.0 {
            (hi, phi(hi) < 0.0)
        } else {
            (lo, phi(lo) > 0.0)
        };
        if !bad {
            break;
        }
        iterations += 1;
        if iterations > max_iter || !probe.is_finite() {
            return Err(RootFailure {
                residual: phi(probe),
                iterations,
                reason: "bracket expansion failed",
            });
        }
        step *= 2.0;
        if p0 < 0.0 {
            lo = hi;
            hi = c + step;
        } else {
            hi = lo;
            lo = c - step;
        }
    }

    let mut y = if p0 < 0.0 { hi } else { lo };
    let mut py = phi(y);
    let mut last_newton: Option<f64> = None;
    for it in 0..max_iter {
        if py.abs() <= tol {
            return Ok(y);
        }
        if py < 0.0 {
            lo = y;
        } else {
            hi = y;
        }
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            // Bracket is one ulp wide.
            let (pl, ph) = (phi(lo), phi(hi));
            let best = if pl.abs() <= ph.abs() { (lo, pl) } else { (hi, ph) };
            if best.1.abs() <= tol {
                return Ok(best.0);
            }
            return Err(RootFailure {
                residual: best.1.abs(),
                iterations: it,
                reason: "bracket collapsed above tolerance",
            });
        }
        // A Newton step that did not halve the residual forces one bisection.
        let stalled = last_newton.is_some_and(|prev| py.abs() > 0.5 * prev);
        let newton = df.as_ref().filter(|_| !stalled).and_then(|d| {
            let slope = 1.0 - dt * d(y);
            let next = y - py / slope;
            (slope > 0.0 && next > lo && next < hi).then_some(next)
        });
        last_newton = newton.map(|_| py.abs());
        y = newton.unwrap_or(mid);
        py = phi(y);
    }
    if py.abs() <= tol {
        return Ok(y);
    }
    Err(RootFailure {
        residual: py.abs(),
        iterations: max_iter,
        reason: "maximum iterations reached",
    })
}

fn vector_root<F, J>(
    c: &[f64],
    f: &F,
    jac: Option<&J>,
    dt: f64,
    tol: f64,
    cfg: &SolverConfig,
) -> Result<Vec<f64>, RootFailure>
where
    F: Fn(&[f64], &mut [f64]),
    J: Fn(&[f64], &mut [f64]),
{
    let l = c.len();
    let residual = |y: &[f64], out: &mut [f64]| {
        f(y, out);
        for i in 0..l {
            out[i] = y[i] - c[i] - dt * out[i];
        }
    };
    let mut y = c.to_vec();
    let mut r = vec![0.0; l];
    let mut trial = vec![0.0; l];
    let mut rt = vec![0.0; l];
    let mut j = vec![0.0; l * l];
    residual(&y, &mut r);
    for it in 0..cfg.root_max_iter {
        let norm = inf_norm(&r);
        if norm <= tol {
            return Ok(y);
        }
        if !norm.is_finite() {
            return Err(RootFailure {
                residual: norm,
                iterations: it,
                reason: "non-finite driver value",
            });
        }
        match jac {
            Some(jf) => {
                jf(&y, &mut j);
                let a = DMatrix::from_fn(l, l, |p, q| if p == q { 1.0 } else { 0.0 } - dt * j[p * l + q]);
                let s = a.lu().solve(&DVector::from_column_slice(&r)).ok_or(RootFailure {
                    residual: norm,
                    iterations: it,
                    reason: "singular Newton system",
                })?;
                let mut t = 1.0;
                loop {
                    for i in 0..l {
                        trial[i] = y[i] - t * s[i];
                    }
                    residual(&trial, &mut rt);
                    if inf_norm(&rt) < norm || t < 1e-12 {
                        break;
                    }
                    t *= cfg.damping;
                }
            }
            None => {
                for i in 0..l {
                    trial[i] = y[i] - cfg.damping * r[i];
                }
                residual(&trial, &mut rt);
            }
        }
        std::mem::swap(&mut y, &mut trial);
        std::mem::swap(&mut r, &mut rt);
    }
    let norm = inf_norm(&r);
    if norm <= tol {
        return Ok(y);
    }
    Err(RootFailure {
        residual: norm,
        iterations: cfg.root_max_iter,
        reason: "maximum iterations reached",
    })
}
