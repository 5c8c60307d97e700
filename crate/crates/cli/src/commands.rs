use std::path::{Path, PathBuf};
use std::time::Instant;

use bsde_core::driver::precompute_context;
use bsde_core::solver::{residual_check, PicardStart, Scheme, Solution};
use bsde_core::space::AdaptedProcess;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CliError, EXIT_VIOLATION};
use crate::io;
use crate::pipeline::{self, RunOutcome};
use crate::scenario::Scenario;

/// Residual bound for a persisted solution, relative to `1 + max |Y|`.
/// Looser than the solver's own bound because the stored pair is checked
/// against the driver frozen at itself rather than at the previous iterate.
pub const VERIFY_TOL: f64 = 1e-8;

#[derive(Debug, Serialize)]
struct FileEntry {
    path: String,
    bytes: usize,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    scenario_hash: String,
    version: &'static str,
    wall_clock_ms: f64,
    exit_code: i32,
    stages: &'a [pipeline::Stage],
    files: Vec<FileEntry>,
}

pub fn cmd_run(path: &Path) -> Result<i32, CliError> {
    let started = Instant::now();
    let scenario = Scenario::load(path)?;
    let hash = scenario.hash();
    let outcome = pipeline::run(&scenario)?;
    let dir = scenario.output_dir(path);

    let mut artifacts: Vec<(String, Vec<u8>)> = Vec::new();
    if let Some(sol) = &outcome.solution {
        artifacts.push((
            "solution.csv".into(),
            io::solution_csv(&outcome.problem.space, sol, &hash),
        ));
    }
    if let Some(trace) = &outcome.trace {
        artifacts.push(("trace.csv".into(), io::trace_csv(trace, &outcome.q_bounds)));
    }
    for (name, value) in &outcome.reports {
        let mut text = serde_json::to_vec_pretty(value).expect("report serializes");
        text.push(b'\n');
        artifacts.push((format!("reports/{name}.json"), text));
    }
    let mut files = Vec::new();
    for (name, bytes) in &artifacts {
        io::write(&dir.join(name), bytes)?;
        files.push(FileEntry {
            path: name.clone(),
            bytes: bytes.len(),
            sha256: io::sha256_hex(bytes),
        });
    }
    let code = outcome.exit_code();
    let record = RunRecord {
        scenario_hash: hash.clone(),
        version: env!("CARGO_PKG_VERSION"),
        wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
        exit_code: code,
        stages: &outcome.stages,
        files,
    };
    let mut text = serde_json::to_vec_pretty(&record).expect("record serializes");
    text.push(b'\n');
    io::write(&dir.join("run.json"), &text)?;
    println!("{}", json!({ "scenario_hash": hash, "exit_code": code, "output": dir }));
    if let Some(e) = &outcome.error {
        eprintln!("{}", e.to_line());
    }
    Ok(code)
}

pub fn cmd_verify(solution_path: &Path, scenario_path: &Path) -> Result<i32, CliError> {
    let scenario = Scenario::load(scenario_path)?;
    let problem = pipeline::build(&scenario)?;
    let space = &problem.space;
    let stored = io::read_solution(solution_path, space, scenario.dim)?;
    let hash = scenario.hash();
    if stored.hash != hash {
        return Err(CliError::input(format!(
            "scenario hash mismatch: solution has {}, scenario is {hash}",
            stored.hash
        )));
    }
    let scale = 1.0 + stored.y.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tolerance = VERIFY_TOL * scale;
    let mut report = json!({
        "scenario_hash": hash,
        "nodes": space.node_count(),
        "tolerance": tolerance,
    });
    let verdict = match stored.martingale(space) {
        Err(msg) => {
            report["martingale"] = json!(msg);
            Err(CliError::violation(format!("stored M is not a martingale: {msg}")))
        }
        Ok(m) => {
            report["martingale"] = json!("ok");
            let req = problem.driver.feature_request();
            let ctx = precompute_context(space, &m, req.needs_y().then_some(&stored.y), &req)
                .map_err(|e| CliError::input(e.to_string()))?;
            let solution = Solution {
                y: stored.y.clone(),
                m,
                scheme: scenario.solver.scheme,
                driver_integral: AdaptedProcess::zeros(space, scenario.dim),
                leaf_residuals: Vec::new(),
                max_residual: 0.0,
            };
            let residual =
                residual_check(space, &problem.xi, &problem.driver, &ctx, &solution).map_err(pipeline::solver_error)?;
            report["max_residual"] = json!(residual);
            if residual <= tolerance {
                Ok(())
            } else {
                Err(CliError::violation(format!("residual {residual} exceeds {tolerance}")))
            }
        }
    };
    report["ok"] = json!(verdict.is_ok());
    println!("{report}");
    match verdict {
        Ok(()) => Ok(0),
        Err(e) => {
            eprintln!("{}", e.to_line());
            Ok(e.code)
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    /// Dotted path into the scenario, e.g. `driver.kappa` or `space.N`.
    pub path: String,
    pub values: Vec<Value>,
}

fn default_cap() -> usize {
    256
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub axes: Vec<Axis>,
    #[serde(default = "default_cap")]
    pub max_points: usize,
    /// Aggregate CSV path; relative paths are taken from the grid file's directory.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn set_path(target: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut cur = target;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, key) in parts.iter().enumerate() {
        let map = cur
            .as_object_mut()
            .ok_or_else(|| CliError::input(format!("`{path}` does not address an object field")))?;
        if i + 1 == parts.len() {
            map.insert((*key).to_string(), value);
            return Ok(());
        }
        cur = map.entry((*key).to_string()).or_insert_with(|| json!({}));
    }
    Err(CliError::input("empty sweep path"))
}

const SWEEP_COLUMNS: [&str; 12] = [
    "status",
    "exit_code",
    "iterations",
    "last_delta",
    "y0",
    "scheme_gap",
    "lambda_hat",
    "mu_hat",
    "apriori_ratio",
    "uniqueness_distance",
    "lemma61_min_slack",
    "max_residual",
];

fn scheme_gap(scenario: &Scenario, outcome: &RunOutcome) -> Option<f64> {
    let y0 = outcome.summary.y0?;
    let mut other = scenario.clone();
    other.solver.scheme = match scenario.solver.scheme {
        Scheme::Implicit => Scheme::Explicit,
        Scheme::Explicit => Scheme::Implicit,
    };
    let out = pipeline::solve(&outcome.problem, &other, &PicardStart::Zero).ok()?;
    Some((out.solution.y.value(0)[0] - y0).abs())
}

fn sweep_point(template: &Value, axes: &[Axis], index: &[usize]) -> (Vec<String>, i32) {
    let mut value = template.clone();
    for (axis, &i) in axes.iter().zip(index) {
        if let Err(e) = set_path(&mut value, &axis.path, axis.values[i].clone()) {
            return (failure_row(&e), e.code);
        }
    }
    let scenario = match serde_json::from_value::<Scenario>(value) {
        Ok(s) => s,
        Err(e) => {
            let e = CliError::input(format!("invalid scenario: {e}"));
            return (failure_row(&e), e.code);
        }
    };
    match pipeline::run(&scenario) {
        Err(e) => (failure_row(&e), e.code),
        Ok(outcome) => {
            let code = outcome.exit_code();
            let s = &outcome.summary;
            let status = match code {
                0 => "ok",
                EXIT_VIOLATION => "violation",
                _ => "solver_failure",
            };
            let row = vec![
                status.to_string(),
                code.to_string(),
                s.iterations.map(|n| n.to_string()).unwrap_or_default(),
                io::opt(s.last_delta),
                io::opt(s.y0),
                io::opt(scheme_gap(&scenario, &outcome)),
                io::opt(s.lambda_hat),
                io::opt(s.mu_hat),
                io::opt(s.apriori_ratio),
                io::opt(s.uniqueness_distance),
                io::opt(s.lemma61_min_slack),
                io::opt(s.max_residual),
            ];
            (row, code)
        }
    }
}

fn failure_row(e: &CliError) -> Vec<String> {
    let mut row = vec![format!("{}_error", e.error), e.code.to_string()];
    row.resize(SWEEP_COLUMNS.len(), String::new());
    row
}

pub fn cmd_sweep(template_path: &Path, grid_path: &Path) -> Result<i32, CliError> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| CliError::io(&p.display().to_string(), e));
    let template: Value =
        serde_json::from_str(&read(template_path)?).map_err(|e| CliError::input(format!("invalid template: {e}")))?;
    let grid: Grid =
        serde_json::from_str(&read(grid_path)?).map_err(|e| CliError::input(format!("invalid grid: {e}")))?;
    let total: usize = grid.axes.iter().map(|a| a.values.len()).product();
    if grid.axes.is_empty() || total == 0 {
        return Err(CliError::input("sweep grid is empty"));
    }
    if total > grid.max_points {
        return Err(CliError::input(format!(
            "sweep grid has {total} points, cap is {}",
            grid.max_points
        )));
    }
    let indices: Vec<Vec<usize>> = (0..total)
        .map(|mut p| {
            let mut idx = vec![0; grid.axes.len()];
            for (a, axis) in grid.axes.iter().enumerate().rev() {
                idx[a] = p % axis.values.len();
                p /= axis.values.len();
            }
            idx
        })
        .collect();
    let results: Vec<(Vec<String>, i32)> = indices
        .par_iter()
        .map(|idx| sweep_point(&template, &grid.axes, idx))
        .collect();

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["point".to_string()];
    header.extend(grid.axes.iter().map(|a| a.path.clone()));
    header.extend(SWEEP_COLUMNS.iter().map(|c| c.to_string()));
    w.write_record(&header).expect("in-memory write");
    for (p, (idx, (row, _))) in indices.iter().zip(&results).enumerate() {
        let mut record = vec![p.to_string()];
        record.extend(grid.axes.iter().zip(idx).map(|(a, &i)| match &a.values[i] {
            Value::String(s) => s.clone(),
            v => v.to_string(),
        }));
        record.extend(row.iter().cloned());
        w.write_record(&record).expect("in-memory write");
    }
    let bytes = w.into_inner().expect("in-memory writer");

    let out = match &grid.output {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => grid_path.parent().unwrap_or(Path::new(".")).join(p),
        None => {
            let base: Scenario = serde_json::from_value(template.clone())
                .map_err(|e| CliError::input(format!("invalid template: {e}")))?;
            base.output_dir(template_path).join("sweep.csv")
        }
    };
    io::write(&out, &bytes)?;
    let failures = results.iter().filter(|(_, c)| *c != 0).count();
    println!("{}", json!({ "points": total, "failed": failures, "output": out }));
    match results.iter().position(|(_, c)| *c != 0) {
        None => Ok(0),
        Some(p) => {
            let code = results[p].1;
            let e = CliError {
                error: "sweep",
                code,
                message: format!("{failures} of {total} grid points failed, first at point {p}"),
            };
            eprintln!("{}", e.to_line());
            Ok(code)
        }
    }
}
