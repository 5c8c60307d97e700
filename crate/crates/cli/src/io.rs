//! CSV and JSON artifacts.
//!
//! `solution.csv`: a `# scenario_hash=<hex>` line, then one row per node with
//! columns `node,level,t,y_0..y_{l-1},m_0..m_{l-1}`.
//! `trace.csv`: `n,delta,ratio,q_n,martingale_energy,s2_delta`.
//! Numbers use the shortest decimal form that round-trips; absent values are empty.

use std::path::Path;

use bsde_core::martingale::Martingale;
use bsde_core::solver::{IterationTrace, Solution};
use bsde_core::space::{AdaptedProcess, FilteredSpace};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const HASH_PREFIX: &str = "# scenario_hash=";

pub fn num(v: f64) -> String {
    let plain = format!("{v}");
    let exp = format!("{v:e}");
    if exp.len() < plain.len() {
        exp
    } else {
        plain
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("in-memory writer")
}

pub fn solution_csv(space: &FilteredSpace, solution: &Solution, hash: &str) -> Vec<u8> {
    let l = solution.y.dim();
    let mut out = format!("{HASH_PREFIX}{hash}\n").into_bytes();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["node".to_string(), "level".into(), "t".into()];
    header.extend((0..l).map(|i| format!("y_{i}")));
    header.extend((0..l).map(|i| format!("m_{i}")));
    w.write_record(&header).expect("in-memory write");
    for node in 0..space.node_count() {
        let level = space.level_of(node);
        let mut row = vec![node.to_string(), level.to_string(), num(space.grid().time(level))];
        row.extend(solution.y.value(node).iter().map(|v| num(*v)));
        row.extend(solution.m.value(node).iter().map(|v| num(*v)));
        w.write_record(&row).expect("in-memory write");
    }
    out.extend(finish(w));
    out
}

pub fn trace_csv(trace: &IterationTrace, q_bounds: &[Option<f64>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "delta", "ratio", "q_n", "martingale_energy", "s2_delta"])
        .expect("in-memory write");
    for row in trace.rows() {
        let i = row.n - 1;
        w.write_record([
            row.n.to_string(),
            num(row.delta),
            opt(row.ratio),
            opt(q_bounds.get(i).copied().flatten()),
            num(trace.martingale_energy[i]),
            num(trace.s2_deltas[i]),
        ])
        .expect("in-memory write");
    }
    finish(w)
}

pub struct StoredSolution {
    pub hash: String,
    pub y: AdaptedProcess,
    pub m: AdaptedProcess,
}

pub fn read_solution(path: &Path, space: &FilteredSpace, dim: usize) -> Result<StoredSolution, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(&path.display().to_string(), e))?;
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    let hash = first
        .strip_prefix(HASH_PREFIX)
        .ok_or_else(|| CliError::input(format!("{} lacks a scenario hash line", path.display())))?
        .trim()
        .to_string();
    let bad = |msg: String| CliError::input(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_reader(rest.as_bytes());
    let width = 3 + 2 * dim;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?;
    if header.len() != width {
        return Err(bad(format!("expected {width} columns, found {}", header.len())));
    }
    let mut y = Vec::with_capacity(space.node_count() * dim);
    let mut m = Vec::with_capacity(space.node_count() * dim);
    let mut count = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        if record.len() != width || record[0] != i.to_string() {
            return Err(bad(format!("row {i} is malformed")));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("row {i}: {e}")));
        for c in 0..dim {
            y.push(parse(&record[3 + c])?);
            m.push(parse(&record[3 + dim + c])?);
        }
        count += 1;
    }
    if count != space.node_count() {
        return Err(bad(format!("{count} rows for {} nodes", space.node_count())));
    }
    let shape = |e: bsde_core::space::SpaceError| bad(e.to_string());
    Ok(StoredSolution {
        hash,
        y: AdaptedProcess::from_values(space, dim, y).map_err(shape)?,
        m: AdaptedProcess::from_values(space, dim, m).map_err(shape)?,
    })
}

impl StoredSolution {
    pub fn martingale(&self, space: &FilteredSpace) -> Result<Martingale, String> {
        Martingale::new(space, self.m.clone()).map_err(|e| e.to_string())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(&dir.display().to_string(), e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(&path.display().to_string(), e))
}
