#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Output {
    pub fn error_line(&self) -> Value {
        let line = self.stderr.lines().last().unwrap_or_default();
        serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not a JSON line: {}", self.stderr))
    }
}

pub fn bsde(sub: &str, paths: &[&Path], threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bsde"));
    cmd.arg(sub).args(paths);
    match threads {
        Some(n) => cmd.env("BSDE_THREADS", n.to_string()),
        None => cmd.env_remove("BSDE_THREADS"),
    };
    let out = cmd.output().expect("bsde binary runs");
    Output {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn write_json(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

pub fn run(scenario: &Path, threads: Option<usize>) -> Output {
    bsde("run", &[scenario], threads)
}

pub fn read_report(dir: &Path, name: &str) -> Value {
    let text = std::fs::read_to_string(dir.join("reports").join(format!("{name}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}
