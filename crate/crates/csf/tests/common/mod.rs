#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn csf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csf")).args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// A run small enough to finish in well under a second.
pub const TINY: &str = r#"
total_steps = 160

[env]
horizon = 20

[repr]
hidden = [8]
negatives = 16

[sf]
hidden = [8]

[policy]
hidden = [8]

[optim]
batch_size = 16
updates_per_round = 3
trajectories_per_round = 2
warmup_rounds = 1
buffer_capacity = 1000

[eval]
every = 2
coverage_skills = 2
goals = 2
"#;

/// `TINY` with `overrides` (TOML) merged over it, written to `tiny.toml`.
pub fn write_tiny(dir: &Path, overrides: &str) -> std::path::PathBuf {
    let mut base: toml::Value = toml::from_str(TINY).unwrap();
    csf::config::merge_toml(&mut base, &toml::from_str(overrides).unwrap());
    let path = dir.join("tiny.toml");
    std::fs::write(&path, toml::to_string(&base).unwrap()).unwrap();
    path
}
