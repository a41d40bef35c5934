#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

pub fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// Runs the command line in-process and returns the exit code.
pub fn run(args: &[&str]) -> i32 {
    net2milp::cli::run_from(std::iter::once("net2milp").chain(args.iter().copied()))
}

pub fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

pub fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).unwrap()
}

/// Trains the dense-16-8 preset on the committed two-class glyph set and
/// returns the output directory.
pub fn train_toy(out: &Path) -> PathBuf {
    let code = run(&["train", "--data", path(&data("glyphs2")), "--out", path(out), "--reproducible"]);
    assert_eq!(code, 0, "training failed");
    out.join("weights.json")
}
