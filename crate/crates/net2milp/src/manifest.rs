//! One JSON manifest per command run.

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<String>,
    pub config: Value,
    pub seed: u64,
    pub threads: usize,
    pub tool_version: String,
    /// Zero under `--reproducible`.
    pub wall_time_seconds: f64,
    pub exit_code: i32,
    pub result: Value,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        crate::sidecar::to_json(self)
    }
}

pub const TOOL_VERSION: &str = concat!("net2milp ", env!("CARGO_PKG_VERSION"));
