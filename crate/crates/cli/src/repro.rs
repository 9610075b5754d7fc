use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliResult;

/// Provenance record written next to every run's outputs. The wall-clock
/// time lives only here so other artifacts stay byte-identical across runs.
#[derive(Debug, Serialize)]
pub struct Repro<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'a str,
    pub seed: u64,
    pub config_hash: String,
    pub config: &'a RunConfig,
    pub args: Vec<String>,
    pub started_at_unix: u64,
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let canonical = serde_json::to_vec(cfg).expect("config serializes");
    format!("{:08x}", crc32fast::hash(&canonical))
}

pub fn write(dir: &Path, subcommand: &str, cfg: &RunConfig) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let stanza = Repro {
        tool: "tripart",
        version: env!("CARGO_PKG_VERSION"),
        subcommand,
        seed: cfg.seed(),
        config_hash: config_hash(cfg),
        config: cfg,
        args: std::env::args().skip(1).collect(),
        started_at_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    let path = dir.join(format!("{subcommand}.repro.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&stanza).expect("stanza serializes") + "\n")?;
    Ok(path)
}
