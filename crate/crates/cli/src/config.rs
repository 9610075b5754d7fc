//! Run configuration: built-in defaults, overlaid by a TOML file, overlaid
//! by command-line flags. The seed additionally falls back to `SAIVLA_SEED`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tripart_core::decoder::{ConservativeOverrides, DecoderConfig, EntropyGate};
use tripart_core::labeling::{ControlGrid, DimKind};
use tripart_core::paracat::{CopyTask, HeadConfig};
use tripart_core::scheduler::ScheduleConfig;

use crate::error::{validation, CliResult};

pub const SEED_ENV: &str = "SAIVLA_SEED";
pub const DEFAULT_OUTPUT_DIR: &str = "tripart-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderSection {
    pub theta_up: f64,
    pub theta_down: f64,
    pub alpha: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    pub anneal_horizon: u64,
    pub entropy_cap: f64,
    pub conservative: ConservativeOverrides,
    pub entropy_gate: EntropyGate,
    /// Overrides the grid-derived step sizes.
    pub step_sizes: Option<Vec<f64>>,
}

impl Default for DecoderSection {
    fn default() -> Self {
        let d = DecoderConfig::default();
        Self {
            theta_up: d.theta_up,
            theta_down: d.theta_down,
            alpha: d.alpha,
            tau_start: d.tau_start,
            tau_end: d.tau_end,
            anneal_horizon: d.anneal_horizon,
            entropy_cap: d.entropy_cap,
            conservative: d.conservative,
            entropy_gate: d.entropy_gate,
            step_sizes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub step_mm: f64,
    pub step_deg: f64,
    pub k_chunk: usize,
    /// Odd majority window; 0 disables smoothing.
    pub smoothing_window: usize,
    /// Dimension layout; `None` means the bimanual 16-dim layout.
    pub kinds: Option<Vec<DimKind>>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { step_mm: 5.0, step_deg: 1.0, k_chunk: 20, smoothing_window: 0, kinds: None }
    }
}

impl GridSection {
    /// Grid for `dims` channels: the configured layout, the bimanual layout
    /// when `dims == 16`, otherwise all position channels.
    pub fn grid(&self, dims: usize) -> CliResult<ControlGrid> {
        let kinds = match &self.kinds {
            Some(k) if k.len() == dims => k.clone(),
            Some(k) => return Err(validation(format!("grid lists {} dimension kinds, data has {dims}", k.len()))),
            None if dims == 16 => ControlGrid::bimanual(self.step_mm, self.step_deg).kinds,
            None => vec![DimKind::Position; dims],
        };
        let g = ControlGrid::with_kinds(self.step_mm, self.step_deg, kinds);
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySection {
    pub head: HeadConfig,
    pub task: CopyTask,
    pub steps: usize,
    pub lr: f64,
}

impl Default for ToySection {
    fn default() -> Self {
        Self {
            head: HeadConfig {
                depth: 2,
                d_model: 64,
                heads: 4,
                k_chunk: 5,
                d_act: 4,
                max_image_tokens: 16,
                max_text_tokens: 16,
                ..HeadConfig::default()
            },
            task: CopyTask::default(),
            steps: 2000,
            lr: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub schedule: ScheduleConfig,
    pub decoder: DecoderSection,
    pub grid: GridSection,
    pub toy: ToySection,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| validation(format!("{}: {e}", path.display())))
    }

    /// File (if any) over defaults, then the global flags over both.
    pub fn resolve(file: Option<&Path>, seed_flag: Option<u64>, out_flag: Option<PathBuf>) -> CliResult<Self> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        let env_seed = match std::env::var(SEED_ENV) {
            Ok(v) => Some(v.trim().parse::<u64>().map_err(|_| validation(format!("{SEED_ENV}={v} is not a u64")))?),
            Err(_) => None,
        };
        cfg.seed = Some(seed_flag.or(cfg.seed).or(env_seed).unwrap_or(0));
        if out_flag.is_some() {
            cfg.output_dir = out_flag;
        }
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    pub fn decoder_config(&self, dims: usize) -> CliResult<DecoderConfig> {
        let s = &self.decoder;
        let step_sizes = match &s.step_sizes {
            Some(v) if v.len() == dims => v.clone(),
            Some(v) => return Err(validation(format!("{} decoder step sizes for {dims} dimensions", v.len()))),
            None => self.grid.grid(dims)?.step_sizes(),
        };
        let cfg = DecoderConfig {
            theta_up: s.theta_up,
            theta_down: s.theta_down,
            alpha: s.alpha,
            step_sizes,
            tau_start: s.tau_start,
            tau_end: s.tau_end,
            anneal_horizon: s.anneal_horizon,
            entropy_cap: s.entropy_cap,
            conservative: s.conservative,
            entropy_gate: s.entropy_gate,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
