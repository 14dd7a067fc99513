use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::mpc_expert::MpcConfig;
use crate::sim::SimConfig;
use crate::spectral::{build_truncated, mode_split, SpectralModel, TruncatedSystem, DEFAULT_N_TAIL};
use crate::train::TrainConfig;

use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum N0Policy {
    /// Count of modes slower than `−δ`, from the mode split.
    #[default]
    Auto,
    /// Taken from `n0`.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    pub q_c: f64,
    pub delta: f64,
    #[serde(default)]
    pub n0_policy: N0Policy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n0: Option<usize>,
    /// Stable modes appended to the design model beyond the split.
    #[serde(default)]
    pub extra_stable_modes: usize,
    #[serde(default = "default_n_modes")]
    pub n_modes: usize,
    #[serde(default = "default_n_tail")]
    pub n_tail: usize,
}

fn default_n_modes() -> usize {
    20
}

fn default_n_tail() -> usize {
    DEFAULT_N_TAIL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Grid points per axis of the state box.
    pub grid: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub spectral: SpectralConfig,
    pub mpc: MpcConfig,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sim: SimConfig,
}

/// Everything derived from a validated configuration.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub n0: usize,
    pub model: SpectralModel,
    pub sys: TruncatedSystem,
    pub tail_norm2: f64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("schema: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical JSON with the output directory left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn design_n0(&self) -> Result<usize, CliError> {
        let s = &self.spectral;
        let base = match s.n0_policy {
            N0Policy::Auto => {
                if s.n0.is_some() {
                    return Err(CliError::Config("n0 is only allowed with n0_policy = fixed".into()));
                }
                mode_split(s.q_c, s.delta).map_err(|e| CliError::Config(e.to_string()))?
            }
            N0Policy::Fixed => s.n0.ok_or_else(|| CliError::Config("n0_policy = fixed requires n0".into()))?,
        };
        Ok(base + s.extra_stable_modes)
    }

    /// Schema checks beyond the types, then the model build.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let bad = |e: crate::Error| CliError::Config(e.to_string());
        if self.scenario.trim().is_empty() {
            return Err(CliError::Config("scenario name must be nonempty".into()));
        }
        let n0 = self.design_n0()?;
        if n0 == 0 {
            return Err(CliError::Config("the design model needs at least one mode".into()));
        }
        self.mpc.validate(n0).map_err(bad)?;
        self.mpc.state_box.hypercube().map_err(bad)?;
        if self.dataset.grid.len() != n0 || self.dataset.grid.contains(&0) {
            return Err(CliError::Config(format!("dataset grid needs {n0} positive entries")));
        }
        self.train.validate().map_err(bad)?;
        self.sim.validate(n0).map_err(bad)?;
        let s = &self.spectral;
        let model = SpectralModel::new(s.q_c, n0, s.n_modes.max(self.sim.n_sim), s.n_tail).map_err(bad)?;
        let sys = build_truncated(&model, n0, s.delta).map_err(bad)?;
        let tail_norm2 = model.tail_energy().map_err(bad)?.partial_norm2;
        Ok(Resolved { n0, model, sys, tail_norm2 })
    }
}
