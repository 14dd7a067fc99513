use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageEntry {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    /// Artifact name to SHA-256, with `config` for the configuration.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Outputs holding wall-clock measurements; listed, not hashed.
    pub volatile: Vec<String>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub stages: BTreeMap<String, StageEntry>,
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Upstream(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(scenario: &str, config_hash: &str, seed: u64) -> Self {
        Self { scenario: scenario.into(), config_hash: config_hash.into(), seed, stages: BTreeMap::new() }
    }

    pub fn read(dir: &Path) -> Result<Option<Self>, CliError> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::Upstream(format!("cannot read manifest: {e}")))?;
        serde_json::from_str(&text).map(Some).map_err(|e| CliError::Upstream(format!("corrupt manifest: {e}")))
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Stage(e.into()))?;
        std::fs::write(dir.join(MANIFEST), text + "\n").map_err(|e| CliError::Stage(e.into()))
    }

    /// Copy with every wall time zeroed, for run-to-run comparison.
    pub fn without_wall_time(&self) -> Self {
        let mut m = self.clone();
        for e in m.stages.values_mut() {
            e.wall_time_s = 0.0;
        }
        m
    }

    /// Checks that `stage` ran under `config_hash` and that its hashed
    /// outputs are unchanged on disk; returns those hashes.
    pub fn upstream(&self, dir: &Path, stage: &str, config_hash: &str) -> Result<BTreeMap<String, String>, CliError> {
        let e = self
            .stages
            .get(stage)
            .ok_or_else(|| CliError::Upstream(format!("stage '{stage}' has not been run in {}", dir.display())))?;
        if e.config_hash != config_hash || self.config_hash != config_hash {
            return Err(CliError::Upstream(format!("stage '{stage}' was produced by a different configuration")));
        }
        for (name, hash) in &e.outputs {
            let path = dir.join(name);
            if !path.exists() {
                return Err(CliError::Upstream(format!("artifact {name} of stage '{stage}' is missing")));
            }
            if &hash_file(&path)? != hash {
                return Err(CliError::Upstream(format!("artifact {name} of stage '{stage}' does not match the manifest")));
            }
        }
        for name in &e.volatile {
            if !dir.join(name).exists() {
                return Err(CliError::Upstream(format!("artifact {name} of stage '{stage}' is missing")));
            }
        }
        Ok(e.outputs.clone())
    }
}
