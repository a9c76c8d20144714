//! Run manifest, written before any computation starts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const PARTIAL: &str = "PARTIAL";
pub const MANIFEST: &str = "manifest.json";
pub const HASHES: &str = "outputs.sha256";

#[derive(Clone, Debug, Serialize)]
pub struct SeedPolicy {
    pub seed: u64,
    /// Where the seed came from: `flag`, `env` or `config`.
    pub source: &'static str,
    pub generator: &'static str,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentManifest {
    pub experiment_id: String,
    pub command: String,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub seed_policy: SeedPolicy,
    pub code_version: String,
    pub budget_seconds: Option<f64>,
    pub replicas: Option<usize>,
    pub quick: bool,
    pub outputs: Vec<PathBuf>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Crate version plus a digest of the running executable.
pub fn code_version() -> String {
    let digest = std::env::current_exe()
        .and_then(fs::read)
        .map(|b| sha256_hex(&b)[..16].to_string())
        .unwrap_or_else(|_| "unknown".into());
    format!("{}+{digest}", env!("CARGO_PKG_VERSION"))
}

impl ExperimentManifest {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        experiment: &str,
        command: &str,
        config: serde_json::Value,
        seed_policy: SeedPolicy,
        budget_seconds: Option<f64>,
        replicas: Option<usize>,
        quick: bool,
        outputs: Vec<PathBuf>,
    ) -> Result<Self> {
        let canonical = serde_json::to_vec(&(command, &config, seed_policy.seed, replicas, quick))?;
        let config_sha256 = sha256_hex(&canonical);
        Ok(ExperimentManifest {
            experiment_id: format!("{experiment}-{command}-{}", &config_sha256[..12]),
            command: command.to_string(),
            config,
            config_sha256,
            seed_policy,
            code_version: code_version(),
            budget_seconds,
            replicas,
            quick,
            outputs,
        })
    }

    /// Writes the manifest and the partial-results marker.
    pub fn begin(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let _ = fs::remove_file(dir.join(HASHES));
        fs::write(
            dir.join(MANIFEST),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        fs::write(dir.join(PARTIAL), format!("{}\n", self.experiment_id))?;
        Ok(())
    }

    /// Records a digest of every output and removes the marker.
    pub fn complete(&self, dir: &Path, outputs: &[PathBuf]) -> Result<()> {
        let mut sorted = outputs.to_vec();
        sorted.sort();
        let mut out = fs::File::create(dir.join(HASHES))?;
        for p in &sorted {
            let bytes =
                fs::read(dir.join(p)).with_context(|| format!("reading {}", p.display()))?;
            writeln!(out, "{}  {}", sha256_hex(&bytes), p.display())?;
        }
        fs::remove_file(dir.join(PARTIAL))?;
        Ok(())
    }
}
