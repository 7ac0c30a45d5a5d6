use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use evcharge_core::EconomicParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(FileDigest { path: path.to_path_buf(), sha256: hex::encode(Sha256::digest(&bytes)) })
    }
}

/// Everything needed to re-run a command and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    pub working_dir: PathBuf,
    pub inputs: Vec<FileDigest>,
    pub params: Option<EconomicParams>,
    pub seed: Option<u64>,
    pub version: String,
    pub outputs: Vec<FileDigest>,
    /// SHA-256 over the output digests in order.
    pub output_digest: String,
}

/// What a command touched, for its manifest.
#[derive(Debug, Default)]
pub struct Provenance {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub params: Option<EconomicParams>,
    pub seed: Option<u64>,
    pub manifest_path: Option<PathBuf>,
}

pub fn combined_digest(outputs: &[FileDigest]) -> String {
    let mut h = Sha256::new();
    for d in outputs {
        h.update(d.sha256.as_bytes());
    }
    hex::encode(h.finalize())
}

impl RunManifest {
    pub fn build(command: &str, args: Vec<String>, prov: &Provenance) -> Result<Self> {
        let inputs = prov.inputs.iter().map(|p| FileDigest::of(p)).collect::<Result<Vec<_>>>()?;
        let outputs = prov.outputs.iter().map(|p| FileDigest::of(p)).collect::<Result<Vec<_>>>()?;
        Ok(RunManifest {
            command: command.to_string(),
            args,
            working_dir: std::env::current_dir().context("resolving working directory")?,
            inputs,
            params: prov.params,
            seed: prov.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            output_digest: combined_digest(&outputs),
            outputs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

/// Default manifest location next to the first output.
pub fn default_path(first_output: &Path) -> PathBuf {
    let mut name = first_output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    first_output.with_file_name(name)
}
