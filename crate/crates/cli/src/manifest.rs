use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use ehpc_core::SystemConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one subcommand run. Timestamps live only here, so every other
/// output is byte-identical across reruns.
#[derive(Serialize)]
pub struct RunManifest {
    pub subcommand: &'static str,
    pub config_path: Option<PathBuf>,
    pub config: Option<SystemConfig>,
    pub seeds: BTreeMap<&'static str, u64>,
    pub parameters: serde_json::Value,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub started_unix_seconds: f64,
    pub elapsed_seconds: f64,
    #[serde(skip)]
    clock: Option<Instant>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

impl RunManifest {
    pub fn start(subcommand: &'static str) -> Self {
        RunManifest {
            subcommand,
            config_path: None,
            config: None,
            seeds: BTreeMap::new(),
            parameters: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix_seconds: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
            elapsed_seconds: 0.0,
            clock: Some(Instant::now()),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<String> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(Artifact {
            path: path.to_path_buf(),
            sha256: sha256.clone(),
        });
        Ok(sha256)
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.outputs.push(Artifact {
            path: path.to_path_buf(),
            sha256,
        });
        Ok(())
    }

    /// Writes the manifest next to `primary` and returns its path.
    pub fn finish(mut self, primary: &Path) -> Result<PathBuf> {
        self.elapsed_seconds = self.clock.map(|c| c.elapsed().as_secs_f64()).unwrap_or(0.0);
        let path = manifest_path(primary);
        let text = serde_json::to_string_pretty(&self)?;
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
