//! Run manifests written next to every stage output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub config_digest: String,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub seeds: BTreeMap<String, u64>,
    pub started_unix: u64,
    pub wall_time_secs: f64,
}

/// Collects a stage's paths and seeds while it runs.
pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

/// `out.jsonl` -> `out.jsonl.manifest.json`
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

impl ManifestBuilder {
    pub fn new(stage: &str, config_digest: String) -> Self {
        ManifestBuilder {
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
                stage: stage.into(),
                config_digest,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                seeds: BTreeMap::new(),
                started_unix: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs()),
                wall_time_secs: 0.0,
            },
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> &mut Self {
        self.manifest.inputs.insert(name.into(), path.to_path_buf());
        self
    }

    pub fn output(&mut self, name: &str, path: &Path) -> &mut Self {
        self.manifest
            .outputs
            .insert(name.into(), path.to_path_buf());
        self
    }

    pub fn seed(&mut self, name: &str, seed: u64) -> &mut Self {
        self.manifest.seeds.insert(name.into(), seed);
        self
    }

    /// Writes the manifest beside each output file.
    pub fn finish(mut self) -> Result<RunManifest, CliError> {
        self.manifest.wall_time_secs = self.started.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        for out in self.manifest.outputs.values() {
            let path = manifest_path(out);
            std::fs::write(&path, &text)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        }
        Ok(self.manifest)
    }
}
