//! Run manifests: every command records its resolved configuration, seeds,
//! inputs, outputs, and per-item status, so a run can be reproduced exactly
//! (wall time is informational and excluded from reproducibility).

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::CliError;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub items: Vec<serde_json::Value>,
    pub wall_time_s: f64,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        ManifestBuilder {
            manifest: RunManifest {
                command: command.to_string(),
                config,
                seed,
                inputs: Vec::new(),
                outputs: Vec::new(),
                items: Vec::new(),
                wall_time_s: 0.0,
            },
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.manifest.inputs.push(path.display().to_string());
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
    }

    pub fn item(&mut self, item: serde_json::Value) {
        self.manifest.items.push(item);
    }

    pub fn write(mut self, path: &Path) -> Result<(), CliError> {
        self.manifest.wall_time_s = self.started.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| CliError::Io(format!("manifest serialization: {e}")))?;
        tilt_rectify::io::write_text(path, &text)
            .map_err(|e| CliError::Io(e.to_string()))?;
        Ok(())
    }
}
