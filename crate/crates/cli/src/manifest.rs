use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};
use wivloc::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Record of one CLI invocation: inputs, timing, and every file written.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub config_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: f64,
    pub artifacts: Vec<Artifact>,
    pub warnings: Vec<String>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Collects output files as a subcommand writes them.
pub struct Run {
    manifest: RunManifest,
}

impl Run {
    pub fn start(
        subcommand: &str,
        config_path: Option<&Path>,
        out_dir: &Path,
        seed: Option<u64>,
    ) -> Result<Self> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        Ok(Self {
            manifest: RunManifest {
                subcommand: subcommand.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                config_path: config_path.map(Path::to_path_buf),
                out_dir: out_dir.to_path_buf(),
                seed,
                started_at: now(),
                finished_at: 0.0,
                artifacts: Vec::new(),
                warnings: Vec::new(),
            },
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.manifest.out_dir.join(name)
    }

    pub fn warn(&mut self, w: impl Into<String>) {
        self.manifest.warnings.push(w.into());
    }

    /// Writes `contents` to `name` under the output directory.
    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.record(name, contents);
        Ok(())
    }

    /// Registers a file some other writer already produced.
    pub fn adopt(&mut self, name: &str) -> Result<()> {
        let path = self.path(name);
        let contents = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.record(name, &contents);
        Ok(())
    }

    fn record(&mut self, name: &str, contents: &[u8]) {
        self.manifest.artifacts.retain(|a| a.path != name);
        self.manifest.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(contents)),
            bytes: contents.len() as u64,
        });
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.finished_at = now();
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        let path = self.path(MANIFEST_FILE);
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(self.manifest)
    }
}
