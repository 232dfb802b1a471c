use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub artifacts: Vec<Artifact>,
    pub stages: Vec<StageTime>,
}

/// Collects the artifacts and stage timings of one command; the manifest is
/// written only by [`Recorder::finish`], after every artifact exists.
pub struct Recorder {
    out_dir: PathBuf,
    artifacts: Vec<Artifact>,
    stages: Vec<StageTime>,
    stage_start: Instant,
}

impl Recorder {
    pub fn new(out_dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(out_dir)
            .with_context(|| format!("creating output directory {}", out_dir.display()))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            artifacts: Vec::new(),
            stages: Vec::new(),
            stage_start: Instant::now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Ends the current stage and starts the next one.
    pub fn stage(&mut self, name: &str) {
        let now = Instant::now();
        self.stages.push(StageTime {
            stage: name.to_string(),
            seconds: (now - self.stage_start).as_secs_f64(),
        });
        self.stage_start = now;
    }

    /// Registers a file that has already been written under the output directory.
    pub fn record(&mut self, name: &str) -> anyhow::Result<()> {
        let path = self.path(name);
        let bytes = fs::read(&path).with_context(|| format!("reading back {}", path.display()))?;
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
        let path = self.path(name);
        fs::write(&path, contents.as_ref())
            .with_context(|| format!("writing {}", path.display()))?;
        self.record(name)
    }

    pub fn finish(self, command: &str, config_toml: &str, seed: u64) -> anyhow::Result<PathBuf> {
        let manifest = RunManifest {
            command: command.to_string(),
            config_sha256: sha256_hex(config_toml.as_bytes()),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            artifacts: self.artifacts,
            stages: self.stages,
        };
        let path = self.out_dir.join(format!("manifest_{command}.json"));
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
