//! Run manifests: what ran, with which settings, over which bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, Warning};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn digest_file(path: impl AsRef<Path>) -> Result<FileDigest> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex::encode(hasher.finalize()),
        bytes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub millis: u64,
    pub outputs: Vec<FileDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub status: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub stages: Vec<StageRecord>,
    pub warnings: Vec<Warning>,
    pub total_millis: u64,
}

/// Accumulates a manifest while a command runs.
#[derive(Debug)]
pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
    stage_started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: BTreeMap<String, String>, seed: u64) -> Self {
        let now = Instant::now();
        ManifestBuilder {
            manifest: RunManifest {
                command: command.to_owned(),
                status: "running".into(),
                config,
                seed,
                inputs: Vec::new(),
                stages: Vec::new(),
                warnings: Vec::new(),
                total_millis: 0,
            },
            started: now,
            stage_started: now,
        }
    }

    pub fn input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.manifest.inputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn warnings(&mut self, w: impl IntoIterator<Item = Warning>) {
        self.manifest.warnings.extend(w);
    }

    /// Closes the current stage, digesting its outputs.
    pub fn stage<P: AsRef<Path>>(&mut self, name: &str, outputs: impl IntoIterator<Item = P>) -> Result<()> {
        let outputs = outputs.into_iter().map(digest_file).collect::<Result<_>>()?;
        let now = Instant::now();
        self.manifest.stages.push(StageRecord {
            name: name.to_owned(),
            millis: (now - self.stage_started).as_millis() as u64,
            outputs,
        });
        self.stage_started = now;
        Ok(())
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Writes the manifest with the given status and returns it.
    pub fn finish(mut self, status: &str, path: impl AsRef<Path>) -> Result<RunManifest> {
        self.manifest.status = status.to_owned();
        self.manifest.total_millis = self.started.elapsed().as_millis() as u64;
        self.manifest.warnings.sort();
        super::write_json(path, &self.manifest)?;
        Ok(self.manifest)
    }
}
