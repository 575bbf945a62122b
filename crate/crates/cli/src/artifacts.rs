//! Artifact layout of a run directory and the per-stage manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, Ablation, RunConfig, Stage};
use crate::error::{CliError, Result};

pub const MANIFEST_VERSION: u32 = 1;

/// Paths of every artifact under a run directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.name())
    }

    pub fn population(&self) -> PathBuf {
        self.stage_dir(Stage::GenPopulation).join("population.json")
    }

    pub fn simulation(&self) -> PathBuf {
        self.stage_dir(Stage::Simulate).join("records.json")
    }

    pub fn dataset(&self) -> PathBuf {
        self.stage_dir(Stage::Sense).join("dataset.tmg")
    }

    /// Directory holding train/decompose/identify outputs of a model variant.
    /// The full model lives at the top level, ablations under `ablate/`.
    pub fn model_root(&self, ablation: Ablation) -> PathBuf {
        match ablation {
            Ablation::Full => self.root.clone(),
            other => self.stage_dir(Stage::Ablate).join(other.name()),
        }
    }

    pub fn checkpoint(&self, ablation: Ablation) -> PathBuf {
        self.model_root(ablation).join("train").join("checkpoint.json")
    }

    pub fn best_checkpoint(&self, ablation: Ablation) -> PathBuf {
        self.model_root(ablation).join("train").join("best_checkpoint.json")
    }

    pub fn train_log(&self, ablation: Ablation) -> PathBuf {
        self.model_root(ablation).join("train").join("train_log.csv")
    }

    /// Loss history without timings.
    pub fn losses(&self, ablation: Ablation) -> PathBuf {
        self.model_root(ablation).join("train").join("losses.csv")
    }

    pub fn decomposition(&self, ablation: Ablation) -> PathBuf {
        self.model_root(ablation).join("decompose").join("decomposition.json")
    }

    pub fn identification(&self, ablation: Ablation) -> PathBuf {
        self.model_root(ablation).join("identify").join("identification.json")
    }

    pub fn baseline(&self, method: &str) -> PathBuf {
        self.stage_dir(Stage::Baseline).join(format!("{method}_identification.json"))
    }

    pub fn ablation_summary(&self) -> PathBuf {
        self.stage_dir(Stage::Ablate).join("ablation.json")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.stage_dir(Stage::Report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory.
    pub path: String,
    /// SHA-256 of the contents; `None` for files with wall-clock data.
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub stage: String,
    pub config_digest: String,
    pub seed: u64,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
}

/// Collects the files one stage reads and writes, then records them.
pub struct StageRecorder<'a> {
    ws: &'a Workspace,
    dir: PathBuf,
    stage: Stage,
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
}

impl<'a> StageRecorder<'a> {
    pub fn new(ws: &'a Workspace, stage: Stage, dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
        Ok(Self { ws, dir, stage, inputs: Vec::new(), outputs: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry(&self, path: &Path, hashed: bool) -> Result<FileEntry> {
        let rel = path.strip_prefix(&self.ws.root).unwrap_or(path).to_string_lossy().replace('\\', "/");
        Ok(FileEntry { path: rel, sha256: if hashed { Some(file_sha256(path)?) } else { None } })
    }

    /// Record an upstream artifact, failing with the stage that produces it.
    pub fn input(&mut self, path: &Path, producer: Stage) -> Result<PathBuf> {
        if !path.exists() {
            return Err(CliError::MissingArtifact { path: path.to_path_buf(), stage: producer.name() });
        }
        let e = self.entry(path, true)?;
        self.inputs.push(e);
        Ok(path.to_path_buf())
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_file(&path, bytes.as_ref())?;
        let e = self.entry(&path, true)?;
        self.outputs.push(e);
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, serde_json::to_vec_pretty(value)?)
    }

    /// Output whose contents vary between identical runs (timings).
    pub fn write_volatile(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_file(&path, bytes.as_ref())?;
        let e = self.entry(&path, false)?;
        self.outputs.push(e);
        Ok(path)
    }

    /// Register a file written by other code.
    pub fn output(&mut self, path: &Path) -> Result<()> {
        let e = self.entry(path, true)?;
        self.outputs.push(e);
        Ok(())
    }

    pub fn finish(self, config: &RunConfig) -> Result<Manifest> {
        let manifest = Manifest {
            manifest_version: MANIFEST_VERSION,
            stage: self.stage.name().into(),
            config_digest: config.digest(),
            seed: config.seed,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        write_file(&self.dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    Ok(hex(&Sha256::digest(&bytes)))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| CliError::Io { path: parent.to_path_buf(), source })?;
    }
    fs::write(path, bytes).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

pub fn read_json<T: DeserializeOwned>(path: &Path, producer: Stage) -> Result<T> {
    if !path.exists() {
        return Err(CliError::MissingArtifact { path: path.to_path_buf(), stage: producer.name() });
    }
    let bytes = fs::read(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let bytes = fs::read(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
    Ok(serde_json::from_slice(&bytes)?)
}
