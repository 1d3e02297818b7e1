//! Run manifests: one JSON record per command invocation, capturing the
//! resolved configuration, seeds, input hashes, and outputs, so any
//! artifact can be traced back to exactly what produced it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use medrec_core::error::Result;
use serde::Serialize;

use crate::fileio::{atomic_write_json, sha256_file};

/// Provenance record emitted exactly once per run as `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    /// Subcommand that ran.
    pub command: String,
    /// Fully resolved configuration (defaults, then config file, then flags).
    pub config: serde_json::Value,
    /// Every seed the run consumed, in the order it was drawn.
    pub seeds: Vec<u64>,
    /// SHA-256 of each input file, keyed by path.
    pub input_hashes: BTreeMap<String, String>,
    /// Paths written by the run, manifest excluded.
    pub outputs: Vec<String>,
    /// End-to-end duration in seconds.
    pub wall_clock_secs: f64,
    /// Source revision of the binary.
    pub revision: String,
}

/// Accumulates manifest fields while a command runs.
pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    seeds: Vec<u64>,
    input_hashes: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new<C: Serialize>(command: &str, config: &C) -> Result<Self> {
        Ok(ManifestBuilder {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seeds: Vec::new(),
            input_hashes: BTreeMap::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seeds.push(seed);
        self
    }

    /// Hash an input file into the manifest; missing files are reported as
    /// validation errors at the call site.
    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.input_hashes
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    /// Finalize and write `manifest.json` into `dir`.
    pub fn write(self, dir: &Path) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            seeds: self.seeds,
            input_hashes: self.input_hashes,
            outputs: self
                .outputs
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            revision: env!("MEDREC_BUILD_REVISION").to_string(),
        };
        let path = dir.join("manifest.json");
        atomic_write_json(&path, &manifest)?;
        Ok(path)
    }
}
