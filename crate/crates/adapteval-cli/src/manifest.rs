//! Run manifests: a config snapshot, content hashes of every input, stage
//! timings, and counters — enough to re-execute a run bit-identically
//! against the same cache. Written atomically at run end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use adapteval::judge::CounterSnapshot;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: RunConfig,
    /// input path -> sha256 of its bytes
    pub input_hashes: BTreeMap<String, String>,
    /// stage name -> elapsed milliseconds, in execution order
    pub stage_timings_ms: Vec<(String, u64)>,
    pub counters: CounterSnapshot,
    pub warnings: Vec<String>,
    /// Nonzero exit iff this is non-empty.
    pub hard_errors: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            input_hashes: BTreeMap::new(),
            stage_timings_ms: Vec::new(),
            counters: CounterSnapshot {
                requests: 0,
                cache_hits: 0,
                retries: 0,
                requeries: 0,
                null_scores: 0,
            },
            warnings: Vec::new(),
            hard_errors: Vec::new(),
        }
    }

    pub fn hash_input(&mut self, path: &Path) -> std::io::Result<()> {
        let bytes = std::fs::read(path)?;
        let digest = hex::encode(Sha256::digest(&bytes));
        self.input_hashes.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Runs `f`, recording its wall time under `stage`.
    pub fn time_stage<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let start = Instant::now();
        let result = f(self);
        self.stage_timings_ms
            .push((stage.to_string(), start.elapsed().as_millis() as u64));
        result
    }

    pub fn path_for(out_dir: &Path, command: &str) -> PathBuf {
        out_dir.join(format!("manifest.{command}.json"))
    }

    /// Atomic write: temp file then rename.
    pub fn write(&self, out_dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(out_dir)?;
        let path = Self::path_for(out_dir, &self.command);
        let tmp = out_dir.join(format!(".manifest.{}.tmp-{}", self.command, std::process::id()));
        let body = serde_json::to_vec_pretty(self).expect("manifest serializes");
        std::fs::write(&tmp, body)?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }

    pub fn exit_code(&self) -> i32 {
        i32::from(!self.hard_errors.is_empty())
    }
}
