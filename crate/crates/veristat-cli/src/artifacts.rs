//! Run artifact bookkeeping: output directory, manifest, run metadata.
//!
//! The manifest pins a run: config hash, effective seed, and a digest
//! per artifact. `run_meta.json` holds the only nondeterministic bytes
//! (timestamps) and is therefore not listed in the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_sha256: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    artifacts: BTreeMap<&'a str, String>,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    started_unix_ms: u128,
    finished_unix_ms: u128,
}

fn unix_ms(t: SystemTime) -> u128 {
    t.duration_since(UNIX_EPOCH).unwrap_or_default().as_millis()
}

/// One run's output directory, created up front.
pub struct OutDir {
    path: PathBuf,
    started: SystemTime,
}

impl OutDir {
    pub fn create(path: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            started: SystemTime::now(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
        fs::write(self.file(name), contents)?;
        Ok(())
    }

    /// Writes `manifest.json` (hashing the named artifacts) and
    /// `run_meta.json`, closing out the run.
    pub fn finish(
        &self,
        command: &str,
        config_sha256: &str,
        seed: Option<u64>,
        artifact_names: &[&str],
    ) -> anyhow::Result<()> {
        let mut artifacts = BTreeMap::new();
        for name in artifact_names {
            let bytes = fs::read(self.file(name))?;
            artifacts.insert(*name, sha256_hex(&bytes));
        }
        let manifest = Manifest {
            config_sha256,
            seed,
            artifacts,
        };
        self.write(
            "manifest.json",
            format!("{}\n", serde_json::to_string_pretty(&manifest)?),
        )?;

        let meta = RunMeta {
            command,
            started_unix_ms: unix_ms(self.started),
            finished_unix_ms: unix_ms(SystemTime::now()),
        };
        self.write(
            "run_meta.json",
            format!("{}\n", serde_json::to_string_pretty(&meta)?),
        )?;
        Ok(())
    }
}
