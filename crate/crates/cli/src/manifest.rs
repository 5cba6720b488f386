use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Record of one CLI run, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_ms: u64,
    pub seconds: f64,
    /// SHA-256 of every file under the output directory, by relative path.
    pub artifacts: BTreeMap<String, String>,
}

pub struct RunClock {
    started_unix_ms: u64,
    start: Instant,
}

impl RunClock {
    pub fn start() -> Self {
        Self {
            started_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            start: Instant::now(),
        }
    }
}

fn collect(dir: &Path, root: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect(&path, root, out)?;
        } else if path.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            let rel = path
                .strip_prefix(root)
                .unwrap_or(&path)
                .to_string_lossy()
                .replace('\\', "/");
            out.insert(rel, hex::encode(Sha256::digest(&bytes)));
        }
    }
    Ok(())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

impl RunManifest {
    #[allow(clippy::too_many_arguments)]
    pub fn finish(
        command: &str,
        config: Value,
        seed: Option<u64>,
        inputs: Vec<PathBuf>,
        out_dir: &Path,
        outputs: Vec<PathBuf>,
        clock: RunClock,
    ) -> Result<Self> {
        let mut artifacts = BTreeMap::new();
        collect(out_dir, out_dir, &mut artifacts)?;
        let m = Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config,
            seed,
            inputs,
            outputs,
            started_unix_ms: clock.started_unix_ms,
            seconds: clock.start.elapsed().as_secs_f64(),
            artifacts,
        };
        write_json(&out_dir.join(MANIFEST_FILE), &m)?;
        Ok(m)
    }
}
