//! Result persistence: CSV writers with full-precision floats, log10 error
//! grids with an exact-zero sentinel, file checksums, and the run manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::state::PhaseState;

/// Sentinel used in log10 grids where the error is exactly zero.
pub const LOG10_ZERO_SENTINEL: f64 = -16.0;

pub fn log10_or_sentinel(x: f64) -> f64 {
    if x == 0.0 {
        LOG10_ZERO_SENTINEL
    } else {
        x.log10()
    }
}

/// FNV-1a 64-bit content hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Full-precision decimal rendering (round-trips every finite f64).
pub fn full_precision(x: f64) -> String {
    format!("{x:.17e}")
}

/// Write a CSV with an optional comment header and named columns.
pub fn write_csv(
    path: &Path,
    comments: &[String],
    columns: &[String],
    rows: impl Iterator<Item = Vec<f64>>,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "{}", columns.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|x| full_precision(*x)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// One state per row: [p_1..p_d, q_1..q_d].
pub fn write_states_csv(path: &Path, comments: &[String], states: &[PhaseState]) -> Result<()> {
    let d = states.first().map(|s| s.dim()).unwrap_or(0);
    let mut columns = Vec::with_capacity(2 * d);
    for i in 1..=d {
        columns.push(format!("p{i}"));
    }
    for i in 1..=d {
        columns.push(format!("q{i}"));
    }
    write_csv(
        path,
        comments,
        &columns,
        states.iter().map(|s| s.concat()),
    )
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub checksum: String,
}

/// Inventory of one command run: config snapshot and hash, tool version,
/// per-phase wall-clock timings, and every emitted file with its checksum.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_snapshot: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub timings_seconds: Vec<(String, f64)>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn new(command: &str, config_snapshot: String, seed: Option<u64>) -> RunManifest {
        let config_hash = format!("{:016x}", fnv1a64(config_snapshot.as_bytes()));
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_snapshot,
            config_hash,
            seed,
            timings_seconds: Vec::new(),
            files: Vec::new(),
        }
    }

    pub fn record_timing(&mut self, phase: &str, seconds: f64) {
        self.timings_seconds.push((phase.to_string(), seconds));
    }

    /// Hash a freshly written file into the inventory.
    pub fn record_file(&mut self, root: &Path, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        let rel = path.strip_prefix(root).unwrap_or(path);
        self.files.push(FileEntry {
            path: rel.to_string_lossy().into_owned(),
            bytes: bytes.len() as u64,
            checksum: format!("{:016x}", fnv1a64(&bytes)),
        });
        Ok(())
    }

    /// Serialize to `manifest.json` under `root` and return the path.
    pub fn write(&self, root: &Path) -> Result<PathBuf> {
        let path = root.join("manifest.json");
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| crate::error::Error::Config(e.to_string()))?;
        std::fs::write(&path, json)?;
        Ok(path)
    }
}
