//! On-disk reuse of numeric spectral tables.
//!
//! A cache entry is keyed by a hash of everything that determines the solve:
//! metric label, solver settings and cluster tolerance. Entries carry a
//! checksum of the mode file; a mismatch (truncated write, manual edit)
//! counts as a miss and the table is recomputed and rewritten. A sibling
//! lock file taken with `create_new` keeps two processes from writing the
//! same entry at once; losing the race skips the store, never the result.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::geometry::ProfileMetric;
use crate::spectrum::{
    assemble_spectral_table, load_sampled_table, save_sampled_table, SolveSettings, SpectralTable,
    SpectrumError,
};

use super::config::CachePolicy;

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("cache io at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

/// What the cache did for one table request. Reported in the run log only:
/// hit/miss status varies between runs and must stay out of the checksummed
/// outputs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CacheStatus {
    Disabled,
    Hit,
    MissStored,
    MissSkipped(String),
}

impl std::fmt::Display for CacheStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CacheStatus::Disabled => write!(f, "cache off"),
            CacheStatus::Hit => write!(f, "cache hit"),
            CacheStatus::MissStored => write!(f, "cache miss, stored"),
            CacheStatus::MissSkipped(reason) => write!(f, "cache miss, not stored ({reason})"),
        }
    }
}

#[derive(Serialize)]
struct CacheKey<'a> {
    format: u32,
    label: &'a str,
    grid_size: usize,
    lambda_max: f64,
    accuracy_target: f64,
    check_grid: bool,
    cluster_tol: f64,
}

/// Bump when the stored layout or the solver output contract changes; old
/// entries then read as absent instead of wrong.
const CACHE_FORMAT: u32 = 1;

pub fn table_key(metric: &ProfileMetric, settings: &SolveSettings, cluster_tol: f64) -> String {
    let key = CacheKey {
        format: CACHE_FORMAT,
        label: metric.label(),
        grid_size: settings.grid_size,
        lambda_max: settings.lambda_max,
        accuracy_target: settings.accuracy_target,
        check_grid: settings.check_grid,
        cluster_tol,
    };
    let json = serde_json::to_vec(&key).expect("key serializes");
    let mut hasher = Sha256::new();
    hasher.update(&json);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(16);
    for byte in digest.iter().take(8) {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

fn entry_dir(cache_root: &Path, key: &str) -> PathBuf {
    cache_root.join(format!("table-{key}"))
}

fn io_err(path: &Path, source: std::io::Error) -> CacheError {
    CacheError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn file_sha256(path: &Path) -> Result<String, CacheError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    Ok(out)
}

/// Estimated on-disk size: one CSV row per stored mode (the solver stores
/// n >= 0 only), 25 bytes per sample plus slack per row.
fn estimated_bytes(table: &SpectralTable, grid_size: usize) -> u64 {
    let rows = table
        .entries
        .iter()
        .filter(|e| e.n >= 0)
        .count() as u64;
    rows * (25 * grid_size as u64 + 64)
}

fn try_load(dir: &Path, metric: &ProfileMetric) -> Option<SpectralTable> {
    let checksum_path = dir.join("checksum.txt");
    let stored = fs::read_to_string(&checksum_path).ok()?;
    let actual = file_sha256(&dir.join("modes.csv")).ok()?;
    if stored.trim() != actual {
        return None;
    }
    load_sampled_table(dir, metric).ok()
}

fn try_store(
    dir: &Path,
    table: &SpectralTable,
    metric: &ProfileMetric,
    settings: &SolveSettings,
) -> Result<CacheStatus, CacheError> {
    let parent = dir.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    let lock = parent.join(format!(
        "{}.lock",
        dir.file_name().and_then(|n| n.to_str()).unwrap_or("entry")
    ));
    match fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
            return Ok(CacheStatus::MissSkipped(
                "another writer holds the lock".to_string(),
            ));
        }
        Err(e) => return Err(io_err(&lock, e)),
    }
    let result = (|| -> Result<(), CacheError> {
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        save_sampled_table(dir, table, metric, settings)?;
        let checksum = file_sha256(&dir.join("modes.csv"))?;
        let path = dir.join("checksum.txt");
        fs::write(&path, format!("{checksum}\n")).map_err(|e| io_err(&path, e))?;
        Ok(())
    })();
    let _ = fs::remove_file(&lock);
    result.map(|()| CacheStatus::MissStored)
}

/// Load the table for (metric, settings, cluster_tol) from `cache_root`, or
/// assemble it and store the result.
///
/// Cached and fresh tables are bit-identical: the store path round-trips
/// every float through 17 significant digits and the loader verifies the
/// orthonormality certificate again, so a hit is exactly as trustworthy as a
/// recompute.
pub fn load_or_assemble(
    cache_root: &Path,
    metric: &ProfileMetric,
    settings: &SolveSettings,
    cluster_tol: f64,
    policy: CachePolicy,
    max_bytes: u64,
) -> Result<(SpectralTable, CacheStatus), CacheError> {
    if policy == CachePolicy::Off {
        let table = assemble_spectral_table(metric, settings, cluster_tol)?;
        return Ok((table, CacheStatus::Disabled));
    }
    let dir = entry_dir(cache_root, &table_key(metric, settings, cluster_tol));
    if let Some(table) = try_load(&dir, metric) {
        return Ok((table, CacheStatus::Hit));
    }
    let table = assemble_spectral_table(metric, settings, cluster_tol)?;
    let size = estimated_bytes(&table, settings.grid_size);
    let status = if size > max_bytes {
        CacheStatus::MissSkipped(format!("estimated {size} bytes exceeds cap {max_bytes}"))
    } else {
        try_store(&dir, &table, metric, settings)?
    };
    Ok((table, status))
}
