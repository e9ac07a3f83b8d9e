//! Run-directory conventions: config snapshot, artifact digests, and
//! per-command gateway stats. Every command leaves the run dir
//! self-describing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use failsem_core::error::Result;
use failsem_core::gateway::GatewayStats;
use failsem_core::util::{sha256_file, write_json_pretty};

use crate::config::RunConfig;

pub const SNAPSHOT_FILE: &str = "config.snapshot.toml";
pub const DIGESTS_FILE: &str = "digests.json";

pub fn ensure_run_dir(run_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(run_dir.join("cache"))?;
    Ok(())
}

/// Write the fully resolved configuration into the run dir.
pub fn write_snapshot(run_dir: &Path, config: &RunConfig) -> Result<PathBuf> {
    let path = run_dir.join(SNAPSHOT_FILE);
    std::fs::write(&path, config.to_toml()?)?;
    Ok(path)
}

/// Merge the given artifacts into `digests.json` (path relative to run dir,
/// value sha256). Existing entries for other artifacts are preserved.
pub fn record_digests(run_dir: &Path, artifacts: &[PathBuf]) -> Result<()> {
    let digests_path = run_dir.join(DIGESTS_FILE);
    let mut digests: BTreeMap<String, String> = if digests_path.exists() {
        serde_json::from_slice(&std::fs::read(&digests_path)?)?
    } else {
        BTreeMap::new()
    };
    for artifact in artifacts {
        let rel = artifact.strip_prefix(run_dir).unwrap_or(artifact);
        digests.insert(rel.to_string_lossy().replace('\\', "/"), sha256_file(artifact)?);
    }
    write_json_pretty(&digests_path, &digests)
}

/// Per-command gateway call counters, under cache/ so they never take part
/// in artifact comparisons.
pub fn write_stats(run_dir: &Path, command: &str, stats: GatewayStats) -> Result<()> {
    write_json_pretty(&run_dir.join("cache").join("stats").join(format!("{command}.json")), &stats)
}

/// Report the files a command produced and keep the run dir self-describing.
pub fn finish_command(
    run_dir: &Path,
    config: &RunConfig,
    command: &str,
    artifacts: &[PathBuf],
    stats: Option<GatewayStats>,
) -> Result<()> {
    let snapshot = write_snapshot(run_dir, config)?;
    let mut all = artifacts.to_vec();
    all.push(snapshot);
    record_digests(run_dir, &all)?;
    if let Some(stats) = stats {
        write_stats(run_dir, command, stats)?;
        log::info!(
            "{command}: backend calls {}, cache hits {}, retries {}",
            stats.backend_calls,
            stats.cache_hits,
            stats.retries
        );
    }
    Ok(())
}
