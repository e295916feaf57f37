//! Run directories and per-seed parallelism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::thread;

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};

pub fn run_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("run-{seed}"))
}

/// `git describe --always --dirty`, or "unknown" outside a work tree.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

/// Create the run directory for `seed` and write the config echo, the seed
/// and the source revision into it.
pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<PathBuf> {
    let dir = run_dir(&cfg.output, seed);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.json"), cfg.to_json())?;
    fs::write(dir.join("seed.txt"), format!("{seed}\n"))?;
    fs::write(dir.join("git_describe.txt"), format!("{}\n", git_describe()))?;
    Ok(dir)
}

/// Run `job` for every seed on its own thread. Results come back in seed
/// order; the first failing seed's error wins.
pub fn per_seed<T, F>(seeds: &[u64], job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let job = &job;
    thread::scope(|s| {
        let handles: Vec<_> = seeds.iter().map(|&seed| s.spawn(move || job(seed))).collect();
        handles
            .into_iter()
            .map(|h| h.join().map_err(|_| LabError::Runtime("a seed job panicked".into()))?)
            .collect()
    })
}
