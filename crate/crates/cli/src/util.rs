//! Shared plumbing: atomic writes, dataset directory scanning, and a
//! bounded worker pool for per-video parallelism.

use crate::CliError;
use std::path::{Path, PathBuf};

/// Write-then-rename so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)
        .map_err(|e| CliError::data(format!("cannot write {tmp:?}: {e}")))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::data(format!("cannot rename {tmp:?} -> {path:?}: {e}")))?;
    Ok(())
}

pub fn atomic_write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::data(format!("cannot serialize {path:?}: {e}")))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

/// Video directories of a dataset, sorted by name. A directory that
/// itself holds `frames.fts` counts as a single video.
pub fn video_dirs(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if input.join("frames.fts").is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| CliError::data(format!("cannot read {input:?}: {e}")))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("frames.fts").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::data(format!(
            "no videos under {input:?} (expected frames.fts or video subdirectories)"
        )));
    }
    Ok(dirs)
}

/// Extraction output directories (holding keyframes.json), sorted.
pub fn extracted_dirs(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if input.join("keyframes.json").is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| CliError::data(format!("cannot read {input:?}: {e}")))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("keyframes.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::data(format!(
            "no extraction outputs under {input:?} (expected keyframes.json)"
        )));
    }
    Ok(dirs)
}

/// Run `work` over the items on up to `jobs` threads; results come back
/// in input order.
pub fn run_jobs<T, R, F>(items: Vec<T>, jobs: usize, work: F) -> Vec<R>
where
    T: Send + Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(|t| work(t)).collect();
    }
    let n = items.len();
    let mut results: Vec<Option<R>> = (0..n).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<&mut Option<R>>> =
        results.iter_mut().map(std::sync::Mutex::new).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = work(&items[i]);
                **slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    results.into_iter().map(|r| r.unwrap()).collect()
}
