//! Output-directory plumbing: root resolution, config loading with
//! line/field diagnostics, run persistence, and the timestamped sidecar
//! log (timestamps live only there so artifact outputs stay byte-stable).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::Serialize;

use rblab_core::store::{write_snapshot, RepresentationSnapshot};
use rblab_core::trainer::{write_metrics_csv, RunOutput};

use crate::{CliError, CliResult};

pub fn output_root(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os("RBLAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

pub fn load_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Appends a timestamped line to the directory's sidecar log.
pub fn log_line(dir: &Path, message: &str) {
    let _ = fs::create_dir_all(dir);
    if let Ok(mut f) = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join("run.log"))
    {
        let t = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let _ = writeln!(f, "[{t}] {message}");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotPersistence {
    All,
    FinalOnly,
}

pub fn snapshot_file_name(s: &RepresentationSnapshot) -> String {
    format!("step{:08}_{}_{}.rbs", s.step, s.layer, s.split)
}

/// Writes record.json, metrics.csv, the final model, and snapshots under
/// `dir`.
pub fn persist_run(dir: &Path, run: &RunOutput, mode: SnapshotPersistence) -> CliResult<()> {
    fs::create_dir_all(dir.join("snapshots"))?;
    write_json(&dir.join("record.json"), &run.record)?;

    let mut metrics = Vec::new();
    write_metrics_csv(&run.record, &mut metrics)?;
    fs::write(dir.join("metrics.csv"), metrics)?;

    let mut model_bytes = Vec::new();
    run.final_model.write_to(&mut model_bytes)?;
    fs::write(dir.join("model_final.rbm"), model_bytes)?;

    for s in &run.snapshots {
        if mode == SnapshotPersistence::FinalOnly && s.step != run.record.final_step {
            continue;
        }
        write_snapshot(s, dir.join("snapshots").join(snapshot_file_name(s)))?;
    }
    Ok(())
}

/// Appends CSV rows to `path`, writing `header` first when the file is new.
pub fn append_csv(path: &Path, header: &str, rows: &[String]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let existed = path.exists();
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    if !existed {
        writeln!(f, "{header}")?;
    }
    for row in rows {
        writeln!(f, "{row}")?;
    }
    Ok(())
}
