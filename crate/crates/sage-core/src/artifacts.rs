//! Run artifacts on disk: JSONL streams, checkpoints, the run manifest
//! and plot-ready CSV series.

use crate::error::{Result, SageError};
use crate::policy::PolicyCheckpoint;
use crate::pool::LifecycleEvent;
use crate::trainer::{StepMetrics, TrainConfig, Trainer};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Parse a JSONL file, reporting the 1-based line number of the first bad
/// line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| SageError::Journal {
            path: path.display().to_string(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Everything needed to reproduce a run, next to its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub metrics_path: String,
    pub journal_path: String,
    pub checkpoint_path: String,
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const JOURNAL_FILE: &str = "lifecycle.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const POLICY_FILE: &str = "policy.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Write the full trainer state plus a standalone policy checkpoint.
pub fn save_checkpoint(dir: &Path, trainer: &Trainer) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let full = dir.join(CHECKPOINT_FILE);
    let file = fs::File::create(&full)?;
    serde_json::to_writer(BufWriter::new(file), trainer)?;
    let policy = dir.join(POLICY_FILE);
    let file = fs::File::create(&policy)?;
    serde_json::to_writer_pretty(
        BufWriter::new(file),
        &PolicyCheckpoint::from_params(&trainer.params),
    )?;
    Ok(full)
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let file = fs::File::open(path)
        .map_err(|e| SageError::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut trainer: Trainer = serde_json::from_reader(BufReader::new(file))?;
    trainer.params.validate()?;
    trainer.ref_params.validate()?;
    trainer.load_replay()?;
    Ok(trainer)
}

/// Load either a full trainer checkpoint or a bare policy checkpoint.
pub fn load_policy(path: &Path) -> Result<crate::policy::PolicyParams> {
    let raw = fs::read_to_string(path)?;
    if let Ok(trainer) = serde_json::from_str::<Trainer>(&raw) {
        trainer.params.validate()?;
        return Ok(trainer.params);
    }
    let ckpt: PolicyCheckpoint = serde_json::from_str(&raw)
        .map_err(|e| SageError::Checkpoint(format!("{}: {e}", path.display())))?;
    ckpt.into_params()
}

fn fmt_f64(x: f64) -> String {
    // shortest representation that round-trips
    let mut buf = ryu_like(x);
    if !buf.contains('.') && !buf.contains('e') && !buf.contains("inf") && !buf.contains("NaN") {
        buf.push_str(".0");
    }
    buf
}

fn ryu_like(x: f64) -> String {
    format!("{x}")
}

/// Reward/KL series, one row per step: the data behind the training
/// curves.
pub fn write_rewards_csv(path: &Path, metrics: &[StepMetrics]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "step,r_acc,r_fmt,r_cons,total,kl,op_id,degenerate")?;
    for m in metrics {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.step,
            fmt_f64(m.mean_acc),
            fmt_f64(m.mean_fmt),
            fmt_f64(m.mean_cons),
            fmt_f64(m.mean_total),
            fmt_f64(m.kl),
            m.op_id.as_deref().unwrap_or(""),
            m.degenerate,
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Per-operation consistency series, one row per evaluation checkpoint,
/// one column per operation (empty where an op was not probed).
pub fn write_consistency_csv(path: &Path, journal: &[LifecycleEvent]) -> Result<()> {
    let mut ops: Vec<String> = journal.iter().map(|e| e.op_id.clone()).collect();
    ops.sort();
    ops.dedup();
    let mut steps: Vec<u64> = journal.iter().map(|e| e.step).collect();
    steps.sort_unstable();
    steps.dedup();

    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "step,{}", ops.join(","))?;
    for &step in &steps {
        let mut row = vec![step.to_string()];
        for op in &ops {
            let cell = journal
                .iter()
                .find(|e| e.step == step && &e.op_id == op)
                .map(|e| fmt_f64(e.consistency))
                .unwrap_or_default();
            row.push(cell);
        }
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// State timeline: one row per (checkpoint, operation) with the state the
/// operation held after the checkpoint's transitions.
pub fn write_states_csv(path: &Path, journal: &[LifecycleEvent]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "step,op_id,state,consistency")?;
    for e in journal {
        writeln!(
            out,
            "{},{},{},{}",
            e.step,
            e.op_id,
            e.to_state,
            fmt_f64(e.consistency)
        )?;
    }
    out.flush()?;
    Ok(())
}
