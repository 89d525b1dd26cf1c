//! Manifest-driven batch runs.
//!
//! A manifest is JSON Lines, one `{id, image_path, instruction}` per line.
//! Relative image paths resolve against the manifest's directory. Blank lines
//! are skipped.

use std::collections::BTreeSet;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use super::pipeline::write_atomic;
use super::{EditOptions, ErrorCode, JobState, Phase, Pipeline};
use crate::model::{validate_id, validate_instruction};

pub const SUMMARY_FILE: &str = "summary.jsonl";

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("manifest line {line}: {detail}")]
    ManifestMalformed { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub instruction: String,
}

pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<ManifestRecord>, BatchError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |detail: String| BatchError::ManifestMalformed { line: line_no, detail };
        let mut rec: ManifestRecord = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        validate_id(&rec.id).map_err(|e| malformed(e.to_string()))?;
        rec.instruction = validate_instruction(&rec.instruction).map_err(|e| malformed(e.to_string()))?;
        if !seen.insert(rec.id.clone()) {
            return Err(malformed(format!("duplicate id {:?}", rec.id)));
        }
        if rec.image_path.is_relative() {
            rec.image_path = base_dir.join(&rec.image_path);
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub id: String,
    pub phase: Phase,
    pub error_code: Option<ErrorCode>,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    /// In manifest order.
    pub records: Vec<BatchRecord>,
}

impl BatchSummary {
    pub fn done(&self) -> usize {
        self.records.iter().filter(|r| r.phase == Phase::Done).count()
    }

    pub fn success_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.done() as f64 / self.records.len() as f64
    }
}

async fn run_record(pipeline: &Pipeline, rec: &ManifestRecord) -> io::Result<JobState> {
    let options = EditOptions::default();
    match tokio::fs::read(&rec.image_path).await {
        Ok(bytes) => pipeline.execute_encoded(&rec.id, &bytes, &rec.instruction, &options, &()).await,
        Err(e) => {
            // an unreadable input is this record's failure, not the batch's
            std::fs::create_dir_all(pipeline.job_dir(&rec.id))?;
            let mut state = JobState::new(&rec.id);
            state.fail(
                ErrorCode::MalformedImage,
                format!("cannot read {}: {e}", rec.image_path.display()),
            );
            Ok(state)
        }
    }
}

/// Runs every record with at most `parallelism` jobs in flight, then writes
/// `summary.jsonl` into the pipeline's output directory.
pub async fn run_batch(pipeline: &Pipeline, manifest: &Path, parallelism: usize) -> Result<BatchSummary, BatchError> {
    let text = tokio::fs::read_to_string(manifest).await?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let records = parse_manifest(&text, base)?;
    std::fs::create_dir_all(&pipeline.out_dir)?;

    let permits = Arc::new(Semaphore::new(parallelism.max(1)));
    let mut tasks = tokio::task::JoinSet::new();
    for (index, rec) in records.into_iter().enumerate() {
        let pipeline = pipeline.clone();
        let permits = permits.clone();
        tasks.spawn(async move {
            let _permit = permits.acquire_owned().await.expect("semaphore never closes");
            let started = Instant::now();
            let state = run_record(&pipeline, &rec).await?;
            Ok::<_, io::Error>((
                index,
                BatchRecord {
                    id: rec.id,
                    phase: state.phase,
                    error_code: state.error_code(),
                    wall_time_ms: started.elapsed().as_millis() as u64,
                },
            ))
        });
    }
    let mut done = Vec::new();
    while let Some(joined) = tasks.join_next().await {
        done.push(joined.map_err(io::Error::other)??);
    }
    done.sort_by_key(|(i, _)| *i);
    let summary = BatchSummary {
        records: done.into_iter().map(|(_, r)| r).collect(),
    };
    let mut lines = Vec::new();
    for r in &summary.records {
        serde_json::to_writer(&mut lines, r).expect("records serialize");
        lines.push(b'\n');
    }
    write_atomic(&pipeline.out_dir.join(SUMMARY_FILE), &lines)?;
    Ok(summary)
}
