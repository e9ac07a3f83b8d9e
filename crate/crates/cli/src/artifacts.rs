//! Readers and writers for the stage-handoff artifact files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use failsem_core::assign::{AssignmentNote, AssignmentResult};
use failsem_core::error::{Error, Result};
use failsem_core::model::{AssignmentMode, ClusterAssignment, ClusterSet, FailureReason};
use failsem_core::reason::ReasonRecord;
use failsem_core::util::{read_jsonl, write_jsonl};

pub fn write_reasons(path: &Path, reasons: &[FailureReason]) -> Result<()> {
    let records: Vec<ReasonRecord> = reasons.iter().map(ReasonRecord::from_reason).collect();
    write_jsonl(path, &records)
}

pub fn read_reasons(path: &Path) -> Result<Vec<FailureReason>> {
    if !path.exists() {
        return Err(Error::IoMissing {
            path: path.to_path_buf(),
            detail: "run `failsem infer` first".into(),
        });
    }
    let records: Vec<ReasonRecord> = read_jsonl(path)?;
    Ok(records.into_iter().map(ReasonRecord::into_reason).collect())
}

pub fn write_cluster_set(path: &Path, cs: &ClusterSet) -> Result<()> {
    failsem_core::util::write_json_pretty(path, cs)
}

pub fn read_cluster_set(path: &Path) -> Result<ClusterSet> {
    if !path.exists() {
        return Err(Error::IoMissing {
            path: path.to_path_buf(),
            detail: "run `failsem discover` first".into(),
        });
    }
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum AssignmentLine {
    Meta {
        cluster_set_ref: String,
        mode: AssignmentMode,
        other_count: usize,
        #[serde(default)]
        notes: Vec<AssignmentNote>,
    },
    Assignment(ClusterAssignment),
}

pub fn write_assignment_result(path: &Path, result: &AssignmentResult) -> Result<()> {
    let mut lines = Vec::with_capacity(result.assignments.len() + 1);
    lines.push(AssignmentLine::Meta {
        cluster_set_ref: result.cluster_set_ref.clone(),
        mode: result.mode,
        other_count: result.other_count,
        notes: result.notes.clone(),
    });
    lines.extend(result.assignments.iter().cloned().map(AssignmentLine::Assignment));
    write_jsonl(path, &lines)
}

pub fn read_assignment_result(path: &Path) -> Result<AssignmentResult> {
    if !path.exists() {
        return Err(Error::IoMissing {
            path: path.to_path_buf(),
            detail: "run `failsem assign` first".into(),
        });
    }
    let lines: Vec<AssignmentLine> = read_jsonl(path)?;
    let mut result: Option<AssignmentResult> = None;
    let mut assignments = Vec::new();
    for line in lines {
        match line {
            AssignmentLine::Meta { cluster_set_ref, mode, other_count, notes } => {
                result = Some(AssignmentResult {
                    cluster_set_ref,
                    assignments: Vec::new(),
                    other_count,
                    mode,
                    notes,
                });
            }
            AssignmentLine::Assignment(a) => assignments.push(a),
        }
    }
    let mut result = result.ok_or_else(|| {
        Error::ManifestInvalid(format!("{}: missing meta line", path.display()))
    })?;
    result.assignments = assignments;
    Ok(result)
}
