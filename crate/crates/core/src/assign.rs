//! Step 3: map each failure reason to discovered cluster(s) or "Other", and
//! reconcile reported vs. assigned cluster frequencies.
//!
//! Matching is exact-after-canonicalization, never fuzzy: silent near-matches
//! would corrupt the frequency statistics, so near-misses surface as warnings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{DecodingParams, Gateway, MessagePart, ModelRequest, PromptRole};
use crate::model::{
    canonicalize_label, normalize_frequency, validate_cluster_set, AssignmentMode, CanonicalKey,
    ClusterAssignment, ClusterSet, DomainProfile, FailureReason, OTHER_LABEL,
};
use crate::prompts::{assignment_prompt, render_cluster_list};

/// Non-fatal per-reason incident during batch assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentNote {
    pub trajectory_id: String,
    pub code: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    /// Digest of the cluster-set artifact these assignments refer to.
    pub cluster_set_ref: String,
    pub assignments: Vec<ClusterAssignment>,
    pub other_count: usize,
    pub mode: AssignmentMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<AssignmentNote>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconciliationRow {
    pub canonical_key: CanonicalKey,
    pub reported_pct: f64,
    pub assigned_pct_single: f64,
    pub assigned_pct_multi: f64,
}

/// Reported (discovery-time) vs. assigned cluster frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconciliationReport {
    pub rows: Vec<ReconciliationRow>,
    /// Share of single-mode assignments that landed in the outlier bucket.
    pub other_pct: f64,
}

fn require_valid(cs: &ClusterSet) -> Result<()> {
    let report = validate_cluster_set(cs);
    if !report.is_valid() {
        return Err(Error::Precondition(format!(
            "cluster set fails validation: {}",
            report.violations.iter().map(|v| v.detail.clone()).collect::<Vec<_>>().join("; ")
        )));
    }
    Ok(())
}

/// Build the assignment request for one reason against a valid cluster set.
pub fn build_assignment_prompt(
    reason: &FailureReason,
    cs: &ClusterSet,
    mode: AssignmentMode,
    profile: &DomainProfile,
    model_id: &str,
    decoding: DecodingParams,
) -> Result<ModelRequest> {
    require_valid(cs)?;
    let prompt = assignment_prompt(
        profile,
        &render_cluster_list(cs),
        &reason.failure_reason,
        mode == AssignmentMode::Single,
    );
    ModelRequest::new(PromptRole::Assignment, model_id, vec![MessagePart::Text(prompt)], decoding)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAssignment {
    /// Matched cluster keys in response order; empty means Other.
    pub labels: Vec<CanonicalKey>,
    pub warnings: Vec<String>,
}

fn strip_list_markers(segment: &str) -> &str {
    let mut s = segment.trim();
    s = s.trim_start_matches(['-', '*', '\u{2022}', '>']).trim_start();
    if let Some((head, tail)) = s.split_once(['.', ')']) {
        if !head.is_empty() && head.chars().all(|c| c.is_ascii_digit()) {
            s = tail.trim_start();
        }
    }
    s.trim_matches(['*', '_', '"']).trim()
}

/// Parse an assignment response against a cluster set.
///
/// Segments split on newlines and semicolons are matched whole first (cluster
/// names may contain commas), then on commas; tokens match by exact
/// canonical key, "other" selects the outlier bucket, and anything else is
/// dropped with an `ASSIGN_FUZZY` warning. An empty result means Other.
pub fn parse_assignment(text: &str, cs: &ClusterSet, mode: AssignmentMode) -> ParsedAssignment {
    let keys: Vec<CanonicalKey> = cs
        .clusters
        .iter()
        .filter_map(|c| c.canonical_key().ok())
        .collect();
    let mut labels: Vec<CanonicalKey> = Vec::new();
    let mut warnings = Vec::new();
    let push_label = |key: CanonicalKey, labels: &mut Vec<CanonicalKey>| {
        if !labels.contains(&key) {
            labels.push(key);
        }
    };

    for segment in text.split(['\n', ';']) {
        let cleaned = strip_list_markers(segment);
        if cleaned.is_empty() {
            continue;
        }
        let Ok(whole) = canonicalize_label(cleaned) else { continue };
        if whole.as_str() == OTHER_LABEL {
            continue; // explicit outlier token; labels stay as they are
        }
        if keys.contains(&whole) {
            push_label(whole, &mut labels);
            continue;
        }
        // fall back to comma tokens within the segment
        for token in cleaned.split(',') {
            let token = strip_list_markers(token);
            if token.is_empty() {
                continue;
            }
            let Ok(key) = canonicalize_label(token) else { continue };
            if key.as_str() == OTHER_LABEL {
                continue;
            }
            if keys.contains(&key) {
                push_label(key, &mut labels);
            } else {
                warnings.push(format!("ASSIGN_FUZZY: unmatched token {token:?}"));
            }
        }
    }

    if mode == AssignmentMode::Single {
        labels.truncate(1);
    }
    ParsedAssignment { labels, warnings }
}

/// Assign every reason; backend failures yield Other with an error note.
#[allow(clippy::too_many_arguments)]
pub fn assign_all(
    reasons: &[FailureReason],
    cs: &ClusterSet,
    gateway: &Gateway,
    mode: AssignmentMode,
    profile: &DomainProfile,
    model_id: &str,
    decoding: DecodingParams,
    jobs: usize,
) -> Result<AssignmentResult> {
    if reasons.is_empty() {
        return Err(Error::Precondition("no reasons to assign".into()));
    }
    require_valid(cs)?;
    let outcomes = crate::util::parallel_map(reasons, jobs, |reason| {
        let request =
            build_assignment_prompt(reason, cs, mode, profile, model_id, decoding.clone())?;
        let response = gateway.cached_complete(&request)?;
        Ok::<_, Error>(parse_assignment(&response.text, cs, mode))
    });

    let mut result = AssignmentResult {
        cluster_set_ref: cs.digest(),
        assignments: Vec::with_capacity(reasons.len()),
        other_count: 0,
        mode,
        notes: Vec::new(),
    };
    let mut backend_failures = 0usize;
    for (reason, outcome) in reasons.iter().zip(outcomes) {
        let labels = match outcome {
            Ok(parsed) => {
                for warning in parsed.warnings {
                    result.notes.push(AssignmentNote {
                        trajectory_id: reason.trajectory_id.clone(),
                        code: "ASSIGN_FUZZY".into(),
                        detail: warning,
                    });
                }
                parsed.labels
            }
            Err(err) => {
                backend_failures += 1;
                result.notes.push(AssignmentNote {
                    trajectory_id: reason.trajectory_id.clone(),
                    code: err.code().into(),
                    detail: err.to_string(),
                });
                Vec::new()
            }
        };
        if labels.is_empty() {
            result.other_count += 1;
        }
        result.assignments.push(ClusterAssignment {
            trajectory_id: reason.trajectory_id.clone(),
            labels,
            mode,
        });
    }
    if backend_failures == reasons.len() {
        return Err(Error::AssignAllFailed(format!(
            "all {} assignment calls failed",
            reasons.len()
        )));
    }
    Ok(result)
}

/// Compare discovery-time reported frequencies with assignment shares.
pub fn reconcile_frequencies(
    cs: &ClusterSet,
    single: &AssignmentResult,
    multi: &AssignmentResult,
    total: u64,
) -> Result<ReconciliationReport> {
    if single.mode != AssignmentMode::Single || multi.mode != AssignmentMode::Multi {
        return Err(Error::Precondition("reconcile needs one single and one multi result".into()));
    }
    let digest = cs.digest();
    if single.cluster_set_ref != digest || multi.cluster_set_ref != digest {
        return Err(Error::ReconcileMismatch(
            "assignment results reference a different cluster set".into(),
        ));
    }
    let ids = |r: &AssignmentResult| {
        r.assignments.iter().map(|a| a.trajectory_id.clone()).collect::<std::collections::BTreeSet<_>>()
    };
    if ids(single) != ids(multi) {
        return Err(Error::ReconcileMismatch("trajectory id sets differ".into()));
    }
    if total as usize != single.assignments.len() {
        return Err(Error::ReconcileMismatch(format!(
            "total {} does not match {} assignments",
            total,
            single.assignments.len()
        )));
    }

    let share = |r: &AssignmentResult, key: &CanonicalKey| {
        let count = r.assignments.iter().filter(|a| a.labels.contains(key)).count();
        100.0 * count as f64 / total as f64
    };
    let mut rows = Vec::with_capacity(cs.clusters.len());
    for cluster in &cs.clusters {
        let key = cluster.canonical_key()?;
        rows.push(ReconciliationRow {
            reported_pct: normalize_frequency(&cluster.frequency, total)?,
            assigned_pct_single: share(single, &key),
            assigned_pct_multi: share(multi, &key),
            canonical_key: key,
        });
    }
    let other_pct = 100.0 * single.other_count as f64 / total as f64;
    Ok(ReconciliationReport { rows, other_pct })
}

/// Plot-ready CSV: cluster, reported, assigned_single, assigned_multi.
pub fn reconciliation_csv(report: &ReconciliationReport) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["cluster", "reported_pct", "assigned_pct_single", "assigned_pct_multi"])
        .map_err(|e| Error::ConfigInvalid(format!("csv: {e}")))?;
    for row in &report.rows {
        writer
            .write_record([
                row.canonical_key.as_str(),
                &format!("{:.3}", row.reported_pct),
                &format!("{:.3}", row.assigned_pct_single),
                &format!("{:.3}", row.assigned_pct_multi),
            ])
            .map_err(|e| Error::ConfigInvalid(format!("csv: {e}")))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::ConfigInvalid(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::ConfigInvalid(format!("csv: {e}")))
}
