//! Trajectory-level detection scoring, the confusion-metric suite, lead
//! detection time, report emission, and the targeted-collection plan.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AssignmentMode, CanonicalKey, ClusterSet, Label};
use crate::monitor::DetectionTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub tpr: f64,
    pub tnr: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
}

/// Rates from confusion counts. The complements are computed as exact
/// differences so `tpr + fnr == 100` and `tnr + fpr == 100` hold identically.
pub fn compute_metrics(counts: ConfusionCounts) -> Result<EvalMetrics> {
    let positives = counts.tp + counts.fn_;
    let negatives = counts.tn + counts.fp;
    if positives < 1 || negatives < 1 {
        return Err(Error::MetricUndefined(format!(
            "need at least one positive and one negative (tp+fn={positives}, tn+fp={negatives})"
        )));
    }
    let tpr = 100.0 * counts.tp as f64 / positives as f64;
    let tnr = 100.0 * counts.tn as f64 / negatives as f64;
    Ok(EvalMetrics {
        tpr,
        tnr,
        fpr: 100.0 - tnr,
        fnr: 100.0 - tpr,
        f1: 100.0 * 2.0 * counts.tp as f64 / (2.0 * counts.tp as f64 + counts.fp as f64 + counts.fn_ as f64),
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    TrueNegative,
    FalseNegative,
}

/// Label information the evaluator needs per trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLabel {
    pub label: Label,
    pub failure_time_s: Option<f64>,
}

/// Alarm summary of one monitored (or externally scored) trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub trajectory_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alarm_time_s: Option<f64>,
}

impl From<&DetectionTrace> for DetectionOutcome {
    fn from(trace: &DetectionTrace) -> Self {
        DetectionOutcome {
            trajectory_id: trace.trajectory_id.clone(),
            alarm_time_s: trace.alarm.as_ref().map(|a| a.raised_at_time_s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTiming {
    pub trajectory_id: String,
    /// failure_time - alarm_time; positive means the alarm led the failure.
    pub lead_s: f64,
    /// Alarm fired at or after the failure time.
    pub late: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionTiming {
    pub per_trajectory: Vec<TrajectoryTiming>,
    /// Mean lead over true positives only; absent without any.
    pub mean_lead_s: Option<f64>,
}

/// Classify one trajectory's detection outcome.
pub fn score_trajectory(
    outcome: &DetectionOutcome,
    label: Label,
    failure_time_s: Option<f64>,
) -> Result<(Outcome, Option<TrajectoryTiming>)> {
    match label {
        Label::Unknown => Err(Error::EvalUnlabeled(outcome.trajectory_id.clone())),
        Label::Failure => {
            let failure_time = failure_time_s.ok_or_else(|| {
                Error::Precondition(format!("{}: failure label without failure_time_s", outcome.trajectory_id))
            })?;
            match outcome.alarm_time_s {
                Some(alarm_time) => {
                    let lead_s = failure_time - alarm_time;
                    Ok((
                        Outcome::TruePositive,
                        Some(TrajectoryTiming {
                            trajectory_id: outcome.trajectory_id.clone(),
                            lead_s,
                            late: lead_s <= 0.0,
                        }),
                    ))
                }
                None => Ok((Outcome::FalseNegative, None)),
            }
        }
        Label::Success => match outcome.alarm_time_s {
            Some(_) => Ok((Outcome::FalsePositive, None)),
            None => Ok((Outcome::TrueNegative, None)),
        },
    }
}

/// Lead detection time of a trace's alarm relative to the failure.
pub fn lead_time(trace: &DetectionTrace, failure_time_s: f64) -> Result<f64> {
    let alarm = trace
        .alarm
        .as_ref()
        .ok_or_else(|| Error::TimingUndefined(format!("{} has no alarm", trace.trajectory_id)))?;
    Ok(failure_time_s - alarm.raised_at_time_s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub method: String,
    pub metrics: EvalMetrics,
    pub timing: DetectionTiming,
}

/// Aggregate trajectory outcomes into metrics; mean lead over true positives.
pub fn evaluate_split(
    outcomes: &[DetectionOutcome],
    labels: &BTreeMap<String, TrajectoryLabel>,
    method: &str,
) -> Result<EvalSummary> {
    let mut counts = ConfusionCounts { tp: 0, fp: 0, tn: 0, fn_: 0 };
    let mut timing = DetectionTiming::default();
    for outcome in outcomes {
        let label = labels
            .get(&outcome.trajectory_id)
            .ok_or_else(|| Error::EvalUnlabeled(outcome.trajectory_id.clone()))?;
        let (class, lead) = score_trajectory(outcome, label.label, label.failure_time_s)?;
        match class {
            Outcome::TruePositive => counts.tp += 1,
            Outcome::FalsePositive => counts.fp += 1,
            Outcome::TrueNegative => counts.tn += 1,
            Outcome::FalseNegative => counts.fn_ += 1,
        }
        if let Some(lead) = lead {
            timing.per_trajectory.push(lead);
        }
    }
    if !timing.per_trajectory.is_empty() {
        timing.mean_lead_s = Some(
            timing.per_trajectory.iter().map(|t| t.lead_s).sum::<f64>()
                / timing.per_trajectory.len() as f64,
        );
    }
    Ok(EvalSummary { method: method.to_string(), metrics: compute_metrics(counts)?, timing })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    /// Driving convention.
    Millis,
    /// Indoor convention.
    Seconds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub split: String,
    pub metrics: EvalMetrics,
    pub mean_lead_s: Option<f64>,
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

fn fmt_metric(v: f64) -> String {
    format!("{:.1}", v)
}

/// Lead-time display: milliseconds at one decimal with a trailing `.0`
/// stripped (`610`, `473.3`), seconds at two decimals (`1.21`).
fn fmt_time(unit: TimeUnit, lead_s: Option<f64>) -> String {
    let Some(lead_s) = lead_s else {
        return "-".to_string();
    };
    match unit {
        TimeUnit::Millis => {
            let text = format!("{:.1}", lead_s * 1000.0);
            text.strip_suffix(".0").unwrap_or(&text).to_string()
        }
        TimeUnit::Seconds => format!("{:.2}", lead_s),
    }
}

/// Markdown report: one table per split with the Table-style columns.
pub fn render_markdown(rows: &[ReportRow], unit: TimeUnit) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Precondition("report needs at least one row".into()));
    }
    let mut splits: Vec<&str> = Vec::new();
    for row in rows {
        if !splits.contains(&row.split.as_str()) {
            splits.push(&row.split);
        }
    }
    let mut out = String::from("# Failure Detection Report\n");
    for split in splits {
        out.push_str(&format!("\n## {split}\n\n"));
        out.push_str("| Method | TPR | TNR | FPR | FNR | F1 | Time |\n");
        out.push_str("|---|---|---|---|---|---|---|\n");
        for row in rows.iter().filter(|r| r.split == split) {
            let m = &row.metrics;
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} |\n",
                row.method,
                fmt_metric(m.tpr),
                fmt_metric(m.tnr),
                fmt_metric(m.fpr),
                fmt_metric(m.fnr),
                fmt_metric(m.f1),
                fmt_time(unit, row.mean_lead_s),
            ));
        }
    }
    Ok(out)
}

pub fn render_csv(rows: &[ReportRow], unit: TimeUnit) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Precondition("report needs at least one row".into()));
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    let time_header = match unit {
        TimeUnit::Millis => "time_ms",
        TimeUnit::Seconds => "time_s",
    };
    writer
        .write_record(["method", "split", "tpr", "tnr", "fpr", "fnr", "f1", time_header])
        .map_err(|e| Error::ConfigInvalid(format!("csv: {e}")))?;
    for row in rows {
        let m = &row.metrics;
        writer
            .write_record([
                row.method.as_str(),
                row.split.as_str(),
                &fmt_metric(m.tpr),
                &fmt_metric(m.tnr),
                &fmt_metric(m.fpr),
                &fmt_metric(m.fnr),
                &fmt_metric(m.f1),
                &fmt_time(unit, row.mean_lead_s),
            ])
            .map_err(|e| Error::ConfigInvalid(format!("csv: {e}")))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::ConfigInvalid(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::ConfigInvalid(format!("csv: {e}")))
}

/// Row as serialized into `report.json`: metrics rounded to one decimal so
/// emission is lossless at display precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundedRow {
    pub method: String,
    pub split: String,
    pub tpr: f64,
    pub tnr: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub f1: f64,
    pub time_unit: TimeUnit,
    pub time: Option<String>,
    pub counts: ConfusionCounts,
}

pub fn render_json(rows: &[ReportRow], unit: TimeUnit) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Precondition("report needs at least one row".into()));
    }
    let rounded: Vec<RoundedRow> = rows
        .iter()
        .map(|row| RoundedRow {
            method: row.method.clone(),
            split: row.split.clone(),
            tpr: round1(row.metrics.tpr),
            tnr: round1(row.metrics.tnr),
            fpr: round1(row.metrics.fpr),
            fnr: round1(row.metrics.fnr),
            f1: round1(row.metrics.f1),
            time_unit: unit,
            time: row.mean_lead_s.map(|_| fmt_time(unit, row.mean_lead_s)),
            counts: row.metrics.counts,
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&rounded)?;
    text.push('\n');
    Ok(text)
}

pub fn parse_json_report(text: &str) -> Result<Vec<RoundedRow>> {
    Ok(serde_json::from_str(text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub canonical_key: CanonicalKey,
    pub keywords: Vec<String>,
    pub assigned_pct: f64,
    pub suggested_quota: u64,
}

/// Targeted data-collection plan: per-cluster quotas proportional to
/// single-label assignment shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionPlan {
    pub entries: Vec<PlanEntry>,
    pub strategy: String,
}

/// Largest-remainder rounding of `budget` across percent shares. Remainder
/// ties go to the larger share, then to the lexicographically smaller key.
pub fn largest_remainder_quotas(shares: &[(CanonicalKey, f64)], budget: u64) -> Vec<u64> {
    let total: f64 = shares.iter().map(|(_, p)| *p).sum();
    if total <= 0.0 || shares.is_empty() {
        return vec![0; shares.len()];
    }
    let exact: Vec<f64> = shares.iter().map(|(_, p)| budget as f64 * p / total).collect();
    let mut quotas: Vec<u64> = exact.iter().map(|e| e.floor() as u64).collect();
    let assigned: u64 = quotas.iter().sum();
    let mut leftover = budget.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let rem_a = exact[a] - exact[a].floor();
        let rem_b = exact[b] - exact[b].floor();
        rem_b
            .partial_cmp(&rem_a)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| shares[b].1.partial_cmp(&shares[a].1).unwrap_or(std::cmp::Ordering::Equal))
            .then_with(|| shares[a].0.cmp(&shares[b].0))
    });
    for &i in &order {
        if leftover == 0 {
            break;
        }
        quotas[i] += 1;
        leftover -= 1;
    }
    quotas
}

/// Build the collection plan from single-mode assignment shares; the Other
/// bucket is excluded, and quotas always sum to the budget (all zero when
/// nothing was assigned).
pub fn build_collection_plan(
    cs: &ClusterSet,
    assignment: &crate::assign::AssignmentResult,
    budget: u64,
) -> Result<CollectionPlan> {
    if assignment.mode != AssignmentMode::Single {
        return Err(Error::Precondition("collection plan uses single-mode assignments".into()));
    }
    let n = assignment.assignments.len().max(1) as f64;
    let mut shares: Vec<(CanonicalKey, f64)> = Vec::with_capacity(cs.clusters.len());
    for cluster in &cs.clusters {
        let key = cluster.canonical_key()?;
        let count =
            assignment.assignments.iter().filter(|a| a.labels.contains(&key)).count();
        shares.push((key, 100.0 * count as f64 / n));
    }
    let quotas = largest_remainder_quotas(&shares, budget);
    let mut entries: Vec<PlanEntry> = cs
        .clusters
        .iter()
        .zip(shares.iter().zip(quotas))
        .map(|(cluster, ((key, pct), quota))| PlanEntry {
            canonical_key: key.clone(),
            keywords: cluster.keywords.clone(),
            assigned_pct: *pct,
            suggested_quota: quota,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.assigned_pct
            .partial_cmp(&a.assigned_pct)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.canonical_key.cmp(&b.canonical_key))
    });
    Ok(CollectionPlan {
        entries,
        strategy: "collect expert data per cluster proportionally to assigned frequency; \
                   script scenarios around each cluster's keywords"
            .to_string(),
    })
}
