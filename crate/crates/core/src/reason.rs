//! Step 1: per-trajectory failure-reason inference. Builds the structured
//! CoT prompt over a downsampled window, calls the multimodal backend, and
//! parses the two-field `trajectory:` / `failure_reason:` response.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{DecodingParams, Gateway, MessagePart, ModelRequest, PromptRole};
use crate::ingest::{downsample_window, encode_frames, FrameEncoding, ObservationWindow, WindowSpec};
use crate::model::{DomainProfile, FailureDataset, FailureReason, Label};
use crate::prompts::TemplateSet;
use crate::util::{parallel_map, sha256_hex};

/// Per-profile window spec overrides; unset profiles use the defaults.
#[derive(Debug, Clone, Default)]
pub struct WindowSpecMap {
    overrides: Vec<(DomainProfile, WindowSpec)>,
}

impl WindowSpecMap {
    pub fn set(&mut self, profile: DomainProfile, spec: WindowSpec) {
        self.overrides.retain(|(p, _)| *p != profile);
        self.overrides.push((profile, spec));
    }

    pub fn resolve(&self, profile: &DomainProfile) -> WindowSpec {
        self.overrides
            .iter()
            .find(|(p, _)| p == profile)
            .map(|(_, s)| s.clone())
            .unwrap_or_else(|| WindowSpec::default_for(profile))
    }
}

/// Everything the Step-1 stage needs besides the dataset.
pub struct ReasonStage<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateSet,
    pub model_id: String,
    pub decoding: DecodingParams,
    pub window_specs: WindowSpecMap,
    pub encoding: FrameEncoding,
    pub jobs: usize,
}

/// One skipped trajectory in a batch stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub trajectory_id: String,
    pub stage: String,
    pub code: String,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct InferenceOutcome {
    /// One reason per successfully parsed trajectory, in dataset order.
    pub reasons: Vec<FailureReason>,
    pub skipped: Vec<SkipEntry>,
}

/// JSONL record for `reasons.jsonl`: raw model text is kept in memory for
/// audit but only its digest is persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonRecord {
    pub trajectory_id: String,
    pub trajectory_description: String,
    pub failure_reason: String,
    pub raw_response_digest: String,
}

impl ReasonRecord {
    pub fn from_reason(reason: &FailureReason) -> Self {
        ReasonRecord {
            trajectory_id: reason.trajectory_id.clone(),
            trajectory_description: reason.trajectory_description.clone(),
            failure_reason: reason.failure_reason.clone(),
            raw_response_digest: sha256_hex(reason.raw_response.as_bytes()),
        }
    }

    /// Rehydrate a [`FailureReason`] from the artifact; raw text is gone, only
    /// its digest survives the round trip.
    pub fn into_reason(self) -> FailureReason {
        FailureReason {
            trajectory_id: self.trajectory_id,
            trajectory_description: self.trajectory_description,
            failure_reason: self.failure_reason,
            raw_response: String::new(),
        }
    }
}

/// Build the Step-1 request: template text first, then every frame in
/// timestamp order.
pub fn build_reason_prompt(
    window: &ObservationWindow,
    profile: &DomainProfile,
    templates: &TemplateSet,
    model_id: &str,
    decoding: DecodingParams,
    encoding: FrameEncoding,
) -> Result<ModelRequest> {
    if window.frames.is_empty() {
        return Err(Error::Precondition(format!(
            "window for trajectory {} is empty",
            window.trajectory_id
        )));
    }
    let template = templates.resolve(profile)?;
    let mut messages = Vec::with_capacity(window.frames.len() + 1);
    messages.push(MessagePart::Text(template));
    for payload in encode_frames(window, encoding)? {
        messages.push(MessagePart::Image(payload));
    }
    ModelRequest::new(PromptRole::ReasonInference, model_id, messages, decoding)
}

/// Parsed Step-1 response fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReason {
    pub trajectory_description: String,
    pub failure_reason: String,
    /// Set when the response carried no `trajectory:` key.
    pub missing_description: bool,
}

fn key_line_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        // bullets / numbering / markdown bold around a recognized key, then ':'
        Regex::new(
            r"(?i)^\s*(?:[-*>•]+\s*)?(?:\d+[.)]\s*)?(?:\*\*|__)?\s*(trajectory|failure[_ ]?reason)\s*(?:\*\*|__)?\s*:\s*(?:\*\*|__)?\s*(.*)$",
        )
        .expect("static regex compiles")
    })
}

fn strip_outer_fences(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let rest = rest.split_once('\n').map(|(_, tail)| tail).unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

/// Total parser for the two-field format: keys are case-insensitive, bullets
/// and markdown bold are tolerated, and values run until the next recognized
/// key or end of text.
pub fn parse_reason_response(text: &str) -> Result<ParsedReason> {
    #[derive(PartialEq, Clone, Copy)]
    enum Slot {
        Description,
        Reason,
        None,
    }
    let mut description: Option<Vec<String>> = None;
    let mut reason: Option<Vec<String>> = None;
    let mut current = Slot::None;

    for line in strip_outer_fences(text).lines() {
        if let Some(caps) = key_line_regex().captures(line) {
            let key = caps[1].to_lowercase().replace([' ', '_'], "");
            let value = caps[2].trim().to_string();
            let (slot, kind) = if key == "trajectory" {
                (&mut description, Slot::Description)
            } else {
                (&mut reason, Slot::Reason)
            };
            if slot.is_some() {
                current = Slot::None; // repeated key: keep the first, stop accumulating
            } else {
                *slot = Some(vec![value]);
                current = kind;
            }
        } else {
            let acc = match current {
                Slot::Description => description.as_mut(),
                Slot::Reason => reason.as_mut(),
                Slot::None => None,
            };
            if let Some(acc) = acc {
                acc.push(line.trim().to_string());
            }
        }
    }

    let join = |parts: Vec<String>| parts.join("\n").trim().to_string();
    let reason = join(reason.ok_or_else(|| {
        Error::ReasonParse("no failure_reason key in response".into())
    })?);
    if reason.is_empty() {
        return Err(Error::ReasonEmpty("failure_reason value is empty".into()));
    }
    let (trajectory_description, missing_description) = match description {
        Some(parts) => (join(parts), false),
        None => (String::new(), true),
    };
    Ok(ParsedReason { trajectory_description, failure_reason: reason, missing_description })
}

/// Format fields back into the canonical two-line response.
pub fn format_reason_response(description: &str, reason: &str) -> String {
    format!("trajectory: {description}\nfailure_reason: {reason}")
}

/// Run Step 1 over a failure dataset. Per-trajectory failures are skipped and
/// logged, never fatal; only a fully empty outcome errors.
pub fn infer_reasons(dataset: &FailureDataset, stage: &ReasonStage<'_>) -> Result<InferenceOutcome> {
    if dataset.trajectories.is_empty() {
        return Err(Error::Precondition("dataset has no trajectories".into()));
    }
    if let Some(bad) = dataset.trajectories.iter().find(|t| t.label != Label::Failure) {
        return Err(Error::Precondition(format!(
            "trajectory {} has label {:?}; reason inference expects failure trajectories only",
            bad.id, bad.label
        )));
    }

    let results = parallel_map(&dataset.trajectories, stage.jobs, |traj| {
        let spec = stage.window_specs.resolve(&traj.domain_profile);
        let window = match downsample_window(traj, &spec) {
            Ok(w) => w,
            Err(e) => return Err(("downsample", e)),
        };
        let request = match build_reason_prompt(
            &window,
            &traj.domain_profile,
            stage.templates,
            &stage.model_id,
            stage.decoding.clone(),
            stage.encoding,
        ) {
            Ok(r) => r,
            Err(e) => return Err(("prompt", e)),
        };
        let response = match stage.gateway.cached_complete(&request) {
            Ok(r) => r,
            Err(e) => return Err(("backend", e)),
        };
        match parse_reason_response(&response.text) {
            Ok(parsed) => {
                if parsed.missing_description {
                    log::warn!("trajectory {}: response has no trajectory description", traj.id);
                }
                Ok(FailureReason {
                    trajectory_id: traj.id.clone(),
                    trajectory_description: parsed.trajectory_description,
                    failure_reason: parsed.failure_reason,
                    raw_response: response.text,
                })
            }
            Err(e) => Err(("parse", e)),
        }
    });

    let mut outcome = InferenceOutcome { reasons: Vec::new(), skipped: Vec::new() };
    for (traj, result) in dataset.trajectories.iter().zip(results) {
        match result {
            Ok(reason) => outcome.reasons.push(reason),
            Err((stage_name, err)) => outcome.skipped.push(SkipEntry {
                trajectory_id: traj.id.clone(),
                stage: stage_name.to_string(),
                code: err.code().to_string(),
                detail: err.to_string(),
            }),
        }
    }
    if outcome.reasons.is_empty() {
        return Err(Error::SkippedAll(format!(
            "all {} trajectories failed reason inference",
            dataset.trajectories.len()
        )));
    }
    Ok(outcome)
}
