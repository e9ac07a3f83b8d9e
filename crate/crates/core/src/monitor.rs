//! Cluster-informed runtime failure detection: sliding-window prompting, a
//! strict verdict grammar, persistence gating before the alarm, and a
//! safeguard trigger hook.
//!
//! A monitor state is a single-stream automaton: not safe for concurrent
//! `step` calls on one instance; run many instances concurrently instead.

use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{DecodingParams, Gateway, MessagePart, ModelRequest, PromptRole};
use crate::ingest::{downsample_window, encode_observations, FrameEncoding, WindowSpec};
use crate::model::{
    canonicalize_label, validate_cluster_set, CanonicalKey, ClusterSet, DomainProfile, Label,
    MonitorVerdict, Observation, Trajectory,
};
use crate::prompts::{monitor_prompt_driving, monitor_prompt_indoor, render_cluster_list};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterContext {
    WithClusters,
    /// Ablation: the prompt omits the cluster list and the matching step.
    NoContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub window_frames: usize,
    pub frame_period_s: f64,
    /// Consecutive non-safe verdicts required before an alarm fires.
    pub persistence_n: u32,
    pub cluster_context: ClusterContext,
    pub domain_profile: DomainProfile,
    /// Seconds trimmed before failure_time when building evaluation streams.
    pub end_offset_s: f64,
    /// Stated in the indoor prompt's operational context.
    pub max_speed_mps: f64,
}

impl MonitorConfig {
    /// Driving monitors per-frame at 3 fps ending 1 s before impact; indoor
    /// monitors every 0.5 s with the three-consecutive-frames rule.
    pub fn default_for(profile: &DomainProfile) -> Self {
        match profile {
            DomainProfile::Indoor => MonitorConfig {
                window_frames: 8,
                frame_period_s: 0.5,
                persistence_n: 3,
                cluster_context: ClusterContext::WithClusters,
                domain_profile: profile.clone(),
                end_offset_s: 0.0,
                max_speed_mps: 0.6,
            },
            _ => MonitorConfig {
                window_frames: 30,
                frame_period_s: 1.0 / 3.0,
                persistence_n: 1,
                cluster_context: ClusterContext::WithClusters,
                domain_profile: profile.clone(),
                end_offset_s: 1.0,
                max_speed_mps: 0.6,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_frames < 1 {
            return Err(Error::ConfigInvalid("window_frames must be >= 1".into()));
        }
        if !(self.frame_period_s.is_finite() && self.frame_period_s > 0.0) {
            return Err(Error::ConfigInvalid("frame_period_s must be > 0".into()));
        }
        if self.persistence_n < 1 {
            return Err(Error::ConfigInvalid("persistence_n must be >= 1".into()));
        }
        Ok(())
    }
}

/// What one monitor call produced: a verdict, or an error that must neither
/// trip nor reset the persistence counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum VerdictOutcome {
    Verdict { verdict: MonitorVerdict },
    Error { code: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictEvent {
    pub frame_index: usize,
    pub timestamp_s: f64,
    #[serde(flatten)]
    pub verdict: VerdictOutcome,
    pub latency_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DominantLabel {
    Known { key: CanonicalKey },
    Novel { description: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub raised_at_frame: usize,
    pub raised_at_time_s: f64,
    /// The persistence_n consecutive non-safe verdicts that tripped the gate.
    pub verdicts_in_run: Vec<MonitorVerdict>,
    pub dominant_label: DominantLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionTrace {
    pub trajectory_id: String,
    pub config: MonitorConfig,
    pub events: Vec<VerdictEvent>,
    pub alarm: Option<AlarmEvent>,
}

/// The persistence automaton: non-safe verdicts extend the current run, a
/// safe verdict resets it, an error observation leaves it untouched. Fires
/// when the run reaches `n`.
#[derive(Debug, Clone)]
pub struct PersistenceGate {
    n: u32,
    run: Vec<MonitorVerdict>,
}

impl PersistenceGate {
    pub fn new(persistence_n: u32) -> Self {
        PersistenceGate { n: persistence_n.max(1), run: Vec::new() }
    }

    /// Feed one observation; `None` marks an errored call. Returns true when
    /// the gate fires.
    pub fn observe(&mut self, verdict: Option<&MonitorVerdict>) -> bool {
        match verdict {
            None => false,
            Some(MonitorVerdict::Safe) => {
                self.run.clear();
                false
            }
            Some(unsafe_verdict) => {
                self.run.push(unsafe_verdict.clone());
                self.run.len() as u32 >= self.n
            }
        }
    }

    pub fn current_run(&self) -> &[MonitorVerdict] {
        &self.run
    }
}

fn dominant_label(run: &[MonitorVerdict]) -> DominantLabel {
    let mut counts: Vec<(CanonicalKey, usize)> = Vec::new();
    for verdict in run {
        if let MonitorVerdict::KnownFailure { key } = verdict {
            match counts.iter_mut().find(|(k, _)| k == key) {
                Some((_, c)) => *c += 1,
                None => counts.push((key.clone(), 1)),
            }
        }
    }
    // highest count wins; ties go to the earliest first occurrence
    if let Some(best) = counts.iter().map(|(_, c)| *c).max() {
        let key = counts.iter().find(|(_, c)| *c == best).map(|(k, _)| k.clone()).unwrap();
        return DominantLabel::Known { key };
    }
    let description = run
        .iter()
        .find_map(|v| match v {
            MonitorVerdict::NovelFailure { description } => Some(description.clone()),
            _ => None,
        })
        .unwrap_or_default();
    DominantLabel::Novel { description }
}

/// Build the monitor request for the current window.
pub fn build_monitor_prompt(
    window: &[Observation],
    cs: Option<&ClusterSet>,
    config: &MonitorConfig,
    model_id: &str,
    decoding: DecodingParams,
    encoding: FrameEncoding,
) -> Result<ModelRequest> {
    config.validate()?;
    if window.is_empty() {
        return Err(Error::Precondition("monitor window is empty".into()));
    }
    let cluster_list = match (config.cluster_context, cs) {
        (ClusterContext::WithClusters, Some(cs)) => {
            let report = validate_cluster_set(cs);
            if !report.is_valid() {
                return Err(Error::ConfigInvalid(format!(
                    "monitor cluster set fails validation: {}",
                    report.violations.iter().map(|v| v.detail.clone()).collect::<Vec<_>>().join("; ")
                )));
            }
            Some(render_cluster_list(cs))
        }
        (ClusterContext::WithClusters, None) => {
            return Err(Error::ConfigInvalid(
                "cluster_context=with_clusters requires a cluster set".into(),
            ))
        }
        (ClusterContext::NoContext, _) => None,
    };
    let prompt = match &config.domain_profile {
        DomainProfile::Indoor => monitor_prompt_indoor(
            config.frame_period_s,
            config.max_speed_mps,
            cluster_list.as_deref(),
        ),
        _ => monitor_prompt_driving(1.0 / config.frame_period_s, cluster_list.as_deref()),
    };
    let mut messages = Vec::with_capacity(window.len() + 1);
    messages.push(MessagePart::Text(prompt));
    for payload in encode_observations(window, encoding)? {
        messages.push(MessagePart::Image(payload));
    }
    ModelRequest::new(PromptRole::Monitor, model_id, messages, decoding)
}

/// Map raw monitor output onto the verdict grammar: `SAFE`, an exact cluster
/// name, or a novel-failure description (first line, at most 200 chars).
pub fn classify_verdict(text: &str, cs: Option<&ClusterSet>) -> Result<MonitorVerdict> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(Error::VerdictEmpty);
    }
    if let Ok(key) = canonicalize_label(trimmed) {
        if key.as_str() == "safe" {
            return Ok(MonitorVerdict::Safe);
        }
        if let Some(cs) = cs {
            if cs.clusters.iter().any(|c| c.canonical_key().map(|k| k == key).unwrap_or(false)) {
                return Ok(MonitorVerdict::KnownFailure { key });
            }
        }
    }
    let first_line = trimmed.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
    let description: String = first_line.chars().take(200).collect();
    Ok(MonitorVerdict::NovelFailure { description })
}

/// Single-trajectory monitor automaton.
pub struct MonitorState {
    trajectory_id: String,
    config: MonitorConfig,
    cluster_set: Option<Arc<ClusterSet>>,
    model_id: String,
    decoding: DecodingParams,
    encoding: FrameEncoding,
    frames: Vec<Observation>,
    events: Vec<VerdictEvent>,
    gate: PersistenceGate,
    alarm: Option<AlarmEvent>,
}

impl MonitorState {
    pub fn new(
        trajectory_id: impl Into<String>,
        config: MonitorConfig,
        cluster_set: Option<Arc<ClusterSet>>,
        model_id: impl Into<String>,
        decoding: DecodingParams,
    ) -> Result<Self> {
        config.validate()?;
        if config.cluster_context == ClusterContext::WithClusters && cluster_set.is_none() {
            return Err(Error::ConfigInvalid(
                "cluster_context=with_clusters requires a cluster set".into(),
            ));
        }
        Ok(MonitorState {
            trajectory_id: trajectory_id.into(),
            gate: PersistenceGate::new(config.persistence_n),
            config,
            cluster_set,
            model_id: model_id.into(),
            decoding,
            encoding: FrameEncoding::InlineBase64,
            frames: Vec::new(),
            events: Vec::new(),
            alarm: None,
        })
    }

    pub fn alarm(&self) -> Option<&AlarmEvent> {
        self.alarm.as_ref()
    }

    /// Feed the next frame; returns the alarm if this step raised it. The
    /// state freezes at the first alarm.
    pub fn step(&mut self, frame: Observation, gateway: &Gateway) -> Result<Option<AlarmEvent>> {
        if self.alarm.is_some() {
            return Err(Error::MonitorFrozen(self.trajectory_id.clone()));
        }
        if let Some(last) = self.frames.last() {
            if frame.timestamp_s < last.timestamp_s {
                return Err(Error::Precondition(format!(
                    "frame timestamp {} precedes previous {}",
                    frame.timestamp_s, last.timestamp_s
                )));
            }
        }
        let timestamp_s = frame.timestamp_s;
        self.frames.push(frame);
        let frame_index = self.frames.len() - 1;
        let window_start = self.frames.len().saturating_sub(self.config.window_frames);
        let request = build_monitor_prompt(
            &self.frames[window_start..],
            self.cluster_set.as_deref(),
            &self.config,
            &self.model_id,
            self.decoding.clone(),
            self.encoding,
        )?;

        let (outcome, latency_s) = match gateway.cached_complete(&request) {
            Ok(response) => match classify_verdict(&response.text, self.cluster_set.as_deref()) {
                Ok(verdict) => (VerdictOutcome::Verdict { verdict }, response.latency_s),
                Err(err) => (
                    VerdictOutcome::Error { code: err.code().into(), detail: err.to_string() },
                    response.latency_s,
                ),
            },
            Err(err) => {
                (VerdictOutcome::Error { code: err.code().into(), detail: err.to_string() }, 0.0)
            }
        };

        let fired = match &outcome {
            VerdictOutcome::Verdict { verdict } => self.gate.observe(Some(verdict)),
            VerdictOutcome::Error { .. } => self.gate.observe(None),
        };
        self.events.push(VerdictEvent { frame_index, timestamp_s, verdict: outcome, latency_s });

        if fired {
            let run = self.gate.current_run().to_vec();
            let alarm = AlarmEvent {
                raised_at_frame: frame_index,
                raised_at_time_s: timestamp_s,
                dominant_label: dominant_label(&run),
                verdicts_in_run: run,
            };
            self.alarm = Some(alarm.clone());
            return Ok(Some(alarm));
        }
        Ok(None)
    }

    pub fn into_trace(self) -> DetectionTrace {
        DetectionTrace {
            trajectory_id: self.trajectory_id,
            config: self.config,
            events: self.events,
            alarm: self.alarm,
        }
    }
}

/// Invoked with the alarm when the gate fires; the safeguard seam.
pub trait AlarmHook: Sync {
    fn on_alarm(&self, trajectory_id: &str, alarm: &AlarmEvent);
}

/// Runs a shell command with the alarm event serialized on standard input.
pub struct CommandHook {
    pub command: String,
}

impl AlarmHook for CommandHook {
    fn on_alarm(&self, trajectory_id: &str, alarm: &AlarmEvent) {
        let payload = serde_json::json!({ "trajectory_id": trajectory_id, "alarm": alarm });
        let spawned = std::process::Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(std::process::Stdio::piped())
            .stdout(std::process::Stdio::null())
            .stderr(std::process::Stdio::null())
            .spawn();
        match spawned {
            Ok(mut child) => {
                if let Some(stdin) = child.stdin.as_mut() {
                    let _ = stdin.write_all(payload.to_string().as_bytes());
                }
                if let Err(err) = child.wait() {
                    log::warn!("alarm hook for {trajectory_id} failed: {err}");
                }
            }
            Err(err) => log::warn!("alarm hook for {trajectory_id} failed to spawn: {err}"),
        }
    }
}

/// Resample a trajectory to the monitor rate. Failure-labeled trajectories
/// end `end_offset_s` before the failure time; others run to the last frame.
pub fn monitor_stream(traj: &Trajectory, config: &MonitorConfig) -> Result<Vec<Observation>> {
    config.validate()?;
    let first_ts = traj
        .observations
        .first()
        .map(|o| o.timestamp_s)
        .ok_or_else(|| Error::Precondition(format!("trajectory {} has no observations", traj.id)))?;
    let t_end = match traj.label {
        Label::Failure => {
            traj.failure_time_s.ok_or_else(|| {
                Error::Precondition(format!("trajectory {} lacks failure_time_s", traj.id))
            })? - config.end_offset_s
        }
        _ => traj.last_timestamp(),
    };
    if t_end < 0.0 {
        return Err(Error::WindowEmpty(format!(
            "trajectory {}: monitor stream end {t_end:.3}s precedes start",
            traj.id
        )));
    }
    let span = (t_end - first_ts).max(0.0);
    let steps = (span / config.frame_period_s).ceil() as usize + 1;
    let target_fps = 1.0 / config.frame_period_s;
    // max_frames gets one frame of slack against float rounding in grid_len
    let spec =
        WindowSpec::new(steps as f64 / target_fps, target_fps, config.end_offset_s, steps + 1)?;
    let mut window = downsample_window(traj, &spec)?;
    // stream indices are positions in the resampled stream
    for (i, obs) in window.frames.iter_mut().enumerate() {
        obs.index = i;
    }
    Ok(window.frames)
}

/// Run the monitor over one trajectory; stops at the first alarm.
pub fn run_monitor(
    traj: &Trajectory,
    config: &MonitorConfig,
    cs: Option<&ClusterSet>,
    gateway: &Gateway,
    model_id: &str,
    decoding: DecodingParams,
    hook: Option<&dyn AlarmHook>,
) -> Result<DetectionTrace> {
    let stream = monitor_stream(traj, config)?;
    let mut state = MonitorState::new(
        traj.id.clone(),
        config.clone(),
        cs.map(|c| Arc::new(c.clone())),
        model_id,
        decoding,
    )?;
    for frame in stream {
        if let Some(alarm) = state.step(frame, gateway)? {
            if let Some(hook) = hook {
                hook.on_alarm(&traj.id, &alarm);
            }
            break;
        }
    }
    Ok(state.into_trace())
}

/// Serialize a trace as JSONL: one meta line, one line per event, and the
/// alarm line when present.
pub fn write_trace(path: &Path, trace: &DetectionTrace) -> Result<()> {
    let mut lines = Vec::with_capacity(trace.events.len() + 2);
    lines.push(serde_json::json!({
        "type": "meta",
        "trajectory_id": trace.trajectory_id,
        "config": trace.config,
    }));
    for event in &trace.events {
        let mut value = serde_json::to_value(event)?;
        value["type"] = serde_json::Value::String("verdict".into());
        lines.push(value);
    }
    if let Some(alarm) = &trace.alarm {
        let mut value = serde_json::to_value(alarm)?;
        value["type"] = serde_json::Value::String("alarm".into());
        lines.push(value);
    }
    crate::util::write_jsonl(path, &lines)
}

pub fn read_trace(path: &Path) -> Result<DetectionTrace> {
    let lines: Vec<serde_json::Value> = crate::util::read_jsonl(path)?;
    let mut trajectory_id = None;
    let mut config = None;
    let mut events = Vec::new();
    let mut alarm = None;
    for mut line in lines {
        let Some(kind) = line.get("type").and_then(|t| t.as_str()).map(|s| s.to_string()) else {
            continue;
        };
        line.as_object_mut().map(|o| o.remove("type"));
        match kind.as_str() {
            "meta" => {
                trajectory_id =
                    line.get("trajectory_id").and_then(|v| v.as_str()).map(|s| s.to_string());
                config = line
                    .get("config")
                    .cloned()
                    .map(serde_json::from_value::<MonitorConfig>)
                    .transpose()?;
            }
            "verdict" => events.push(serde_json::from_value::<VerdictEvent>(line)?),
            "alarm" => alarm = Some(serde_json::from_value::<AlarmEvent>(line)?),
            _ => {}
        }
    }
    Ok(DetectionTrace {
        trajectory_id: trajectory_id
            .ok_or_else(|| Error::ManifestInvalid(format!("{}: trace lacks meta line", path.display())))?,
        config: config
            .ok_or_else(|| Error::ManifestInvalid(format!("{}: trace lacks config", path.display())))?,
        events,
        alarm,
    })
}
