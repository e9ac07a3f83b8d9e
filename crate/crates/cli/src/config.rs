//! Run configuration: one human-editable TOML file, overridden by flags.
//! API keys never live here; the config only names the environment variable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use failsem_core::error::{Error, Result};
use failsem_core::gateway::PromptRole;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub run: RunSection,
    pub backend: BackendConfig,
    pub models: ModelsConfig,
    pub window: WindowOverrides,
    pub monitor: MonitorOverrides,
    pub assignment: AssignmentConfig,
    pub baseline: BaselineConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub dir: Option<PathBuf>,
    pub jobs: usize,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { dir: None, jobs: 4, seed: 7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub mode: BackendMode,
    /// Mock mode: fixtures JSONL path.
    pub fixtures: Option<PathBuf>,
    /// Http mode: chat-completions endpoint URL.
    pub endpoint: Option<String>,
    /// Http mode: name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    /// 0 disables the per-minute budget.
    pub requests_per_minute: u32,
    pub max_in_flight: usize,
    pub max_attempts: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            mode: BackendMode::Mock,
            fixtures: None,
            endpoint: None,
            api_key_env: None,
            requests_per_minute: 0,
            max_in_flight: 4,
            max_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsConfig {
    pub reason_inference: String,
    pub ensemble_generation: String,
    pub cluster_discovery: String,
    pub aggregation: String,
    pub assignment: String,
    pub monitor: String,
    pub topic_summarization: String,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        // multimodal model for image-bearing roles, text reasoner elsewhere
        ModelsConfig {
            reason_inference: "mock-mllm".into(),
            ensemble_generation: "mock-reasoner".into(),
            cluster_discovery: "mock-reasoner".into(),
            aggregation: "mock-reasoner".into(),
            assignment: "mock-reasoner".into(),
            monitor: "mock-mllm".into(),
            topic_summarization: "mock-reasoner".into(),
        }
    }
}

impl ModelsConfig {
    pub fn for_role(&self, role: PromptRole) -> &str {
        match role {
            PromptRole::ReasonInference => &self.reason_inference,
            PromptRole::EnsembleGeneration => &self.ensemble_generation,
            PromptRole::ClusterDiscovery => &self.cluster_discovery,
            PromptRole::Aggregation => &self.aggregation,
            PromptRole::Assignment => &self.assignment,
            PromptRole::Monitor => &self.monitor,
            PromptRole::TopicSummarization => &self.topic_summarization,
        }
    }
}

/// Optional overrides applied on top of each profile's default window spec.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowOverrides {
    pub window_seconds: Option<f64>,
    pub target_fps: Option<f64>,
    pub end_offset_s: Option<f64>,
    pub max_frames: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonitorOverrides {
    pub window_frames: Option<usize>,
    pub frame_period_s: Option<f64>,
    pub persistence_n: Option<u32>,
    pub no_context: bool,
    /// Shell command run with the alarm event on stdin.
    pub hook: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentModeConfig {
    Single,
    Multi,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssignmentConfig {
    pub mode: AssignmentModeConfig,
}

impl Default for AssignmentConfig {
    fn default() -> Self {
        AssignmentConfig { mode: AssignmentModeConfig::Both }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub k: usize,
    pub top_k: usize,
    pub embed_dim: usize,
    pub summarize: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { k: 6, top_k: 6, embed_dim: 512, summarize: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub method_name: String,
    pub split_name: String,
    /// "ms" or "s"; unset picks the profile convention.
    pub unit: Option<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { method_name: "Ours".into(), split_name: "test".into(), unit: None }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::IoMissing {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.dataset
            .manifest
            .as_deref()
            .ok_or_else(|| Error::ConfigInvalid("no dataset manifest configured (set [dataset].manifest or pass --manifest)".into()))
    }

    pub fn run_dir(&self) -> Result<&Path> {
        self.run
            .dir
            .as_deref()
            .ok_or_else(|| Error::ConfigInvalid("no run directory configured (set [run].dir or pass --run-dir)".into()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::ConfigInvalid(format!("serialize config: {e}")))
    }
}
