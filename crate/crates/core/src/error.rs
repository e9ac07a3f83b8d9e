//! Error type shared by every pipeline stage.
//!
//! Each variant carries a stable machine-readable code (see [`Error::code`])
//! and belongs to a coarse family used by the CLI to pick exit codes.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A label canonicalized to the empty string.
    #[error("invalid label: {0:?} canonicalizes to an empty key")]
    InvalidLabel(String),

    /// A frequency estimate is inconsistent with the dataset size.
    #[error("frequency out of range: {0}")]
    FreqOutOfRange(String),

    /// A referenced file or directory does not exist or cannot be read.
    #[error("missing input {path}: {detail}")]
    IoMissing { path: PathBuf, detail: String },

    /// A dataset manifest violates the manifest schema rules.
    #[error("invalid manifest: {0}")]
    ManifestInvalid(String),

    /// Downsampling produced an empty window (end time before trajectory start).
    #[error("empty observation window: {0}")]
    WindowEmpty(String),

    /// No prompt template registered for the requested domain profile.
    #[error("unknown domain profile: {0}")]
    ProfileUnknown(String),

    /// All retry attempts failed, or the backend has no answer for the request.
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    /// The backend replied with something that is not a valid protocol message.
    #[error("backend protocol violation: {0}")]
    BackendProtocol(String),

    /// Two mock fixtures claim the same selector with different responses.
    #[error("fixture conflict: {0}")]
    FixtureConflict(String),

    /// The reason response lacks a recognizable `failure_reason:` key.
    #[error("unparseable reason response: {0}")]
    ReasonParse(String),

    /// The reason response has a `failure_reason:` key with an empty value.
    #[error("empty failure reason: {0}")]
    ReasonEmpty(String),

    /// Every trajectory in a batch stage failed; nothing was produced.
    #[error("all inputs skipped: {0}")]
    SkippedAll(String),

    /// Fewer than three prompt variants could be extracted.
    #[error("unparseable prompt ensemble: {0}")]
    EnsembleParse(String),

    /// None of the accepted clustering output shapes matched.
    #[error("unparseable clustering output: {0}")]
    ClusteringParse(String),

    /// The aggregated cluster set failed validation.
    #[error("invalid aggregated cluster set: {0}")]
    AggregationInvalid(String),

    /// Every assignment call failed.
    #[error("all assignment calls failed: {0}")]
    AssignAllFailed(String),

    /// Assignment results reference different cluster sets or trajectory sets.
    #[error("reconciliation mismatch: {0}")]
    ReconcileMismatch(String),

    /// A configuration value is out of range or internally inconsistent.
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    /// A trajectory without a failure/success label reached the evaluator.
    #[error("unlabeled trajectory: {0}")]
    EvalUnlabeled(String),

    /// A confusion class is empty, so a rate is undefined.
    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    /// Lead time requested for a trace without an alarm.
    #[error("detection timing undefined: {0}")]
    TimingUndefined(String),

    /// The monitor backend returned an empty verdict.
    #[error("empty verdict text")]
    VerdictEmpty,

    /// A monitor state was stepped after its alarm fired.
    #[error("monitor already alarmed: {0}")]
    MonitorFrozen(String),

    /// A documented operation precondition was violated by the caller.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse error families; the CLI maps each family to a distinct exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFamily {
    Config,
    Io,
    Parse,
    Backend,
    Data,
    Other,
}

impl Error {
    /// Stable machine-readable code for log lines and test assertions.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidLabel(_) => "INVALID_LABEL",
            Error::FreqOutOfRange(_) => "FREQ_OUT_OF_RANGE",
            Error::IoMissing { .. } => "IO_MISSING",
            Error::ManifestInvalid(_) => "MANIFEST_INVALID",
            Error::WindowEmpty(_) => "WINDOW_EMPTY",
            Error::ProfileUnknown(_) => "PROFILE_UNKNOWN",
            Error::BackendUnavailable(_) => "BACKEND_UNAVAILABLE",
            Error::BackendProtocol(_) => "BACKEND_PROTOCOL",
            Error::FixtureConflict(_) => "FIXTURE_CONFLICT",
            Error::ReasonParse(_) => "REASON_PARSE",
            Error::ReasonEmpty(_) => "REASON_EMPTY",
            Error::SkippedAll(_) => "SKIPPED_ALL",
            Error::EnsembleParse(_) => "ENSEMBLE_PARSE",
            Error::ClusteringParse(_) => "CLUSTERING_PARSE",
            Error::AggregationInvalid(_) => "AGGREGATION_INVALID",
            Error::AssignAllFailed(_) => "ASSIGN_ALL_FAILED",
            Error::ReconcileMismatch(_) => "RECONCILE_MISMATCH",
            Error::ConfigInvalid(_) => "CONFIG_INVALID",
            Error::EvalUnlabeled(_) => "EVAL_UNLABELED",
            Error::MetricUndefined(_) => "METRIC_UNDEFINED",
            Error::TimingUndefined(_) => "TIMING_UNDEFINED",
            Error::VerdictEmpty => "VERDICT_EMPTY",
            Error::MonitorFrozen(_) => "MONITOR_FROZEN",
            Error::Precondition(_) => "PRECONDITION",
            Error::Io(_) => "IO",
            Error::Json(_) => "JSON",
        }
    }

    pub fn family(&self) -> ErrorFamily {
        match self {
            Error::ConfigInvalid(_) | Error::Precondition(_) | Error::ProfileUnknown(_) => {
                ErrorFamily::Config
            }
            Error::Io(_) | Error::IoMissing { .. } => ErrorFamily::Io,
            Error::Json(_)
            | Error::ManifestInvalid(_)
            | Error::ReasonParse(_)
            | Error::ReasonEmpty(_)
            | Error::EnsembleParse(_)
            | Error::ClusteringParse(_)
            | Error::VerdictEmpty => ErrorFamily::Parse,
            Error::BackendUnavailable(_)
            | Error::BackendProtocol(_)
            | Error::FixtureConflict(_)
            | Error::SkippedAll(_)
            | Error::AssignAllFailed(_) => ErrorFamily::Backend,
            Error::InvalidLabel(_)
            | Error::FreqOutOfRange(_)
            | Error::WindowEmpty(_)
            | Error::AggregationInvalid(_)
            | Error::ReconcileMismatch(_)
            | Error::EvalUnlabeled(_)
            | Error::MetricUndefined(_)
            | Error::TimingUndefined(_)
            | Error::MonitorFrozen(_) => ErrorFamily::Data,
        }
    }
}
