//! Discover semantic failure clusters from robot perception recordings,
//! assign trajectories to them, and run a cluster-informed runtime failure
//! monitor — fully testable offline through a deterministic mock backend.
//!
//! The pipeline stages mirror the library modules:
//!
//! 1. [`ingest`] loads dataset manifests and downsamples trajectory tails.
//! 2. [`reason`] infers a free-text failure reason per trajectory.
//! 3. [`discover`] clusters the reasons with a prompt ensemble and aggregates
//!    the candidates into one [`model::ClusterSet`].
//! 4. [`assign`] maps every reason to cluster(s) or "Other" and reconciles
//!    reported vs. assigned frequencies.
//! 5. [`monitor`] judges sliding windows SAFE / known-failure / novel-failure
//!    with a persistence gate in front of the alarm.
//! 6. [`eval`] scores detection traces and emits report tables and the
//!    targeted-collection plan.
//!
//! [`baseline`] is a deterministic topic-modeling comparison path, and all
//! model traffic funnels through [`gateway`].

pub mod assign;
pub mod baseline;
pub mod discover;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod ingest;
pub mod model;
pub mod monitor;
pub mod prompts;
pub mod reason;
pub mod util;

pub use error::{Error, ErrorFamily, Result};
pub use model::{
    AssignmentMode, CanonicalKey, ClusterAssignment, ClusterSet, DomainProfile, FailureCluster,
    FailureDataset, FailureReason, FrequencyEstimate, Label, MonitorVerdict, Observation,
    Trajectory,
};
