//! Shared domain vocabulary: trajectories, failure reasons, clusters, and the
//! normalization rules the rest of the pipeline relies on.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::sha256_hex;

/// Version stamped into every serialized cluster-set artifact.
pub const CLUSTER_SET_SCHEMA_VERSION: u32 = 1;

/// Canonical key reserved for the outlier bucket; never a stored cluster name.
pub const OTHER_LABEL: &str = "other";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Failure,
    Success,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainProfile {
    Driving,
    Indoor,
    Custom(String),
}

impl fmt::Display for DomainProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainProfile::Driving => write!(f, "driving"),
            DomainProfile::Indoor => write!(f, "indoor"),
            DomainProfile::Custom(name) => write!(f, "custom:{name}"),
        }
    }
}

/// Opaque reference to one frame's image content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameRef {
    Path(PathBuf),
    Bytes(Vec<u8>),
}

/// One perceptual observation within a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub frame_ref: FrameRef,
    /// Seconds from trajectory start; non-decreasing within a trajectory.
    pub timestamp_s: f64,
    /// Ordinal within the trajectory, contiguous from 0.
    pub index: usize,
}

/// An ordered observation sequence ending at (or near) a failure event.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub observations: Vec<Observation>,
    pub label: Label,
    /// Required when `label == Failure`.
    pub failure_time_s: Option<f64>,
    pub source_fps: f64,
    pub domain_profile: DomainProfile,
}

impl Trajectory {
    pub fn last_timestamp(&self) -> f64 {
        self.observations.last().map(|o| o.timestamp_s).unwrap_or(0.0)
    }

    /// Check the structural invariants; used by ingestion and tests.
    pub fn validate(&self) -> Result<()> {
        if self.observations.is_empty() {
            return Err(Error::ManifestInvalid(format!("trajectory {} has no observations", self.id)));
        }
        if self.source_fps <= 0.0 {
            return Err(Error::ManifestInvalid(format!("trajectory {}: source_fps must be > 0", self.id)));
        }
        let mut prev_ts = f64::NEG_INFINITY;
        for (i, obs) in self.observations.iter().enumerate() {
            if obs.index != i {
                return Err(Error::ManifestInvalid(format!(
                    "trajectory {}: observation index {} at position {i}",
                    self.id, obs.index
                )));
            }
            if obs.timestamp_s < prev_ts {
                return Err(Error::ManifestInvalid(format!(
                    "trajectory {}: timestamps decrease at index {i}",
                    self.id
                )));
            }
            prev_ts = obs.timestamp_s;
        }
        match (self.label, self.failure_time_s) {
            (Label::Failure, None) => {
                return Err(Error::ManifestInvalid(format!(
                    "trajectory {}: label=failure requires failure_time_s",
                    self.id
                )))
            }
            (Label::Failure, Some(t)) => {
                let slack = self.last_timestamp() + 1.0 / self.source_fps;
                if t > slack {
                    return Err(Error::ManifestInvalid(format!(
                        "trajectory {}: failure_time_s {t} exceeds last timestamp + frame period ({slack})",
                        self.id
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureDataset {
    pub name: String,
    pub trajectories: Vec<Trajectory>,
}

impl FailureDataset {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for traj in &self.trajectories {
            if !seen.insert(traj.id.as_str()) {
                return Err(Error::ManifestInvalid(format!("duplicate trajectory id {}", traj.id)));
            }
            traj.validate()?;
        }
        Ok(())
    }
}

/// Step-1 output for one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReason {
    pub trajectory_id: String,
    pub trajectory_description: String,
    pub failure_reason: String,
    /// Full model text, retained for audit.
    pub raw_response: String,
}

/// Cluster frequency as reported by a model: a percent, a percent range, or a count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrequencyEstimate {
    PercentPoint { value: f64 },
    PercentRange { lo: f64, hi: f64 },
    Count { value: u64 },
}

impl FrequencyEstimate {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FrequencyEstimate::PercentPoint { value } => {
                if !(0.0..=100.0).contains(&value) {
                    return Err(Error::FreqOutOfRange(format!("percent {value} outside [0,100]")));
                }
            }
            FrequencyEstimate::PercentRange { lo, hi } => {
                if lo > hi {
                    return Err(Error::FreqOutOfRange(format!("range lo {lo} > hi {hi}")));
                }
                if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) {
                    return Err(Error::FreqOutOfRange(format!("range [{lo},{hi}] outside [0,100]")));
                }
            }
            FrequencyEstimate::Count { .. } => {}
        }
        Ok(())
    }
}

/// Collapse a frequency estimate to a single percent for ranking and
/// reconciliation: ranges map to their midpoint, counts to `100*c/total`.
pub fn normalize_frequency(freq: &FrequencyEstimate, total: u64) -> Result<f64> {
    if total < 1 {
        return Err(Error::Precondition("normalize_frequency: total must be >= 1".into()));
    }
    freq.validate()?;
    match *freq {
        FrequencyEstimate::PercentPoint { value } => Ok(value),
        FrequencyEstimate::PercentRange { lo, hi } => Ok((lo + hi) / 2.0),
        FrequencyEstimate::Count { value } => {
            if value > total {
                return Err(Error::FreqOutOfRange(format!("count {value} > total {total}")));
            }
            Ok(100.0 * value as f64 / total as f64)
        }
    }
}

/// Lowercased, punctuation-stripped, whitespace-collapsed form of a label.
///
/// Produced only by [`canonicalize_label`]; compares exactly.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CanonicalKey(String);

impl CanonicalKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

const STRIPPED_PUNCTUATION: &[char] = &[
    '.', ',', ':', ';', '!', '?', '"', '\'', '`', '(', ')', '[', ']', '/', '\\',
];

/// Canonicalize a label for exact matching: unicode dashes become ASCII
/// hyphens, case folds, punctuation is removed, whitespace runs collapse.
pub fn canonicalize_label(text: &str) -> Result<CanonicalKey> {
    let mut cleaned = String::with_capacity(text.len());
    for raw in text.chars() {
        let ch = match raw {
            '\u{2010}'..='\u{2015}' | '\u{2212}' => '-',
            '\u{2018}' | '\u{2019}' => '\'',
            '\u{201C}' | '\u{201D}' => '"',
            other => other,
        };
        if STRIPPED_PUNCTUATION.contains(&ch) {
            continue;
        }
        for lower in ch.to_lowercase() {
            cleaned.push(lower);
        }
    }
    let key = cleaned.split_whitespace().collect::<Vec<_>>().join(" ");
    if key.is_empty() {
        return Err(Error::InvalidLabel(text.to_string()));
    }
    Ok(CanonicalKey(key))
}

/// A named semantic failure cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureCluster {
    pub name: String,
    pub description: String,
    pub keywords: Vec<String>,
    pub frequency: FrequencyEstimate,
}

impl FailureCluster {
    /// Deterministic matching key derived from the name.
    pub fn canonical_key(&self) -> Result<CanonicalKey> {
        canonicalize_label(&self.name)
    }
}

/// The discovered set of semantic failure clusters; the contract between
/// discovery, assignment, and the monitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub schema_version: u32,
    pub clusters: Vec<FailureCluster>,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

impl ClusterSet {
    pub fn new(clusters: Vec<FailureCluster>, provenance: serde_json::Value) -> Self {
        ClusterSet { schema_version: CLUSTER_SET_SCHEMA_VERSION, clusters, provenance }
    }

    /// Canonical keys in cluster order; errors if any name fails to canonicalize.
    pub fn canonical_keys(&self) -> Result<Vec<CanonicalKey>> {
        self.clusters.iter().map(|c| c.canonical_key()).collect()
    }

    pub fn find(&self, key: &CanonicalKey) -> Option<&FailureCluster> {
        self.clusters
            .iter()
            .find(|c| c.canonical_key().map(|k| k == *key).unwrap_or(false))
    }

    /// Content digest of the canonical compact serialization.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("cluster set serializes");
        sha256_hex(&bytes)
    }
}

/// Mapping of one trajectory to cluster(s); empty labels mean outlier/"Other".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub trajectory_id: String,
    pub labels: Vec<CanonicalKey>,
    pub mode: AssignmentMode,
}

impl ClusterAssignment {
    pub fn is_other(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentMode {
    Single,
    Multi,
}

/// Per-window monitor verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MonitorVerdict {
    Safe,
    KnownFailure { key: CanonicalKey },
    NovelFailure { description: String },
}

impl MonitorVerdict {
    pub fn is_safe(&self) -> bool {
        matches!(self, MonitorVerdict::Safe)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    EmptySet,
    InvalidName,
    DuplicateKey,
    EmptyKeywords,
    ReservedName,
    FrequencyRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

/// Outcome of [`validate_cluster_set`]; valid iff no violations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Report every rule violation in a cluster set instead of failing fast.
pub fn validate_cluster_set(cs: &ClusterSet) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut push = |kind, detail: String| report.violations.push(Violation { kind, detail });

    if cs.clusters.is_empty() {
        push(ViolationKind::EmptySet, "cluster set has no clusters".into());
    }
    let mut seen = std::collections::HashMap::new();
    for (i, cluster) in cs.clusters.iter().enumerate() {
        match cluster.canonical_key() {
            Err(_) => push(
                ViolationKind::InvalidName,
                format!("cluster #{i} name {:?} canonicalizes to empty", cluster.name),
            ),
            Ok(key) => {
                if key.as_str() == OTHER_LABEL {
                    push(
                        ViolationKind::ReservedName,
                        format!("cluster #{i} uses reserved name {:?}", cluster.name),
                    );
                }
                if let Some(first) = seen.insert(key.clone(), i) {
                    push(
                        ViolationKind::DuplicateKey,
                        format!("clusters #{first} and #{i} share canonical key {key:?}"),
                    );
                }
            }
        }
        if cluster.keywords.iter().all(|k| k.trim().is_empty()) {
            push(ViolationKind::EmptyKeywords, format!("cluster #{i} ({:?}) has no keywords", cluster.name));
        }
        if let Err(err) = cluster.frequency.validate() {
            push(ViolationKind::FrequencyRange, format!("cluster #{i} ({:?}): {err}", cluster.name));
        }
    }
    report
}
