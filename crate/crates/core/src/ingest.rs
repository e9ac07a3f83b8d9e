//! Dataset manifest loading and observation-window extraction.
//!
//! Manifests are line-delimited JSON; frames are image files named so that
//! lexicographic order equals temporal order. Video decoding is out of scope:
//! a separate pre-step must extract frames before ingestion.

use std::path::{Path, PathBuf};

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DomainProfile, FailureDataset, FrameRef, Label, Observation, Trajectory};
use crate::util::sha256_hex;

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub trajectory_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_ref: Option<String>,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_time_s: Option<f64>,
    pub source_fps: f64,
    pub domain_profile: DomainProfile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Parse a JSONL manifest; the dataset name is the file stem.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::IoMissing {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| {
                Error::ManifestInvalid(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            entries.push(entry);
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_string());
        Ok(DatasetManifest { name, entries })
    }
}

/// Load a manifest and materialize one trajectory per entry.
///
/// Frame files are enumerated in lexicographic order; frame `i` is stamped
/// `i / source_fps` seconds. Relative `frames_dir` paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<FailureDataset> {
    let manifest = DatasetManifest::read(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut trajectories = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        trajectories.push(load_entry(entry, base)?);
    }
    let dataset = FailureDataset { name: manifest.name, trajectories };
    dataset.validate()?;
    Ok(dataset)
}

fn load_entry(entry: &ManifestEntry, base: &Path) -> Result<Trajectory> {
    if entry.source_fps <= 0.0 {
        return Err(Error::ManifestInvalid(format!(
            "entry {}: source_fps must be > 0",
            entry.trajectory_id
        )));
    }
    if entry.label == Label::Failure && entry.failure_time_s.is_none() {
        return Err(Error::ManifestInvalid(format!(
            "entry {}: label=failure requires failure_time_s",
            entry.trajectory_id
        )));
    }
    let frames_dir = match (&entry.frames_dir, &entry.video_ref) {
        (Some(dir), _) => {
            if dir.is_absolute() {
                dir.clone()
            } else {
                base.join(dir)
            }
        }
        (None, Some(video)) => {
            return Err(Error::ManifestInvalid(format!(
                "entry {}: video_ref {video:?} without frames_dir; extract frames first",
                entry.trajectory_id
            )))
        }
        (None, None) => {
            return Err(Error::ManifestInvalid(format!(
                "entry {}: needs frames_dir",
                entry.trajectory_id
            )))
        }
    };
    let mut names: Vec<PathBuf> = std::fs::read_dir(&frames_dir)
        .map_err(|e| Error::IoMissing { path: frames_dir.clone(), detail: e.to_string() })?
        .filter_map(|res| res.ok())
        .filter(|d| d.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|d| d.path())
        .filter(|p| {
            p.file_name()
                .map(|n| !n.to_string_lossy().starts_with('.'))
                .unwrap_or(false)
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::ManifestInvalid(format!(
            "entry {}: {} contains no frame files",
            entry.trajectory_id,
            frames_dir.display()
        )));
    }
    let observations = names
        .into_iter()
        .enumerate()
        .map(|(i, p)| Observation {
            frame_ref: FrameRef::Path(p),
            timestamp_s: i as f64 / entry.source_fps,
            index: i,
        })
        .collect();
    let traj = Trajectory {
        id: entry.trajectory_id.clone(),
        observations,
        label: entry.label,
        failure_time_s: entry.failure_time_s,
        source_fps: entry.source_fps,
        domain_profile: entry.domain_profile.clone(),
    };
    traj.validate()?;
    Ok(traj)
}

/// How to slice the tail of a trajectory for model consumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_seconds: f64,
    pub target_fps: f64,
    /// Seconds trimmed before the failure time.
    pub end_offset_s: f64,
    pub max_frames: usize,
}

impl WindowSpec {
    pub fn new(window_seconds: f64, target_fps: f64, end_offset_s: f64, max_frames: usize) -> Result<Self> {
        let spec = WindowSpec { window_seconds, target_fps, end_offset_s, max_frames };
        spec.validate()?;
        Ok(spec)
    }

    /// Profile defaults mirror the monitoring rates each profile documents:
    /// driving samples 3 fps over 10 s ending 1 s before impact, indoor
    /// samples every 0.5 s over 4 s.
    pub fn default_for(profile: &DomainProfile) -> Self {
        match profile {
            DomainProfile::Indoor => {
                WindowSpec { window_seconds: 4.0, target_fps: 2.0, end_offset_s: 0.0, max_frames: 8 }
            }
            _ => WindowSpec { window_seconds: 10.0, target_fps: 3.0, end_offset_s: 1.0, max_frames: 30 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.window_seconds) || !positive(self.target_fps) {
            return Err(Error::ConfigInvalid(
                "window_seconds and target_fps must be > 0".into(),
            ));
        }
        if self.end_offset_s < 0.0 {
            return Err(Error::ConfigInvalid("end_offset_s must be >= 0".into()));
        }
        if self.max_frames < 1 {
            return Err(Error::ConfigInvalid("max_frames must be >= 1".into()));
        }
        if self.grid_len() > self.max_frames {
            return Err(Error::ConfigInvalid(format!(
                "window_seconds*target_fps rounds to {} frames > max_frames {}",
                self.grid_len(),
                self.max_frames
            )));
        }
        Ok(())
    }

    /// Number of grid points: `ceil(window_seconds * target_fps)`.
    pub fn grid_len(&self) -> usize {
        (self.window_seconds * self.target_fps).ceil() as usize
    }
}

/// The downsampled tail of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationWindow {
    pub trajectory_id: String,
    pub frames: Vec<Observation>,
    pub spec_used: WindowSpec,
    pub period_s: f64,
}

/// Select the trajectory frames nearest to a uniform sampling grid anchored
/// at the failure time (minus the spec's end offset) or, for non-failure
/// labels, at the last observation.
///
/// Grid points are matched to the nearest source frame (ties resolve to the
/// earlier frame), clipped to available frames, deduplicated, and returned in
/// ascending timestamp order. No timestamps are interpolated or fabricated.
pub fn downsample_window(traj: &Trajectory, spec: &WindowSpec) -> Result<ObservationWindow> {
    spec.validate()?;
    if traj.observations.is_empty() {
        return Err(Error::Precondition(format!("trajectory {} has no observations", traj.id)));
    }
    let t_end = match traj.label {
        Label::Failure => {
            let failure = traj.failure_time_s.ok_or_else(|| {
                Error::Precondition(format!("trajectory {}: failure label without failure_time_s", traj.id))
            })?;
            failure - spec.end_offset_s
        }
        _ => traj.last_timestamp(),
    };
    if t_end < 0.0 {
        return Err(Error::WindowEmpty(format!(
            "trajectory {}: window end {t_end:.3}s precedes trajectory start",
            traj.id
        )));
    }
    let mut picked = std::collections::BTreeSet::new();
    for i in 0..spec.grid_len() {
        let t = t_end - i as f64 / spec.target_fps;
        picked.insert(nearest_frame(&traj.observations, t));
    }
    let frames: Vec<Observation> =
        picked.into_iter().map(|i| traj.observations[i].clone()).collect();
    debug_assert!(frames.len() <= spec.max_frames);
    Ok(ObservationWindow {
        trajectory_id: traj.id.clone(),
        frames,
        spec_used: spec.clone(),
        period_s: 1.0 / spec.target_fps,
    })
}

/// Index of the observation whose timestamp is closest to `t`; ties pick the
/// earlier frame.
fn nearest_frame(observations: &[Observation], t: f64) -> usize {
    let hi = observations.partition_point(|o| o.timestamp_s < t);
    if hi == 0 {
        return 0;
    }
    if hi == observations.len() {
        return observations.len() - 1;
    }
    let before = &observations[hi - 1];
    let after = &observations[hi];
    if (t - before.timestamp_s) <= (after.timestamp_s - t) {
        hi - 1
    } else {
        hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameEncoding {
    InlineBase64,
    Url,
}

/// One frame rendered as a model-request image part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePayload {
    /// SHA-256 of the raw image bytes; part of the request cache key.
    pub digest: String,
    pub media_type: String,
    #[serde(flatten)]
    pub content: ImageContent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageContent {
    Base64(String),
    Url(String),
}

fn media_type_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(ext) if ext == "jpg" || ext == "jpeg" => "image/jpeg",
        Some(ext) if ext == "png" => "image/png",
        Some(ext) if ext == "gif" => "image/gif",
        Some(ext) if ext == "webp" => "image/webp",
        Some(ext) if ext == "bmp" => "image/bmp",
        Some(ext) if ext == "ppm" => "image/x-portable-pixmap",
        _ => "application/octet-stream",
    }
}

/// Encode every frame of a window, preserving order.
pub fn encode_frames(window: &ObservationWindow, encoding: FrameEncoding) -> Result<Vec<ImagePayload>> {
    encode_observations(&window.frames, encoding)
}

/// Encode an observation slice, preserving order.
pub fn encode_observations(frames: &[Observation], encoding: FrameEncoding) -> Result<Vec<ImagePayload>> {
    frames.iter().map(|obs| encode_frame(&obs.frame_ref, encoding)).collect()
}

fn encode_frame(frame_ref: &FrameRef, encoding: FrameEncoding) -> Result<ImagePayload> {
    let (bytes, media_type, url) = match frame_ref {
        FrameRef::Path(path) => {
            let bytes = std::fs::read(path).map_err(|e| Error::IoMissing {
                path: path.clone(),
                detail: e.to_string(),
            })?;
            (bytes, media_type_for(path), Some(format!("file://{}", path.display())))
        }
        FrameRef::Bytes(bytes) => (bytes.clone(), "application/octet-stream", None),
    };
    let digest = sha256_hex(&bytes);
    let content = match encoding {
        FrameEncoding::InlineBase64 => {
            ImageContent::Base64(base64::engine::general_purpose::STANDARD.encode(&bytes))
        }
        FrameEncoding::Url => ImageContent::Url(url.ok_or_else(|| {
            Error::Precondition("url encoding requires path-backed frames".into())
        })?),
    };
    Ok(ImagePayload { digest, media_type: media_type.to_string(), content })
}
