//! Deterministic end-to-end scenario: a synthetic 24-trajectory driving
//! dataset plus a scripted fixture file covering every model call the
//! pipeline will make. Per-image requests get exact-key fixtures built by
//! reconstructing the same requests through the library; text-only stages
//! use role+substring selectors.

use std::path::{Path, PathBuf};

use failsem_core::assign::build_assignment_prompt;
use failsem_core::gateway::DecodingParams;
use failsem_core::ingest::{downsample_window, load_manifest, FrameEncoding, WindowSpec};
use failsem_core::model::{
    AssignmentMode, ClusterSet, DomainProfile, FailureCluster, FailureReason, FrequencyEstimate,
    Label,
};
use failsem_core::monitor::{build_monitor_prompt, monitor_stream, MonitorConfig};
use failsem_core::prompts::TemplateSet;
use failsem_core::reason::build_reason_prompt;

pub const N_FAILURE: usize = 20;
pub const N_SUCCESS: usize = 4;
/// Failure trajectories the monitor never flags (false negatives).
pub const FN_IDS: [&str; 2] = ["t03", "t11"];
/// Success trajectory the monitor wrongly flags (false positive).
pub const FP_ID: &str = "s00";
/// Stream step at which failure trajectories turn unsafe.
pub const UNSAFE_FROM: usize = 7;
/// Stream step at which the false-positive success turns unsafe.
pub const FP_UNSAFE_FROM: usize = 5;

const MLLM: &str = "mock-mllm";
const REASONER: &str = "mock-reasoner";

pub struct Group {
    pub members: std::ops::Range<usize>,
    pub reason_text: &'static str,
    /// Monitor verdict for unsafe steps of this group's trajectories.
    pub verdict: &'static str,
    pub single_response: &'static str,
    pub multi_response: &'static str,
}

pub fn groups() -> Vec<Group> {
    vec![
        Group {
            members: 0..8,
            reason_text: "rear-ended the lead vehicle after tailgating while following too closely",
            verdict: "Rear-End Collisions: Insufficient Following Distance",
            single_response: "Rear-End Collisions: Insufficient Following Distance",
            multi_response: "Rear-End Collisions: Insufficient Following Distance",
        },
        Group {
            members: 8..14,
            reason_text: "sun glare hid the braking car ahead until impact",
            verdict: "Visibility-Impaired Perception Failures",
            single_response: "Visibility-Impaired Perception Failures",
            multi_response: "Visibility-Impaired Perception Failures",
        },
        Group {
            members: 14..18,
            reason_text: "an abrupt cut-in forced emergency braking and a collision",
            verdict: "Unsafe Cut-In / Lane-Change Intrusions",
            single_response: "Unsafe Cut-In / Lane-Change Intrusions",
            multi_response:
                "Unsafe Cut-In / Lane-Change Intrusions; Visibility-Impaired Perception Failures",
        },
        Group {
            members: 18..19,
            reason_text: "a pedestrian stepped into the crosswalk and was not detected in time",
            verdict: "Pedestrian & Cyclist Detection Failures",
            single_response: "Pedestrian & Cyclist Detection Failures",
            multi_response: "Pedestrian & Cyclist Detection Failures",
        },
        Group {
            members: 19..20,
            reason_text: "cargo fell off a truck directly onto the roadway",
            verdict: "unexpected heavy debris shedding from a truck",
            single_response: "Other",
            multi_response: "Other",
        },
    ]
}

pub fn authored_clusters() -> ClusterSet {
    let cluster = |name: &str, description: &str, keywords: &[&str], frequency| FailureCluster {
        name: name.into(),
        description: description.into(),
        keywords: keywords.iter().map(|k| k.to_string()).collect(),
        frequency,
    };
    ClusterSet::new(
        vec![
            cluster(
                "Rear-End Collisions: Insufficient Following Distance",
                "ego car fails to keep distance to the lead vehicle",
                &["rear-end", "tailgating", "following distance"],
                FrequencyEstimate::PercentPoint { value: 35.0 },
            ),
            cluster(
                "Visibility-Impaired Perception Failures",
                "glare or low visibility hides a hazard",
                &["glare", "low visibility", "sun"],
                FrequencyEstimate::PercentRange { lo: 25.0, hi: 35.0 },
            ),
            cluster(
                "Unsafe Cut-In / Lane-Change Intrusions",
                "another vehicle merges abruptly into the ego lane",
                &["cut-in", "lane change", "merge"],
                FrequencyEstimate::PercentPoint { value: 20.0 },
            ),
            cluster(
                "Pedestrian & Cyclist Detection Failures",
                "vulnerable road user crossing is missed",
                &["pedestrian", "crosswalk", "cyclist"],
                FrequencyEstimate::Count { value: 2 },
            ),
        ],
        serde_json::json!({}),
    )
}

pub struct Scenario {
    pub manifest: PathBuf,
    pub config: PathBuf,
}

fn trajectory_ids() -> Vec<String> {
    let mut ids: Vec<String> = (0..N_FAILURE).map(|i| format!("t{i:02}")).collect();
    ids.extend((0..N_SUCCESS).map(|i| format!("s{i:02}")));
    ids
}

fn group_for(index: usize) -> Group {
    groups().into_iter().find(|g| g.members.contains(&index)).expect("index in a group")
}

fn write_frames(root: &Path, id: &str) -> std::io::Result<()> {
    let dir = root.join("data").join("frames").join(id);
    std::fs::create_dir_all(&dir)?;
    for i in 0..12 {
        std::fs::write(dir.join(format!("frame_{i:05}.png")), format!("{id}/{i}/framedata"))?;
    }
    Ok(())
}

fn fixture_line(
    lines: &mut Vec<String>,
    role: Option<&str>,
    substring: Option<&str>,
    key: Option<String>,
    response: &str,
) {
    let mut obj = serde_json::Map::new();
    if let Some(role) = role {
        obj.insert("role".into(), role.into());
    }
    if let Some(substring) = substring {
        obj.insert("substring".into(), substring.into());
    }
    if let Some(key) = key {
        obj.insert("key".into(), key.into());
    }
    obj.insert("response".into(), response.into());
    lines.push(serde_json::Value::Object(obj).to_string());
}

/// The four candidate-clustering responses, one per output shape the parser
/// accepts, all describing the same four clusters.
fn discovery_responses() -> [String; 4] {
    let schema_object = serde_json::json!({
        "clusters": [
            {"name": "Rear-End Collisions: Insufficient Following Distance", "description": "ego car fails to keep distance to the lead vehicle", "keywords": ["rear-end", "tailgating", "following distance"], "frequency": "35%"},
            {"name": "Visibility-Impaired Perception Failures", "description": "glare or low visibility hides a hazard", "keywords": ["glare", "low visibility", "sun"], "frequency": "25-35%"},
            {"name": "Unsafe Cut-In / Lane-Change Intrusions", "description": "another vehicle merges abruptly into the ego lane", "keywords": ["cut-in", "lane change", "merge"], "frequency": "20%"},
            {"name": "Pedestrian & Cyclist Detection Failures", "description": "vulnerable road user crossing is missed", "keywords": ["pedestrian", "crosswalk", "cyclist"], "frequency": "2"}
        ]
    })
    .to_string();
    let array = serde_json::json!([
        {"cluster_name": "Rear-End Collisions: Insufficient Following Distance", "keywords": ["rear-end", "tailgating"], "frequency": "35%"},
        {"cluster_name": "Visibility-Impaired Perception Failures", "keywords": ["glare", "sun"], "frequency": "30%"},
        {"cluster_name": "Unsafe Cut-In / Lane-Change Intrusions", "keywords": ["cut-in"], "frequency": "20%"},
        {"cluster_name": "Pedestrian & Cyclist Detection Failures", "keywords": ["pedestrian"], "frequency": "10%"}
    ])
    .to_string();
    let with_assignments = serde_json::json!({
        "clusters": [
            {"name": "Rear-End Collisions: Insufficient Following Distance", "terms": ["rear-end"], "count": 8},
            {"name": "Visibility-Impaired Perception Failures", "terms": ["glare"], "count": 6},
            {"name": "Unsafe Cut-In / Lane-Change Intrusions", "terms": ["cut-in"], "count": 4},
            {"name": "Pedestrian & Cyclist Detection Failures", "terms": ["pedestrian"], "count": 2}
        ],
        "assignments": {"t00": "Rear-End Collisions: Insufficient Following Distance"}
    })
    .to_string();
    let table = "Here is the taxonomy:\n\n\
        | Cluster Name | Keywords | Examples | Frequency |\n\
        |---|---|---|---|\n\
        | Rear-End Collisions: Insufficient Following Distance | rear-end, tailgating | ... | 35% |\n\
        | Visibility-Impaired Perception Failures | glare, sun | ... | 25-35% |\n\
        | Unsafe Cut-In / Lane-Change Intrusions | cut-in, lane change | ... | 20% |\n\
        | Pedestrian & Cyclist Detection Failures | pedestrian, crosswalk | ... | 10% |\n"
        .to_string();
    [schema_object, array, with_assignments, table]
}

/// Build the whole scenario under `root` and return its paths.
pub fn build(root: &Path) -> Scenario {
    let data_dir = root.join("data");
    std::fs::create_dir_all(&data_dir).unwrap();
    let ids = trajectory_ids();
    for id in &ids {
        write_frames(root, id).unwrap();
    }

    // manifest: 20 failures at 2 fps with failure at 5.5 s, 4 successes
    let manifest = data_dir.join("manifest.jsonl");
    let mut lines = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        let failure = i < N_FAILURE;
        let mut entry = serde_json::json!({
            "trajectory_id": id,
            "frames_dir": format!("frames/{id}"),
            "label": if failure { "failure" } else { "success" },
            "source_fps": 2.0,
            "domain_profile": "driving",
        });
        if failure {
            entry["failure_time_s"] = serde_json::json!(5.5);
        }
        lines.push(entry.to_string());
    }
    std::fs::write(&manifest, lines.join("\n")).unwrap();

    let clusters = authored_clusters();
    let dataset = load_manifest(&manifest).unwrap();
    let decoding = DecodingParams::default();
    let templates = TemplateSet::new();
    let mut fixtures = Vec::new();

    // Step 1: one exact-key fixture per failure trajectory
    let reason_spec = WindowSpec::default_for(&DomainProfile::Driving);
    for (i, traj) in dataset.trajectories.iter().enumerate().filter(|(_, t)| t.label == Label::Failure) {
        let group = group_for(i);
        let window = downsample_window(traj, &reason_spec).unwrap();
        let request = build_reason_prompt(
            &window,
            &DomainProfile::Driving,
            &templates,
            MLLM,
            decoding.clone(),
            FrameEncoding::InlineBase64,
        )
        .unwrap();
        let response = format!(
            "trajectory: {} drives along the road toward the incident\nfailure_reason: {}",
            traj.id, group.reason_text
        );
        fixture_line(&mut fixtures, None, None, Some(request.cache_key().as_hex().into()), &response);
    }

    // Step 2: ensemble generation + the four clustering prompts
    fixture_line(
        &mut fixtures,
        Some("ensemble_generation"),
        Some("Propose three other prompts"),
        None,
        "1. VARIANT-1 Cluster the semantic failure reasons into named groups with keywords and frequencies.\n\
         2. VARIANT-2 Group these failure reasons and report name, terms, and count per group.\n\
         3. VARIANT-3 Build a taxonomy table of the failure reasons with frequencies.",
    );
    let responses = discovery_responses();
    fixture_line(
        &mut fixtures,
        Some("cluster_discovery"),
        Some("These are semantic failure reasons for different trajectories of a car"),
        None,
        &responses[0],
    );
    for (i, response) in responses.iter().enumerate().skip(1) {
        fixture_line(
            &mut fixtures,
            Some("cluster_discovery"),
            Some(&format!("VARIANT-{i}")),
            None,
            response,
        );
    }
    let final_set = serde_json::json!({
        "schema_version": 1,
        "clusters": serde_json::to_value(&clusters.clusters).unwrap(),
    });
    fixture_line(
        &mut fixtures,
        Some("aggregation"),
        Some("consolidating several candidate clusterings"),
        None,
        &final_set.to_string(),
    );

    // Step 3: exact-key fixtures per (reason group, mode)
    for group in groups() {
        let reason = FailureReason {
            trajectory_id: String::new(),
            trajectory_description: String::new(),
            failure_reason: group.reason_text.to_string(),
            raw_response: String::new(),
        };
        for (mode, response) in [
            (AssignmentMode::Single, group.single_response),
            (AssignmentMode::Multi, group.multi_response),
        ] {
            let request = build_assignment_prompt(
                &reason,
                &clusters,
                mode,
                &DomainProfile::Driving,
                REASONER,
                decoding.clone(),
            )
            .unwrap();
            fixture_line(&mut fixtures, None, None, Some(request.cache_key().as_hex().into()), response);
        }
    }

    // Monitor: SAFE catch-all plus exact keys for the scripted unsafe steps
    fixture_line(&mut fixtures, Some("monitor"), Some("runtime failure monitor"), None, "SAFE");
    let monitor_config = MonitorConfig::default_for(&DomainProfile::Driving);
    for (i, traj) in dataset.trajectories.iter().enumerate() {
        let unsafe_from = if traj.label == Label::Failure {
            if FN_IDS.contains(&traj.id.as_str()) {
                continue; // stays SAFE throughout: false negative
            }
            UNSAFE_FROM
        } else if traj.id == FP_ID {
            FP_UNSAFE_FROM
        } else {
            continue;
        };
        let verdict: String = if traj.label == Label::Failure {
            group_for(i).verdict.to_string()
        } else {
            "a child chasing a ball onto the street".to_string()
        };
        let stream = monitor_stream(traj, &monitor_config).unwrap();
        for step in unsafe_from..stream.len() {
            let start = (step + 1).saturating_sub(monitor_config.window_frames);
            let request = build_monitor_prompt(
                &stream[start..=step],
                Some(&clusters),
                &monitor_config,
                MLLM,
                decoding.clone(),
                FrameEncoding::InlineBase64,
            )
            .unwrap();
            fixture_line(&mut fixtures, None, None, Some(request.cache_key().as_hex().into()), &verdict);
        }
    }

    let fixtures_path = root.join("fixtures.jsonl");
    std::fs::write(&fixtures_path, fixtures.join("\n")).unwrap();

    let config_path = root.join("failsem.toml");
    std::fs::write(
        &config_path,
        format!(
            "[dataset]\nmanifest = {manifest:?}\n\n\
             [run]\njobs = 4\nseed = 7\n\n\
             [backend]\nmode = \"mock\"\nfixtures = {fixtures:?}\n\n\
             [assignment]\nmode = \"both\"\n\n\
             [baseline]\nk = 3\n\n\
             [eval]\nmethod_name = \"Ours\"\nsplit_name = \"iid\"\n",
            manifest = manifest.display().to_string(),
            fixtures = fixtures_path.display().to_string(),
        ),
    )
    .unwrap();

    Scenario { manifest, config: config_path }
}
