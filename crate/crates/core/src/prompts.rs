//! Prompt texts for every model-facing stage, plus the rendering helpers
//! that substitute cluster lists and frame rates into them.

use crate::error::{Error, Result};
use crate::model::{ClusterSet, DomainProfile};

/// Step-1 prompt template for one domain profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ReasonPromptTemplate {
    pub profile: DomainProfile,
    pub template_text: String,
}

pub const REASON_PROMPT_DRIVING: &str = "Describe the trajectory of a car from the sequence of images it observed along its path, knowing that it undergoes a collision. After that, provide the visual semantic reason behind its failure in brief. Pay attention to the surrounding objects, other vehicles, and environmental conditions.\n\nYou must provide your answer in the following format --\n\ntrajectory: trajectory_description\n\nfailure_reason: semantic_failure_reason\n\nwhere trajectory_description is the description of its trajectory and semantic_failure_reason is the semantic reason behind failure.";

pub const REASON_PROMPT_INDOOR: &str = "Provide a description of the trajectory of a robot from the sequence of images it observed along its path, knowing that it collides in the last image. After that, provide the visual semantic reasons behind its failure in brief. Pay attention to the surrounding objects.\n\nYou must provide your answer in the following format --\n\ntrajectory: trajectory_description\n\nfailure_reason: semantic_failure_reason\n\nwhere trajectory_description is the description of its trajectory and semantic_failure_reason is the semantic reason behind failure.";

/// Registry of Step-1 templates; custom profiles must be registered before use.
#[derive(Debug, Clone, Default)]
pub struct TemplateSet {
    custom: Vec<ReasonPromptTemplate>,
}

impl TemplateSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, template: ReasonPromptTemplate) -> Result<()> {
        if !template.template_text.contains("trajectory:")
            || !template.template_text.contains("failure_reason:")
        {
            return Err(Error::ConfigInvalid(
                "reason template must contain the output-format contract lines".into(),
            ));
        }
        self.custom.retain(|t| t.profile != template.profile);
        self.custom.push(template);
        Ok(())
    }

    pub fn resolve(&self, profile: &DomainProfile) -> Result<String> {
        if let Some(t) = self.custom.iter().find(|t| t.profile == *profile) {
            return Ok(t.template_text.clone());
        }
        match profile {
            DomainProfile::Driving => Ok(REASON_PROMPT_DRIVING.to_string()),
            DomainProfile::Indoor => Ok(REASON_PROMPT_INDOOR.to_string()),
            DomainProfile::Custom(name) => Err(Error::ProfileUnknown(format!(
                "no reason template registered for custom profile {name:?}"
            ))),
        }
    }
}

/// Seed clustering prompt used to spawn the ensemble.
pub fn clustering_seed_prompt(profile: &DomainProfile) -> String {
    match profile {
        DomainProfile::Indoor => "These are semantic failure reasons of a robot navigating indoors based on images that fails due to collision. Generate cluster centers based on the types of visual semantic failures present so that these reasons can be assigned to those clusters. Return the cluster names and the list of characteristics, keywords which belong to each cluster. Make sure to include long tail/rare clusters. Report the occurrence frequency of each cluster.".to_string(),
        _ => "These are semantic failure reasons for different trajectories of a car. Your job is to analyze all of them and come up with clusters of different semantic failure reasons. Generate cluster centers based on the types of visual semantic failures present so that these reasons can be assigned to those clusters.\n\nReturn the cluster names and the list of characteristics, keywords which belong to each cluster. Make sure to include long tail/rare clusters. Report the occurrence frequency of each cluster.".to_string(),
    }
}

/// Meta-prompt asking the model for three rephrasings of the seed prompt.
pub fn ensemble_generation_prompt(seed: &str) -> String {
    format!(
        "You will be given an initial prompt used to cluster semantic failure reasons of an autonomous system. Propose three other prompts that accomplish the same task, using good practices for prompting (clear role, explicit steps, explicit output fields). Keep each prompt self-contained.\n\nReturn exactly three prompts as a numbered list (1., 2., 3.), nothing else.\n\nInitial prompt:\n{seed}"
    )
}

/// Machine-readable output contract appended to every clustering prompt so
/// downstream code gets one schema; the multi-shape parser stays as fallback.
pub const CLUSTERING_COERCION_SUFFIX: &str = "After your analysis, output the final result as a single JSON object with key \"clusters\": an array of objects with fields \"name\", \"description\", \"keywords\" (array of short phrases), and \"frequency\" (a count like \"12\", a percent like \"35%\", or a range like \"40-45%\"). Do not include any text after the JSON.";

/// Prompt for the consolidation call that merges candidate clusterings.
pub fn aggregation_prompt(serialized_candidates: &str, target_hint: Option<usize>) -> String {
    let hint = target_hint
        .map(|l| format!(" Aim for roughly {l} clusters if the data supports it."))
        .unwrap_or_default();
    format!(
        "You are consolidating several candidate clusterings of semantic failure reasons produced by different prompts. Merge overlapping clusters, unify names and descriptions, keep genuinely distinct failure modes separate (including rare/long-tail ones), and estimate each cluster's frequency of occurrence.{hint}\n\nOutput a single JSON object: {{\"schema_version\": 1, \"clusters\": [{{\"name\", \"description\", \"keywords\", \"frequency\"}}]}} with frequency as {{\"kind\": \"percent_point\", \"value\": ...}}, {{\"kind\": \"percent_range\", \"lo\": ..., \"hi\": ...}}, or {{\"kind\": \"count\", \"value\": ...}}. Never name a cluster \"Other\". Do not include any text outside the JSON.\n\nCandidate clusterings:\n{serialized_candidates}"
    )
}

/// Render a cluster list for prompt substitution: name, keywords, description.
pub fn render_cluster_list(cs: &ClusterSet) -> String {
    let mut out = String::new();
    for (i, cluster) in cs.clusters.iter().enumerate() {
        out.push_str(&format!(
            "{}. {}\n   Keywords: {}\n   Description: {}\n",
            i + 1,
            cluster.name,
            cluster.keywords.join(", "),
            cluster.description
        ));
    }
    out
}

/// Assignment prompt; `single` adds the one-cluster constraint sentence.
pub fn assignment_prompt(
    profile: &DomainProfile,
    cluster_list: &str,
    reason_text: &str,
    single: bool,
) -> String {
    let agent = match profile {
        DomainProfile::Indoor => "robot",
        _ => "car",
    };
    let constraint = if single {
        " Assign the trajectory to exactly one cluster (or \"Other\")."
    } else {
        ""
    };
    format!(
        "You are classifying {agent} trajectory descriptions into predefined clusters based on failure types.\nAssign the trajectory to one or more of the following clusters:\n    {cluster_list}\nAnalyze the trajectory description and identify which type(s) of failures occurred. Consider the keywords and notes for each cluster to help with your classification. Use the \"Other\" category only when the trajectory doesn't reasonably fit into any of the existing clusters.{constraint}\n\nRespond with the exact cluster name(s), separated by semicolons, or \"Other\". Do not add explanations.\n\nTrajectory failure reason:\n{reason_text}"
    )
}

fn format_rate(per_second: f64) -> String {
    if (per_second - per_second.round()).abs() < 1e-9 {
        format!("{}", per_second.round() as i64)
    } else {
        format!("{per_second:.1}")
    }
}

fn format_period(seconds: f64) -> String {
    if (seconds - seconds.round()).abs() < 1e-9 {
        format!("{}", seconds.round() as i64)
    } else {
        let s = format!("{seconds}");
        if s.len() <= 6 {
            s
        } else {
            format!("{seconds:.2}")
        }
    }
}

/// Runtime-monitor prompt for the driving profile. `clusters` is `None` in
/// the NoContext ablation, which drops the matching step entirely.
pub fn monitor_prompt_driving(frame_rate_fps: f64, clusters: Option<&str>) -> String {
    let rate = format_rate(frame_rate_fps);
    let mut p = String::new();
    p.push_str("You are a runtime failure monitor for the ego car navigating outdoors.\n");
    p.push_str("Your task is to analyze a sequence of forward-facing camera images ending at the car's current position, and determine whether the car is:\n");
    p.push_str("a) SAFE - confidently following a collision-free trajectory, or\n");
    p.push_str("b) UNSAFE - likely to collide with another vehicle or an object\n\n");
    p.push_str("Operational Context:\n");
    p.push_str("- The car must keep on moving without any physical collisions.\n");
    p.push_str(&format!("- You are provided with a time-ordered sequence of image frames at {rate} frames per second, ending at the car's current position.\n"));
    p.push_str("- Any collision is considered a failure.\n\n");
    p.push_str("Reasoning Procedure:\n");
    p.push_str("1. Trajectory Inference:\n");
    p.push_str("   From the image sequence, estimate the car's likely near-future motion: Is it continuing straight, braking, turning, or maneuvering sharply?\n");
    p.push_str("2. Scene Understanding:\n");
    p.push_str("   Examine the latest image for road layout, obstacles, other vehicles, pedestrians, and environmental conditions.\n");
    p.push_str("   Pay extra attention to:\n");
    p.push_str("   - Objects within or near the ego vehicle's predicted path\n");
    p.push_str("   - Occluded or partially visible road users\n");
    p.push_str("   - Adverse visibility (glare, fog, night) affecting perception of relevant objects\n");
    p.push_str("3. Collision Risk Assessment:\n");
    p.push_str("   Determine if a collision is likely.\n");
    p.push_str("   - Prioritize risks that intersect the ego path\n");
    p.push_str("   - Ignore objects that are clearly outside the trajectory or do not pose an interaction risk\n");
    if let Some(list) = clusters {
        p.push_str("4. Semantic Failure Matching:\n");
        p.push_str("   - You are given a list of Known Semantic Failure Reasons of this car (list below) that can lead to collisions.\n");
        p.push_str("     If the current scenario aligns with any of the known failure reasons, mark it unsafe and return the exact name of known failure reason.\n");
        p.push_str("   - If the failure reason does not match a listed type but a collision is likely, briefly describe the new semantic reason.\n");
        p.push_str("   - Return SAFE only if you are confident that the car will safely pass through the scene without any possible collision.\n");
        p.push_str("   - Err on the side of caution, i.e., failure, when you are not sure.\n\n");
        p.push_str("Known Semantic Failure Reasons:\n");
        p.push_str(list);
        p.push('\n');
    }
    p.push_str("\nOutput Instructions:\nReturn only one of the following:\n");
    if clusters.is_some() {
        p.push_str("- Name of a known semantic failure reason (exactly as written above)\n");
        p.push_str("- A brief description of a new failure type\n");
    } else {
        p.push_str("- A brief description of the failure type if a collision is likely\n");
    }
    p.push_str("- The word SAFE\n\n");
    p.push_str("Rules:\n- Do not provide explanations, justifications, or degrees of certainty.\n");
    if clusters.is_some() {
        p.push_str("- Output must be a single, definitive label: one listed reason, a new concise reason, or SAFE.\n");
    } else {
        p.push_str("- Output must be a single, definitive label: a concise reason or SAFE.\n");
    }
    p
}

/// Runtime-monitor prompt for the indoor profile.
pub fn monitor_prompt_indoor(frame_period_s: f64, max_speed_mps: f64, clusters: Option<&str>) -> String {
    let period = format_period(frame_period_s);
    let speed = format_period(max_speed_mps);
    let mut p = String::new();
    p.push_str("You are a runtime failure monitor for a vision-based autonomous robot navigating in an indoor environment.\n");
    p.push_str("Your task is to analyze a sequence of recent image observations, ending at the robot's current position, and determine whether the robot is:\n");
    p.push_str("- SAFE - confidently continuing in free space on a collision-free path, or\n");
    p.push_str("- UNSAFE - no free space ahead and at significant and credible risk of collision, based on observable evidence.\n\n");
    p.push_str("Operational Context:\n");
    p.push_str("- The robot must reach a predefined goal without any physical collisions.\n");
    p.push_str(&format!("- You are provided with a time-ordered sequence of image frames, each after {period} seconds, ending at the robot's current location.\n"));
    p.push_str(&format!("- The robot is moving with a maximum speed of {speed} m/s.\n\n"));
    p.push_str("Evaluation Procedure:\n");
    p.push_str("1. Predict Short-Term Trajectory\n");
    p.push_str("   - Based on the image sequence, estimate the robot's likely immediate direction of movement (e.g., straight, turning, drifting).\n");
    p.push_str("   - Incorporate temporal cues for better motion understanding.\n");
    p.push_str("2. Identify Relevant Obstacles\n");
    p.push_str("   - Inspect the final image for physical objects that may intersect the predicted path.\n");
    p.push_str("   - Focus only on nearby, collision-range elements that could plausibly interfere with the robot's trajectory.\n");
    p.push_str("3. Determine Collision Risk\n");
    p.push_str("   - Mark the situation as unsafe if there is a visual alignment between the projected path and an obstacle, else mark it SAFE.\n");
    if let Some(list) = clusters {
        p.push_str("4. Classify the Risk\n");
        p.push_str("   - You are given the most common failure modes of this robot in the list below.\n");
        p.push_str("   - If the risk matches one of the Known Semantic Failure Reasons listed below, return name of that exact label.\n");
        p.push_str("   - If a new type of visible risk is present, briefly describe it in concise terms.\n");
        p.push_str("   - If no substantial risk is visible along the projected path, mark it as SAFE.\n\n");
        p.push_str("Known Semantic Failure Reasons:\n");
        p.push_str(list);
        p.push('\n');
    }
    p.push_str("\nOutput Instructions:\nReturn only one of the following:\n");
    if clusters.is_some() {
        p.push_str("- Name of a known semantic failure reason (exactly as written above)\n");
        p.push_str("- A brief description of a new failure type\n");
    } else {
        p.push_str("- A brief description of the failure type if a collision risk is present\n");
    }
    p.push_str("- The word SAFE\n\n");
    p.push_str("Rules:\n- Do not provide explanations, justifications, or degrees of certainty.\n");
    if clusters.is_some() {
        p.push_str("- Output must be a single, definitive label: one listed reason, a new concise reason, or SAFE.\n");
    } else {
        p.push_str("- Output must be a single, definitive label: a concise reason or SAFE.\n");
    }
    p
}

/// Topic-summary prompt for the model-assisted baseline variant.
pub fn topic_summary_prompt(keywords: &[String], samples: &[&str]) -> String {
    let mut p = String::from(
        "Summarize the failure topic below in at most 8 words. Return only the summary line.\n\n",
    );
    p.push_str(&format!("Keywords: {}\n", keywords.join(", ")));
    if !samples.is_empty() {
        p.push_str("Representative failure reasons:\n");
        for s in samples {
            p.push_str(&format!("- {s}\n"));
        }
    }
    p
}
