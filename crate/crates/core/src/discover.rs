//! Step 2: prompt-ensemble cluster discovery. Each clustering prompt runs
//! over all failure reasons; candidate clusterings are parsed from whatever
//! shape the model chose (JSON array, JSON object, markdown table) and then
//! consolidated by an aggregation call into one validated [`ClusterSet`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{DecodingParams, Gateway, MessagePart, ModelRequest, PromptRole};
use crate::model::{
    validate_cluster_set, ClusterSet, FailureCluster, FailureReason, FrequencyEstimate,
};
use crate::prompts::{aggregation_prompt, ensemble_generation_prompt, CLUSTERING_COERCION_SUFFIX};
use crate::util::sha256_hex;

/// Seed prompt plus the model-proposed rephrasings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEnsemble {
    pub seed_prompt: String,
    pub variants: Vec<String>,
    pub provenance: serde_json::Value,
}

impl PromptEnsemble {
    /// Seed alone, no model call; used by `--prompts 1`.
    pub fn seed_only(seed: impl Into<String>) -> Self {
        PromptEnsemble {
            seed_prompt: seed.into(),
            variants: Vec::new(),
            provenance: serde_json::json!({ "source": "seed_only" }),
        }
    }

    /// All prompts in run order: seed first, then variants.
    pub fn prompts(&self) -> Vec<&str> {
        std::iter::once(self.seed_prompt.as_str())
            .chain(self.variants.iter().map(|v| v.as_str()))
            .collect()
    }
}

/// One cluster as reported by a single clustering prompt, before aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateCluster {
    pub name: String,
    pub keywords: Vec<String>,
    pub frequency: FrequencyEstimate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_modes: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateClustering {
    pub prompt_index: usize,
    pub clusters: Vec<CandidateCluster>,
    pub raw_response: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Ask the model for three rephrasings of the seed prompt.
pub fn generate_prompt_ensemble(
    seed: &str,
    gateway: &Gateway,
    model_id: &str,
    decoding: DecodingParams,
) -> Result<PromptEnsemble> {
    if seed.trim().is_empty() {
        return Err(Error::Precondition("seed prompt is empty".into()));
    }
    let request = ModelRequest::new(
        PromptRole::EnsembleGeneration,
        model_id,
        vec![MessagePart::Text(ensemble_generation_prompt(seed))],
        decoding,
    )?;
    let response = gateway.cached_complete(&request)?;
    let variants = parse_ensemble_variants(&response.text)?;
    Ok(PromptEnsemble {
        seed_prompt: seed.to_string(),
        variants,
        provenance: serde_json::json!({
            "source": "ensemble_generation",
            "model_id": model_id,
            "response_digest": sha256_hex(response.text.as_bytes()),
        }),
    })
}

/// Extract exactly three prompt variants from a numbered list or fenced code
/// blocks; extras beyond three are dropped.
pub fn parse_ensemble_variants(text: &str) -> Result<Vec<String>> {
    let fenced = fenced_blocks(text);
    let items = if fenced.len() >= 3 { fenced } else { numbered_items(text) };
    let variants: Vec<String> =
        items.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if variants.len() < 3 {
        return Err(Error::EnsembleParse(format!(
            "expected 3 prompt variants, extracted {}",
            variants.len()
        )));
    }
    Ok(variants.into_iter().take(3).collect())
}

fn fenced_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        // skip the info string on the opening fence line
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &after[body_start..];
        let Some(end) = body.find("```") else { break };
        blocks.push(body[..end].to_string());
        rest = &body[end + 3..];
    }
    blocks
}

fn numbered_items(text: &str) -> Vec<String> {
    let mut items: Vec<Vec<&str>> = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim_start();
        let is_item_start = trimmed
            .split_once(['.', ')'])
            .map(|(head, _)| !head.is_empty() && head.chars().all(|c| c.is_ascii_digit()))
            .unwrap_or(false);
        if is_item_start {
            let (_, body) = trimmed.split_once(['.', ')']).unwrap();
            items.push(vec![body.trim_start()]);
        } else if let Some(current) = items.last_mut() {
            current.push(line);
        }
    }
    items.into_iter().map(|lines| lines.join("\n")).collect()
}

/// Parse a frequency written as `"12"`, `"35%"`, `"40-45%"` (any dash), or
/// `"<2%"`; bare integers are counts, anything with `%` is a percentage.
pub fn parse_frequency_text(raw: &str) -> Result<FrequencyEstimate> {
    let cleaned: String = raw
        .trim()
        .chars()
        .map(|c| match c {
            '\u{2010}'..='\u{2015}' | '\u{2212}' => '-',
            c => c,
        })
        .collect();
    let cleaned = cleaned.replace('~', "");
    let is_percent = cleaned.contains('%');
    let body = cleaned.replace('%', "");
    let body = body.trim();

    let parse_num = |s: &str| -> Result<f64> {
        s.trim().parse::<f64>().map_err(|_| {
            Error::ClusteringParse(format!("unparseable frequency {raw:?}"))
        })
    };

    if let Some(rest) = body.strip_prefix('<') {
        let hi = parse_num(rest)?;
        return Ok(FrequencyEstimate::PercentRange { lo: 0.0, hi });
    }
    // a dash after the first character splits a range (leading '-' would be a sign)
    if let Some(split) = body.char_indices().skip(1).find(|&(_, c)| c == '-').map(|(i, _)| i) {
        let lo = parse_num(&body[..split])?;
        let hi = parse_num(&body[split + 1..])?;
        return Ok(FrequencyEstimate::PercentRange { lo, hi });
    }
    let value = parse_num(body)?;
    if is_percent {
        return Ok(FrequencyEstimate::PercentPoint { value });
    }
    if value >= 0.0 && value.fract() == 0.0 {
        Ok(FrequencyEstimate::Count { value: value as u64 })
    } else {
        Ok(FrequencyEstimate::PercentPoint { value })
    }
}

fn frequency_from_json(value: &serde_json::Value, from_count_key: bool) -> Result<FrequencyEstimate> {
    match value {
        serde_json::Value::Number(n) => {
            if let Some(int) = n.as_u64() {
                Ok(FrequencyEstimate::Count { value: int })
            } else {
                let v = n.as_f64().unwrap_or(0.0);
                if from_count_key {
                    Err(Error::ClusteringParse(format!("count must be a non-negative integer, got {v}")))
                } else {
                    Ok(FrequencyEstimate::PercentPoint { value: v })
                }
            }
        }
        serde_json::Value::String(s) => {
            // schema-form frequencies arrive as objects; strings use the text grammar
            parse_frequency_text(s)
        }
        serde_json::Value::Object(_) => {
            serde_json::from_value::<FrequencyEstimate>(value.clone())
                .map_err(|e| Error::ClusteringParse(format!("bad frequency object: {e}")))
        }
        other => Err(Error::ClusteringParse(format!("bad frequency value: {other}"))),
    }
}

/// Result of parsing one clustering response, before it is wrapped with its
/// prompt index and raw text.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedClustering {
    pub clusters: Vec<CandidateCluster>,
    pub warnings: Vec<String>,
}

fn string_list(value: &serde_json::Value) -> Vec<String> {
    match value {
        serde_json::Value::Array(items) => items
            .iter()
            .filter_map(|v| v.as_str())
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
        serde_json::Value::String(s) => s
            .split([',', ';'])
            .map(|p| p.trim().to_string())
            .filter(|p| !p.is_empty())
            .collect(),
        _ => Vec::new(),
    }
}

fn cluster_from_object(obj: &serde_json::Map<String, serde_json::Value>, warnings: &mut Vec<String>) -> Option<CandidateCluster> {
    let name = obj
        .get("cluster_name")
        .or_else(|| obj.get("name"))
        .and_then(|v| v.as_str())
        .map(|s| s.trim().to_string())
        .unwrap_or_default();
    if name.is_empty() {
        warnings.push("dropped cluster object without a name".into());
        return None;
    }
    let keywords = obj
        .get("keywords")
        .or_else(|| obj.get("terms"))
        .map(string_list)
        .unwrap_or_default();
    let (freq_value, from_count_key) = match (obj.get("frequency"), obj.get("count"), obj.get("occurrence_frequency")) {
        (Some(v), _, _) => (Some(v), false),
        (None, Some(v), _) => (Some(v), true),
        (None, None, Some(v)) => (Some(v), false),
        (None, None, None) => (None, false),
    };
    let frequency = match freq_value {
        Some(v) => match frequency_from_json(v, from_count_key) {
            Ok(f) => f,
            Err(e) => {
                warnings.push(format!("cluster {name:?}: {e}; defaulting to count 0"));
                FrequencyEstimate::Count { value: 0 }
            }
        },
        None => {
            warnings.push(format!("cluster {name:?} has no frequency; defaulting to count 0"));
            FrequencyEstimate::Count { value: 0 }
        }
    };
    let description = obj
        .get("description")
        .or_else(|| obj.get("notes"))
        .and_then(|v| v.as_str())
        .map(|s| s.trim().to_string());
    let failure_modes = obj
        .get("failure_modes")
        .or_else(|| obj.get("failure modes"))
        .map(string_list)
        .filter(|v| !v.is_empty());
    Some(CandidateCluster { name, keywords, frequency, description, failure_modes })
}

/// Extract the first balanced JSON object or array, skipping fences and prose.
fn extract_json(text: &str) -> Option<serde_json::Value> {
    let candidates = {
        let mut c = fenced_blocks(text);
        c.push(text.to_string());
        c
    };
    for chunk in candidates {
        let trimmed = chunk.trim();
        if let Ok(v) = serde_json::from_str::<serde_json::Value>(trimmed) {
            if v.is_array() || v.is_object() {
                return Some(v);
            }
        }
        if let Some(balanced) = first_balanced_json(trimmed) {
            if let Ok(v) = serde_json::from_str::<serde_json::Value>(&balanced) {
                return Some(v);
            }
        }
    }
    None
}

fn first_balanced_json(s: &str) -> Option<String> {
    let mut depth = 0usize;
    let mut start = None;
    let mut in_string = false;
    let mut escaped = false;
    for (i, ch) in s.char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_string = false;
            }
            continue;
        }
        match ch {
            '"' => in_string = true,
            '{' | '[' => {
                if start.is_none() {
                    start = Some(i);
                }
                depth += 1;
            }
            '}' | ']' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    return Some(s[start?..=i].to_string());
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_markdown_table(text: &str) -> Option<(Vec<CandidateCluster>, Vec<String>)> {
    let lines: Vec<&str> = text.lines().collect();
    let header_idx = lines.iter().position(|line| {
        let lower = line.to_lowercase();
        line.contains('|')
            && lower.contains("cluster")
            && (lower.contains("frequency") || lower.contains("count"))
    })?;
    let cells = |line: &str| -> Vec<String> {
        line.trim()
            .trim_matches('|')
            .split('|')
            .map(|c| c.trim().trim_matches('*').trim().to_string())
            .collect()
    };
    let header = cells(lines[header_idx]);
    let col = |pred: &dyn Fn(&str) -> bool| header.iter().position(|h| pred(&h.to_lowercase()));
    let name_col = col(&|h| h.contains("cluster") || h == "name")?;
    let keyword_col = col(&|h| h.contains("keyword") || h.contains("characteristic") || h.contains("term"));
    let freq_col = col(&|h| h.contains("frequency") || h.contains("count"))?;
    let desc_col = col(&|h| h.contains("description") || h.contains("note"));

    let mut clusters = Vec::new();
    let mut warnings = Vec::new();
    for line in lines.iter().skip(header_idx + 1) {
        if !line.contains('|') {
            break;
        }
        let row = cells(line);
        // separator row: --- cells
        if row.iter().all(|c| c.chars().all(|ch| matches!(ch, '-' | ':' | ' ')) ) {
            continue;
        }
        let name = row.get(name_col).cloned().unwrap_or_default();
        if name.is_empty() {
            warnings.push("dropped table row without a cluster name".into());
            continue;
        }
        let keywords = keyword_col
            .and_then(|i| row.get(i))
            .map(|cell| {
                cell.split([',', ';'])
                    .map(|p| p.trim().to_string())
                    .filter(|p| !p.is_empty())
                    .collect()
            })
            .unwrap_or_default();
        let frequency = match row.get(freq_col).map(|c| parse_frequency_text(c)) {
            Some(Ok(f)) => f,
            _ => {
                warnings.push(format!("row {name:?}: unparseable frequency; defaulting to count 0"));
                FrequencyEstimate::Count { value: 0 }
            }
        };
        let description = desc_col.and_then(|i| row.get(i)).map(|s| s.to_string()).filter(|s| !s.is_empty());
        clusters.push(CandidateCluster { name, keywords, frequency, description, failure_modes: None });
    }
    if clusters.is_empty() {
        None
    } else {
        Some((clusters, warnings))
    }
}

/// Parse a clustering response. Three shapes are tried in order: a JSON array
/// of cluster objects, a JSON object with a `clusters` array (whose
/// `assignments` key, if present, is dropped with a notice), and a markdown
/// table with Cluster Name / Keywords / Frequency columns.
pub fn parse_clustering_output(text: &str) -> Result<ParsedClustering> {
    let mut warnings = Vec::new();
    let json = extract_json(text);
    let clusters = match &json {
        Some(serde_json::Value::Array(items)) => {
            let mut clusters = Vec::new();
            for item in items {
                if let Some(obj) = item.as_object() {
                    if let Some(c) = cluster_from_object(obj, &mut warnings) {
                        clusters.push(c);
                    }
                }
            }
            Some(clusters)
        }
        Some(serde_json::Value::Object(obj)) => {
            if obj.contains_key("assignments") {
                warnings.push("response carried an assignments map; dropped here".into());
            }
            obj.get("clusters").and_then(|c| c.as_array()).map(|items| {
                let mut clusters = Vec::new();
                for item in items {
                    if let Some(obj) = item.as_object() {
                        if let Some(c) = cluster_from_object(obj, &mut warnings) {
                            clusters.push(c);
                        }
                    }
                }
                clusters
            })
        }
        _ => None,
    };
    if let Some(clusters) = clusters {
        if !clusters.is_empty() {
            return Ok(ParsedClustering { clusters, warnings });
        }
    }
    if let Some((clusters, table_warnings)) = parse_markdown_table(text) {
        warnings.extend(table_warnings);
        return Ok(ParsedClustering { clusters, warnings });
    }
    Err(Error::ClusteringParse(
        "no JSON array, clusters object, or markdown table found".into(),
    ))
}

/// The clustering request for one ensemble prompt: the prompt, the output
/// coercion suffix, then every failure reason prefixed with its trajectory id.
pub fn build_clustering_request(
    prompt: &str,
    reasons: &[FailureReason],
    model_id: &str,
    decoding: DecodingParams,
) -> Result<ModelRequest> {
    if reasons.is_empty() {
        return Err(Error::Precondition("no failure reasons to cluster".into()));
    }
    let mut text = String::with_capacity(prompt.len() + reasons.len() * 64);
    text.push_str(prompt);
    text.push_str("\n\n");
    text.push_str(CLUSTERING_COERCION_SUFFIX);
    text.push_str("\n\nFailure reasons (one per line, id-prefixed):\n");
    for reason in reasons {
        text.push_str(&format!("[{}] {}\n", reason.trajectory_id, reason.failure_reason));
    }
    ModelRequest::new(PromptRole::ClusterDiscovery, model_id, vec![MessagePart::Text(text)], decoding)
}

/// Run one clustering prompt over all reasons and parse the candidate result.
pub fn discover_candidate_clusters(
    reasons: &[FailureReason],
    prompt: &str,
    prompt_index: usize,
    gateway: &Gateway,
    model_id: &str,
    decoding: DecodingParams,
) -> Result<CandidateClustering> {
    let request = build_clustering_request(prompt, reasons, model_id, decoding)?;
    let response = gateway.cached_complete(&request)?;
    let parsed = parse_clustering_output(&response.text)?;
    Ok(CandidateClustering {
        prompt_index,
        clusters: parsed.clusters,
        raw_response: response.text,
        warnings: parsed.warnings,
    })
}

fn candidate_to_cluster(c: &CandidateCluster) -> FailureCluster {
    FailureCluster {
        name: c.name.clone(),
        description: c.description.clone().unwrap_or_default(),
        keywords: c.keywords.clone(),
        frequency: c.frequency.clone(),
    }
}

/// Parse the aggregation response into clusters: the artifact's cluster-set
/// schema first, the generic clustering shapes as fallback.
fn parse_cluster_set_response(text: &str) -> Result<Vec<FailureCluster>> {
    if let Some(json) = extract_json(text) {
        if json.get("schema_version").is_some() && json.get("clusters").is_some() {
            if let Ok(cs) = serde_json::from_value::<ClusterSet>(json.clone()) {
                return Ok(cs.clusters);
            }
        }
    }
    let parsed = parse_clustering_output(text)?;
    Ok(parsed.clusters.iter().map(candidate_to_cluster).collect())
}

/// Consolidate candidate clusterings into one validated [`ClusterSet`].
pub fn aggregate_clusterings(
    candidates: &[CandidateClustering],
    gateway: &Gateway,
    model_id: &str,
    decoding: DecodingParams,
    target_hint: Option<usize>,
) -> Result<ClusterSet> {
    if candidates.is_empty() {
        return Err(Error::Precondition("aggregation needs at least one candidate".into()));
    }
    let slim: Vec<serde_json::Value> = candidates
        .iter()
        .map(|c| {
            serde_json::json!({
                "prompt_index": c.prompt_index,
                "clusters": c.clusters,
            })
        })
        .collect();
    let serialized = serde_json::to_string_pretty(&slim)?;
    let request = ModelRequest::new(
        PromptRole::Aggregation,
        model_id,
        vec![MessagePart::Text(aggregation_prompt(&serialized, target_hint))],
        decoding,
    )?;
    let response = gateway.cached_complete(&request)?;
    let clusters = parse_cluster_set_response(&response.text)
        .map_err(|e| Error::AggregationInvalid(format!("unparseable aggregation output: {e}")))?;

    let input_cardinality: usize = candidates.iter().map(|c| c.clusters.len()).sum();
    if clusters.len() > input_cardinality {
        return Err(Error::AggregationInvalid(format!(
            "aggregation produced {} clusters from {} candidate clusters",
            clusters.len(),
            input_cardinality
        )));
    }
    let provenance = serde_json::json!({
        "source": "ensemble_aggregation",
        "model_id": model_id,
        "candidate_count": candidates.len(),
        "candidate_digests": candidates
            .iter()
            .map(|c| sha256_hex(c.raw_response.as_bytes()))
            .collect::<Vec<_>>(),
    });
    let set = ClusterSet::new(clusters, provenance);
    let report = validate_cluster_set(&set);
    if !report.is_valid() {
        return Err(Error::AggregationInvalid(
            report
                .violations
                .iter()
                .map(|v| v.detail.clone())
                .collect::<Vec<_>>()
                .join("; "),
        ));
    }
    Ok(set)
}
