//! Deterministic topic-modeling baseline over failure-reason texts:
//! hashed term-frequency embeddings, seeded spherical k-means, and
//! class-based TF-IDF keyword extraction, with an optional model-summarized
//! variant layered on top.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gateway::{DecodingParams, Gateway, MessagePart, ModelRequest, PromptRole};
use crate::prompts::topic_summary_prompt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub token_pattern: String,
    /// No stopword removal by default: baseline keyword lists keep their
    /// natural flavor, function words included.
    pub stopwords: Vec<String>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            lowercase: true,
            token_pattern: "[a-z0-9]+".to_string(),
            stopwords: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub tokenizer: TokenizerConfig,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let corpus = Corpus { documents, tokenizer: TokenizerConfig::default() };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        if self.documents.is_empty() {
            return Err(Error::Precondition("corpus has no documents".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for doc in &self.documents {
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::Precondition(format!("duplicate document id {}", doc.id)));
            }
        }
        Ok(())
    }
}

/// Lowercased token runs per document, in text order.
pub fn tokenize(corpus: &Corpus) -> Result<Vec<Vec<String>>> {
    let pattern = Regex::new(&corpus.tokenizer.token_pattern)
        .map_err(|e| Error::ConfigInvalid(format!("token pattern: {e}")))?;
    let stop: std::collections::HashSet<&str> =
        corpus.tokenizer.stopwords.iter().map(|s| s.as_str()).collect();
    Ok(corpus
        .documents
        .iter()
        .map(|doc| {
            let text =
                if corpus.tokenizer.lowercase { doc.text.to_lowercase() } else { doc.text.clone() };
            pattern
                .find_iter(&text)
                .map(|m| m.as_str().to_string())
                .filter(|t| !stop.contains(t.as_str()))
                .collect()
        })
        .collect())
}

/// Stable feature-hash bucket for a term; independent of process and platform.
pub fn hash_bucket(term: &str, dim: usize) -> usize {
    let digest = Sha256::digest(term.as_bytes());
    let mut eight = [0u8; 8];
    eight.copy_from_slice(&digest[..8]);
    (u64::from_be_bytes(eight) % dim as u64) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub dim: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig { dim: 512 }
    }
}

/// L2-normalized hashed term-frequency vectors. Deterministic, no external
/// model; zero-token documents map to the zero vector with a warning.
pub fn embed_documents(tokens: &[Vec<String>], config: EmbedConfig) -> Vec<Vec<f64>> {
    tokens
        .iter()
        .enumerate()
        .map(|(i, doc_tokens)| {
            let mut vector = vec![0.0f64; config.dim];
            for token in doc_tokens {
                vector[hash_bucket(token, config.dim)] += 1.0;
            }
            let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                log::warn!("document #{i} has no tokens; embedding as zero vector");
                return vector;
            }
            vector.iter_mut().for_each(|v| *v /= norm);
            vector
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
}

impl ClusterConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        ClusterConfig { k, seed, max_iters: 100 }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalized_mean(members: &[usize], vectors: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut mean = vec![0.0f64; dim];
    for &i in members {
        for (m, v) in mean.iter_mut().zip(&vectors[i]) {
            *m += v;
        }
    }
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        mean.iter_mut().for_each(|v| *v /= norm);
    }
    mean
}

/// Spherical k-means with seeded k-means++ initialization. Fixed seed means
/// fixed labels; assignment ties resolve to the lower centroid index.
pub fn cluster_documents(vectors: &[Vec<f64>], config: ClusterConfig) -> Result<Vec<usize>> {
    let n = vectors.len();
    if config.k < 1 || config.k > n {
        return Err(Error::ConfigInvalid(format!(
            "k={} must be between 1 and the document count {n}",
            config.k
        )));
    }
    let dim = vectors.first().map(|v| v.len()).unwrap_or(0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);

    // k-means++ seeding: cosine distance to the nearest chosen center.
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(config.k);
    let mut chosen: Vec<usize> = Vec::with_capacity(config.k);
    chosen.push(rng.gen_range(0..n));
    centers.push(vectors[chosen[0]].clone());
    while centers.len() < config.k {
        let weights: Vec<f64> = (0..n)
            .map(|i| {
                let best = centers.iter().map(|c| dot(&vectors[i], c)).fold(f64::MIN, f64::max);
                (1.0 - best).max(0.0)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in weights.iter().enumerate() {
                if target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // all points coincide with centers; take the first unchosen index
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        centers.push(vectors[next].clone());
    }

    let mut labels = vec![0usize; n];
    for _ in 0..config.max_iters {
        let mut changed = false;
        for (i, vector) in vectors.iter().enumerate() {
            let mut best = 0usize;
            let mut best_dot = f64::MIN;
            for (c, center) in centers.iter().enumerate() {
                let d = dot(vector, center);
                if d > best_dot {
                    best_dot = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            if !members.is_empty() {
                *center = normalized_mean(&members, vectors, dim);
            }
        }
    }
    Ok(normalize_labels(labels))
}

/// Renumber labels so the cluster containing the smallest document index is
/// 0, the next unseen cluster 1, and so on. Fixes the arbitrary relabeling
/// freedom k-means leaves behind.
pub fn normalize_labels(labels: Vec<usize>) -> Vec<usize> {
    let mut mapping: HashMap<usize, usize> = HashMap::new();
    let mut next = 0usize;
    labels
        .into_iter()
        .map(|label| {
            *mapping.entry(label).or_insert_with(|| {
                let id = next;
                next += 1;
                id
            })
        })
        .collect()
}

/// Class-based TF-IDF: `W(t,c) = tf(t,c) * ln(1 + A / f(t))` where classes
/// are concatenated documents, `f(t)` is the corpus-wide count of `t`, and
/// `A` is the average token count per class. Returns `top_k` terms per class
/// sorted by descending weight, ties broken lexicographically.
pub fn ctfidf_keywords(
    tokens: &[Vec<String>],
    labels: &[usize],
    top_k: usize,
) -> Result<Vec<Vec<(String, f64)>>> {
    if tokens.len() != labels.len() {
        return Err(Error::Precondition("tokens and labels must align".into()));
    }
    let classes = labels.iter().copied().max().map(|m| m + 1).unwrap_or(0);
    if classes == 0 {
        return Err(Error::Precondition("no classes".into()));
    }
    let mut class_counts: Vec<BTreeMap<&str, f64>> = vec![BTreeMap::new(); classes];
    let mut corpus_counts: BTreeMap<&str, f64> = BTreeMap::new();
    let mut total_tokens = 0f64;
    for (doc_tokens, &label) in tokens.iter().zip(labels) {
        for token in doc_tokens {
            *class_counts[label].entry(token).or_insert(0.0) += 1.0;
            *corpus_counts.entry(token).or_insert(0.0) += 1.0;
            total_tokens += 1.0;
        }
    }
    let avg_class_tokens = total_tokens / classes as f64;

    Ok(class_counts
        .iter()
        .map(|counts| {
            let mut weighted: Vec<(String, f64)> = counts
                .iter()
                .map(|(term, tf)| {
                    let f = corpus_counts[term];
                    (term.to_string(), tf * (1.0 + avg_class_tokens / f).ln())
                })
                .collect();
            weighted.sort_by(|a, b| {
                b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0))
            });
            weighted.truncate(top_k);
            weighted
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicKeyword {
    pub term: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub topic_id: usize,
    pub member_ids: Vec<String>,
    pub keywords: Vec<TopicKeyword>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopicModelConfig {
    pub k: usize,
    pub seed: u64,
    pub top_k: usize,
    pub embed_dim: usize,
    pub max_iters: usize,
}

impl TopicModelConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        TopicModelConfig { k, seed, top_k: 6, embed_dim: 512, max_iters: 100 }
    }
}

/// Tokenize, embed, cluster, and extract keywords in one pass.
pub fn build_topics(corpus: &Corpus, config: TopicModelConfig) -> Result<Vec<Topic>> {
    corpus.validate()?;
    let tokens = tokenize(corpus)?;
    let vectors = embed_documents(&tokens, EmbedConfig { dim: config.embed_dim });
    let labels = cluster_documents(
        &vectors,
        ClusterConfig { k: config.k, seed: config.seed, max_iters: config.max_iters },
    )?;
    let keywords = ctfidf_keywords(&tokens, &labels, config.top_k)?;
    let mut topics = Vec::with_capacity(keywords.len());
    for (class, class_keywords) in keywords.iter().enumerate() {
        let member_ids: Vec<String> = corpus
            .documents
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == class)
            .map(|(d, _)| d.id.clone())
            .collect();
        if member_ids.is_empty() {
            continue; // k-means left this cluster empty
        }
        topics.push(Topic {
            topic_id: class,
            member_ids,
            keywords: class_keywords
                .iter()
                .map(|(term, weight)| TopicKeyword { term: term.clone(), weight: *weight })
                .collect(),
            summary: None,
        });
    }
    Ok(topics)
}

fn truncate_words(line: &str, max_words: usize) -> String {
    line.split_whitespace().take(max_words).collect::<Vec<_>>().join(" ")
}

/// Summarize each topic with one model call: top keywords plus up to three
/// representative documents nearest the topic centroid. Backend failures
/// leave the summary absent and return a warning.
pub fn summarize_topics(
    topics: &mut [Topic],
    corpus: &Corpus,
    gateway: &Gateway,
    model_id: &str,
    decoding: DecodingParams,
    embed_dim: usize,
) -> Result<Vec<String>> {
    corpus.validate()?;
    let tokens = tokenize(corpus)?;
    let vectors = embed_documents(&tokens, EmbedConfig { dim: embed_dim });
    let index_of: HashMap<&str, usize> =
        corpus.documents.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();

    let mut warnings = Vec::new();
    for topic in topics.iter_mut() {
        if topic.keywords.is_empty() {
            return Err(Error::Precondition(format!(
                "topic {} has no keywords to summarize",
                topic.topic_id
            )));
        }
        let members: Vec<usize> =
            topic.member_ids.iter().filter_map(|id| index_of.get(id.as_str()).copied()).collect();
        let centroid = normalized_mean(&members, &vectors, embed_dim);
        let mut ranked: Vec<usize> = members.clone();
        ranked.sort_by(|&a, &b| {
            dot(&vectors[b], &centroid)
                .partial_cmp(&dot(&vectors[a], &centroid))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let samples: Vec<&str> =
            ranked.iter().take(3).map(|&i| corpus.documents[i].text.as_str()).collect();
        let keyword_terms: Vec<String> = topic.keywords.iter().map(|k| k.term.clone()).collect();
        let request = ModelRequest::new(
            PromptRole::TopicSummarization,
            model_id,
            vec![MessagePart::Text(topic_summary_prompt(&keyword_terms, &samples))],
            decoding.clone(),
        )?;
        match gateway.cached_complete(&request) {
            Ok(response) => {
                let line = response.text.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
                topic.summary = Some(truncate_words(line, 8));
            }
            Err(err) => {
                warnings.push(format!("topic {}: {err}", topic.topic_id));
            }
        }
    }
    Ok(warnings)
}
