//! Stage implementations behind the subcommands: each one reads its inputs
//! from the run directory, fans work out through the gateway, and writes its
//! artifacts back.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use failsem_core::assign::{assign_all, reconcile_frequencies, reconciliation_csv};
use failsem_core::baseline::{build_topics, summarize_topics, Corpus, Document, TopicModelConfig};
use failsem_core::discover::{
    discover_candidate_clusters, generate_prompt_ensemble, CandidateClustering, PromptEnsemble,
};
use failsem_core::error::{Error, Result};
use failsem_core::eval::{
    evaluate_split, render_csv, render_json, render_markdown, DetectionOutcome, ReportRow,
    TimeUnit, TrajectoryLabel,
};
use failsem_core::gateway::{
    Backend, DecodingParams, Gateway, GatewayConfig, HttpBackend, MockBackend, PromptRole,
    RateLimitConfig, RetryPolicy,
};
use failsem_core::ingest::{load_manifest, DatasetManifest, FrameEncoding, WindowSpec};
use failsem_core::model::{AssignmentMode, DomainProfile, FailureDataset, Label, Trajectory};
use failsem_core::monitor::{
    read_trace, run_monitor, write_trace, AlarmHook, ClusterContext, CommandHook, MonitorConfig,
};
use failsem_core::prompts::{clustering_seed_prompt, TemplateSet};
use failsem_core::reason::{infer_reasons, ReasonStage, WindowSpecMap};
use failsem_core::util::{parallel_map, write_json_pretty, write_jsonl};

use crate::artifacts;
use crate::config::{AssignmentModeConfig, BackendMode, RunConfig};
use crate::rundir;

pub fn build_gateway(config: &RunConfig, run_dir: &Path) -> Result<Gateway> {
    let backend: Arc<dyn Backend> = match config.backend.mode {
        BackendMode::Mock => {
            let mock = MockBackend::new();
            if let Some(fixtures) = &config.backend.fixtures {
                let count = mock.load_fixtures(fixtures)?;
                log::info!("loaded {count} fixtures from {}", fixtures.display());
            }
            Arc::new(mock)
        }
        BackendMode::Http => {
            let endpoint = config.backend.endpoint.as_deref().ok_or_else(|| {
                Error::ConfigInvalid("http backend needs [backend].endpoint".into())
            })?;
            let api_key_env = config.backend.api_key_env.as_deref().ok_or_else(|| {
                Error::ConfigInvalid("http backend needs [backend].api_key_env".into())
            })?;
            Arc::new(HttpBackend::new(endpoint, api_key_env)?)
        }
    };
    let rate_limit = (config.backend.requests_per_minute > 0).then(|| RateLimitConfig {
        requests_per_minute: config.backend.requests_per_minute,
        max_in_flight: config.backend.max_in_flight.max(1),
    });
    Ok(Gateway::new(
        backend,
        GatewayConfig {
            retry: RetryPolicy { max_attempts: config.backend.max_attempts.max(1), ..Default::default() },
            rate_limit,
            cache_dir: Some(run_dir.join("cache")),
        },
    ))
}

fn window_spec_map(config: &RunConfig, profiles: &[DomainProfile]) -> Result<WindowSpecMap> {
    let mut map = WindowSpecMap::default();
    let o = &config.window;
    if o.window_seconds.is_none()
        && o.target_fps.is_none()
        && o.end_offset_s.is_none()
        && o.max_frames.is_none()
    {
        return Ok(map);
    }
    for profile in profiles {
        let base = WindowSpec::default_for(profile);
        let spec = WindowSpec::new(
            o.window_seconds.unwrap_or(base.window_seconds),
            o.target_fps.unwrap_or(base.target_fps),
            o.end_offset_s.unwrap_or(base.end_offset_s),
            o.max_frames.unwrap_or(base.max_frames),
        )?;
        map.set(profile.clone(), spec);
    }
    Ok(map)
}

fn distinct_profiles(trajectories: &[Trajectory]) -> Vec<DomainProfile> {
    let mut profiles = Vec::new();
    for traj in trajectories {
        if !profiles.contains(&traj.domain_profile) {
            profiles.push(traj.domain_profile.clone());
        }
    }
    profiles
}

fn dataset_profile(manifest: &DatasetManifest) -> DomainProfile {
    manifest.entries.first().map(|e| e.domain_profile.clone()).unwrap_or(DomainProfile::Driving)
}

fn monitor_config_for(config: &RunConfig, profile: &DomainProfile) -> MonitorConfig {
    let mut mc = MonitorConfig::default_for(profile);
    let o = &config.monitor;
    if let Some(v) = o.window_frames {
        mc.window_frames = v;
    }
    if let Some(v) = o.frame_period_s {
        mc.frame_period_s = v;
    }
    if let Some(v) = o.persistence_n {
        mc.persistence_n = v;
    }
    if o.no_context {
        mc.cluster_context = ClusterContext::NoContext;
    }
    mc
}

pub fn cmd_infer(config: &RunConfig, resume: bool) -> Result<()> {
    let run_dir = config.run_dir()?.to_path_buf();
    rundir::ensure_run_dir(&run_dir)?;
    let reasons_path = run_dir.join("reasons.jsonl");
    let skips_path = run_dir.join("skips.jsonl");
    if resume && reasons_path.exists() {
        log::info!("reasons.jsonl already present; --resume keeps it");
        rundir::finish_command(&run_dir, config, "infer", &[reasons_path], None)?;
        return Ok(());
    }
    let dataset = load_manifest(config.manifest_path()?)?;
    let failures: Vec<Trajectory> =
        dataset.trajectories.iter().filter(|t| t.label == Label::Failure).cloned().collect();
    if failures.is_empty() {
        return Err(Error::Precondition("manifest contains no failure-labeled trajectories".into()));
    }
    let profiles = distinct_profiles(&failures);
    let gateway = build_gateway(config, &run_dir)?;
    let stage = ReasonStage {
        gateway: &gateway,
        templates: &TemplateSet::new(),
        model_id: config.models.for_role(PromptRole::ReasonInference).to_string(),
        decoding: DecodingParams::default(),
        window_specs: window_spec_map(config, &profiles)?,
        encoding: FrameEncoding::InlineBase64,
        jobs: config.run.jobs,
    };
    let failure_set = FailureDataset { name: dataset.name.clone(), trajectories: failures };
    let outcome = infer_reasons(&failure_set, &stage)?;
    log::info!("inferred {} reasons, skipped {}", outcome.reasons.len(), outcome.skipped.len());
    artifacts::write_reasons(&reasons_path, &outcome.reasons)?;
    write_jsonl(&skips_path, &outcome.skipped)?;
    rundir::finish_command(
        &run_dir,
        config,
        "infer",
        &[reasons_path, skips_path],
        Some(gateway.stats()),
    )
}

pub fn cmd_discover(config: &RunConfig, prompts: usize, target_l: Option<usize>) -> Result<()> {
    if !(1..=4).contains(&prompts) {
        return Err(Error::ConfigInvalid(format!("--prompts must be 1..=4, got {prompts}")));
    }
    let run_dir = config.run_dir()?.to_path_buf();
    rundir::ensure_run_dir(&run_dir)?;
    let reasons = artifacts::read_reasons(&run_dir.join("reasons.jsonl"))?;
    let manifest = DatasetManifest::read(config.manifest_path()?)?;
    let profile = dataset_profile(&manifest);
    let gateway = build_gateway(config, &run_dir)?;
    let decoding = DecodingParams::default();

    let seed = clustering_seed_prompt(&profile);
    let mut ensemble = if prompts == 1 {
        PromptEnsemble::seed_only(seed)
    } else {
        generate_prompt_ensemble(
            &seed,
            &gateway,
            config.models.for_role(PromptRole::EnsembleGeneration),
            decoding.clone(),
        )?
    };
    ensemble.variants.truncate(prompts.saturating_sub(1));
    let ensemble_path = run_dir.join("ensemble.json");
    write_json_pretty(&ensemble_path, &ensemble)?;

    let prompt_texts: Vec<(usize, String)> =
        ensemble.prompts().iter().enumerate().map(|(i, p)| (i, p.to_string())).collect();
    let model_id = config.models.for_role(PromptRole::ClusterDiscovery).to_string();
    let results = parallel_map(&prompt_texts, config.run.jobs.min(prompt_texts.len()), |(i, prompt)| {
        discover_candidate_clusters(&reasons, prompt, *i, &gateway, &model_id, decoding.clone())
    });

    let mut written = vec![ensemble_path];
    let mut candidates: Vec<CandidateClustering> = Vec::new();
    for ((i, _), result) in prompt_texts.iter().zip(results) {
        let path = run_dir.join("candidates").join(format!("candidate_{i}.json"));
        match result {
            Ok(candidate) => {
                write_json_pretty(&path, &candidate)?;
                candidates.push(candidate);
            }
            Err(err) => {
                log::warn!("prompt {i} contributed no candidate: {err}");
                write_json_pretty(
                    &path,
                    &serde_json::json!({ "prompt_index": i, "error": { "code": err.code(), "message": err.to_string() } }),
                )?;
            }
        }
        written.push(path);
    }
    if candidates.is_empty() {
        return Err(Error::AggregationInvalid("no candidate clusterings parsed".into()));
    }
    let cs = failsem_core::discover::aggregate_clusterings(
        &candidates,
        &gateway,
        config.models.for_role(PromptRole::Aggregation),
        decoding,
        target_l,
    )?;
    log::info!("aggregated {} clusters from {} candidates", cs.clusters.len(), candidates.len());
    let clusters_path = run_dir.join("clusters.json");
    artifacts::write_cluster_set(&clusters_path, &cs)?;
    written.push(clusters_path);
    rundir::finish_command(&run_dir, config, "discover", &written, Some(gateway.stats()))
}

pub fn cmd_assign(config: &RunConfig) -> Result<()> {
    let run_dir = config.run_dir()?.to_path_buf();
    rundir::ensure_run_dir(&run_dir)?;
    let reasons = artifacts::read_reasons(&run_dir.join("reasons.jsonl"))?;
    let cs = artifacts::read_cluster_set(&run_dir.join("clusters.json"))?;
    let manifest = DatasetManifest::read(config.manifest_path()?)?;
    let profile = dataset_profile(&manifest);
    let gateway = build_gateway(config, &run_dir)?;
    let model_id = config.models.for_role(PromptRole::Assignment).to_string();

    let modes: Vec<AssignmentMode> = match config.assignment.mode {
        AssignmentModeConfig::Single => vec![AssignmentMode::Single],
        AssignmentModeConfig::Multi => vec![AssignmentMode::Multi],
        AssignmentModeConfig::Both => vec![AssignmentMode::Single, AssignmentMode::Multi],
    };
    let mut written = Vec::new();
    for mode in modes {
        let result = assign_all(
            &reasons,
            &cs,
            &gateway,
            mode,
            &profile,
            &model_id,
            DecodingParams::default(),
            config.run.jobs,
        )?;
        let name = match mode {
            AssignmentMode::Single => "assignments_single.jsonl",
            AssignmentMode::Multi => "assignments_multi.jsonl",
        };
        log::info!(
            "{name}: {} assignments, {} in Other",
            result.assignments.len(),
            result.other_count
        );
        let path = run_dir.join(name);
        artifacts::write_assignment_result(&path, &result)?;
        written.push(path);
    }

    let single_path = run_dir.join("assignments_single.jsonl");
    let multi_path = run_dir.join("assignments_multi.jsonl");
    if single_path.exists() && multi_path.exists() {
        let single = artifacts::read_assignment_result(&single_path)?;
        let multi = artifacts::read_assignment_result(&multi_path)?;
        let report = reconcile_frequencies(&cs, &single, &multi, single.assignments.len() as u64)?;
        let json_path = run_dir.join("reconciliation.json");
        write_json_pretty(&json_path, &report)?;
        let csv_path = run_dir.join("reconciliation.csv");
        std::fs::write(&csv_path, reconciliation_csv(&report)?)?;
        written.push(json_path);
        written.push(csv_path);
    }
    rundir::finish_command(&run_dir, config, "assign", &written, Some(gateway.stats()))
}

pub fn cmd_baseline(config: &RunConfig, summarize: bool) -> Result<()> {
    let run_dir = config.run_dir()?.to_path_buf();
    rundir::ensure_run_dir(&run_dir)?;
    let reasons = artifacts::read_reasons(&run_dir.join("reasons.jsonl"))?;
    let corpus = Corpus::new(
        reasons
            .iter()
            .map(|r| Document { id: r.trajectory_id.clone(), text: r.failure_reason.clone() })
            .collect(),
    )?;
    let model_config = TopicModelConfig {
        k: config.baseline.k,
        seed: config.run.seed,
        top_k: config.baseline.top_k,
        embed_dim: config.baseline.embed_dim,
        max_iters: 100,
    };
    let mut topics = build_topics(&corpus, model_config)?;
    let mut stats = None;
    if summarize || config.baseline.summarize {
        let gateway = build_gateway(config, &run_dir)?;
        let warnings = summarize_topics(
            &mut topics,
            &corpus,
            &gateway,
            config.models.for_role(PromptRole::TopicSummarization),
            DecodingParams::default(),
            config.baseline.embed_dim,
        )?;
        for warning in warnings {
            log::warn!("{warning}");
        }
        stats = Some(gateway.stats());
    }
    log::info!("built {} topics over {} documents", topics.len(), corpus.documents.len());

    let json_path = run_dir.join("topics.json");
    write_json_pretty(&json_path, &topics)?;
    let csv_path = run_dir.join("topics.csv");
    let mut csv_text = String::from("topic_id,size,keywords,summary\n");
    for topic in &topics {
        let keywords: Vec<&str> = topic.keywords.iter().map(|k| k.term.as_str()).collect();
        csv_text.push_str(&format!(
            "{},{},{:?},{:?}\n",
            topic.topic_id,
            topic.member_ids.len(),
            keywords.join("; "),
            topic.summary.as_deref().unwrap_or(""),
        ));
    }
    std::fs::write(&csv_path, csv_text)?;
    rundir::finish_command(&run_dir, config, "baseline", &[json_path, csv_path], stats)
}

pub fn cmd_monitor(config: &RunConfig) -> Result<()> {
    let run_dir = config.run_dir()?.to_path_buf();
    rundir::ensure_run_dir(&run_dir)?;
    let dataset = load_manifest(config.manifest_path()?)?;
    let no_context = config.monitor.no_context;
    let cs = if no_context {
        None
    } else {
        Some(artifacts::read_cluster_set(&run_dir.join("clusters.json"))?)
    };
    let gateway = build_gateway(config, &run_dir)?;
    let model_id = config.models.for_role(PromptRole::Monitor).to_string();
    let hook = config.monitor.hook.as_ref().map(|command| CommandHook { command: command.clone() });
    let traces_dir = run_dir.join("traces");
    std::fs::create_dir_all(&traces_dir)?;

    let results = parallel_map(&dataset.trajectories, config.run.jobs, |traj| {
        let mc = monitor_config_for(config, &traj.domain_profile);
        let trace = run_monitor(
            traj,
            &mc,
            cs.as_ref(),
            &gateway,
            &model_id,
            DecodingParams::default(),
            hook.as_ref().map(|h| h as &dyn AlarmHook),
        )?;
        let path = traces_dir.join(format!("{}.trace.jsonl", traj.id));
        write_trace(&path, &trace)?;
        Ok::<_, Error>((path, trace.alarm.is_some()))
    });

    let mut written = Vec::new();
    let mut alarms = 0usize;
    let mut failures = 0usize;
    for (traj, result) in dataset.trajectories.iter().zip(results) {
        match result {
            Ok((path, alarmed)) => {
                written.push(path);
                alarms += alarmed as usize;
            }
            Err(err) => {
                failures += 1;
                log::warn!("monitor skipped trajectory {}: {err}", traj.id);
            }
        }
    }
    if written.is_empty() {
        return Err(Error::SkippedAll(format!("monitoring failed for all {failures} trajectories")));
    }
    log::info!("monitored {} trajectories, {alarms} alarms, {failures} skipped", written.len());
    rundir::finish_command(&run_dir, config, "monitor", &written, Some(gateway.stats()))
}

fn parse_unit(text: &str) -> Result<TimeUnit> {
    match text {
        "ms" => Ok(TimeUnit::Millis),
        "s" => Ok(TimeUnit::Seconds),
        other => Err(Error::ConfigInvalid(format!("unit must be \"ms\" or \"s\", got {other:?}"))),
    }
}

pub fn cmd_eval(config: &RunConfig, externals: &[(String, PathBuf)]) -> Result<()> {
    let run_dir = config.run_dir()?.to_path_buf();
    rundir::ensure_run_dir(&run_dir)?;
    let manifest = DatasetManifest::read(config.manifest_path()?)?;
    let labels: BTreeMap<String, TrajectoryLabel> = manifest
        .entries
        .iter()
        .map(|e| {
            (
                e.trajectory_id.clone(),
                TrajectoryLabel { label: e.label, failure_time_s: e.failure_time_s },
            )
        })
        .collect();

    let traces_dir = run_dir.join("traces");
    let mut trace_paths: Vec<PathBuf> = std::fs::read_dir(&traces_dir)
        .map_err(|e| Error::IoMissing { path: traces_dir.clone(), detail: e.to_string() })?
        .filter_map(|r| r.ok())
        .map(|d| d.path())
        .filter(|p| p.file_name().map(|n| n.to_string_lossy().ends_with(".trace.jsonl")).unwrap_or(false))
        .collect();
    trace_paths.sort();
    if trace_paths.is_empty() {
        return Err(Error::Precondition(format!(
            "{} holds no traces; run `failsem monitor` first",
            traces_dir.display()
        )));
    }
    let mut outcomes = Vec::with_capacity(trace_paths.len());
    for path in &trace_paths {
        outcomes.push(DetectionOutcome::from(&read_trace(path)?));
    }

    let unit = match &config.eval.unit {
        Some(text) => parse_unit(text)?,
        None => match dataset_profile(&manifest) {
            DomainProfile::Indoor => TimeUnit::Seconds,
            _ => TimeUnit::Millis,
        },
    };
    let split = config.eval.split_name.clone();
    let mut rows = Vec::new();
    let summary = evaluate_split(&outcomes, &labels, &config.eval.method_name)?;
    log::info!(
        "{}: tp={} fp={} tn={} fn={}",
        summary.method,
        summary.metrics.counts.tp,
        summary.metrics.counts.fp,
        summary.metrics.counts.tn,
        summary.metrics.counts.fn_
    );
    rows.push(ReportRow {
        method: summary.method,
        split: split.clone(),
        metrics: summary.metrics,
        mean_lead_s: summary.timing.mean_lead_s,
    });
    for (name, path) in externals {
        let external: Vec<DetectionOutcome> = failsem_core::util::read_jsonl(path)?;
        let summary = evaluate_split(&external, &labels, name)?;
        rows.push(ReportRow {
            method: summary.method,
            split: split.clone(),
            metrics: summary.metrics,
            mean_lead_s: summary.timing.mean_lead_s,
        });
    }

    let md_path = run_dir.join("report.md");
    std::fs::write(&md_path, render_markdown(&rows, unit)?)?;
    let csv_path = run_dir.join("report.csv");
    std::fs::write(&csv_path, render_csv(&rows, unit)?)?;
    let json_path = run_dir.join("report.json");
    std::fs::write(&json_path, render_json(&rows, unit)?)?;
    rundir::finish_command(&run_dir, config, "eval", &[md_path, csv_path, json_path], None)
}

pub fn cmd_plan(config: &RunConfig, budget: u64) -> Result<()> {
    let run_dir = config.run_dir()?.to_path_buf();
    rundir::ensure_run_dir(&run_dir)?;
    let cs = artifacts::read_cluster_set(&run_dir.join("clusters.json"))?;
    let single = artifacts::read_assignment_result(&run_dir.join("assignments_single.jsonl"))?;
    if single.cluster_set_ref != cs.digest() {
        return Err(Error::ReconcileMismatch(
            "assignments_single.jsonl was produced against a different clusters.json".into(),
        ));
    }
    let plan = failsem_core::eval::build_collection_plan(&cs, &single, budget)?;
    let path = run_dir.join("collection_plan.json");
    write_json_pretty(&path, &plan)?;
    log::info!("collection plan over {} clusters, budget {budget}", plan.entries.len());
    rundir::finish_command(&run_dir, config, "plan", &[path], None)
}
