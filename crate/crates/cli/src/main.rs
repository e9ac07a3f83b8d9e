//! `failsem` — semantic failure clustering and runtime failure monitoring.
//!
//! One executable, one subcommand per pipeline stage, file handoffs through a
//! run directory so expensive model stages stay resumable and auditable.

mod artifacts;
mod config;
mod pipeline;
mod rundir;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use failsem_core::error::{Error, ErrorFamily};

use config::{AssignmentModeConfig, RunConfig};

#[derive(Parser)]
#[command(name = "failsem", version, about = "Discover semantic failure clusters from robot perception logs and monitor for them at runtime")]
struct Cli {
    /// TOML run configuration; flags override individual fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run directory receiving all artifacts (overrides [run].dir).
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,

    /// Dataset manifest, JSONL (overrides [dataset].manifest).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Worker fan-out bound (overrides [run].jobs).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Mock-backend fixtures file (overrides [backend].fixtures).
    #[arg(long, global = true)]
    fixtures: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Single,
    Multi,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Infer a failure reason per failure trajectory (writes reasons.jsonl).
    Infer {
        /// Keep an existing reasons.jsonl instead of recomputing.
        #[arg(long)]
        resume: bool,
    },
    /// Discover failure clusters from the inferred reasons (writes clusters.json).
    Discover {
        /// Number of clustering prompts: 1 uses the seed only, 4 adds the
        /// generated ensemble.
        #[arg(long, default_value_t = 4)]
        prompts: usize,
        /// Optional cluster-count hint passed to the aggregation prompt.
        #[arg(long)]
        target_l: Option<usize>,
    },
    /// Assign each reason to cluster(s) or Other and reconcile frequencies.
    Assign {
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Topic-modeling baseline over the same reasons (writes topics.json).
    Baseline {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        top_k: Option<usize>,
        /// Summarize each topic with the model.
        #[arg(long)]
        summarize: bool,
    },
    /// Run the runtime failure monitor over every trajectory (writes traces/).
    Monitor {
        /// Ablation: drop the cluster list from the monitor prompt.
        #[arg(long)]
        no_context: bool,
        /// Consecutive non-safe verdicts required before the alarm.
        #[arg(long)]
        persistence: Option<u32>,
        #[arg(long)]
        window_frames: Option<usize>,
        /// Seconds between monitored frames.
        #[arg(long)]
        period: Option<f64>,
        /// Shell command run with the alarm event on stdin.
        #[arg(long)]
        hook: Option<String>,
    },
    /// Score traces against manifest labels (writes report.{md,csv,json}).
    Eval {
        #[arg(long)]
        method_name: Option<String>,
        #[arg(long)]
        split: Option<String>,
        /// Extra methods to compare, as NAME=PATH of a JSONL file with
        /// lines {"trajectory_id", "alarm_time_s"?}.
        #[arg(long = "external")]
        externals: Vec<String>,
        /// Lead-time display unit: "ms" or "s" (default per profile).
        #[arg(long)]
        unit: Option<String>,
    },
    /// Build the targeted data-collection plan from single-mode assignments.
    Plan {
        #[arg(long)]
        budget: u64,
    },
}

fn exit_code(family: ErrorFamily) -> i32 {
    match family {
        ErrorFamily::Config => 2,
        ErrorFamily::Io => 3,
        ErrorFamily::Parse => 4,
        ErrorFamily::Backend => 5,
        ErrorFamily::Data => 6,
        ErrorFamily::Other => 1,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(run_dir) = &cli.run_dir {
        config.run.dir = Some(run_dir.clone());
    }
    if let Some(manifest) = &cli.manifest {
        config.dataset.manifest = Some(manifest.clone());
    }
    if let Some(jobs) = cli.jobs {
        config.run.jobs = jobs.max(1);
    }
    if let Some(fixtures) = &cli.fixtures {
        config.backend.fixtures = Some(fixtures.clone());
    }
    Ok(config)
}

fn parse_external(spec: &str) -> Result<(String, PathBuf), Error> {
    spec.split_once('=')
        .map(|(name, path)| (name.to_string(), PathBuf::from(path)))
        .ok_or_else(|| Error::ConfigInvalid(format!("--external expects NAME=PATH, got {spec:?}")))
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut config = load_config(&cli)?;
    match cli.command {
        Command::Infer { resume } => pipeline::cmd_infer(&config, resume),
        Command::Discover { prompts, target_l } => pipeline::cmd_discover(&config, prompts, target_l),
        Command::Assign { mode } => {
            if let Some(mode) = mode {
                config.assignment.mode = match mode {
                    ModeArg::Single => AssignmentModeConfig::Single,
                    ModeArg::Multi => AssignmentModeConfig::Multi,
                    ModeArg::Both => AssignmentModeConfig::Both,
                };
            }
            pipeline::cmd_assign(&config)
        }
        Command::Baseline { k, seed, top_k, summarize } => {
            if let Some(k) = k {
                config.baseline.k = k;
            }
            if let Some(seed) = seed {
                config.run.seed = seed;
            }
            if let Some(top_k) = top_k {
                config.baseline.top_k = top_k;
            }
            pipeline::cmd_baseline(&config, summarize)
        }
        Command::Monitor { no_context, persistence, window_frames, period, hook } => {
            if no_context {
                config.monitor.no_context = true;
            }
            if persistence.is_some() {
                config.monitor.persistence_n = persistence;
            }
            if window_frames.is_some() {
                config.monitor.window_frames = window_frames;
            }
            if period.is_some() {
                config.monitor.frame_period_s = period;
            }
            if hook.is_some() {
                config.monitor.hook = hook;
            }
            pipeline::cmd_monitor(&config)
        }
        Command::Eval { method_name, split, externals, unit } => {
            if let Some(name) = method_name {
                config.eval.method_name = name;
            }
            if let Some(split) = split {
                config.eval.split_name = split;
            }
            if unit.is_some() {
                config.eval.unit = unit;
            }
            let externals = externals
                .iter()
                .map(|s| parse_external(s))
                .collect::<Result<Vec<_>, _>>()?;
            pipeline::cmd_eval(&config, &externals)
        }
        Command::Plan { budget } => pipeline::cmd_plan(&config, budget),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error[{}]: {err}", err.code());
        std::process::exit(exit_code(err.family()));
    }
}
