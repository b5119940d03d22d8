//! Command-line front end. Every failure prints one line
//! `error: <kind>: <message>` on stderr; exit codes are 0 ok, 1 runtime
//! failure, 2 usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use super::checkpoint::{checkpoint_load, checkpoint_save, conform};
use super::config::{ExperimentConfig, SEED_ENV_VAR};
use super::metrics::{read_metrics, MetricsWriter};
use super::plot::plot_metrics;
use super::verify::run_suite;
use crate::agent::{
    evaluate_policy, final_quarter, initial_state, sse_db_run, EpisodeView, ExplorationStats,
    MetricsRecord, Policy, RunOptions,
};
use crate::dbmodel::DBModel;
use crate::error::{Error, Result};
use crate::numcore::ParamSet;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "ib-explore",
    version,
    about = "Dynamic-bottleneck exploration at desk scale"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a DB model and PPO agent from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `run.output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a verification suite and print its JSON report.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
    },
    /// Roll out a trained policy without learning.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        episodes: usize,
    },
    /// Render SVG charts and a CSV export from a metrics file.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Theorem1,
    Theorem2,
    NceBound,
    Gradcheck,
    Collapse,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Theorem1 => "theorem1",
            Suite::Theorem2 => "theorem2",
            Suite::NceBound => "nce-bound",
            Suite::Gradcheck => "gradcheck",
            Suite::Collapse => "collapse",
        }
    }
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const FINAL_CHECKPOINT: &str = "final.ibx";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.ibx";
pub const ERROR_FILE: &str = "error.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Model and policy in one tensor set, under `db/` and `policy/`.
pub fn bundle(model: &DBModel, policy: &Policy) -> ParamSet {
    let mut all = ParamSet::new();
    all.extend_prefixed("db/", &model.params);
    all.extend_prefixed("policy/", &policy.params);
    all
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub episodes: usize,
    pub env_steps: usize,
    /// Means over the last quarter of episodes (at least one).
    pub final_quarter: ExplorationStats,
    pub last: Option<MetricsRecord>,
    /// Cumulative `(state, action)` visits, row-major over actions.
    pub visit_counts: Vec<u64>,
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    kind: &'a str,
    message: String,
    episode: Option<usize>,
    last_good_episode: Option<usize>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Trains into `out`, calling `hook` after each episode's files are written.
///
/// On a mid-run failure the parameters after the last completed episode (the
/// initial ones if none completed) go to `last_good.ibx` and the error to
/// `error.json`; the error is then returned.
pub fn train(
    config: &ExperimentConfig,
    seed: u64,
    out: &Path,
    mut hook: impl FnMut(&EpisodeView) -> Result<()>,
) -> Result<TrainSummary> {
    config.validate()?;
    let spec = config.run_spec(seed);
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let mut writer =
        MetricsWriter::create(&out.join(METRICS_FILE), config.run.metrics_flush_interval)?;
    let interval = config.run.checkpoint_interval;

    let (m0, p0) = initial_state(&spec)?;
    let mut last_good = (bundle(&m0, &p0), None::<usize>);
    let result = sse_db_run(&spec, RunOptions::default(), |view| {
        let episode = view.record.episode;
        writer.write(view.record)?;
        if interval > 0 && (episode + 1) % interval == 0 {
            checkpoint_save(
                &bundle(view.model, view.policy),
                &ckpt_dir.join(format!("episode_{episode:06}.ibx")),
            )?;
        }
        hook(view)?;
        last_good = (bundle(view.model, view.policy), Some(episode));
        Ok(())
    });
    writer.flush()?;
    let output = match result {
        Ok(o) => o,
        Err(e) => {
            checkpoint_save(&last_good.0, &out.join(LAST_GOOD_CHECKPOINT))?;
            let episode = match &e {
                Error::Episode { episode, .. } => Some(*episode),
                _ => None,
            };
            write_json(
                &out.join(ERROR_FILE),
                &ErrorRecord {
                    kind: e.kind(),
                    message: e.to_string(),
                    episode,
                    last_good_episode: last_good.1,
                },
            )?;
            return Err(e);
        }
    };
    checkpoint_save(
        &bundle(&output.model, &output.policy),
        &out.join(FINAL_CHECKPOINT),
    )?;
    let summary = TrainSummary {
        seed,
        episodes: output.records.len(),
        env_steps: output.records.last().map_or(0, |r| r.env_steps),
        final_quarter: final_quarter(&output.records),
        last: output.records.last().cloned(),
        visit_counts: output.visit_counts,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub goal_reach_rate: f64,
    pub extrinsic_return: f64,
    pub coverage: f64,
    pub cumulative_coverage: f64,
    pub per_episode: Vec<ExplorationStats>,
}

/// Loads the policy half of a bundled checkpoint and evaluates it.
pub fn evaluate(
    config: &ExperimentConfig,
    seed: u64,
    checkpoint: &Path,
    episodes: usize,
) -> Result<EvalReport> {
    config.validate()?;
    let spec = config.run_spec(seed);
    let (_, mut policy) = initial_state(&spec)?;
    let loaded = checkpoint_load(checkpoint)?.strip_prefix("policy/");
    policy.params = conform(&policy.params, &loaded)?;
    let per_episode = evaluate_policy(&spec, &policy, episodes)?;
    let n = per_episode.len().max(1) as f64;
    let mean = |f: fn(&ExplorationStats) -> f64| per_episode.iter().map(f).sum::<f64>() / n;
    Ok(EvalReport {
        episodes,
        goal_reach_rate: mean(|s| s.goal_reach_rate),
        extrinsic_return: mean(|s| s.extrinsic_return),
        coverage: mean(|s| s.coverage),
        cumulative_coverage: per_episode.last().map_or(0.0, |s| s.cumulative_coverage),
        per_episode,
    })
}

fn seed_override() -> Option<String> {
    std::env::var(SEED_ENV_VAR).ok()
}

/// Runs a parsed command; `Ok(false)` is a clean run whose verdict failed.
pub fn execute(command: &Command, stdout: &mut dyn Write) -> Result<bool> {
    let print = |stdout: &mut dyn Write, value: &serde_json::Value| -> Result<()> {
        let text = serde_json::to_string_pretty(value).expect("reports serialize");
        writeln!(stdout, "{text}").map_err(|e| Error::io("<stdout>", e))
    };
    match command {
        Command::Train { config, out } => {
            let cfg = ExperimentConfig::load(config)?;
            cfg.validate()?;
            let seed = cfg.resolve_seed(seed_override().as_deref())?;
            let out = out.clone().unwrap_or_else(|| cfg.run.output_dir.clone());
            let summary = train(&cfg, seed, &out, |_| Ok(()))?;
            print(
                stdout,
                &serde_json::json!({
                    "output_dir": out,
                    "episodes": summary.episodes,
                    "env_steps": summary.env_steps,
                    "final_quarter": summary.final_quarter,
                }),
            )?;
            Ok(true)
        }
        Command::Verify { suite } => {
            let (report, passed) = run_suite(suite.name())?.ok_or_else(|| {
                Error::InvalidArgument(format!("unknown suite `{}`", suite.name()))
            })?;
            print(
                stdout,
                &serde_json::json!({ "suite": suite.name(), "passed": passed, "report": report }),
            )?;
            Ok(passed)
        }
        Command::Eval {
            checkpoint,
            config,
            episodes,
        } => {
            let cfg = ExperimentConfig::load(config)?;
            cfg.validate()?;
            let seed = cfg.resolve_seed(seed_override().as_deref())?;
            let report = evaluate(&cfg, seed, checkpoint, *episodes)?;
            print(
                stdout,
                &serde_json::to_value(&report).expect("reports serialize"),
            )?;
            Ok(true)
        }
        Command::Plot { metrics, out } => {
            let records = read_metrics(metrics)?;
            let files = plot_metrics(&records, out)?;
            print(
                stdout,
                &serde_json::json!({ "records": records.len(), "files": files }),
            )?;
            Ok(true)
        }
    }
}

fn one_line(text: &str) -> String {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return EXIT_OK;
            }
            let text = e.to_string();
            let msg = one_line(text.strip_prefix("error: ").unwrap_or(&text));
            let _ = writeln!(stderr, "error: usage: {msg}");
            return EXIT_USAGE;
        }
    };
    match execute(&cli.command, stdout) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_RUNTIME,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}: {}", e.kind(), one_line(&e.to_string()));
            EXIT_RUNTIME
        }
    }
}
