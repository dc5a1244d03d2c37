//! Command-line front end: build search trees, train the policy/value pair,
//! run value-guided inference, verify flow guarantees, emit metric tables, or
//! drive the whole pipeline.
//!
//! Exit codes: 0 all checks pass, 1 check failure, 2 configuration or
//! protocol error.

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use dialogue_flow::corpus::TreeCorpus;
use dialogue_flow::inference;
use dialogue_flow::metrics;
use dialogue_flow::model::{Role, StateKey, Strategy};
use dialogue_flow::pipeline::{self, EnvKind, PipelineError, RunConfig, VerifyChecks};
use dialogue_flow::policy::{self, StateFeatures, ValueParams};
use dialogue_flow::training;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dflow",
    about = "Dialogue-strategy search, flow-balance training and value-guided inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build MCTS trees over strategy decisions and write the corpus.
    BuildTrees {
        #[arg(long)]
        config: PathBuf,
        /// Environment override: synthetic | scripted | remote.
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Source corpus when replaying scripted trees.
        #[arg(long)]
        scripted_from: Option<PathBuf>,
    },
    /// Train policy and value parameters on a persisted corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss trace CSV destination.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Select a strategy for a dialogue state with trained parameters.
    Infer {
        #[arg(long)]
        params: PathBuf,
        /// Corpus node id (t<k>:n<k>) or a JSON history file.
        #[arg(long)]
        state: String,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Corpus file used to resolve node-id states.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check flow guarantees against a corpus/checkpoint pair.
    Verify {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value = "all")]
        checks: String,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the machine-readable report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit analysis metric tables for a corpus/checkpoint pair.
    Metrics {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Alternate tree building and training, then verify and emit metrics.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Debug)]
enum Outcome {
    Ok,
    CheckFailure,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailure) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_config_error(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// Configuration and protocol problems exit 2; everything else exits 1.
fn is_config_error(err: &anyhow::Error) -> bool {
    if let Some(p) = err.downcast_ref::<PipelineError>() {
        return matches!(p, PipelineError::Config(_));
    }
    if err
        .downcast_ref::<dialogue_flow::inference::InferenceError>()
        .is_some()
    {
        return true;
    }
    // reading a corpus with retention/flooring that disagrees with its
    // manifest is a configuration problem, not a check failure
    if let Some(c) = err.downcast_ref::<dialogue_flow::corpus::CorpusError>() {
        return matches!(c, dialogue_flow::corpus::CorpusError::Inconsistent(_));
    }
    let text = format!("{err:#}");
    text.contains("config error") || text.contains("protocol error")
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::BuildTrees {
            config,
            env,
            out,
            scripted_from,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(kind) = env {
                cfg.env = kind.parse()?;
            }
            if let Some(src) = scripted_from {
                cfg.scripted_from = Some(src);
            }
            if cfg.env == EnvKind::Scripted && cfg.scripted_from.is_none() {
                return Err(PipelineError::Config(
                    "scripted env needs --scripted-from".into(),
                )
                .into());
            }
            let hash = cfg.config_hash();
            let policy = cfg.make_policy();
            let corpus = pipeline::build_corpus(&cfg, &policy, &hash)?;
            corpus.write(&out).context("writing corpus")?;
            println!(
                "built {} trees, {} retained trajectories -> {}",
                corpus.trees.len(),
                corpus.trajectories.len(),
                out.display()
            );
            Ok(Outcome::Ok)
        }
        Command::Train {
            corpus,
            config,
            out,
            trace,
        } => {
            let cfg = RunConfig::load(&config)?;
            let data =
                TreeCorpus::read(&corpus, &cfg.corpus_params()).context("reading corpus")?;
            let mut policy = cfg.make_policy();
            let mut values = ValueParams::new();
            let report = training::train(&data, &mut policy, &mut values, &cfg.train)?;
            // the checkpoint inherits the corpus's config hash so verify can
            // refuse mismatched pairs
            policy::save_checkpoint(&out, &policy, &values, report.steps_run, &data.config_hash)
                .context("writing checkpoint")?;
            if let Some(trace_path) = trace {
                pipeline::write_trace(&trace_path, &report.trace)?;
            }
            if report.pairs_total == 0 {
                eprintln!("note: corpus yielded no preference pairs");
            }
            println!(
                "trained {} steps: policy loss {:.3e}, eval loss {:.3e}, margins {}/{}",
                report.steps_run,
                report.final_loss.policy,
                report.final_loss.evaluate,
                report.pairs_satisfied,
                report.pairs_total
            );
            Ok(Outcome::Ok)
        }
        Command::Infer {
            params,
            state,
            k,
            corpus,
            config,
        } => {
            let cfg = load_config(config.as_ref())?;
            let (policy, values, _, _) = policy::load_checkpoint(&params)?;
            let features = resolve_state(&state, corpus.as_ref(), &cfg)?;
            let candidates = inference::candidate_set(&policy, &features, k)?;
            let chosen = inference::select_strategy(&policy, &values, &features, k)?;
            println!("selected: {} ({})", chosen, chosen.abbrev());
            println!(
                "{:<24} {:>10} {:>12} {:>12} in_top_k",
                "strategy", "prior", "value", "score"
            );
            let prior = policy.prob(&features);
            for a in Strategy::ALL {
                let s = inference::score(&policy, &values, &features, a);
                println!(
                    "{:<24} {:>10.6} {:>12.6} {:>12.6} {}",
                    a.name(),
                    prior[a.index()],
                    values.value_action(&features.key, a),
                    s,
                    if candidates.contains(&a) { "yes" } else { "" }
                );
            }
            Ok(Outcome::Ok)
        }
        Command::Verify {
            corpus,
            params,
            checks,
            tol,
            config,
            out,
        } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(t) = tol {
                cfg.verify_tol = t;
            }
            let which = VerifyChecks::parse(&checks)?;
            let data =
                TreeCorpus::read(&corpus, &cfg.corpus_params()).context("reading corpus")?;
            let (policy, values, _, params_hash) = policy::load_checkpoint(&params)?;
            if params_hash != data.config_hash {
                return Err(PipelineError::Config(format!(
                    "checkpoint hash {params_hash} does not match corpus hash {}",
                    data.config_hash
                ))
                .into());
            }
            let report = pipeline::run_checks(&data, &policy, &values, &cfg, &params_hash, which);
            for check in &report.checks {
                println!(
                    "{}: {} (statistic {:.3e}, tolerance {:.3e}){}",
                    check.name,
                    if check.skipped {
                        "SKIP"
                    } else if check.pass {
                        "PASS"
                    } else {
                        "FAIL"
                    },
                    check.statistic,
                    check.tolerance,
                    check
                        .note
                        .as_ref()
                        .map(|n| format!(" [{n}]"))
                        .unwrap_or_default()
                );
            }
            if let Some(out_path) = out {
                std::fs::write(&out_path, serde_json::to_string_pretty(&report)? + "\n")?;
            }
            if report.pass {
                Ok(Outcome::Ok)
            } else {
                Ok(Outcome::CheckFailure)
            }
        }
        Command::Metrics {
            corpus,
            params,
            out_dir,
            config,
        } => {
            let cfg = load_config(config.as_ref())?;
            let data =
                TreeCorpus::read(&corpus, &cfg.corpus_params()).context("reading corpus")?;
            let (policy, values, _, _) = policy::load_checkpoint(&params)?;
            let report = metrics::compute_metrics(&data, &policy, &values);
            metrics::emit_metrics(&report, &out_dir)?;
            println!(
                "metrics -> {} ({} retained trajectories, mean {:.2} turns)",
                out_dir.display(),
                report.retained_count,
                report.mean_retained_turns
            );
            Ok(Outcome::Ok)
        }
        Command::Pipeline { config, out_dir } => {
            let cfg = RunConfig::load(&config)?;
            let outcome = pipeline::run_pipeline(&cfg, &out_dir)?;
            println!(
                "pipeline done: {} steps, {} tree builds, {} retained trajectories (mean {:.2} turns)",
                outcome.steps_run,
                outcome.tree_builds,
                outcome.retained_trajectories,
                outcome.mean_retained_turns
            );
            println!(
                "artifacts: {}, {}, {}",
                outcome.corpus_path.display(),
                outcome.checkpoint_path.display(),
                outcome.trace_path.display()
            );
            Ok(Outcome::Ok)
        }
    }
}

/// Resolve the `--state` argument: a corpus node id, or a path to a JSON
/// history file [{"role": "seeker", "text": "..."}, ...].
fn resolve_state(
    spec: &str,
    corpus_path: Option<&PathBuf>,
    cfg: &RunConfig,
) -> Result<StateFeatures> {
    if let Ok(key) = spec.parse::<StateKey>() {
        if let Some(path) = corpus_path {
            let data = TreeCorpus::read(path, &cfg.corpus_params())?;
            return data
                .state_features(&key)
                .ok_or_else(|| anyhow!("state {key} not present in corpus"));
        }
        // without a corpus the key still addresses tabular parameters
        return Ok(StateFeatures {
            key,
            turn: 0,
            last_action: None,
        });
    }
    let path = PathBuf::from(spec);
    let text = std::fs::read_to_string(&path).with_context(|| {
        format!("config error: state `{spec}` is neither a t<k>:n<k> key nor a readable file")
    })?;
    #[derive(serde::Deserialize)]
    struct HistoryEntry {
        role: String,
        text: String,
    }
    let entries: Vec<HistoryEntry> = serde_json::from_str(&text)?;
    let utterances: Vec<(Role, String)> = entries
        .into_iter()
        .map(|e| {
            let role = match e.role.as_str() {
                "seeker" => Ok(Role::Seeker),
                "supporter" => Ok(Role::Supporter),
                other => Err(anyhow!("config error: unknown role `{other}`")),
            }?;
            Ok((role, e.text))
        })
        .collect::<Result<_>>()?;
    let turn = utterances
        .iter()
        .filter(|(r, _)| *r == Role::Supporter)
        .count() as u32;
    Ok(StateFeatures {
        key: StateKey::new(
            dialogue_flow::model::TreeId(u64::MAX),
            dialogue_flow::model::NodeId(0),
        ),
        turn,
        last_action: None,
    })
}
