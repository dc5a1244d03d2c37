//! Run orchestration: flat key-value configuration, the iterative
//! search-then-train refresh loop, artifact persistence and the verification
//! report.

use crate::corpus::{CorpusParams, TreeCorpus};
use crate::env::{DialogueEnv, ProceduralEnv, RemoteEnv, ScriptedEnv};
use crate::model::{Role, TreeId};
use crate::oracle;
use crate::policy::{self, PolicyParams, ValueParams};
use crate::search::{build_tree, SearchConfig};
use crate::training::{self, LossAggregation, TraceRow, TrainConfig};
use serde::Serialize;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which environment the run talks to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Synthetic,
    Scripted,
    Remote,
}

impl std::str::FromStr for EnvKind {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "synthetic" => Ok(EnvKind::Synthetic),
            "scripted" => Ok(EnvKind::Scripted),
            "remote" => Ok(EnvKind::Remote),
            other => Err(PipelineError::Config(format!(
                "unknown env `{other}` (expected synthetic|scripted|remote)"
            ))),
        }
    }
}

/// Full run configuration: search, training, retention and orchestration
/// knobs, parsed from a flat key-value file with fail-fast unknown keys.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub search: SearchConfig,
    pub train: TrainConfig,
    /// Trajectory retention threshold (keep paths with more nodes than this).
    pub min_nodes: usize,
    /// Trees built per round, one per seed dialogue.
    pub seed_dialogues: u64,
    /// Rebuild trees every this many training iterations.
    pub refresh_interval: u64,
    pub env: EnvKind,
    /// Source corpus for the scripted environment.
    pub scripted_from: Option<PathBuf>,
    /// Candidate-set size for inference.
    pub candidate_k: usize,
    /// `tabular` or `featurized`.
    pub policy_mode: String,
    pub env_seed: u64,
    pub env_horizon: u32,
    pub env_term_start: u32,
    pub env_term_prob: f64,
    pub env_action_bias: f64,
    pub env_jitter: f64,
    /// Tolerance for the conservation/prefix verification checks.
    pub verify_tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            search: SearchConfig::default(),
            train: TrainConfig::default(),
            min_nodes: 3,
            seed_dialogues: 10,
            refresh_interval: 10,
            env: EnvKind::Synthetic,
            scripted_from: None,
            candidate_k: 3,
            policy_mode: "tabular".into(),
            env_seed: 0,
            env_horizon: 7,
            env_term_start: 3,
            env_term_prob: 0.4,
            env_action_bias: 0.25,
            env_jitter: 0.15,
            verify_tol: 1e-6,
        }
    }
}

impl RunConfig {
    /// Parse `key = value` lines; `#` starts a comment. Unknown keys are
    /// errors.
    pub fn parse(text: &str) -> Result<RunConfig, PipelineError> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                PipelineError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| {
                PipelineError::Config(format!("line {}: bad {what} `{value}`", lineno + 1))
            };
            match key {
                "depth_limit" => cfg.search.depth_limit = value.parse().map_err(|_| bad("integer"))?,
                "rollout_depth" => cfg.search.rollout_depth = value.parse().map_err(|_| bad("integer"))?,
                "simulations" => cfg.search.simulations = value.parse().map_err(|_| bad("integer"))?,
                "kappa" => cfg.search.kappa = value.parse().map_err(|_| bad("real"))?,
                "explore_weight" => cfg.search.explore_weight = value.parse().map_err(|_| bad("real"))?,
                "rng_seed" => cfg.search.rng_seed = value.parse().map_err(|_| bad("integer"))?,
                "gamma" => cfg.train.gamma = value.parse().map_err(|_| bad("real"))?,
                "lambda_eval" => cfg.train.lambda_eval = value.parse().map_err(|_| bad("real"))?,
                "eps_flow" => cfg.train.eps_flow = value.parse().map_err(|_| bad("real"))?,
                "learning_rate" => cfg.train.learning_rate = value.parse().map_err(|_| bad("real"))?,
                "max_steps" => cfg.train.max_steps = value.parse().map_err(|_| bad("integer"))?,
                "min_visits" => cfg.train.min_visits = value.parse().map_err(|_| bad("integer"))?,
                "clamp_leaf" => cfg.train.clamp_leaf = value.parse().map_err(|_| bad("bool"))?,
                "convergence_tol" => cfg.train.convergence_tol = value.parse().map_err(|_| bad("real"))?,
                "aggregation" => {
                    cfg.train.aggregation = match value {
                        "mean" => LossAggregation::Mean,
                        "sum" => LossAggregation::Sum,
                        _ => return Err(bad("aggregation (mean|sum)")),
                    }
                }
                "min_nodes" => cfg.min_nodes = value.parse().map_err(|_| bad("integer"))?,
                "seed_dialogues" => cfg.seed_dialogues = value.parse().map_err(|_| bad("integer"))?,
                "refresh_interval" => cfg.refresh_interval = value.parse().map_err(|_| bad("integer"))?,
                "env" => cfg.env = value.parse()?,
                "scripted_from" => cfg.scripted_from = Some(PathBuf::from(value)),
                "candidate_k" => cfg.candidate_k = value.parse().map_err(|_| bad("integer"))?,
                "policy_mode" => match value {
                    "tabular" | "featurized" => cfg.policy_mode = value.into(),
                    _ => return Err(bad("policy_mode (tabular|featurized)")),
                },
                "env_seed" => cfg.env_seed = value.parse().map_err(|_| bad("integer"))?,
                "env_horizon" => cfg.env_horizon = value.parse().map_err(|_| bad("integer"))?,
                "env_term_start" => cfg.env_term_start = value.parse().map_err(|_| bad("integer"))?,
                "env_term_prob" => cfg.env_term_prob = value.parse().map_err(|_| bad("real"))?,
                "env_action_bias" => cfg.env_action_bias = value.parse().map_err(|_| bad("real"))?,
                "env_jitter" => cfg.env_jitter = value.parse().map_err(|_| bad("real"))?,
                "verify_tol" => cfg.verify_tol = value.parse().map_err(|_| bad("real"))?,
                unknown => {
                    return Err(PipelineError::Config(format!(
                        "line {}: unknown key `{unknown}`",
                        lineno + 1
                    )))
                }
            }
        }
        if cfg.env == EnvKind::Scripted && cfg.scripted_from.is_none() {
            return Err(PipelineError::Config(
                "env = scripted requires scripted_from = <corpus path>".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    /// Canonical sorted key=value listing; the config hash is derived from it.
    pub fn canonical_string(&self) -> String {
        let mut pairs: Vec<(String, String)> = vec![
            ("depth_limit".into(), self.search.depth_limit.to_string()),
            ("rollout_depth".into(), self.search.rollout_depth.to_string()),
            ("simulations".into(), self.search.simulations.to_string()),
            ("kappa".into(), format!("{}", self.search.kappa)),
            ("explore_weight".into(), format!("{}", self.search.explore_weight)),
            ("rng_seed".into(), self.search.rng_seed.to_string()),
            ("gamma".into(), format!("{}", self.train.gamma)),
            ("lambda_eval".into(), format!("{}", self.train.lambda_eval)),
            ("eps_flow".into(), format!("{}", self.train.eps_flow)),
            ("learning_rate".into(), format!("{}", self.train.learning_rate)),
            ("max_steps".into(), self.train.max_steps.to_string()),
            ("min_visits".into(), self.train.min_visits.to_string()),
            ("clamp_leaf".into(), self.train.clamp_leaf.to_string()),
            ("convergence_tol".into(), format!("{}", self.train.convergence_tol)),
            (
                "aggregation".into(),
                match self.train.aggregation {
                    LossAggregation::Mean => "mean".into(),
                    LossAggregation::Sum => "sum".into(),
                },
            ),
            ("min_nodes".into(), self.min_nodes.to_string()),
            ("seed_dialogues".into(), self.seed_dialogues.to_string()),
            ("refresh_interval".into(), self.refresh_interval.to_string()),
            (
                "env".into(),
                match self.env {
                    EnvKind::Synthetic => "synthetic".into(),
                    EnvKind::Scripted => "scripted".into(),
                    EnvKind::Remote => "remote".into(),
                },
            ),
            ("candidate_k".into(), self.candidate_k.to_string()),
            ("policy_mode".into(), self.policy_mode.clone()),
            ("env_seed".into(), self.env_seed.to_string()),
            ("env_horizon".into(), self.env_horizon.to_string()),
            ("env_term_start".into(), self.env_term_start.to_string()),
            ("env_term_prob".into(), format!("{}", self.env_term_prob)),
            ("env_action_bias".into(), format!("{}", self.env_action_bias)),
            ("env_jitter".into(), format!("{}", self.env_jitter)),
            ("verify_tol".into(), format!("{}", self.verify_tol)),
        ];
        if let Some(path) = &self.scripted_from {
            pairs.push(("scripted_from".into(), path.display().to_string()));
        }
        pairs.sort();
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn config_hash(&self) -> String {
        fnv1a64(&self.canonical_string())
    }

    pub fn corpus_params(&self) -> CorpusParams {
        CorpusParams {
            min_nodes: self.min_nodes,
            eps_flow: self.train.eps_flow,
            depth_limit: self.search.depth_limit,
        }
    }

    pub fn make_policy(&self) -> PolicyParams {
        if self.policy_mode == "featurized" {
            PolicyParams::featurized()
        } else {
            PolicyParams::tabular()
        }
    }

    pub fn make_env(&self) -> Result<Box<dyn DialogueEnv>, PipelineError> {
        match self.env {
            EnvKind::Synthetic => Ok(Box::new(ProceduralEnv {
                seed: self.env_seed,
                horizon: self.env_horizon,
                term_start: self.env_term_start,
                term_prob: self.env_term_prob,
                action_bias: self.env_action_bias,
                jitter: self.env_jitter,
            })),
            EnvKind::Remote => RemoteEnv::from_env(Duration::from_secs(30))
                .map(|e| Box::new(e) as Box<dyn DialogueEnv>)
                .map_err(|e| PipelineError::Config(e.to_string())),
            EnvKind::Scripted => Err(PipelineError::Config(
                "scripted environments are constructed per tree; use build_trees".into(),
            )),
        }
    }
}

/// 64-bit FNV-1a, hex encoded.
pub fn fnv1a64(text: &str) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// Build one tree per seed dialogue and derive the corpus.
pub fn build_corpus(
    cfg: &RunConfig,
    policy: &PolicyParams,
    config_hash: &str,
) -> Result<TreeCorpus, PipelineError> {
    let stage = |message: String| PipelineError::Stage {
        stage: "build-trees".into(),
        message,
    };
    let scripted_source = match cfg.env {
        EnvKind::Scripted => {
            let path = cfg.scripted_from.as_ref().expect("checked at parse");
            Some(
                TreeCorpus::read(path, &cfg.corpus_params())
                    .map_err(|e| stage(format!("cannot read scripted corpus: {e}")))?,
            )
        }
        _ => None,
    };
    let shared_env: Option<Box<dyn DialogueEnv>> = match cfg.env {
        EnvKind::Scripted => None,
        _ => Some(cfg.make_env()?),
    };
    let mut trees = Vec::new();
    for i in 0..cfg.seed_dialogues {
        let opener = vec![(Role::Seeker, "seeker[]".to_string())];
        let scripted;
        let env: &dyn DialogueEnv = match &shared_env {
            Some(e) => e.as_ref(),
            None => {
                let source = scripted_source.as_ref().expect("scripted source loaded");
                let tree = source
                    .tree(TreeId(i))
                    .ok_or_else(|| stage(format!("scripted corpus has no tree t{i}")))?;
                scripted = ScriptedEnv::for_tree(tree);
                &scripted
            }
        };
        let tree = build_tree(TreeId(i), opener, env, policy, &cfg.search)
            .map_err(|e| stage(e.to_string()))?;
        trees.push(tree);
    }
    TreeCorpus::from_trees(
        trees,
        cfg.corpus_params(),
        config_hash.to_string(),
        cfg.search.rng_seed,
    )
    .map_err(|e| stage(e.to_string()))
}

/// Artifact paths produced by a pipeline run.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineOutcome {
    pub corpus_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub trace_path: PathBuf,
    pub metrics_dir: PathBuf,
    pub verify_path: PathBuf,
    pub steps_run: u64,
    pub tree_builds: u64,
    pub retained_trajectories: usize,
    pub mean_retained_turns: f64,
    pub final_policy_loss: f64,
}

/// Alternate tree building and training: trees are rebuilt every
/// `refresh_interval` training iterations until `max_steps` iterations have
/// run. All artifacts embed the config hash and seed.
pub fn run_pipeline(cfg: &RunConfig, out_dir: &Path) -> Result<PipelineOutcome, PipelineError> {
    std::fs::create_dir_all(out_dir)?;
    let hash = cfg.config_hash();
    let mut policy = cfg.make_policy();
    let mut values = ValueParams::new();

    let total_steps = cfg.train.max_steps;
    let refresh = cfg.refresh_interval.max(1);
    let mut steps_done = 0u64;
    let mut tree_builds = 0u64;
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut corpus = None;

    while steps_done < total_steps {
        let fresh = build_corpus(cfg, &policy, &hash)?;
        tree_builds += 1;
        let block = refresh.min(total_steps - steps_done);
        let report = training::train_steps(
            &fresh,
            &mut policy,
            &mut values,
            &cfg.train,
            block,
            steps_done,
        )
        .map_err(|e| PipelineError::Stage {
            stage: "train".into(),
            message: e.to_string(),
        })?;
        trace.extend(report.trace);
        steps_done += block;
        corpus = Some(fresh);
    }
    let corpus = match corpus {
        Some(c) => c,
        None => {
            let c = build_corpus(cfg, &policy, &hash)?;
            tree_builds += 1;
            c
        }
    };

    let corpus_path = out_dir.join("corpus.jsonl");
    corpus.write(&corpus_path).map_err(|e| PipelineError::Stage {
        stage: "persist-corpus".into(),
        message: e.to_string(),
    })?;

    let checkpoint_path = out_dir.join("params.ckpt");
    policy::save_checkpoint(&checkpoint_path, &policy, &values, steps_done, &hash).map_err(|e| {
        PipelineError::Stage {
            stage: "persist-checkpoint".into(),
            message: e.to_string(),
        }
    })?;

    let trace_path = out_dir.join("loss.csv");
    write_trace(&trace_path, &trace)?;

    let metrics_dir = out_dir.join("metrics");
    let report = crate::metrics::compute_metrics(&corpus, &policy, &values);
    crate::metrics::emit_metrics(&report, &metrics_dir)?;

    let verify_path = out_dir.join("verify.report");
    let verify = run_checks(&corpus, &policy, &values, cfg, &hash, VerifyChecks::all());
    std::fs::write(
        &verify_path,
        serde_json::to_string_pretty(&verify).expect("report serializes") + "\n",
    )?;

    let final_policy_loss = trace.last().map(|r| r.l_policy).unwrap_or(f64::NAN);
    Ok(PipelineOutcome {
        corpus_path,
        checkpoint_path,
        trace_path,
        metrics_dir,
        verify_path,
        steps_run: steps_done,
        tree_builds,
        retained_trajectories: report.retained_count,
        mean_retained_turns: report.mean_retained_turns,
        final_policy_loss,
    })
}

/// Loss trace file: step, L_policy, L_evaluate, total, max |residual|.
pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<(), PipelineError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "step,l_policy,l_evaluate,total,max_residual")?;
    for row in trace {
        writeln!(
            f,
            "{},{},{},{},{}",
            row.step, row.l_policy, row.l_evaluate, row.total, row.max_residual
        )?;
    }
    Ok(())
}

/// Which verification checks to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyChecks {
    pub conservation: bool,
    pub matching: bool,
    pub entropy: bool,
    pub prefix: bool,
}

impl VerifyChecks {
    pub fn all() -> Self {
        VerifyChecks {
            conservation: true,
            matching: true,
            entropy: true,
            prefix: true,
        }
    }

    pub fn parse(spec: &str) -> Result<Self, PipelineError> {
        if spec == "all" {
            return Ok(VerifyChecks::all());
        }
        let mut checks = VerifyChecks {
            conservation: false,
            matching: false,
            entropy: false,
            prefix: false,
        };
        for part in spec.split(',') {
            match part.trim() {
                "conservation" => checks.conservation = true,
                "matching" => checks.matching = true,
                "entropy" => checks.entropy = true,
                "prefix" => checks.prefix = true,
                other => {
                    return Err(PipelineError::Config(format!(
                        "unknown check `{other}` (all|conservation|matching|entropy|prefix)"
                    )))
                }
            }
        }
        Ok(checks)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    /// A check is skipped when the corpus has no instance it applies to
    /// (for example no complete enumerable tree); skipped checks do not
    /// count against the overall verdict.
    pub skipped: bool,
    pub statistic: f64,
    pub tolerance: f64,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub corpus_config_hash: String,
    pub params_config_hash: String,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
}

/// Run the selected guarantees against a corpus/parameter pair and report
/// machine-readable pass/fail per check.
pub fn run_checks(
    corpus: &TreeCorpus,
    policy: &PolicyParams,
    values: &ValueParams,
    cfg: &RunConfig,
    params_hash: &str,
    which: VerifyChecks,
) -> VerifyReport {
    let mut checks = Vec::new();
    let tol = cfg.verify_tol;

    if which.conservation {
        let mut max_residual: f64 = 0.0;
        for tree in corpus.trees.values() {
            let report = oracle::check_flow_conservation(
                corpus,
                tree,
                policy,
                values,
                cfg.train.clamp_leaf,
                tol,
            );
            max_residual = max_residual.max(report.max_residual);
        }
        checks.push(CheckResult {
            name: "conservation".into(),
            pass: max_residual <= tol,
            skipped: false,
            statistic: max_residual,
            tolerance: tol,
            note: None,
        });
    }

    // matching and entropy need complete trees (every leaf terminal)
    let complete: Vec<_> = corpus
        .trees
        .values()
        .filter(|t| {
            t.leaves()
                .iter()
                .all(|leaf| t.nodes[leaf].state.terminal)
        })
        .collect();

    if which.matching {
        let mut worst_l1: f64 = 0.0;
        let mut measured = 0usize;
        for tree in &complete {
            let Ok(trajs) = oracle::enumerate_trajectories(tree) else {
                continue;
            };
            let rewards: Vec<f64> = trajs.iter().map(|(_, r)| *r).collect();
            let Ok(target) = oracle::target_distribution(&rewards) else {
                continue;
            };
            let dist = oracle::policy_trajectory_distribution(policy, tree, &trajs);
            let l1: f64 = dist
                .iter()
                .zip(target.iter())
                .map(|(p, q)| (p - q).abs())
                .sum();
            worst_l1 = worst_l1.max(l1);
            measured += 1;
        }
        checks.push(CheckResult {
            name: "matching".into(),
            pass: measured > 0 && worst_l1 <= 0.05,
            skipped: measured == 0,
            statistic: worst_l1,
            tolerance: 0.05,
            note: (measured == 0).then(|| "no complete enumerable trees in corpus".into()),
        });
    }

    if which.entropy {
        let mut worst_margin = f64::INFINITY;
        let mut measured = 0usize;
        for tree in &complete {
            let Ok(trajs) = oracle::enumerate_trajectories(tree) else {
                continue;
            };
            let rewards: Vec<f64> = trajs.iter().map(|(_, r)| *r).collect();
            let Ok(bound) = oracle::entropy_lower_bound(&rewards) else {
                continue;
            };
            let dist = oracle::policy_trajectory_distribution(policy, tree, &trajs);
            let h = oracle::entropy(&dist);
            worst_margin = worst_margin.min(h - bound);
            measured += 1;
        }
        checks.push(CheckResult {
            name: "entropy".into(),
            pass: measured > 0 && worst_margin >= -0.02,
            skipped: measured == 0,
            statistic: if measured == 0 { f64::NAN } else { worst_margin },
            tolerance: 0.02,
            note: (measured == 0).then(|| "no complete enumerable trees in corpus".into()),
        });
    }

    if which.prefix {
        let mut worst_rel: f64 = 0.0;
        let signals = training::subpath_signals(corpus);
        for sig in &signals {
            let (s_m, s_n) = sig.endpoint_states(corpus);
            let flow = |key: &crate::model::StateKey| -> Option<f64> {
                let qhat = corpus.qhat_state.get(key)?;
                let terminal = corpus.node(key)?.state.terminal;
                let v = if cfg.train.clamp_leaf && terminal {
                    1.0
                } else {
                    values.value_state(key)
                };
                Some(qhat.max(cfg.train.eps_flow) * v)
            };
            let (Some(fm), Some(fn_)) = (flow(&s_m), flow(&s_n)) else {
                continue;
            };
            let ratio = fn_ / fm;
            let mut product = 1.0;
            let traj = &corpus.trajectories[sig.trajectory];
            for i in sig.m..sig.n {
                let key = crate::model::StateKey::new(traj.tree_id, traj.states[i]);
                let features = corpus.state_features(&key).expect("state exists");
                let mask = corpus.support_mask(&key);
                product *= policy.prob_masked(&features, mask)[traj.actions[i].index()];
            }
            worst_rel = worst_rel.max((ratio - product).abs() / ratio.abs().max(1e-300));
        }
        checks.push(CheckResult {
            name: "prefix".into(),
            pass: worst_rel <= tol.max(1e-3),
            skipped: signals.is_empty(),
            statistic: worst_rel,
            tolerance: tol.max(1e-3),
            note: signals.is_empty().then(|| "no recorded subpaths".into()),
        });
    }

    VerifyReport {
        corpus_config_hash: corpus.config_hash.clone(),
        params_config_hash: params_hash.to_string(),
        pass: checks.iter().all(|c| c.pass || c.skipped),
        checks,
    }
}
