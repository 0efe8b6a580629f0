//! The outer self-evolution loop: shard the raw questions, then alternate
//! supervised fine-tuning from the fixed base with RL on the next shard,
//! growing an append-only pool of scored rollouts.

pub mod config;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::base::build_base;
use crate::env::{generate_questions, generate_world, relabel, EnvError, Environment, KnowledgeGraph, Question, QuestionSet, Split};
use crate::eval::{emit_report, evaluate, EvalError, EvalResult, Stage, StageEval};
use crate::grpo::{rl_train, BatchMetrics, GrpoError, RunTag};
use crate::policy::{load_checkpoint, save_checkpoint, PolicyError, PolicyParams, PolicySnapshot, SnapshotRole};
use crate::records::{read_jsonl, write_jsonl, RecordError, ScoredRollout};
use crate::rsft::{apply_filters, sft_train, DataPool, FilterAudit, RsftError};
use crate::seeds::{derive_seed, stream};

pub use config::EvolveConfig;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("config: {0}")]
    Config(String),
    #[error("cannot split {have} questions into {shards} shards")]
    TooFewQuestions { have: usize, shards: usize },
    #[error("run directory {0} was created with a different configuration")]
    ConfigChanged(PathBuf),
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("rl: {0}")]
    Grpo(#[from] GrpoError),
    #[error("sft: {0}")]
    Rsft(#[from] RsftError),
    #[error("eval: {0}")]
    Eval(#[from] EvalError),
    #[error("records: {0}")]
    Record(#[from] RecordError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("report: {0}")]
    Report(String),
}

/// Seeded shuffle, then a contiguous split into `n` shards whose sizes
/// differ by at most one. Shard `i` (from 1) is tagged `TrainShard(i)`.
pub fn split_shards(questions: &[Question], n: usize, seed: u64) -> Result<Vec<Vec<Question>>, OrchestratorError> {
    if n == 0 || questions.len() < n {
        return Err(OrchestratorError::TooFewQuestions { have: questions.len(), shards: n });
    }
    let mut order: Vec<&Question> = questions.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (questions.len() / n, questions.len() % n);
    let mut shards = Vec::with_capacity(n);
    let mut rest = order.as_slice();
    for i in 0..n {
        let (head, tail) = rest.split_at(base + usize::from(i < extra));
        shards.push(
            head.iter()
                .map(|q| Question { split: Split::TrainShard(i as u32 + 1), ..(*q).clone() })
                .collect(),
        );
        rest = tail;
    }
    Ok(shards)
}

/// World, question sets and base policy shared by every iteration.
#[derive(Debug, Clone)]
pub struct RunSetup {
    pub env: Environment,
    pub train: Vec<Question>,
    pub eval: Vec<Question>,
    pub base: PolicyParams,
}

fn build_world(cfg: &EvolveConfig) -> Result<KnowledgeGraph, OrchestratorError> {
    Ok(match &cfg.world_file {
        Some(p) => KnowledgeGraph::load(p)?,
        None => generate_world(derive_seed(cfg.master_seed, &[stream::WORLD]), cfg.world_entities, cfg.world_relations)?,
    })
}

/// Raw training questions and the evaluation set. In-domain evaluation
/// questions come from the same draw as the training questions so the two
/// never share a path.
fn build_questions(cfg: &EvolveConfig, kg: &KnowledgeGraph) -> Result<(Vec<Question>, Vec<Question>), OrchestratorError> {
    let mix = cfg.hop_mix()?;
    let seed = derive_seed(cfg.master_seed, &[stream::QUESTIONS]);
    let (train, eval) = match (&cfg.train_file, &cfg.eval_file) {
        (Some(t), Some(e)) => (QuestionSet::load(t)?.questions, QuestionSet::load(e)?.questions),
        (None, None) => {
            let n = cfg.train_questions + cfg.eval_id_questions;
            let mut all = generate_questions(kg, &mix, n, Split::TrainShard(0), derive_seed(seed, &[0]))?;
            let mut id = all.split_off(cfg.train_questions);
            relabel(&mut id, Split::EvalInDomain);
            let mut eval = id;
            if cfg.eval_ood_questions > 0 {
                eval.extend(generate_questions(
                    kg,
                    &mix,
                    cfg.eval_ood_questions,
                    Split::EvalOutOfDomain,
                    derive_seed(seed, &[1]),
                )?);
            }
            (all, eval)
        }
        _ => return Err(OrchestratorError::Config("train_file and eval_file must be given together".into())),
    };
    if let Some(q) = eval.iter().find(|q| !q.split.is_eval()) {
        return Err(OrchestratorError::Config(format!("evaluation question {} is not an eval split", q.id)));
    }
    let train_ids: std::collections::HashSet<&str> = train.iter().map(|q| q.id.as_str()).collect();
    if let Some(q) = eval.iter().find(|q| train_ids.contains(q.id.as_str())) {
        return Err(OrchestratorError::Config(format!("question {} is in both train and eval sets", q.id)));
    }
    Ok((train, eval))
}

/// Builds the world, questions and base policy from the configuration.
pub fn prepare(cfg: &EvolveConfig) -> Result<RunSetup, OrchestratorError> {
    cfg.validate()?;
    let kg = build_world(cfg)?;
    let (train, eval) = build_questions(cfg, &kg)?;
    let env = Environment::with_top_k(kg, cfg.search_top_k)?;
    let arch = cfg.architecture(env.vocab.len());
    let base = build_base(&env, arch, &cfg.base(), derive_seed(cfg.master_seed, &[stream::BASE]))?;
    Ok(RunSetup { env, train, eval, base })
}

/// Per-iteration summary; everything here is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: u32,
    pub shard_size: usize,
    pub pool_before: usize,
    pub pool_after: usize,
    pub filter: FilterAudit,
    pub sft_trained: bool,
    pub sft_final_loss: Option<f64>,
    pub rl_batches: usize,
    pub rl_first_batch_reward: f64,
    pub rl_last_batch_reward: f64,
    pub rl_mean_reward: f64,
    pub eval_sft: EvalResult,
    pub eval_rl: EvalResult,
}

/// Everything one iteration produces.
#[derive(Debug, Clone)]
pub struct IterationArtifacts {
    pub sft_params: PolicyParams,
    pub rl_params: PolicyParams,
    pub filtered: Vec<ScoredRollout>,
    pub delta: Vec<ScoredRollout>,
    pub metrics: Vec<BatchMetrics>,
    pub report: IterationReport,
}

/// Filter the pool, fine-tune from the base (skipped on an empty corpus),
/// run RL on shard `i` and evaluate both models.
pub fn run_iteration(
    setup: &RunSetup,
    cfg: &EvolveConfig,
    shards: &[Vec<Question>],
    i: u32,
    pool: &DataPool,
) -> Result<IterationArtifacts, OrchestratorError> {
    let shard = shards
        .get(i as usize - 1)
        .ok_or_else(|| OrchestratorError::Config(format!("no shard for iteration {i}")))?;
    let env = &setup.env;
    let (filtered, audit) = apply_filters(pool.records(), &cfg.filter());
    let base = PolicySnapshot::new(SnapshotRole::Base, setup.base.clone());
    let (sft_params, sft_final_loss) = if filtered.is_empty() {
        (base.thaw(), None)
    } else {
        let out = sft_train(&base, &env.vocab, &filtered, &cfg.sft(), derive_seed(cfg.master_seed, &[stream::SFT, i as u64]))?;
        (out.params, out.batch_losses.last().copied())
    };
    let tag = RunTag { iteration: i, first_sequence: pool.len() as u64 };
    let rl_seed = derive_seed(cfg.master_seed, &[stream::RL, i as u64]);
    let rl = rl_train(&sft_params, shard, env, cfg.reward_mode, &cfg.grpo(), rl_seed, tag)?;
    let eval_cfg = cfg.eval();
    let eval_sft = evaluate(&sft_params, &setup.eval, env, &eval_cfg)?;
    let eval_rl = evaluate(&rl.params, &setup.eval, env, &eval_cfg)?;
    let rewards: Vec<f64> = rl.metrics.iter().map(|m| m.mean_reward).collect();
    let report = IterationReport {
        iteration: i,
        shard_size: shard.len(),
        pool_before: pool.len(),
        pool_after: pool.len() + rl.log.len(),
        filter: audit,
        sft_trained: !filtered.is_empty(),
        sft_final_loss,
        rl_batches: rewards.len(),
        rl_first_batch_reward: rewards.first().copied().unwrap_or(0.0),
        rl_last_batch_reward: rewards.last().copied().unwrap_or(0.0),
        rl_mean_reward: rewards.iter().sum::<f64>() / rewards.len().max(1) as f64,
        eval_sft,
        eval_rl,
    };
    Ok(IterationArtifacts { sft_params, rl_params: rl.params, filtered, delta: rl.log, metrics: rl.metrics, report })
}

pub fn iteration_dir(root: &Path, i: u32) -> PathBuf {
    root.join(format!("{i:03}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), OrchestratorError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| OrchestratorError::Report(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Writes the iteration into a scratch directory and renames it into place,
/// so a crash never leaves a half-written iteration behind.
pub fn commit_iteration(root: &Path, i: u32, art: &IterationArtifacts) -> Result<(), OrchestratorError> {
    let tmp = root.join(format!(".{i:03}.tmp"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    write_jsonl(&tmp.join("filtered.jsonl"), &art.filtered)?;
    save_checkpoint(&art.sft_params, &tmp.join("sft.ckpt"))?;
    save_checkpoint(&art.rl_params, &tmp.join("rl.ckpt"))?;
    write_jsonl(&tmp.join("pool-delta.jsonl"), &art.delta)?;
    let mut metrics = fs::File::create(tmp.join("metrics.jsonl"))?;
    for m in &art.metrics {
        let line = serde_json::to_string(m).map_err(|e| OrchestratorError::Report(e.to_string()))?;
        writeln!(metrics, "{line}")?;
    }
    write_json(&tmp.join("report.json"), &art.report)?;
    fs::write(tmp.join("DONE"), b"")?;
    let dest = iteration_dir(root, i);
    if dest.exists() {
        fs::remove_dir_all(&dest)?;
    }
    fs::rename(&tmp, &dest)?;
    Ok(())
}

/// A committed iteration read back from disk.
#[derive(Debug, Clone)]
pub struct CompletedIteration {
    pub rl_params: PolicyParams,
    pub delta: Vec<ScoredRollout>,
    pub report: IterationReport,
}

pub fn load_iteration(root: &Path, i: u32) -> Result<Option<CompletedIteration>, OrchestratorError> {
    let dir = iteration_dir(root, i);
    if !dir.join("DONE").exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(dir.join("report.json"))?;
    let report = serde_json::from_str(&text).map_err(|e| OrchestratorError::Report(e.to_string()))?;
    Ok(Some(CompletedIteration {
        rl_params: load_checkpoint(&dir.join("rl.ckpt"))?,
        delta: read_jsonl(&dir.join("pool-delta.jsonl"))?,
        report,
    }))
}

#[derive(Debug, Clone)]
pub struct EvolveOutcome {
    pub final_params: PolicyParams,
    pub reports: Vec<IterationReport>,
}

/// Settings that must match for a run directory to be resumed.
fn resume_key(cfg: &EvolveConfig) -> String {
    EvolveConfig { iterations: 0, run_dir: PathBuf::new(), ..cfg.clone() }.to_toml()
}

/// Runs (or resumes) every iteration, persisting each one under `run_dir`,
/// and writes the flat report into `run_dir/report`.
pub fn evolve_with(setup: &RunSetup, cfg: &EvolveConfig) -> Result<EvolveOutcome, OrchestratorError> {
    cfg.validate()?;
    let root = &cfg.run_dir;
    fs::create_dir_all(root)?;
    let key_path = root.join("config.toml");
    let key = resume_key(cfg);
    match fs::read_to_string(&key_path) {
        Ok(existing) if existing != key => return Err(OrchestratorError::ConfigChanged(root.clone())),
        Ok(_) => {}
        Err(_) => fs::write(&key_path, &key)?,
    }
    let shards = split_shards(&setup.train, cfg.iterations as usize, derive_seed(cfg.master_seed, &[stream::SHARDS]))?;
    let mut pool = DataPool::new();
    let mut reports = Vec::new();
    let mut entries = Vec::new();
    let mut current = setup.base.clone();
    for i in 1..=cfg.iterations {
        let (params, delta, report) = match load_iteration(root, i)? {
            Some(done) => (done.rl_params, done.delta, done.report),
            None => {
                let art = run_iteration(setup, cfg, &shards, i, &pool)?;
                commit_iteration(root, i, &art)?;
                (art.rl_params, art.delta, art.report)
            }
        };
        pool.append(delta)?;
        entries.push(StageEval { iteration: i, stage: Stage::Sft, result: report.eval_sft.clone() });
        entries.push(StageEval { iteration: i, stage: Stage::Rl, result: report.eval_rl.clone() });
        reports.push(report);
        current = params;
    }
    let metadata = EvolveConfig { run_dir: PathBuf::new(), ..cfg.clone() };
    emit_report(&root.join("report"), &metadata, &entries)?;
    Ok(EvolveOutcome { final_params: current, reports })
}

/// [`prepare`] followed by [`evolve_with`].
pub fn evolve(cfg: &EvolveConfig) -> Result<EvolveOutcome, OrchestratorError> {
    evolve_with(&prepare(cfg)?, cfg)
}
