//! `searchloop`: command-line driver for worlds, questions, training stages,
//! the full self-evolution loop and evaluation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use searchloop_core::base::build_base;
use searchloop_core::env::{generate_questions, generate_world, HopMix, QuestionSet};
use searchloop_core::eval::{emit_report, evaluate, EvalConfig, Stage, StageEval};
use searchloop_core::grpo::{rl_train, RunTag};
use searchloop_core::orchestrator::{evolve, EvolveConfig, IterationReport};
use searchloop_core::policy::{load_checkpoint, save_checkpoint};
use searchloop_core::records::{read_jsonl, write_jsonl};
use searchloop_core::rsft::{apply_filters, sft_train, FilterConfig};
use searchloop_core::{Environment, KnowledgeGraph, PolicySnapshot, RewardMode, SnapshotRole, Split};

#[derive(Parser)]
#[command(name = "searchloop", version, about = "Self-evolving search agent training laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic knowledge graph.
    GenWorld(GenWorld),
    /// Generate questions over a world.
    GenQuestions(GenQuestions),
    /// Build the fixed base policy for a world.
    InitBase(InitBase),
    /// Run RL on one shard starting from a checkpoint.
    TrainRl(TrainRl),
    /// Apply the reward, dedup and top-k filters to rollout pools.
    Filter(Filter),
    /// Fine-tune a base checkpoint on a filtered corpus.
    TrainSft(TrainSft),
    /// Run (or resume) the full alternating loop.
    Evolve(Evolve),
    /// Greedy evaluation of a checkpoint.
    Eval(Eval),
    /// Aggregate iteration reports into the flat accuracy table.
    Report(Report),
}

#[derive(Args)]
struct Common {
    /// Flat TOML file of loop settings; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// World file written by `gen-world`.
    #[arg(long)]
    world: PathBuf,
}

impl Common {
    fn load(&self) -> Result<(EvolveConfig, Environment)> {
        let cfg = load_config(self.config.as_deref())?;
        let kg = KnowledgeGraph::load(&self.world).with_context(|| format!("reading {}", self.world.display()))?;
        Ok((cfg.clone(), Environment::with_top_k(kg, cfg.search_top_k)?))
    }
}

#[derive(Args)]
struct GenWorld {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    entities: usize,
    #[arg(long, default_value_t = 8)]
    relations: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Id,
    Ood,
}

#[derive(Args)]
struct GenQuestions {
    #[arg(long)]
    world: PathBuf,
    #[arg(long, default_value_t = 600)]
    count: usize,
    /// Hop-count weights, e.g. `1:0.25,2:0.375,3:0.375`.
    #[arg(long)]
    hop_mix: Option<String>,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    /// Shard label for training questions.
    #[arg(long, default_value_t = 0)]
    shard: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InitBase {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainRl {
    #[command(flatten)]
    common: Common,
    /// Question file of the shard to train on.
    #[arg(long)]
    shard: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Iteration label stamped on logged rollouts.
    #[arg(long, default_value_t = 1)]
    iteration: u32,
    /// Output directory for `rl.ckpt`, `pool-delta.jsonl` and `metrics.jsonl`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Filter {
    /// Pool files in append order.
    #[arg(long = "pool", required = true)]
    pools: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.7)]
    threshold: f64,
    #[arg(long, default_value_t = 2000)]
    top_k: usize,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the per-rule counts; printed to stdout otherwise.
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Args)]
struct TrainSft {
    #[command(flatten)]
    common: Common,
    /// Filtered corpus.
    #[arg(long)]
    data: PathBuf,
    /// Base checkpoint to fine-tune.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Evolve {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `run_dir` from the config.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Overrides `master_seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `iterations` from the config.
    #[arg(long)]
    iterations: Option<u32>,
}

#[derive(Args)]
struct Eval {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    questions: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "judge")]
    judge_mode: RewardMode,
}

#[derive(Args)]
struct Report {
    /// Iteration `report.json` files.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<EvolveConfig> {
    Ok(match path {
        Some(p) => EvolveConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => EvolveConfig::default(),
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn gen_world(a: GenWorld) -> Result<()> {
    let kg = generate_world(a.seed, a.entities, a.relations)?;
    kg.save(&a.out)?;
    println!("{} entities, {} relations, {} triples -> {}", kg.entities.len(), kg.relations.len(), kg.triples.len(), a.out.display());
    Ok(())
}

fn gen_questions(a: GenQuestions) -> Result<()> {
    let kg = KnowledgeGraph::load(&a.world)?;
    let mix = match &a.hop_mix {
        Some(s) => s.parse::<HopMix>().map_err(anyhow::Error::msg)?,
        None => HopMix::default(),
    };
    let split = match a.split {
        SplitArg::Train => Split::TrainShard(a.shard),
        SplitArg::Id => Split::EvalInDomain,
        SplitArg::Ood => Split::EvalOutOfDomain,
    };
    let questions = generate_questions(&kg, &mix, a.count, split, a.seed)?;
    let set = QuestionSet { world_seed: kg.seed, seed: a.seed, questions };
    set.save(&a.out)?;
    println!("{} questions -> {}", set.questions.len(), a.out.display());
    Ok(())
}

fn init_base(a: InitBase) -> Result<()> {
    let (cfg, env) = a.common.load()?;
    let params = build_base(&env, cfg.architecture(env.vocab.len()), &cfg.base(), a.seed)?;
    save_checkpoint(&params, &a.out)?;
    println!("{} parameters -> {}", params.values.len(), a.out.display());
    Ok(())
}

fn train_rl(a: TrainRl) -> Result<()> {
    let (cfg, env) = a.common.load()?;
    let shard = QuestionSet::load(&a.shard)?.questions;
    let start = load_checkpoint(&a.ckpt)?;
    let tag = RunTag { iteration: a.iteration, first_sequence: 0 };
    let out = rl_train(&start, &shard, &env, cfg.reward_mode, &cfg.grpo(), a.seed, tag)?;
    fs::create_dir_all(&a.out)?;
    save_checkpoint(&out.params, &a.out.join("rl.ckpt"))?;
    write_jsonl(&a.out.join("pool-delta.jsonl"), &out.log)?;
    let mut metrics = fs::File::create(a.out.join("metrics.jsonl"))?;
    for m in &out.metrics {
        writeln!(metrics, "{}", serde_json::to_string(m)?)?;
    }
    let last = out.metrics.last().map_or(0.0, |m| m.mean_reward);
    println!("{} batches, {} rollouts, last batch reward {last:.3} -> {}", out.metrics.len(), out.log.len(), a.out.display());
    Ok(())
}

fn filter(a: Filter) -> Result<()> {
    let mut pool = Vec::new();
    for p in &a.pools {
        pool.extend(read_jsonl(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let (kept, audit) = apply_filters(&pool, &FilterConfig { reward_threshold: a.threshold, top_k: a.top_k });
    write_jsonl(&a.out, &kept)?;
    match &a.audit {
        Some(path) => write_json(path, &audit)?,
        None => println!("{}", serde_json::to_string_pretty(&audit)?),
    }
    Ok(())
}

fn train_sft(a: TrainSft) -> Result<()> {
    let (cfg, env) = a.common.load()?;
    let data = read_jsonl(&a.data)?;
    let base = PolicySnapshot::new(SnapshotRole::Base, load_checkpoint(&a.ckpt)?);
    let out = sft_train(&base, &env.vocab, &data, &cfg.sft(), a.seed)?;
    save_checkpoint(&out.params, &a.out)?;
    let last = out.batch_losses.last().copied().unwrap_or(f64::NAN);
    println!("{} records, {} steps, last batch loss {last:.4} -> {}", data.len(), out.batch_losses.len(), a.out.display());
    Ok(())
}

fn run_evolve(a: Evolve) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(d) = a.run_dir {
        cfg.run_dir = d;
    }
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    let out = evolve(&cfg)?;
    for r in &out.reports {
        println!(
            "iteration {}: sft id {:.3} ood {:.3} | rl id {:.3} ood {:.3} | mean tool calls {:.2}",
            r.iteration,
            r.eval_sft.accuracy_id,
            r.eval_sft.accuracy_ood,
            r.eval_rl.accuracy_id,
            r.eval_rl.accuracy_ood,
            r.eval_rl.mean_tool_calls
        );
    }
    println!("report -> {}", cfg.run_dir.join("report").display());
    Ok(())
}

fn run_eval(a: Eval) -> Result<()> {
    let (cfg, env) = a.common.load()?;
    let params = load_checkpoint(&a.ckpt)?;
    let questions = QuestionSet::load(&a.questions)?.questions;
    let eval_cfg = EvalConfig { judge_mode: a.judge_mode, ..cfg.eval() };
    let result = evaluate(&params, &questions, &env, &eval_cfg)?;
    write_json(&a.out, &result)?;
    println!(
        "id {:.3} ({}) ood {:.3} ({}) mean tool calls {:.2} -> {}",
        result.accuracy_id,
        result.n_id,
        result.accuracy_ood,
        result.n_ood,
        result.mean_tool_calls,
        a.out.display()
    );
    Ok(())
}

fn report(a: Report) -> Result<()> {
    let mut entries = Vec::new();
    let mut iterations = Vec::new();
    for p in &a.reports {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let r: IterationReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        if iterations.contains(&r.iteration) {
            bail!("iteration {} appears twice", r.iteration);
        }
        iterations.push(r.iteration);
        entries.push(StageEval { iteration: r.iteration, stage: Stage::Sft, result: r.eval_sft });
        entries.push(StageEval { iteration: r.iteration, stage: Stage::Rl, result: r.eval_rl });
    }
    iterations.sort_unstable();
    emit_report(&a.out, &serde_json::json!({ "iterations": iterations }), &entries)?;
    println!("{} iterations -> {}", iterations.len(), a.out.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenWorld(a) => gen_world(a),
        Command::GenQuestions(a) => gen_questions(a),
        Command::InitBase(a) => init_base(a),
        Command::TrainRl(a) => train_rl(a),
        Command::Filter(a) => filter(a),
        Command::TrainSft(a) => train_sft(a),
        Command::Evolve(a) => run_evolve(a),
        Command::Eval(a) => run_eval(a),
        Command::Report(a) => report(a),
    }
}
