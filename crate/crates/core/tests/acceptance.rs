//! Acceptance harness: one PASS/FAIL line per criterion, tolerances pinned below.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use searchloop_core::base::{demo_rollout, BaseConfig};
use searchloop_core::env::{f1_score, generate_questions, generate_world, HopMix, Judge};
use searchloop_core::eval::{EvalResult, StageEval};
use searchloop_core::grammar::{check_format, parse_rollout, render_segments, Segment};
use searchloop_core::grpo::{compute_advantages, grpo_objective_and_gradient, GrpoConfig, RolloutGroup};
use searchloop_core::orchestrator::{evolve_with, prepare, EvolveConfig, IterationReport};
use searchloop_core::policy::vocab::{RESPONSE_CLOSE_ID, RESPONSE_OPEN_ID};
use searchloop_core::policy::{sequence_log_probs, Architecture};
use searchloop_core::records::ScoredRollout;
use searchloop_core::rsft::{
    apply_filters, filter_hrs, filter_sqd, sft_loss_and_gradient, sft_loss_and_gradient_with_targets, FilterConfig,
};
use searchloop_core::{hybrid_reward, Environment, PolicyParams, PolicySnapshot, RewardBreakdown, RewardMode, SnapshotRole, Split};

const ADV_MEAN_TOL: f64 = 1e-9;
const ADV_STD_TOL: f64 = 1e-6;
const AFFINE_TOL: f64 = 1e-9;
const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
const FD_INSTANCES: u64 = 20;
const FD_COORDS: usize = 25;
const IDENTITY_TOL: f64 = 1e-10;
const FILTER_POOLS: u64 = 200;
const ROUND_TRIPS: u64 = 10_000;
const DESK_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const RL_GAIN: f64 = 0.02;
const SFT_SLACK: f64 = 0.01;
const RL_ONLY_SLACK: f64 = 0.01;
const MIN_WINS: usize = 3;
const EVOLVE_BUDGET: Duration = Duration::from_secs(15 * 60);
const VERSUS_BUDGET: Duration = Duration::from_secs(25 * 60);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn rollout_text(answer: &str, cycles: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(cycles as u64);
    let mut segs = common::valid_segments(&mut rng, cycles);
    *segs.last_mut().unwrap() = Segment::Answer(answer.to_string());
    render_segments(&segs).unwrap()
}

fn reward_lattice() -> Outcome {
    let judge = Judge::default();
    let golds = ["Paris", "New York City", "the Beatles"];
    let preds = ["Paris", "paris.", "New York", "new york city", "Beatles", "the beatles", "London", "Paris New York City", "x"];
    let mut cases = 0;
    let mut binary_totals = BTreeSet::new();
    for gold in golds {
        for pred in preds {
            let valid: Vec<String> = (0..3).map(|c| rollout_text(pred, c)).collect();
            let invalid: Vec<String> = common::malformed_corpus()
                .into_iter()
                .map(|(t, _)| t)
                .chain([format!("<answer>{pred}</answer>"), format!("<think>t</think><answer>{pred}</answer> tail")])
                .collect();
            for text in valid.iter().chain(&invalid) {
                let ok = check_format(text) == 1.0;
                for mode in [RewardMode::Judge, RewardMode::Recall, RewardMode::F1] {
                    cases += 1;
                    let r = hybrid_reward(text, gold, mode, &judge);
                    let expected = match (ok, mode) {
                        (false, _) => 0.0,
                        (true, RewardMode::F1) => 0.5 * (1.0 + f1_score(pred, gold)),
                        (true, _) => 0.5 * (1.0 + r.answer_reward),
                    };
                    if r.total != expected {
                        return outcome(false, format!("{mode} {pred:?}/{gold:?}: total {} != {expected}", r.total));
                    }
                    if mode != RewardMode::F1 {
                        if ok && r.answer_reward != 0.0 && r.answer_reward != 1.0 {
                            return outcome(false, format!("{mode} answer reward {} not binary", r.answer_reward));
                        }
                        binary_totals.insert(r.total.to_bits());
                    }
                }
            }
        }
    }
    let expected: BTreeSet<u64> = [0.0f64, 0.5, 1.0].iter().map(|x| x.to_bits()).collect();
    outcome(binary_totals == expected, format!("{cases} cases; judge/recall totals exactly {{0, 0.5, 1}}; f1 totals = 0.5(1+f1)"))
}

fn advantage_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_mean, mut worst_std, mut worst_affine) = (0.0f64, 0.0f64, 0.0f64);
    let mut constant = 0;
    for i in 0..1000 {
        let g = rng.gen_range(2..=32);
        let rewards: Vec<f64> = if i % 10 == 0 {
            vec![rng.gen::<f64>(); g]
        } else {
            (0..g).map(|_| [0.0, 0.5, 1.0, rng.gen()][rng.gen_range(0..4)]).collect()
        };
        let adv = compute_advantages(&rewards).unwrap();
        if rewards.iter().all(|&r| r == rewards[0]) {
            constant += 1;
            if adv.iter().any(|&a| a != 0.0) {
                return outcome(false, "constant rewards gave non-zero advantages");
            }
            continue;
        }
        let n = g as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        worst_mean = worst_mean.max(mean.abs());
        worst_std = worst_std.max((std - 1.0).abs());
        let a = rng.gen_range(0.01..100.0);
        let b = rng.gen_range(-50.0..50.0);
        let shifted: Vec<f64> = rewards.iter().map(|r| a * r + b).collect();
        let adv2 = compute_advantages(&shifted).unwrap();
        for (x, y) in adv.iter().zip(&adv2) {
            worst_affine = worst_affine.max((x - y).abs());
        }
    }
    outcome(
        worst_mean < ADV_MEAN_TOL && worst_std < ADV_STD_TOL && worst_affine < AFFINE_TOL,
        format!("1000 vectors ({constant} constant); max |mean| {worst_mean:.1e}, max |std-1| {worst_std:.1e}, max affine diff {worst_affine:.1e}"),
    )
}

/// A tiny world and architecture for gradient checks.
fn tiny(seed: u64) -> (Environment, Architecture) {
    let kg = generate_world(seed, 12, 2).unwrap();
    let env = Environment::with_top_k(kg, 2).unwrap();
    let arch = Architecture { window: 2, observation_slots: 2, hidden: 3, call_buckets: 2, ..Architecture::new(env.vocab.len()) };
    (env, arch)
}

fn demos(env: &Environment, n: usize, seed: u64) -> Vec<ScoredRollout> {
    let cfg = BaseConfig { max_demo_calls: 1, max_searches: 2, ..Default::default() };
    (0..n).map(|i| demo_rollout(env, &cfg, seed * 100 + i as u64).unwrap()).collect()
}

/// Worst relative error over the largest gradient coordinates.
fn fd_check(params: &PolicyParams, grad: &[f64], f: impl Fn(&PolicyParams) -> f64) -> f64 {
    let mut idx: Vec<usize> = (0..grad.len()).collect();
    idx.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()));
    let mut worst = 0.0f64;
    for &i in idx.iter().take(FD_COORDS) {
        let mut plus = params.clone();
        plus.values[i] += FD_STEP;
        let mut minus = params.clone();
        minus.values[i] -= FD_STEP;
        let fd = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
        worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8));
    }
    worst
}

/// Groups of scripted rollouts whose recorded log-probs come from `old`.
fn groups_for(env: &Environment, old: &PolicyParams, seed: u64) -> Vec<RolloutGroup> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let questions = generate_questions(&env.kg, &HopMix(vec![(1, 1.0)]), 2, Split::TrainShard(1), seed).unwrap();
    let judge = Judge::default();
    questions
        .into_iter()
        .enumerate()
        .map(|(k, q)| {
            let g = rng.gen_range(2..=3);
            let mut rollouts = Vec::new();
            for mut d in demos(env, g, seed * 10 + k as u64) {
                let trace = d.rollout.trace.as_mut().unwrap();
                let lp = sequence_log_probs(old, &env.vocab, trace).unwrap();
                let mut it = lp.into_iter();
                trace.log_probs = trace.action_mask.iter().map(|&m| if m { it.next().unwrap() } else { 0.0 }).collect();
                rollouts.push(d.rollout);
            }
            let rewards: Vec<RewardBreakdown> = (0..g)
                .map(|i| RewardBreakdown { total: [1.0, 0.0, 0.5][i], ..hybrid_reward("", "x", RewardMode::Judge, &judge) })
                .collect();
            RolloutGroup::new(q, rollouts, rewards).unwrap()
        })
        .collect()
}

fn gradient_fidelity() -> Outcome {
    let (mut grpo_worst, mut sft_worst) = (0.0f64, 0.0f64);
    for s in 0..FD_INSTANCES {
        let (env, arch) = tiny(s + 1);
        let old = PolicyParams::random(arch, 0.5, 10 + s);
        let mut params = old.clone();
        params.add_scaled(&PolicyParams::random(arch, 0.1, 20 + s).values, 1.0);
        let groups = groups_for(&env, &old, s);
        let cfg = GrpoConfig { kl_coefficient: if s % 2 == 0 { 0.0 } else { 0.1 }, ..Default::default() };
        let old_s = PolicySnapshot::new(SnapshotRole::Old, old);
        let reference = PolicySnapshot::new(SnapshotRole::Reference, PolicyParams::random(arch, 0.5, 30 + s));
        let f = |p: &PolicyParams| grpo_objective_and_gradient(p, &old_s, &reference, &env, &groups, &cfg).unwrap();
        let (_, g) = f(&params);
        grpo_worst = grpo_worst.max(fd_check(&params, &g, |p| f(p).0));

        let record = &demos(&env, 1, 500 + s)[0];
        let sp = PolicyParams::random(arch, 0.4, 40 + s);
        let (_, g) = sft_loss_and_gradient(&sp, &env.vocab, record).unwrap();
        sft_worst = sft_worst.max(fd_check(&sp, &g, |p| sft_loss_and_gradient(p, &env.vocab, record).unwrap().0));
    }
    outcome(
        grpo_worst < FD_REL_TOL && sft_worst < FD_REL_TOL,
        format!("{FD_INSTANCES} instances each; worst relative error GRPO {grpo_worst:.1e}, SFT {sft_worst:.1e}"),
    )
}

fn observation_masking() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rewritten = 0;
    for s in 0..20 {
        let (env, arch) = tiny(s + 1);
        let params = PolicyParams::random(arch, 0.4, s);
        for record in demos(&env, 5, s) {
            let trace = record.trace().unwrap();
            let (l0, g0) = sft_loss_and_gradient(&params, &env.vocab, &record).unwrap();
            let mut targets = trace.token_ids.clone();
            for (t, &m) in targets.iter_mut().zip(&trace.action_mask) {
                if !m && *t != RESPONSE_OPEN_ID && *t != RESPONSE_CLOSE_ID {
                    *t = rng.gen_range(0..env.vocab.len() as u32);
                    rewritten += 1;
                }
            }
            let (l1, g1) =
                sft_loss_and_gradient_with_targets(&params, &env.vocab, record.question_id(), trace, &targets).unwrap();
            if l0.to_bits() != l1.to_bits() || g0 != g1 {
                return outcome(false, format!("loss or gradient moved: {l0} vs {l1}"));
            }
        }
    }
    outcome(rewritten > 0, format!("100 records, {rewritten} observation tokens rewritten; loss and gradient bit-identical"))
}

fn filter_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for p in 0..FILTER_POOLS {
        let pool = common::random_pool(&mut rng, 100);
        let threshold = [0.5, 0.7, 1.0][p as usize % 3];
        let k = rng.gen_range(1..20);
        let (out, _) = apply_filters(&pool, &FilterConfig { reward_threshold: threshold, top_k: k });
        if out != common::brute_force_filter(&pool, threshold, k) {
            return outcome(false, format!("pool {p} differs from brute force"));
        }
        let hrs = filter_hrs(&pool, threshold);
        let sqd = filter_sqd(&hrs);
        if filter_hrs(&hrs, threshold) != hrs || filter_sqd(&sqd) != sqd {
            return outcome(false, format!("pool {p}: filter not idempotent"));
        }
    }
    outcome(true, format!("{FILTER_POOLS} pools of <= 100 records match the brute-force composition; HRS and SQD idempotent"))
}

fn grammar_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..ROUND_TRIPS {
        let cycles = rng.gen_range(0..5);
        let segs = common::valid_segments(&mut rng, cycles);
        let text = render_segments(&segs).unwrap();
        if parse_rollout(&text).as_ref() != Ok(&segs) {
            return outcome(false, format!("rollout {i} did not round-trip: {text:?}"));
        }
    }
    let corpus = common::malformed_corpus();
    for (text, kind) in &corpus {
        match parse_rollout(text) {
            Err(e) if e.kind == *kind => {}
            other => return outcome(false, format!("{text:?}: expected {kind:?}, got {other:?}")),
        }
    }
    outcome(corpus.len() >= 15, format!("{ROUND_TRIPS} round trips; {} malformed variants rejected", corpus.len()))
}

fn on_policy_identity() -> Outcome {
    let mut worst = 0.0f64;
    for s in 0..5 {
        let (env, arch) = tiny(s + 1);
        let old = PolicyParams::random(arch, 0.5, s);
        let groups = groups_for(&env, &old, s);
        let snap = PolicySnapshot::new(SnapshotRole::Old, old.clone());
        let mut expected = 0.0;
        for g in &groups {
            let lens: Vec<f64> = g.rollouts.iter().map(|r| r.trace.as_ref().unwrap().agent_token_count() as f64).collect();
            expected += lens.iter().zip(&g.advantages).map(|(l, a)| l * a).sum::<f64>() / lens.iter().sum::<f64>();
        }
        expected /= groups.len() as f64;
        for eps in [0.05, 0.2, 0.5, 0.9] {
            let cfg = GrpoConfig { clip_epsilon: eps, kl_coefficient: 0.0, ..Default::default() };
            let (obj, _) = grpo_objective_and_gradient(&old, &snap, &snap, &env, &groups, &cfg).unwrap();
            worst = worst.max((obj - expected).abs());
        }
    }
    outcome(worst < IDENTITY_TOL, format!("5 instances x 4 epsilons; max |objective - analytic| {worst:.1e}"))
}

struct SeedRun {
    evolve: Vec<IterationReport>,
    rl_only: Option<IterationReport>,
    evolve_time: Duration,
    rl_only_time: Duration,
}

fn desk_config(seed: u64, run_dir: PathBuf) -> EvolveConfig {
    EvolveConfig { iterations: 3, master_seed: seed, run_dir, ..Default::default() }
}

fn desk_runs(root: &Path, with_rl_only: bool) -> Vec<SeedRun> {
    DESK_SEEDS
        .iter()
        .map(|&seed| {
            let t = Instant::now();
            let cfg = desk_config(seed, root.join(format!("seed-{seed}")).join("evolve"));
            let setup = prepare(&cfg).unwrap();
            let evolve = evolve_with(&setup, &cfg).unwrap().reports;
            let evolve_time = t.elapsed();
            let t = Instant::now();
            let rl_only = with_rl_only.then(|| {
                let single = EvolveConfig { iterations: 1, run_dir: root.join(format!("seed-{seed}")).join("rl-only"), ..cfg };
                evolve_with(&setup, &single).unwrap().reports.remove(0)
            });
            SeedRun { evolve, rl_only, evolve_time, rl_only_time: t.elapsed() }
        })
        .collect()
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

fn self_evolution(runs: &[SeedRun]) -> Outcome {
    let acc = |it: usize, rl: bool| -> Vec<f64> {
        runs.iter()
            .map(|r| {
                let rep = &r.evolve[it - 1];
                if rl { rep.eval_rl.accuracy() } else { rep.eval_sft.accuracy() }
            })
            .collect()
    };
    let (rl1, rl3, sft2, sft3) = (acc(1, true), acc(3, true), acc(2, false), acc(3, false));
    let time: Duration = runs.iter().map(|r| r.evolve_time).sum();
    let rl_ok = median(&rl3) >= median(&rl1) + RL_GAIN;
    let sft_ok = median(&sft3) >= median(&sft2) - SFT_SLACK;
    outcome(
        rl_ok && sft_ok && time <= EVOLVE_BUDGET,
        format!(
            "median RL it1 {:.3} -> it3 {:.3} (need +{RL_GAIN}); median SFT it2 {:.3} -> it3 {:.3}; RL it3 [{}]; {:.0}s",
            median(&rl1),
            median(&rl3),
            median(&sft2),
            median(&sft3),
            fmt_list(&rl3),
            time.as_secs_f64()
        ),
    )
}

fn evolve_vs_rl_only(runs: &[SeedRun]) -> Outcome {
    let evolve: Vec<f64> = runs.iter().map(|r| r.evolve.last().unwrap().eval_rl.accuracy_id).collect();
    let rl_only: Vec<f64> = runs.iter().map(|r| r.rl_only.as_ref().unwrap().eval_rl.accuracy_id).collect();
    let same_budget = runs.iter().all(|r| {
        r.evolve.iter().map(|x| x.shard_size).sum::<usize>() == r.rl_only.as_ref().unwrap().shard_size
    });
    let wins = evolve.iter().zip(&rl_only).filter(|(e, r)| e > r).count();
    let time: Duration = runs.iter().map(|r| r.evolve_time + r.rl_only_time).sum();
    let ok = same_budget && median(&evolve) >= median(&rl_only) - RL_ONLY_SLACK && wins >= MIN_WINS && time <= VERSUS_BUDGET;
    outcome(
        ok,
        format!(
            "final ID evolve [{}] vs RL-only [{}]; medians {:.3} vs {:.3}; wins {wins}/5; {:.0}s",
            fmt_list(&evolve),
            fmt_list(&rl_only),
            median(&evolve),
            median(&rl_only),
            time.as_secs_f64()
        ),
    )
}

fn consistent(e: &EvalResult) -> bool {
    let n = e.records.len();
    let mass: u64 = e.tool_call_histogram.iter().sum();
    let weighted: f64 = e.tool_call_histogram.iter().enumerate().map(|(k, &c)| (k as u64 * c) as f64).sum();
    let from_records: f64 = e.records.iter().map(|r| r.tool_calls as f64).sum();
    mass as usize == n
        && n == e.n_id + e.n_ood
        && weighted / n as f64 == e.mean_tool_calls
        && from_records / n as f64 == e.mean_tool_calls
}

fn tool_call_reporting(runs: &[SeedRun], root: &Path) -> Outcome {
    let mut checked = 0;
    for (run, seed) in runs.iter().zip(DESK_SEEDS) {
        let summary = fs::read_to_string(root.join(format!("seed-{seed}/evolve/report/summary.json"))).unwrap();
        let summary: serde_json::Value = serde_json::from_str(&summary).unwrap();
        for rep in &run.evolve {
            for e in [&rep.eval_sft, &rep.eval_rl] {
                checked += 1;
                if !consistent(e) {
                    return outcome(false, format!("seed {seed} iteration {}: histogram inconsistent", rep.iteration));
                }
            }
        }
        let emitted: Vec<StageEval> = serde_json::from_value(summary["evaluations"].clone()).unwrap();
        let in_memory: Vec<&EvalResult> = run.evolve.iter().flat_map(|r| [&r.eval_sft, &r.eval_rl]).collect();
        if emitted.len() != in_memory.len() || emitted.iter().zip(&in_memory).any(|(e, m)| !consistent(&e.result) || e.result != **m) {
            return outcome(false, format!("seed {seed}: emitted report disagrees with the run"));
        }
    }
    let trend: Vec<f64> = (0..3)
        .map(|i| runs.iter().map(|r| r.evolve[i].eval_rl.mean_tool_calls).sum::<f64>() / runs.len() as f64)
        .collect();
    outcome(true, format!("{checked} eval results consistent; mean RL tool calls by iteration [{}] (reported only)", fmt_list(&trend)))
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism(first: &Path, runs: &[SeedRun]) -> Outcome {
    let second = tempfile::tempdir().unwrap();
    let again = desk_runs(second.path(), false);
    let mut compared = 0;
    for seed in DESK_SEEDS {
        let a = first.join(format!("seed-{seed}/evolve"));
        let b = second.path().join(format!("seed-{seed}/evolve"));
        let (fa, fb) = (files_under(&a), files_under(&b));
        if fa != fb {
            return outcome(false, format!("seed {seed}: file sets differ"));
        }
        for f in &fa {
            if fs::read(a.join(f)).unwrap() != fs::read(b.join(f)).unwrap() {
                return outcome(false, format!("seed {seed}: {} differs", f.display()));
            }
            compared += 1;
        }
    }
    let same_reports = runs.iter().zip(&again).all(|(x, y)| x.evolve == y.evolve);
    outcome(same_reports, format!("{compared} files byte-identical across two runs of criterion 8"))
}

fn main() {
    let mut failures = 0;
    let mut report = |n: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} [{status}] {name}: {} ({:.2}s)", o.detail, t.elapsed().as_secs_f64());
        if !o.pass {
            failures += 1;
        }
    };
    report(1, "reward lattice", &mut reward_lattice);
    report(2, "advantage normalization", &mut advantage_normalization);
    report(3, "gradient fidelity", &mut gradient_fidelity);
    report(4, "observation masking", &mut observation_masking);
    report(5, "filter oracle equivalence", &mut filter_oracle);
    report(6, "grammar round trip", &mut grammar_round_trip);
    report(7, "on-policy identity", &mut on_policy_identity);
    let root = tempfile::tempdir().unwrap();
    let runs = desk_runs(root.path(), true);
    report(8, "desk-scale self-evolution", &mut || self_evolution(&runs));
    report(9, "evolve vs RL-only", &mut || evolve_vs_rl_only(&runs));
    report(10, "tool-call reporting", &mut || tool_call_reporting(&runs, root.path()));
    report(11, "determinism", &mut || determinism(root.path(), &runs));
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
