use searchloop_core::base::{build_base, BaseConfig};
use searchloop_core::env::{generate_questions, generate_world, HopMix};
use searchloop_core::grpo::{rl_train, GrpoConfig, RunTag};
use searchloop_core::policy::Architecture;
use searchloop_core::rsft::SftConfig;
use searchloop_core::{Environment, PolicyParams, RewardMode, Split};

fn small_base(seed: u64) -> (Environment, PolicyParams) {
    let kg = generate_world(seed, 60, 4).unwrap();
    let env = Environment::with_top_k(kg, 5).unwrap();
    let arch = Architecture { hidden: 16, ..Architecture::new(env.vocab.len()) };
    let cfg = BaseConfig { demos: 300, sft: SftConfig { learning_rate: 0.5, batch_size: 16, epochs: 4 }, ..Default::default() };
    let base = build_base(&env, arch, &cfg, seed).unwrap();
    (env, base)
}

fn rl_cfg() -> GrpoConfig {
    GrpoConfig { group_size: 8, learning_rate: 0.1, temperature: 0.7, batch_size: 4, ..Default::default() }
}

#[test]
fn rl_logs_every_rollout_and_is_deterministic() {
    let (env, base) = small_base(3);
    let shard = generate_questions(&env.kg, &HopMix::default(), 6, Split::TrainShard(1), 4).unwrap();
    let cfg = GrpoConfig { group_size: 3, batch_size: 4, ..rl_cfg() };
    let tag = RunTag { iteration: 2, first_sequence: 40 };
    let a = rl_train(&base, &shard, &env, RewardMode::Judge, &cfg, 9, tag).unwrap();
    let b = rl_train(&base, &shard, &env, RewardMode::Judge, &cfg, 9, tag).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.log, b.log);
    assert_eq!(a.log.len(), shard.len() * cfg.group_size);
    assert_eq!(a.metrics.len(), 2);
    for (i, r) in a.log.iter().enumerate() {
        assert_eq!(r.sequence, 40 + i as u64);
        assert_eq!(r.iteration_index, 2);
        assert_eq!(r.tool_call_count, r.rollout.tool_call_count());
    }
    assert_ne!(a.params, base);
}

#[test]
fn reward_rises_over_one_epoch_on_single_hop_questions() {
    let mut gains = Vec::new();
    for seed in 1..=5 {
        let (env, base) = small_base(seed);
        let shard = generate_questions(&env.kg, &HopMix(vec![(1, 1.0)]), 20, Split::TrainShard(1), seed).unwrap();
        let out = rl_train(&base, &shard, &env, RewardMode::Judge, &rl_cfg(), seed, RunTag::default()).unwrap();
        let first = out.metrics.first().unwrap().mean_reward;
        let last = out.metrics.last().unwrap().mean_reward;
        gains.push(last - first);
    }
    gains.sort_by(f64::total_cmp);
    assert!(gains[2] >= 0.0, "median gain {} over {gains:?}", gains[2]);
}
