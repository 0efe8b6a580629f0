//! Fixtures shared by the benchmarks.

use searchloop_core::base::{demo_rollout, BaseConfig};
use searchloop_core::env::{generate_questions, generate_world, HopMix};
use searchloop_core::grpo::RolloutGroup;
use searchloop_core::orchestrator::EvolveConfig;
use searchloop_core::policy::sequence_log_probs;
use searchloop_core::records::ScoredRollout;
use searchloop_core::{Environment, PolicyParams, Question, RewardBreakdown, Split};

/// Default-sized world, policy and data for timing the hot paths.
pub struct Fixture {
    pub env: Environment,
    pub params: PolicyParams,
    pub questions: Vec<Question>,
    pub demos: Vec<ScoredRollout>,
    pub groups: Vec<RolloutGroup>,
    pub pool: Vec<ScoredRollout>,
}

impl Fixture {
    pub fn new() -> Self {
        let cfg = EvolveConfig::default();
        let kg = generate_world(1, cfg.world_entities, cfg.world_relations).expect("world");
        let env = Environment::with_top_k(kg, cfg.search_top_k).expect("environment");
        let params = PolicyParams::random(cfg.architecture(env.vocab.len()), 0.1, 1);
        let questions = generate_questions(&env.kg, &HopMix::default(), 16, Split::TrainShard(1), 2).expect("questions");
        let base = BaseConfig::default();
        let demos: Vec<ScoredRollout> = (0..32).map(|s| demo_rollout(&env, &base, s).expect("demo")).collect();
        let groups = questions
            .iter()
            .take(4)
            .enumerate()
            .map(|(g, q)| {
                let members = &demos[g * 8..(g + 1) * 8];
                let rollouts = members
                    .iter()
                    .map(|d| {
                        let mut r = d.rollout.clone();
                        let trace = r.trace.as_mut().expect("trace");
                        let mut lp = sequence_log_probs(&params, &env.vocab, trace).expect("log probs").into_iter();
                        trace.log_probs = trace.action_mask.iter().map(|&m| if m { lp.next().unwrap_or(0.0) } else { 0.0 }).collect();
                        r
                    })
                    .collect();
                let rewards = (0..8).map(|i| RewardBreakdown { total: (i % 3) as f64 / 2.0, ..members[i].reward }).collect();
                RolloutGroup::new(q.clone(), rollouts, rewards).expect("group")
            })
            .collect();
        let pool = (0..5000u64)
            .map(|i| {
                let mut r = demos[(i % 32) as usize].clone();
                r.rollout.question_id = format!("q{}", i * 7919 % 1500);
                r.reward.total = ((i * 31) % 5) as f64 / 4.0;
                r.tool_call_count = (i % 4) as usize;
                r.iteration_index = (i / 1000) as u32 + 1;
                r.sequence = i;
                r
            })
            .collect();
        Fixture { env, params, questions, demos, groups, pool }
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
