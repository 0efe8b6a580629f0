//! Flat key-value run configuration.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use super::OrchestratorError;
use crate::base::BaseConfig;
use crate::env::HopMix;
use crate::eval::EvalConfig;
use crate::grpo::{AdvantageScope, GrpoConfig};
use crate::policy::Architecture;
use crate::reward::RewardMode;
use crate::rsft::{FilterConfig, SftConfig};

/// Every knob of a self-evolution run. Serialized as a flat TOML table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveConfig {
    pub iterations: u32,
    pub master_seed: u64,
    pub run_dir: PathBuf,

    pub world_entities: usize,
    pub world_relations: usize,
    pub train_questions: usize,
    pub eval_id_questions: usize,
    pub eval_ood_questions: usize,
    pub hop_mix: String,
    pub search_top_k: usize,
    /// Optional pre-generated world and question sets.
    pub world_file: Option<PathBuf>,
    pub train_file: Option<PathBuf>,
    pub eval_file: Option<PathBuf>,

    pub question_slots: u32,
    pub window: u32,
    pub observation_slots: u32,
    pub hidden: u32,
    pub call_buckets: u32,
    pub max_sequence: u32,

    pub base_demos: usize,
    pub base_demo_calls: u32,
    pub base_plan_prob: f64,
    pub base_init_scale: f64,
    pub base_learning_rate: f64,
    pub base_batch_size: usize,
    pub base_epochs: usize,

    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_coefficient: f64,
    pub rl_learning_rate: f64,
    pub rl_batch_size: usize,
    pub temperature: f64,
    pub rl_epochs: usize,
    pub max_searches: u32,
    pub advantage_scope: AdvantageScope,
    pub reward_mode: RewardMode,

    pub reward_threshold: f64,
    pub filter_top_k: usize,

    pub sft_learning_rate: f64,
    pub sft_batch_size: usize,
    pub sft_epochs: usize,

    pub eval_judge_mode: RewardMode,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        let grpo = GrpoConfig::default();
        let base = BaseConfig::default();
        let sft = SftConfig::default();
        let filter = FilterConfig::default();
        Self {
            iterations: 3,
            master_seed: 1,
            run_dir: PathBuf::from("run"),
            world_entities: 200,
            world_relations: 8,
            train_questions: 600,
            eval_id_questions: 150,
            eval_ood_questions: 100,
            hop_mix: HopMix::default().to_string(),
            search_top_k: 10,
            world_file: None,
            train_file: None,
            eval_file: None,
            question_slots: 12,
            window: 32,
            observation_slots: 12,
            hidden: 32,
            call_buckets: 11,
            max_sequence: 512,
            base_demos: base.demos,
            base_demo_calls: base.max_demo_calls,
            base_plan_prob: base.plan_prob,
            base_init_scale: base.init_scale,
            base_learning_rate: base.sft.learning_rate,
            base_batch_size: base.sft.batch_size,
            base_epochs: base.sft.epochs,
            group_size: 8,
            clip_epsilon: grpo.clip_epsilon,
            kl_coefficient: grpo.kl_coefficient,
            rl_learning_rate: 0.1,
            rl_batch_size: grpo.batch_size,
            temperature: 0.7,
            rl_epochs: grpo.epochs,
            max_searches: grpo.max_searches,
            advantage_scope: grpo.advantage_scope,
            reward_mode: RewardMode::Judge,
            reward_threshold: filter.reward_threshold,
            filter_top_k: filter.top_k,
            sft_learning_rate: 0.3,
            sft_batch_size: sft.batch_size,
            sft_epochs: 4,
            eval_judge_mode: RewardMode::Judge,
        }
    }
}

impl EvolveConfig {
    pub fn from_toml(text: &str) -> Result<Self, OrchestratorError> {
        let cfg: Self = toml::from_str(text).map_err(|e| OrchestratorError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: &str| Err(OrchestratorError::Config(m.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        self.hop_mix()?;
        if self.search_top_k == 0 {
            return bad("search_top_k must be at least 1");
        }
        if self.filter_top_k == 0 {
            return bad("filter_top_k must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.reward_threshold) {
            return bad("reward_threshold must lie in [0, 1]");
        }
        self.grpo().validate()?;
        self.sft().validate()?;
        self.base().sft.validate()?;
        Ok(())
    }

    pub fn hop_mix(&self) -> Result<HopMix, OrchestratorError> {
        self.hop_mix.parse().map_err(|e: crate::env::EnvError| OrchestratorError::Config(e.to_string()))
    }

    pub fn architecture(&self, vocab_size: usize) -> Architecture {
        Architecture {
            vocab_size: vocab_size as u32,
            question_slots: self.question_slots,
            window: self.window,
            observation_slots: self.observation_slots,
            hidden: self.hidden,
            call_buckets: self.call_buckets,
            max_sequence: self.max_sequence,
        }
    }

    pub fn base(&self) -> BaseConfig {
        BaseConfig {
            demos: self.base_demos,
            max_demo_calls: self.base_demo_calls,
            plan_prob: self.base_plan_prob,
            init_scale: self.base_init_scale,
            sft: SftConfig {
                learning_rate: self.base_learning_rate,
                batch_size: self.base_batch_size,
                epochs: self.base_epochs,
            },
            max_searches: self.max_searches,
        }
    }

    pub fn grpo(&self) -> GrpoConfig {
        GrpoConfig {
            group_size: self.group_size,
            clip_epsilon: self.clip_epsilon,
            kl_coefficient: self.kl_coefficient,
            learning_rate: self.rl_learning_rate,
            batch_size: self.rl_batch_size,
            temperature: self.temperature,
            epochs: self.rl_epochs,
            max_searches: self.max_searches,
            advantage_scope: self.advantage_scope,
        }
    }

    pub fn sft(&self) -> SftConfig {
        SftConfig { learning_rate: self.sft_learning_rate, batch_size: self.sft_batch_size, epochs: self.sft_epochs }
    }

    pub fn filter(&self) -> FilterConfig {
        FilterConfig { reward_threshold: self.reward_threshold, top_k: self.filter_top_k }
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig { max_searches: self.max_searches, judge_mode: self.eval_judge_mode }
    }
}
