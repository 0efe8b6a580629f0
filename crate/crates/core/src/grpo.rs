//! Group-relative policy optimization with a token-level clipped objective.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Environment, Question};
use crate::grammar::Rollout;
use crate::policy::{
    backward_trace, forward_trace, sample_rollout, Decoding, PolicyError, PolicyParams, PolicySnapshot,
    SnapshotRole,
};
use crate::records::ScoredRollout;
use crate::reward::{hybrid_reward, RewardBreakdown, RewardMode};
use crate::seeds::derive_seed;

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("a group needs at least two rollouts, got {0}")]
    GroupTooSmall(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("rollout {0} has no recorded sampling log-probabilities")]
    MissingOldLogProbs(String),
    #[error("training shard is empty")]
    EmptyShard,
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Statistics used to normalize rewards into advantages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvantageScope {
    /// Mean and standard deviation over each question's group.
    #[default]
    Group,
    /// Mean and standard deviation over every rollout in the batch.
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_coefficient: f64,
    pub learning_rate: f64,
    /// Questions per update.
    pub batch_size: usize,
    pub temperature: f64,
    pub epochs: usize,
    pub max_searches: u32,
    pub advantage_scope: AdvantageScope,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 16,
            clip_epsilon: 0.2,
            kl_coefficient: 0.0,
            learning_rate: 0.05,
            batch_size: 8,
            temperature: 1.0,
            epochs: 1,
            max_searches: 10,
            advantage_scope: AdvantageScope::Group,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::InvalidConfig(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if !(self.kl_coefficient >= 0.0) {
            return bad("kl_coefficient must be non-negative");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        Ok(())
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn normalize(xs: &[f64], mean: f64, std: f64) -> Vec<f64> {
    if std == 0.0 || xs.iter().all(|&x| x == xs[0]) {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - mean) / std).collect()
}

/// Reward z-scores with the population standard deviation; all zero when
/// the rewards are constant.
pub fn compute_advantages(rewards: &[f64]) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let (mean, std) = mean_std(rewards);
    Ok(normalize(rewards, mean, std))
}

/// `G` rollouts of one question with their rewards and advantages.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub question: Question,
    pub rollouts: Vec<Rollout>,
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn new(question: Question, rollouts: Vec<Rollout>, rewards: Vec<RewardBreakdown>) -> Result<Self, GrpoError> {
        let totals: Vec<f64> = rewards.iter().map(|r| r.total).collect();
        let advantages = compute_advantages(&totals)?;
        Ok(Self { question, rollouts, rewards, advantages })
    }
}

/// Non-negative per-token KL estimate `exp(d) - d - 1` with `d = ref - logp`.
pub fn kl_estimate(log_p: f64, log_ref: f64) -> f64 {
    let d = log_ref - log_p;
    d.exp() - d - 1.0
}

/// Clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)` and its derivative
/// with respect to `log r`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    if unclipped <= clipped {
        (unclipped, unclipped)
    } else {
        (clipped, 0.0)
    }
}

fn group_objective(
    params: &PolicyParams,
    reference: &PolicySnapshot,
    classes: &[crate::policy::TokenClass],
    group: &RolloutGroup,
    cfg: &GrpoConfig,
) -> Result<(f64, Vec<f64>), GrpoError> {
    let mut grad = vec![0.0; params.values.len()];
    let n_tokens: usize = group
        .rollouts
        .iter()
        .map(|r| r.trace.as_ref().map_or(0, |t| t.agent_token_count()))
        .sum();
    if n_tokens == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / n_tokens as f64;
    let beta = cfg.kl_coefficient;
    let mut objective = 0.0;
    for (rollout, &adv) in group.rollouts.iter().zip(&group.advantages) {
        let trace = rollout.trace.as_ref().ok_or(PolicyError::MissingTrace)?;
        if trace.log_probs.len() != trace.token_ids.len() {
            return Err(GrpoError::MissingOldLogProbs(rollout.question_id.clone()));
        }
        let decoding = Decoding::for_trace(trace)?;
        let fwd = forward_trace(params, classes, &trace.prompt_ids, &trace.token_ids, &trace.action_mask, &decoding)?;
        let old: Vec<f64> =
            trace.log_probs.iter().zip(&trace.action_mask).filter(|(_, &m)| m).map(|(l, _)| *l).collect();
        let ref_lp = if beta > 0.0 {
            Some(
                forward_trace(
                    reference.params(),
                    classes,
                    &trace.prompt_ids,
                    &trace.token_ids,
                    &trace.action_mask,
                    &decoding,
                )?
                .log_probs,
            )
        } else {
            None
        };
        let mut weights = Vec::with_capacity(fwd.log_probs.len());
        for (t, (&lp, &lo)) in fwd.log_probs.iter().zip(&old).enumerate() {
            let ratio = (lp - lo).exp();
            let (surr, dsurr) = clipped_surrogate(ratio, adv, cfg.clip_epsilon);
            let (kl, dkl) = match &ref_lp {
                Some(r) => (kl_estimate(lp, r[t]), 1.0 - (r[t] - lp).exp()),
                None => (0.0, 0.0),
            };
            objective += scale * (surr - beta * kl);
            weights.push(scale * (dsurr - beta * dkl));
        }
        backward_trace(params, &fwd, &weights, &mut grad)?;
    }
    Ok((objective, grad))
}

/// Token-level clipped objective averaged over groups, and its exact gradient.
///
/// Within a group every agent token carries weight `1 / sum_i |y_i|`; the
/// group objectives are then averaged.
pub fn grpo_objective_and_gradient(
    params: &PolicyParams,
    old: &PolicySnapshot,
    reference: &PolicySnapshot,
    env: &Environment,
    groups: &[RolloutGroup],
    cfg: &GrpoConfig,
) -> Result<(f64, Vec<f64>), GrpoError> {
    params.check_vocab(&env.vocab)?;
    params.check_compatible(old.params())?;
    params.check_compatible(reference.params())?;
    let classes = env.vocab.classes();
    let parts: Vec<(f64, Vec<f64>)> = groups
        .par_iter()
        .map(|g| group_objective(params, reference, classes, g, cfg))
        .collect::<Result<_, _>>()?;
    let n = groups.len().max(1) as f64;
    let mut grad = vec![0.0; params.values.len()];
    let mut objective = 0.0;
    for (obj, g) in parts {
        objective += obj / n;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b / n;
        }
    }
    Ok((objective, grad))
}

/// Per-update training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub batch_index: usize,
    pub mean_reward: f64,
    pub format_rate: f64,
    pub answer_rate: f64,
    pub mean_tool_calls: f64,
    pub objective: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct RlOutcome {
    pub params: PolicyParams,
    pub log: Vec<ScoredRollout>,
    pub metrics: Vec<BatchMetrics>,
}

/// Identifies a training run inside a longer history.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunTag {
    pub iteration: u32,
    /// Append index assigned to the first logged rollout.
    pub first_sequence: u64,
}

/// One pass (per epoch) over `shard` in batches of questions: sample a group
/// per question from the current policy, score, normalize and take one
/// ascent step. The reference policy is `base` throughout.
pub fn rl_train(
    base: &PolicyParams,
    shard: &[Question],
    env: &Environment,
    mode: RewardMode,
    cfg: &GrpoConfig,
    seed: u64,
    tag: RunTag,
) -> Result<RlOutcome, GrpoError> {
    cfg.validate()?;
    if shard.is_empty() {
        return Err(GrpoError::EmptyShard);
    }
    let reference = PolicySnapshot::new(SnapshotRole::Reference, base.clone());
    let mut params = base.clone();
    let mut log = Vec::with_capacity(shard.len() * cfg.group_size);
    let mut metrics = Vec::new();
    let mut batch_index = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..shard.len()).collect();
        if epoch > 0 {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0, epoch as u64])));
        }
        for chunk in order.chunks(cfg.batch_size) {
            let old = PolicySnapshot::new(SnapshotRole::Old, params.clone());
            let jobs: Vec<(usize, usize)> =
                chunk.iter().flat_map(|&q| (0..cfg.group_size).map(move |g| (q, g))).collect();
            let sampled: Vec<(Rollout, RewardBreakdown, u64)> = jobs
                .par_iter()
                .map(|&(q, g)| {
                    let s = derive_seed(seed, &[1, epoch as u64, q as u64, g as u64]);
                    let question = &shard[q];
                    let r = sample_rollout(old.params(), question, env, cfg.temperature, cfg.max_searches, s)?;
                    let reward = hybrid_reward(&r.text, &question.gold_answer, mode, &env.judge);
                    Ok((r, reward, s))
                })
                .collect::<Result<_, PolicyError>>()?;

            let mut groups = Vec::with_capacity(chunk.len());
            for (k, &q) in chunk.iter().enumerate() {
                let slice = &sampled[k * cfg.group_size..(k + 1) * cfg.group_size];
                let rollouts = slice.iter().map(|x| x.0.clone()).collect();
                let rewards = slice.iter().map(|x| x.1).collect();
                groups.push(RolloutGroup::new(shard[q].clone(), rollouts, rewards)?);
            }
            if cfg.advantage_scope == AdvantageScope::Batch {
                let all: Vec<f64> = sampled.iter().map(|x| x.1.total).collect();
                let (mean, std) = mean_std(&all);
                let adv = normalize(&all, mean, std);
                for (k, g) in groups.iter_mut().enumerate() {
                    g.advantages = adv[k * cfg.group_size..(k + 1) * cfg.group_size].to_vec();
                }
            }

            let (objective, grad) = grpo_objective_and_gradient(&params, &old, &reference, env, &groups, cfg)?;
            let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            params.add_scaled(&grad, cfg.learning_rate);

            let n = sampled.len() as f64;
            metrics.push(BatchMetrics {
                batch_index,
                mean_reward: sampled.iter().map(|x| x.1.total).sum::<f64>() / n,
                format_rate: sampled.iter().map(|x| x.1.format_reward).sum::<f64>() / n,
                answer_rate: sampled.iter().map(|x| x.1.answer_reward).sum::<f64>() / n,
                mean_tool_calls: sampled.iter().map(|x| x.0.tool_call_count() as f64).sum::<f64>() / n,
                objective,
                grad_norm,
            });
            batch_index += 1;
            for (rollout, reward, s) in sampled {
                log.push(ScoredRollout {
                    tool_call_count: rollout.tool_call_count(),
                    rollout,
                    reward,
                    iteration_index: tag.iteration,
                    seed: s,
                    sequence: tag.first_sequence + log.len() as u64,
                });
            }
        }
    }
    Ok(RlOutcome { params, log, metrics })
}
