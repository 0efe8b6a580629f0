//! Supervised fine-tuning on agent tokens only.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RsftError;
use crate::grammar::TokenTrace;
use crate::policy::{
    backward_trace, forward_teacher_forced, Decoding, PolicyError, PolicyParams, PolicySnapshot, SnapshotRole,
    TraceForward, Vocabulary,
};
use crate::records::ScoredRollout;
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SftConfig {
    pub learning_rate: f64,
    /// Records per update.
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self { learning_rate: 0.05, batch_size: 16, epochs: 1 }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<(), RsftError> {
        if !(self.learning_rate > 0.0) {
            return Err(RsftError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(RsftError::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }
}

fn forward(
    params: &PolicyParams,
    vocab: &Vocabulary,
    question_id: &str,
    trace: &TokenTrace,
    targets: &[u32],
) -> Result<TraceForward, RsftError> {
    params.check_vocab(vocab)?;
    if trace.agent_token_count() == 0 {
        return Err(RsftError::EmptyAgentSequence(question_id.to_string()));
    }
    let decoding = Decoding::new(1.0, trace.max_searches)?;
    Ok(forward_teacher_forced(
        params,
        vocab.classes(),
        &trace.prompt_ids,
        &trace.token_ids,
        targets,
        &trace.action_mask,
        &decoding,
    )?)
}

fn loss_of(fwd: &TraceForward) -> f64 {
    -fwd.log_probs.iter().sum::<f64>() / fwd.log_probs.len() as f64
}

/// Adds `scale` times the gradient of the record loss to `grad`.
fn accumulate(params: &PolicyParams, fwd: &TraceForward, scale: f64, grad: &mut [f64]) -> Result<(), RsftError> {
    let w = vec![-scale / fwd.log_probs.len() as f64; fwd.log_probs.len()];
    Ok(backward_trace(params, fwd, &w, grad)?)
}

/// Mean negative log-likelihood of the agent tokens at temperature 1, with
/// the trace's search budget, and its gradient.
pub fn sft_loss_and_gradient(
    params: &PolicyParams,
    vocab: &Vocabulary,
    record: &ScoredRollout,
) -> Result<(f64, Vec<f64>), RsftError> {
    let trace = record.trace().ok_or(PolicyError::MissingTrace)?;
    sft_loss_and_gradient_with_targets(params, vocab, record.question_id(), trace, &trace.token_ids)
}

/// Loss with the scored tokens taken from `targets` while conditioning on
/// the trace's own tokens; only agent positions of `targets` are read.
pub fn sft_loss_and_gradient_with_targets(
    params: &PolicyParams,
    vocab: &Vocabulary,
    question_id: &str,
    trace: &TokenTrace,
    targets: &[u32],
) -> Result<(f64, Vec<f64>), RsftError> {
    let fwd = forward(params, vocab, question_id, trace, targets)?;
    let mut grad = vec![0.0; params.values.len()];
    accumulate(params, &fwd, 1.0, &mut grad)?;
    Ok((loss_of(&fwd), grad))
}

/// Mean per-record loss over `data`.
pub fn mean_sft_loss(params: &PolicyParams, vocab: &Vocabulary, data: &[ScoredRollout]) -> Result<f64, RsftError> {
    if data.is_empty() {
        return Err(RsftError::EmptyData);
    }
    let losses: Vec<f64> = data
        .par_iter()
        .map(|r| {
            let trace = r.trace().ok_or(PolicyError::MissingTrace)?;
            Ok(loss_of(&forward(params, vocab, r.question_id(), trace, &trace.token_ids)?))
        })
        .collect::<Result<_, RsftError>>()?;
    Ok(losses.iter().sum::<f64>() / data.len() as f64)
}

#[derive(Debug, Clone)]
pub struct SftOutcome {
    pub params: PolicyParams,
    /// Mean loss of each mini-batch before its update.
    pub batch_losses: Vec<f64>,
}

/// Mini-batch gradient descent on the mean record loss, starting from a
/// fresh copy of the base parameters.
pub fn sft_train(
    base: &PolicySnapshot,
    vocab: &Vocabulary,
    data: &[ScoredRollout],
    cfg: &SftConfig,
    seed: u64,
) -> Result<SftOutcome, RsftError> {
    if base.role() != SnapshotRole::Base {
        return Err(RsftError::NotBase);
    }
    if data.is_empty() {
        return Err(RsftError::EmptyData);
    }
    cfg.validate()?;
    let mut params = base.thaw();
    let mut batch_losses = Vec::new();
    let mut grad = vec![0.0; params.values.len()];
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[epoch as u64])));
        for chunk in order.chunks(cfg.batch_size) {
            let fwds: Vec<TraceForward> = chunk
                .par_iter()
                .map(|&i| {
                    let r = &data[i];
                    let trace = r.trace().ok_or(PolicyError::MissingTrace)?;
                    forward(&params, vocab, r.question_id(), trace, &trace.token_ids)
                })
                .collect::<Result<_, RsftError>>()?;
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / chunk.len() as f64;
            let mut loss = 0.0;
            for fwd in &fwds {
                loss += scale * loss_of(fwd);
                accumulate(&params, fwd, scale, &mut grad)?;
            }
            batch_losses.push(loss);
            params.add_scaled(&grad, -cfg.learning_rate);
        }
    }
    Ok(SftOutcome { params, batch_losses })
}
