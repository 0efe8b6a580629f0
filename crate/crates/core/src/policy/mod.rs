//! Tiny autoregressive policy with exact log-probabilities and gradients.
//!
//! The model is a single tanh hidden layer over sparse one-hot features of
//! the question, a sliding window of recent tokens, the leading words of the
//! latest tool response, the tool-call count and the last emitted tag. A copy
//! head adds a per-slot bonus to the logit of each word visible in the
//! question or observation slots.

pub mod checkpoint;
pub mod context;
pub mod model;
pub mod sampler;
pub mod vocab;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use context::ContextState;
pub use model::{
    backward_trace, forward_teacher_forced, forward_trace, grad_weighted_log_probs, next_token_distribution, sequence_log_probs,
    Decoding, TraceForward,
};
pub use sampler::{greedy_rollout, sample_rollout, Agent};
pub use vocab::{TokenClass, Vocabulary};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("context overflow: {what} has {len} tokens, limit {limit}")]
    ContextOverflow { what: &'static str, len: usize, limit: usize },
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("invalid vocabulary entry {0:?}")]
    InvalidToken(String),
    #[error("rollout has no token trace")]
    MissingTrace,
    #[error("weights: expected {expected} entries, got {got}")]
    WeightLength { expected: usize, got: usize },
    #[error("agent token {0} is excluded by the decoding constraint")]
    BannedToken(u32),
    #[error("invalid temperature {0}")]
    InvalidTemperature(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Number of last-tag states: none, or one of the eight tags.
pub const LAST_TAG_STATES: usize = 9;

/// Shape descriptor; the parameter count is a pure function of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub vocab_size: u32,
    pub question_slots: u32,
    pub window: u32,
    pub observation_slots: u32,
    pub hidden: u32,
    pub call_buckets: u32,
    pub max_sequence: u32,
}

impl Architecture {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size: vocab_size as u32,
            question_slots: 12,
            window: 32,
            observation_slots: 12,
            hidden: 32,
            call_buckets: 11,
            max_sequence: 512,
        }
    }

    pub fn v(&self) -> usize {
        self.vocab_size as usize
    }

    pub fn h(&self) -> usize {
        self.hidden as usize
    }

    pub fn slot_width(&self) -> usize {
        self.v() + TokenClass::COUNT
    }

    pub fn token_slots(&self) -> usize {
        (self.question_slots + self.window + self.observation_slots) as usize
    }

    pub fn feature_dim(&self) -> usize {
        self.token_slots() * self.slot_width() + self.call_buckets as usize + LAST_TAG_STATES
    }

    pub fn copy_slots(&self) -> usize {
        (self.question_slots + self.observation_slots) as usize
    }

    pub fn param_count(&self) -> usize {
        self.layout().end
    }

    pub(crate) fn layout(&self) -> Layout {
        let (d, h, v, s) = (self.feature_dim(), self.h(), self.v(), self.copy_slots());
        let w1 = 0;
        let b1 = w1 + d * h;
        let w2 = b1 + h;
        let b2 = w2 + v * h;
        let copy_bias = b2 + v;
        let copy_gate = copy_bias + s;
        Layout { w1, b1, w2, b2, copy_bias, copy_gate, end: copy_gate + s * h }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::ArchitectureMismatch(m.to_string()));
        if self.vocab_size as u64 <= vocab::EOS_ID as u64 + 11 {
            return bad("vocabulary too small");
        }
        if self.hidden == 0 || self.call_buckets == 0 || self.max_sequence == 0 {
            return bad("hidden, call_buckets and max_sequence must be positive");
        }
        Ok(())
    }
}

/// Offsets of the parameter blocks inside the flat vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub copy_bias: usize,
    pub copy_gate: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub arch: Architecture,
    pub values: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(arch: Architecture) -> Self {
        Self { arch, values: vec![0.0; arch.param_count()] }
    }

    /// Uniform values in `[-scale, scale]`.
    pub fn random(arch: Architecture, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..arch.param_count()).map(|_| rng.gen_range(-scale..=scale)).collect();
        Self { arch, values }
    }

    pub fn check_compatible(&self, other: &PolicyParams) -> Result<(), PolicyError> {
        if self.arch != other.arch || self.values.len() != other.values.len() {
            return Err(PolicyError::ArchitectureMismatch(format!("{:?} vs {:?}", self.arch, other.arch)));
        }
        Ok(())
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<(), PolicyError> {
        if self.arch.v() != vocab.len() || self.values.len() != self.arch.param_count() {
            return Err(PolicyError::ArchitectureMismatch(format!(
                "parameters built for {} tokens, vocabulary has {}",
                self.arch.vocab_size,
                vocab.len()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += step * direction`.
    pub fn add_scaled(&mut self, direction: &[f64], step: f64) {
        for (p, g) in self.values.iter_mut().zip(direction) {
            *p += step * g;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SnapshotRole {
    Old,
    Reference,
    Base,
}

/// Frozen parameters with a role tag.
#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    role: SnapshotRole,
    params: Arc<PolicyParams>,
}

impl PolicySnapshot {
    pub fn new(role: SnapshotRole, params: PolicyParams) -> Self {
        Self { role, params: Arc::new(params) }
    }

    pub fn role(&self) -> SnapshotRole {
        self.role
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    /// A mutable copy for training.
    pub fn thaw(&self) -> PolicyParams {
        (*self.params).clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_matches_layout() {
        let arch = Architecture::new(50);
        let (d, h, v, s) = (arch.feature_dim(), arch.h(), arch.v(), arch.copy_slots());
        assert_eq!(arch.param_count(), d * h + h + v * h + v + s + s * h);
        assert_eq!(PolicyParams::zeros(arch).values.len(), arch.param_count());
        let small = Architecture { window: 4, hidden: 3, ..arch };
        assert!(small.param_count() < arch.param_count());
    }

    #[test]
    fn snapshots_are_frozen_copies() {
        let p = PolicyParams::random(Architecture::new(40), 0.1, 1);
        let snap = PolicySnapshot::new(SnapshotRole::Base, p.clone());
        let mut live = snap.thaw();
        live.values[0] += 1.0;
        assert_eq!(snap.params(), &p);
        assert_eq!(snap.role(), SnapshotRole::Base);
    }
}
