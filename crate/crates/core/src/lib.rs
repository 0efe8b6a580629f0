//! Self-evolving search agent lab: a synthetic multi-hop search environment,
//! a tiny exact-gradient policy, group-relative RL, rejection-sampling
//! fine-tuning and the loop that alternates them.

pub mod base;
pub mod env;
pub mod eval;
pub mod grammar;
pub mod grpo;
pub mod orchestrator;
pub mod policy;
pub mod records;
pub mod rsft;
pub mod reward;
pub mod seeds;

pub use env::{Environment, KnowledgeGraph, Question, Split};
pub use policy::{PolicyParams, PolicySnapshot, SnapshotRole};
pub use grammar::{Rollout, Segment, TokenTrace};
pub use reward::{hybrid_reward, RewardBreakdown, RewardMode};
