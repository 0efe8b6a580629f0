//! Hybrid reward: a strict format gate combined with an answer score.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::env::{f1_score, recall_reward, Judge};
use crate::grammar::{answer_of, parse_rollout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    #[default]
    Judge,
    F1,
    Recall,
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardMode::Judge => "judge",
            RewardMode::F1 => "f1",
            RewardMode::Recall => "recall",
        })
    }
}

impl FromStr for RewardMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "judge" => Ok(RewardMode::Judge),
            "f1" => Ok(RewardMode::F1),
            "recall" => Ok(RewardMode::Recall),
            other => Err(format!("unknown reward mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format_reward: f64,
    pub answer_reward: f64,
    pub total: f64,
    pub mode: RewardMode,
    /// `false` when the format gate failed and the answer was never scored.
    pub answer_evaluated: bool,
}

/// Scores an answer under `mode`; `judge` supplies the entity lexicon.
pub fn answer_reward(pred: &str, gold: &str, mode: RewardMode, judge: &Judge) -> f64 {
    match mode {
        RewardMode::Judge => judge.judge(pred, gold),
        RewardMode::F1 => f1_score(pred, gold),
        RewardMode::Recall => recall_reward(pred, gold),
    }
}

/// `0` when the format check fails, otherwise `0.5 * (1 + answer_reward)`.
pub fn hybrid_reward(text: &str, gold: &str, mode: RewardMode, judge: &Judge) -> RewardBreakdown {
    match parse_rollout(text) {
        Err(_) => RewardBreakdown {
            format_reward: 0.0,
            answer_reward: 0.0,
            total: 0.0,
            mode,
            answer_evaluated: false,
        },
        Ok(segments) => {
            let pred = answer_of(&segments).expect("parsed rollouts end in an answer");
            let ra = answer_reward(pred, gold, mode, judge);
            RewardBreakdown {
                format_reward: 1.0,
                answer_reward: ra,
                total: 0.5 * (1.0 + ra),
                mode,
                answer_evaluated: true,
            }
        }
    }
}
