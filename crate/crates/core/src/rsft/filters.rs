//! The three sequential pool filters: reward threshold, per-question
//! deduplication and top-k by tool calls.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::HashMap;

use crate::records::ScoredRollout;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Minimum total reward kept by the threshold rule.
    pub reward_threshold: f64,
    /// Records kept by the tool-call rule.
    pub top_k: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { reward_threshold: 0.7, top_k: 2000 }
    }
}

/// Counts after each rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterAudit {
    pub input: usize,
    pub after_reward: usize,
    pub after_dedup: usize,
    pub after_top_k: usize,
}

/// Preference between two records: more tool calls, then later iteration,
/// then earlier append order. `Less` means `a` is preferred.
pub fn preference(a: &ScoredRollout, b: &ScoredRollout) -> Ordering {
    b.tool_call_count
        .cmp(&a.tool_call_count)
        .then(b.iteration_index.cmp(&a.iteration_index))
        .then(a.sequence.cmp(&b.sequence))
}

/// Records whose total reward is at least `threshold`, in input order.
pub fn filter_hrs(records: &[ScoredRollout], threshold: f64) -> Vec<ScoredRollout> {
    records.iter().filter(|r| r.reward.total >= threshold).cloned().collect()
}

/// One preferred record per question, ordered by each question's first
/// appearance.
pub fn filter_sqd(records: &[ScoredRollout]) -> Vec<ScoredRollout> {
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut best: Vec<&ScoredRollout> = Vec::new();
    for r in records {
        match slot.get(r.question_id()) {
            Some(&i) => {
                if preference(r, best[i]) == Ordering::Less {
                    best[i] = r;
                }
            }
            None => {
                slot.insert(r.question_id(), best.len());
                best.push(r);
            }
        }
    }
    best.into_iter().cloned().collect()
}

/// The `k` most preferred records, sorted by preference.
pub fn filter_mcs(records: &[ScoredRollout], k: usize) -> Vec<ScoredRollout> {
    let mut order: Vec<&ScoredRollout> = records.iter().collect();
    order.sort_by(|a, b| preference(a, b));
    order.into_iter().take(k).cloned().collect()
}

/// Threshold, then deduplication, then top-k.
pub fn apply_filters(records: &[ScoredRollout], cfg: &FilterConfig) -> (Vec<ScoredRollout>, FilterAudit) {
    let hrs = filter_hrs(records, cfg.reward_threshold);
    let sqd = filter_sqd(&hrs);
    let mcs = filter_mcs(&sqd, cfg.top_k);
    let audit = FilterAudit { input: records.len(), after_reward: hrs.len(), after_dedup: sqd.len(), after_top_k: mcs.len() };
    (mcs, audit)
}
