//! Scored rollouts and their line-delimited JSON log format.

use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

use crate::grammar::{Rollout, TokenTrace};
use crate::reward::RewardBreakdown;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// A rollout with the reward it earned during RL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRollout {
    pub rollout: Rollout,
    pub reward: RewardBreakdown,
    pub tool_call_count: usize,
    pub iteration_index: u32,
    pub seed: u64,
    /// Position in the run-wide append order.
    pub sequence: u64,
}

impl ScoredRollout {
    pub fn question_id(&self) -> &str {
        &self.rollout.question_id
    }

    pub fn trace(&self) -> Option<&TokenTrace> {
        self.rollout.trace.as_ref()
    }
}

/// One JSONL line. Per-token log-probabilities are not persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub question_id: String,
    pub question_text: String,
    pub rendered_text: String,
    pub reward_breakdown: RewardBreakdown,
    pub tool_call_count: usize,
    pub iteration_index: u32,
    pub seed: u64,
    pub sequence: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<RecordTokens>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordTokens {
    pub prompt_ids: Vec<u32>,
    pub token_ids: Vec<u32>,
    /// `1` for agent tokens and `0` for injected ones.
    pub action_mask: String,
    pub temperature: f64,
    pub max_searches: u32,
}

impl From<&ScoredRollout> for RolloutRecord {
    fn from(s: &ScoredRollout) -> Self {
        RolloutRecord {
            question_id: s.rollout.question_id.clone(),
            question_text: s.rollout.question_text.clone(),
            rendered_text: s.rollout.text.clone(),
            reward_breakdown: s.reward,
            tool_call_count: s.tool_call_count,
            iteration_index: s.iteration_index,
            seed: s.seed,
            sequence: s.sequence,
            tokens: s.rollout.trace.as_ref().map(|t| RecordTokens {
                prompt_ids: t.prompt_ids.clone(),
                token_ids: t.token_ids.clone(),
                action_mask: t.action_mask.iter().map(|&m| if m { '1' } else { '0' }).collect(),
                temperature: t.temperature,
                max_searches: t.max_searches,
            }),
        }
    }
}

impl RolloutRecord {
    pub fn into_scored(self) -> Result<ScoredRollout, String> {
        let mut rollout = Rollout::from_text_lenient(self.question_id, self.question_text, &self.rendered_text);
        if let Some(t) = self.tokens {
            let action_mask = t
                .action_mask
                .chars()
                .map(|c| match c {
                    '1' => Ok(true),
                    '0' => Ok(false),
                    other => Err(format!("bad mask character {other:?}")),
                })
                .collect::<Result<Vec<bool>, String>>()?;
            if action_mask.len() != t.token_ids.len() {
                return Err("mask and token lengths differ".into());
            }
            rollout.trace = Some(TokenTrace {
                prompt_ids: t.prompt_ids,
                token_ids: t.token_ids,
                action_mask,
                log_probs: Vec::new(),
                temperature: t.temperature,
                max_searches: t.max_searches,
            });
        }
        Ok(ScoredRollout {
            rollout,
            reward: self.reward_breakdown,
            tool_call_count: self.tool_call_count,
            iteration_index: self.iteration_index,
            seed: self.seed,
            sequence: self.sequence,
        })
    }
}

pub fn write_jsonl<'a, I>(path: &Path, records: I) -> Result<(), RecordError>
where
    I: IntoIterator<Item = &'a ScoredRollout>,
{
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        let line = serde_json::to_string(&RolloutRecord::from(r)).map_err(std::io::Error::other)?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ScoredRollout>, RecordError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| RecordError::Parse { line: i + 1, message };
        let rec: RolloutRecord = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        out.push(rec.into_scored().map_err(parse)?);
    }
    Ok(out)
}
