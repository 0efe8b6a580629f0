//! Held-out evaluation with greedy decoding, and report emission.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

use crate::env::{Environment, Question, Split};
use crate::policy::{Agent, PolicyError};
use crate::reward::{answer_reward, RewardMode};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("question {0} belongs to a training shard")]
    TrainingQuestion(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serialize(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub max_searches: u32,
    /// Scoring rule for answers; the binary judge by default.
    pub judge_mode: RewardMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { max_searches: 10, judge_mode: RewardMode::Judge }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub question_id: String,
    pub split: Split,
    /// `None` when the rollout is malformed.
    pub predicted: Option<String>,
    pub score: f64,
    pub correct: bool,
    pub tool_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy_id: f64,
    pub accuracy_ood: f64,
    pub n_id: usize,
    pub n_ood: usize,
    pub mean_tool_calls: f64,
    /// Entry `c` counts questions answered with exactly `c` tool calls.
    pub tool_call_histogram: Vec<u64>,
    pub records: Vec<QuestionOutcome>,
}

impl EvalResult {
    /// Mean of the in-domain and out-of-domain accuracies.
    pub fn accuracy(&self) -> f64 {
        0.5 * (self.accuracy_id + self.accuracy_ood)
    }

    pub fn from_records(records: Vec<QuestionOutcome>) -> Self {
        let mean = |split: Split| {
            let scores: Vec<f64> = records.iter().filter(|r| r.split == split).map(|r| r.score).collect();
            let acc = if scores.is_empty() { 0.0 } else { scores.iter().sum::<f64>() / scores.len() as f64 };
            (acc, scores.len())
        };
        let (accuracy_id, n_id) = mean(Split::EvalInDomain);
        let (accuracy_ood, n_ood) = mean(Split::EvalOutOfDomain);
        let max_calls = records.iter().map(|r| r.tool_calls).max().unwrap_or(0);
        let mut tool_call_histogram = vec![0u64; max_calls + 1];
        for r in &records {
            tool_call_histogram[r.tool_calls] += 1;
        }
        let mean_tool_calls = if records.is_empty() {
            0.0
        } else {
            records.iter().map(|r| r.tool_calls as f64).sum::<f64>() / records.len() as f64
        };
        Self { accuracy_id, accuracy_ood, n_id, n_ood, mean_tool_calls, tool_call_histogram, records }
    }
}

/// One greedy rollout per question, scored against the gold answer.
pub fn evaluate<A: Agent + ?Sized>(
    agent: &A,
    questions: &[Question],
    env: &Environment,
    cfg: &EvalConfig,
) -> Result<EvalResult, EvalError> {
    if questions.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    if let Some(q) = questions.iter().find(|q| !q.split.is_eval()) {
        return Err(EvalError::TrainingQuestion(q.id.clone()));
    }
    let records = questions
        .par_iter()
        .map(|q| {
            let rollout = agent.act(q, env, cfg.max_searches)?;
            let predicted = if rollout.is_well_formed() { rollout.answer().map(str::to_string) } else { None };
            let score = predicted
                .as_deref()
                .map_or(0.0, |p| answer_reward(p, &q.gold_answer, cfg.judge_mode, &env.judge));
            Ok(QuestionOutcome {
                question_id: q.id.clone(),
                split: q.split,
                predicted,
                score,
                correct: score >= 1.0,
                tool_calls: rollout.tool_call_count(),
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(EvalResult::from_records(records))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Sft,
    Rl,
}

/// Evaluation of one model of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEval {
    pub iteration: u32,
    pub stage: Stage,
    pub result: EvalResult,
}

/// One row of the flat accuracy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub iteration: u32,
    pub stage: Stage,
    pub split: String,
    pub accuracy: f64,
    pub questions: usize,
    pub mean_tool_calls: f64,
}

/// Rows ordered by iteration, stage (SFT first) and split (ID first).
pub fn report_rows(entries: &[StageEval]) -> Vec<ReportRow> {
    let mut sorted: Vec<&StageEval> = entries.iter().collect();
    sorted.sort_by_key(|e| (e.iteration, e.stage == Stage::Rl));
    let mut rows = Vec::new();
    for e in sorted {
        for (split, accuracy, questions) in
            [("id", e.result.accuracy_id, e.result.n_id), ("ood", e.result.accuracy_ood, e.result.n_ood)]
        {
            rows.push(ReportRow {
                iteration: e.iteration,
                stage: e.stage,
                split: split.to_string(),
                accuracy,
                questions,
                mean_tool_calls: e.result.mean_tool_calls,
            });
        }
    }
    rows
}

#[derive(Serialize)]
struct Summary<'a, M: Serialize> {
    metadata: &'a M,
    rows: Vec<ReportRow>,
    evaluations: &'a [StageEval],
}

/// Writes `summary.json` and `accuracy.csv` into `dir`.
pub fn emit_report<M: Serialize>(dir: &Path, metadata: &M, entries: &[StageEval]) -> Result<(), EvalError> {
    fs::create_dir_all(dir)?;
    let rows = report_rows(entries);
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row).map_err(|e| EvalError::Serialize(e.to_string()))?;
    }
    let table = w.into_inner().map_err(|e| EvalError::Serialize(e.to_string()))?;
    let summary = Summary { metadata, rows, evaluations: entries };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| EvalError::Serialize(e.to_string()))?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    fs::write(dir.join("accuracy.csv"), table)?;
    Ok(())
}
