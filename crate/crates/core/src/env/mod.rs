//! Synthetic search environment: world, questions, the search tool and
//! answer scoring.

pub mod questions;
pub mod scoring;
pub mod search;
pub mod world;

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::policy::{PolicyError, Vocabulary};

pub use questions::{generate_questions, question_text, relabel, resolve_chain, HopMix, Question, Split};
pub use scoring::{f1_score, judge_answer, normalize_tokens, recall_reward, Judge};
pub use search::{search_tokens, SearchBudget, SearchIndex, SearchResult, DEFAULT_TOP_K};
pub use world::{generate_world, Entity, KnowledgeGraph, Triple};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("invalid world size: {n_entities} entities, {n_relations} relations")]
    InvalidSize { n_entities: usize, n_relations: usize },
    #[error("invalid graph: {0}")]
    InvalidGraph(&'static str),
    #[error("invalid hop mix {0:?}")]
    InvalidMix(String),
    #[error("graph supplies only {available} distinct {hops}-hop paths, {wanted} requested")]
    ExhaustedPaths { hops: u32, wanted: usize, available: usize },
    #[error("search budget exhausted")]
    BudgetExhausted,
    #[error("top_k must be at least 1")]
    InvalidTopK,
    #[error("io: {0}")]
    Io(String),
    #[error("malformed file: {0}")]
    Parse(String),
}

/// Immutable world plus its search index, judge and token vocabulary,
/// shared by samplers.
#[derive(Debug, Clone)]
pub struct Environment {
    pub kg: KnowledgeGraph,
    pub index: SearchIndex,
    pub judge: Judge,
    pub vocab: Vocabulary,
    pub top_k: usize,
}

impl Environment {
    pub fn new(kg: KnowledgeGraph) -> Result<Self, PolicyError> {
        Self::with_top_k(kg, DEFAULT_TOP_K)
    }

    pub fn with_top_k(kg: KnowledgeGraph, top_k: usize) -> Result<Self, PolicyError> {
        let vocab = Vocabulary::from_graph(&kg)?;
        let index = SearchIndex::new(&kg);
        let judge = Judge::for_graph(&kg);
        Ok(Self { kg, index, judge, vocab, top_k: top_k.max(1) })
    }
}

/// Question set file: the generating seed plus the questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSet {
    pub world_seed: u64,
    pub seed: u64,
    pub questions: Vec<Question>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EnvError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| EnvError::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| EnvError::Io(e.to_string()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, EnvError> {
    let text = std::fs::read_to_string(path).map_err(|e| EnvError::Io(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| EnvError::Parse(e.to_string()))
}

impl KnowledgeGraph {
    pub fn save(&self, path: &Path) -> Result<(), EnvError> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let kg: KnowledgeGraph = read_json(path)?;
        KnowledgeGraph::from_parts(kg.seed, kg.entities, kg.relations, kg.triples)
    }
}

impl QuestionSet {
    pub fn save(&self, path: &Path) -> Result<(), EnvError> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        read_json(path)
    }
}
