//! Lexical `web_search` tool over entity descriptions and triple sentences.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use super::world::KnowledgeGraph;
use super::EnvError;
use crate::grammar::ObservedResult;

pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub title: String,
    pub snippet: String,
    pub score: f64,
}

impl From<&SearchResult> for ObservedResult {
    fn from(r: &SearchResult) -> Self {
        ObservedResult { title: r.title.clone(), snippet: r.snippet.clone() }
    }
}

/// Per-rollout remaining-search counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchBudget {
    remaining: u32,
}

impl SearchBudget {
    pub fn new(max_searches: u32) -> Self {
        Self { remaining: max_searches }
    }

    pub fn remaining(&self) -> u32 {
        self.remaining
    }

    pub fn consume(&mut self) -> Result<(), EnvError> {
        if self.remaining == 0 {
            return Err(EnvError::BudgetExhausted);
        }
        self.remaining -= 1;
        Ok(())
    }
}

/// Lowercased alphanumeric word tokens.
pub fn search_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone)]
struct Document {
    title: String,
    snippet: String,
}

/// Inverted index over the graph's documents.
///
/// Documents are ordered by entity id; each entity's description comes first,
/// then its triples in relation order. Ties in score keep this order.
#[derive(Debug, Clone)]
pub struct SearchIndex {
    docs: Vec<Document>,
    postings: HashMap<String, Vec<(u32, u32)>>,
}

impl SearchIndex {
    pub fn new(kg: &KnowledgeGraph) -> Self {
        let mut docs = Vec::with_capacity(kg.entities.len() + kg.triples.len());
        for (id, entity) in kg.entities.iter().enumerate() {
            docs.push(Document { title: entity.name.clone(), snippet: entity.description() });
            for t in kg.out_edges(id) {
                docs.push(Document { title: entity.name.clone(), snippet: kg.verbalize(t) });
            }
        }
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        for (d, doc) in docs.iter().enumerate() {
            let mut counts: HashMap<String, u32> = HashMap::new();
            for tok in search_tokens(&doc.title).into_iter().chain(search_tokens(&doc.snippet)) {
                *counts.entry(tok).or_default() += 1;
            }
            for (tok, c) in counts {
                postings.entry(tok).or_default().push((d as u32, c));
            }
        }
        Self { docs, postings }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    fn ranked(&self, query: &str) -> Vec<(u32, u32)> {
        let mut qtoks = search_tokens(query);
        qtoks.sort_unstable();
        qtoks.dedup();
        let mut scores: HashMap<u32, u32> = HashMap::new();
        for tok in &qtoks {
            if let Some(list) = self.postings.get(tok) {
                for &(d, c) in list {
                    *scores.entry(d).or_default() += c;
                }
            }
        }
        let mut ranked: Vec<(u32, u32)> = scores.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    }

    fn results(&self, ranked: Vec<(u32, u32)>, top_k: usize) -> Vec<SearchResult> {
        ranked
            .into_iter()
            .take(top_k)
            .map(|(d, s)| {
                let doc = &self.docs[d as usize];
                SearchResult { title: doc.title.clone(), snippet: doc.snippet.clone(), score: s as f64 }
            })
            .collect()
    }

    /// Ranks documents by the summed occurrence counts of the distinct query
    /// tokens; only documents with a positive score are returned.
    pub fn search(&self, query: &str, top_k: usize) -> Vec<SearchResult> {
        self.results(self.ranked(query), top_k)
    }

    /// One budgeted tool call.
    pub fn web_search(
        &self,
        query: &str,
        top_k: usize,
        budget: &mut SearchBudget,
    ) -> Result<Vec<SearchResult>, EnvError> {
        if top_k == 0 {
            return Err(EnvError::InvalidTopK);
        }
        budget.consume()?;
        Ok(self.search(query, top_k))
    }

    /// One budgeted tool call carrying several queries; results are merged
    /// (best score per document) and the overall top `top_k` kept.
    pub fn web_search_many(
        &self,
        queries: &[String],
        top_k: usize,
        budget: &mut SearchBudget,
    ) -> Result<Vec<SearchResult>, EnvError> {
        if top_k == 0 {
            return Err(EnvError::InvalidTopK);
        }
        budget.consume()?;
        let mut best: HashMap<u32, u32> = HashMap::new();
        for q in queries {
            for (d, score) in self.ranked(q) {
                let slot = best.entry(d).or_default();
                *slot = (*slot).max(score);
            }
        }
        let mut ranked: Vec<(u32, u32)> = best.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(self.results(ranked, top_k))
    }
}
