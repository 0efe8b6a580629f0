//! Multi-hop question generation over a knowledge graph.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use super::world::KnowledgeGraph;
use super::EnvError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    TrainShard(u32),
    EvalInDomain,
    EvalOutOfDomain,
}

impl Split {
    fn id_prefix(self) -> &'static str {
        match self {
            Split::TrainShard(_) => "tr",
            Split::EvalInDomain => "id",
            Split::EvalOutOfDomain => "ood",
        }
    }

    pub fn is_eval(self) -> bool {
        !matches!(self, Split::TrainShard(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub gold_answer: String,
    pub hop_count: u32,
    pub split: Split,
    pub anchor: String,
    /// Relation labels from the anchor outward.
    pub relations: Vec<String>,
}

impl Question {
    /// Template words plus relation labels and entity names, space separated.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.text.split_whitespace()
    }
}

/// Distribution over hop counts, e.g. `1:0.25,2:0.375,3:0.375`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopMix(pub Vec<(u32, f64)>);

impl Default for HopMix {
    fn default() -> Self {
        HopMix(vec![(1, 0.25), (2, 0.375), (3, 0.375)])
    }
}

impl HopMix {
    /// Exact per-hop counts for `n` questions (largest-remainder rounding).
    pub fn allocate(&self, n: usize) -> Vec<(u32, usize)> {
        let total: f64 = self.0.iter().map(|(_, w)| w).sum();
        let raw: Vec<f64> = self.0.iter().map(|(_, w)| w / total * n as f64).collect();
        let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = raw[a] - raw[a].floor();
            let fb = raw[b] - raw[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        let missing = n - counts.iter().sum::<usize>();
        for &i in order.iter().take(missing) {
            counts[i] += 1;
        }
        self.0.iter().map(|(h, _)| *h).zip(counts).collect()
    }
}

impl fmt::Display for HopMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(h, w)| format!("{h}:{w}")).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for HopMix {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EnvError::InvalidMix(s.to_string());
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (h, w) = part.split_once(':').ok_or_else(bad)?;
            let h: u32 = h.trim().parse().map_err(|_| bad())?;
            let w: f64 = w.trim().parse().map_err(|_| bad())?;
            if h == 0 || !(w >= 0.0) {
                return Err(bad());
            }
            out.push((h, w));
        }
        if out.is_empty() || out.iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
            return Err(bad());
        }
        Ok(HopMix(out))
    }
}

/// Renders a question for a relation chain (innermost relation first).
pub fn question_text(anchor: &str, relations: &[&str], out_of_domain: bool) -> String {
    let mut text = String::from(if out_of_domain { "name" } else { "what is" });
    for (i, r) in relations.iter().rev().enumerate() {
        if i > 0 {
            text.push_str(" of");
        }
        text.push_str(" the ");
        text.push_str(r);
    }
    text.push_str(" of ");
    text.push_str(anchor);
    text
}

/// All `(anchor, relation chain, answer)` paths of length `hops` whose
/// entities are pairwise distinct and satisfy `allowed`.
fn enumerate_paths(
    kg: &KnowledgeGraph,
    hops: u32,
    allowed: &dyn Fn(usize) -> bool,
) -> Vec<(usize, Vec<usize>, usize)> {
    let mut out = Vec::new();
    let mut stack: Vec<(usize, Vec<usize>, Vec<usize>)> = Vec::new();
    for anchor in (0..kg.entities.len()).filter(|&e| allowed(e)) {
        stack.push((anchor, vec![], vec![anchor]));
        while let Some((at, rels, visited)) = stack.pop() {
            if rels.len() == hops as usize {
                out.push((anchor, rels, at));
                continue;
            }
            for t in kg.out_edges(at).iter().rev() {
                if allowed(t.object) && !visited.contains(&t.object) {
                    let mut r = rels.clone();
                    r.push(t.relation);
                    let mut v = visited.clone();
                    v.push(t.object);
                    stack.push((t.object, r, v));
                }
            }
        }
    }
    out
}

/// Generates `n` distinct questions with the given hop mix.
///
/// Out-of-domain questions use only held-out entities and the alternate
/// template; all other splits use the remaining entities.
pub fn generate_questions(
    kg: &KnowledgeGraph,
    mix: &HopMix,
    n: usize,
    split: Split,
    seed: u64,
) -> Result<Vec<Question>, EnvError> {
    if kg.entities.is_empty() || n == 0 {
        return Err(EnvError::InvalidSize { n_entities: kg.entities.len(), n_relations: kg.relations.len() });
    }
    let ood = split == Split::EvalOutOfDomain;
    let allowed = |e: usize| kg.is_held_out(e) == ood;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(n);
    for (hops, count) in mix.allocate(n) {
        if count == 0 {
            continue;
        }
        let mut paths = enumerate_paths(kg, hops, &allowed);
        if paths.len() < count {
            return Err(EnvError::ExhaustedPaths { hops, wanted: count, available: paths.len() });
        }
        paths.shuffle(&mut rng);
        picked.extend(paths.into_iter().take(count).map(|p| (hops, p)));
    }
    picked.shuffle(&mut rng);
    Ok(picked
        .into_iter()
        .enumerate()
        .map(|(i, (hops, (anchor, rels, answer)))| {
            let labels: Vec<&str> = rels.iter().map(|&r| kg.relations[r].as_str()).collect();
            let anchor_name = kg.entities[anchor].name.clone();
            Question {
                id: format!("{}-{i:05}", split.id_prefix()),
                text: question_text(&anchor_name, &labels, ood),
                gold_answer: kg.entities[answer].name.clone(),
                hop_count: hops,
                split,
                anchor: anchor_name,
                relations: labels.iter().map(|s| s.to_string()).collect(),
            }
        })
        .collect())
}

/// Resolves a question's relation chain on the graph.
pub fn resolve_chain(kg: &KnowledgeGraph, q: &Question) -> Option<String> {
    let mut at = kg.entity_index(&q.anchor)?;
    for label in &q.relations {
        let r = kg.relations.iter().position(|x| x == label)?;
        at = kg.object_of(at, r)?;
    }
    Some(kg.entities[at].name.clone())
}

/// Relabels questions into a different split, rewriting their ids.
pub fn relabel(questions: &mut [Question], split: Split) {
    for (i, q) in questions.iter_mut().enumerate() {
        q.split = split;
        q.id = format!("{}-{i:05}", split.id_prefix());
    }
}
