//! Seeded synthetic knowledge graph.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EnvError;

const RELATION_LABELS: [&str; 12] = [
    "capital", "founder", "mentor", "rival", "author", "owner", "neighbor", "partner", "leader",
    "creator", "sponsor", "ally",
];

pub(crate) const KIND_LABELS: [&str; 8] = [
    "city", "person", "river", "company", "country", "mountain", "book", "team",
];

const ONSETS: [&str; 16] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr",
];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];
const CODAS: [&str; 6] = ["", "n", "r", "s", "l", "x"];

/// Number of equal entity blocks; triples mostly stay inside a block and the
/// last block is held out for out-of-domain evaluation.
pub const REGIONS: usize = 5;
const EDGE_PROB: f64 = 0.45;
const IN_REGION_PROB: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    pub kind: String,
}

impl Entity {
    pub fn description(&self) -> String {
        format!("{} is a {}", self.name, self.kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
}

/// Entities, relation labels and `(subject, relation, object)` triples.
///
/// Triples are kept sorted by `(subject, relation)` and each such pair has at
/// most one object, so relation chains resolve to unique answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub seed: u64,
    pub entities: Vec<Entity>,
    pub relations: Vec<String>,
    pub triples: Vec<Triple>,
}

impl KnowledgeGraph {
    /// Builds a graph from explicit parts, validating references and uniqueness.
    pub fn from_parts(
        seed: u64,
        entities: Vec<Entity>,
        relations: Vec<String>,
        mut triples: Vec<Triple>,
    ) -> Result<Self, EnvError> {
        let mut names: Vec<&str> = entities.iter().map(|e| e.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0].eq_ignore_ascii_case(w[1])) {
            return Err(EnvError::InvalidGraph("duplicate entity name"));
        }
        if triples
            .iter()
            .any(|t| t.subject >= entities.len() || t.object >= entities.len() || t.relation >= relations.len())
        {
            return Err(EnvError::InvalidGraph("triple references a missing entity or relation"));
        }
        triples.sort_unstable();
        if triples
            .windows(2)
            .any(|w| (w[0].subject, w[0].relation) == (w[1].subject, w[1].relation))
        {
            return Err(EnvError::InvalidGraph("relation is not functional"));
        }
        Ok(Self { seed, entities, relations, triples })
    }

    pub fn object_of(&self, subject: usize, relation: usize) -> Option<usize> {
        self.triples
            .binary_search_by(|t| (t.subject, t.relation).cmp(&(subject, relation)))
            .ok()
            .map(|i| self.triples[i].object)
    }

    pub fn out_edges(&self, subject: usize) -> &[Triple] {
        let lo = self.triples.partition_point(|t| t.subject < subject);
        let hi = self.triples.partition_point(|t| t.subject <= subject);
        &self.triples[lo..hi]
    }

    /// First entity index of the held-out block.
    pub fn holdout_start(&self) -> usize {
        let n = self.entities.len();
        n - n / REGIONS
    }

    pub fn is_held_out(&self, entity: usize) -> bool {
        entity >= self.holdout_start()
    }

    pub fn entity_index(&self, name: &str) -> Option<usize> {
        self.entities.iter().position(|e| e.name == name)
    }

    pub fn verbalize(&self, t: &Triple) -> String {
        format!(
            "{} {} {}",
            self.entities[t.subject].name, self.relations[t.relation], self.entities[t.object].name
        )
    }

    /// Descriptor words used in entity descriptions.
    pub fn kinds(&self) -> Vec<String> {
        let mut kinds: Vec<String> = Vec::new();
        for e in &self.entities {
            if !kinds.contains(&e.kind) {
                kinds.push(e.kind.clone());
            }
        }
        kinds
    }
}

fn make_name(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut s = String::new();
    for i in 0..syllables {
        s.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
        s.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
        if i + 1 == syllables {
            s.push_str(CODAS[rng.gen_range(0..CODAS.len())]);
        }
    }
    let mut chars = s.chars();
    let first = chars.next().expect("names are non-empty").to_ascii_uppercase();
    std::iter::once(first).chain(chars).collect()
}

fn region_of(entity: usize, n: usize) -> usize {
    (entity * REGIONS / n).min(REGIONS - 1)
}

/// Generates a deterministic world of `n_entities` entities and `n_relations`
/// relation labels. Every entity gets at least one outgoing triple.
pub fn generate_world(seed: u64, n_entities: usize, n_relations: usize) -> Result<KnowledgeGraph, EnvError> {
    if n_entities < 10 || n_relations == 0 {
        return Err(EnvError::InvalidSize { n_entities, n_relations });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut entities = Vec::with_capacity(n_entities);
    while entities.len() < n_entities {
        let name = make_name(&mut rng);
        if seen.insert(name.to_ascii_lowercase()) {
            let kind = KIND_LABELS[rng.gen_range(0..KIND_LABELS.len())].to_string();
            entities.push(Entity { name, kind });
        }
    }
    let relations: Vec<String> = (0..n_relations)
        .map(|r| match RELATION_LABELS.get(r) {
            Some(label) => label.to_string(),
            None => format!("relation{r}"),
        })
        .collect();

    let block: Vec<Vec<usize>> = (0..REGIONS)
        .map(|g| (0..n_entities).filter(|&e| region_of(e, n_entities) == g).collect())
        .collect();
    let pick_object = |rng: &mut ChaCha8Rng, subject: usize| loop {
        let o = if rng.gen_bool(IN_REGION_PROB) {
            *block[region_of(subject, n_entities)].choose(rng).expect("regions are non-empty")
        } else {
            rng.gen_range(0..n_entities)
        };
        if o != subject {
            return o;
        }
    };

    let mut triples = Vec::new();
    for subject in 0..n_entities {
        let before = triples.len();
        for relation in 0..n_relations {
            if rng.gen_bool(EDGE_PROB) {
                let object = pick_object(&mut rng, subject);
                triples.push(Triple { subject, relation, object });
            }
        }
        if triples.len() == before {
            let relation = rng.gen_range(0..n_relations);
            let object = pick_object(&mut rng, subject);
            triples.push(Triple { subject, relation, object });
        }
    }
    KnowledgeGraph::from_parts(seed, entities, relations, triples)
}
