//! Closed vocabulary with atomic tag and scaffold tokens.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use super::PolicyError;
use crate::env::KnowledgeGraph;
use crate::grammar::{
    ANSWER_CLOSE, ANSWER_OPEN, CALL_PREFIX, LIST_SEP, NOTICE_PREFIX, NOTICE_SUFFIX, RESPONSE_PREFIX,
    RESPONSE_SUFFIX, THINK_CLOSE, THINK_OPEN, TOOL_CALL_CLOSE, TOOL_CALL_OPEN, TOOL_RESPONSE_CLOSE,
    TOOL_RESPONSE_OPEN,
};

pub const THINK_OPEN_ID: u32 = 0;
pub const THINK_CLOSE_ID: u32 = 1;
pub const CALL_OPEN_ID: u32 = 2;
pub const CALL_CLOSE_ID: u32 = 3;
pub const RESPONSE_OPEN_ID: u32 = 4;
pub const RESPONSE_CLOSE_ID: u32 = 5;
pub const ANSWER_OPEN_ID: u32 = 6;
pub const ANSWER_CLOSE_ID: u32 = 7;
pub const EOS_ID: u32 = 8;
pub const CALL_PREFIX_ID: u32 = 9;
pub const CALL_SUFFIX_ID: u32 = 10;
pub const QUERY_SEP_ID: u32 = 11;
pub const RESPONSE_PREFIX_ID: u32 = 12;
pub const RESPONSE_SUFFIX_ID: u32 = 13;
pub const RESULT_OPEN_ID: u32 = 14;
pub const RESULT_MID_ID: u32 = 15;
pub const RESULT_CLOSE_ID: u32 = 16;
pub const RESULT_SEP_ID: u32 = 17;
pub const NOTICE_BUDGET_ID: u32 = 18;
pub const NOTICE_MALFORMED_ID: u32 = 19;
const FIXED: usize = 20;

pub const BUDGET_NOTICE: &str = "search budget exhausted";
pub const MALFORMED_NOTICE: &str = "malformed tool call";

pub const TEMPLATE_WORDS: [&str; 6] = ["what", "is", "the", "of", "name", "a"];
pub const THOUGHT_WORDS: [&str; 8] = ["search", "find", "next", "found", "answer", "so", "check", "then"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenClass {
    Tag,
    Structural,
    Template,
    Thought,
    Relation,
    Entity,
    Descriptor,
}

impl TokenClass {
    pub const COUNT: usize = 7;

    pub fn index(self) -> usize {
        self as usize
    }

    /// Classes that carry content (everything except tags and scaffold).
    pub fn is_word(self) -> bool {
        !matches!(self, TokenClass::Tag | TokenClass::Structural)
    }
}

fn fixed_surfaces() -> Vec<String> {
    vec![
        THINK_OPEN.into(),
        THINK_CLOSE.into(),
        TOOL_CALL_OPEN.into(),
        TOOL_CALL_CLOSE.into(),
        TOOL_RESPONSE_OPEN.into(),
        TOOL_RESPONSE_CLOSE.into(),
        ANSWER_OPEN.into(),
        ANSWER_CLOSE.into(),
        String::new(),
        format!("{CALL_PREFIX}\""),
        "\"]}}".into(),
        "\", \"".into(),
        RESPONSE_PREFIX.into(),
        RESPONSE_SUFFIX.into(),
        "{\"title\": \"".into(),
        "\", \"snippet\": \"".into(),
        "\"}".into(),
        LIST_SEP.into(),
        format!("{NOTICE_PREFIX}\"{BUDGET_NOTICE}\"{NOTICE_SUFFIX}"),
        format!("{NOTICE_PREFIX}\"{MALFORMED_NOTICE}\"{NOTICE_SUFFIX}"),
    ]
}

/// Dense token table. Ids `0..8` are the tags, `8` is end-of-sequence and
/// `9..20` are the JSON scaffold pieces; content words follow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    classes: Vec<TokenClass>,
    index: HashMap<String, u32>,
    /// Scaffold surfaces sorted by descending length for longest-match lexing.
    scaffold: Vec<(String, u32)>,
}

impl Vocabulary {
    pub fn from_graph(kg: &KnowledgeGraph) -> Result<Self, PolicyError> {
        let mut words: Vec<(String, TokenClass)> = Vec::new();
        words.extend(TEMPLATE_WORDS.iter().map(|w| (w.to_string(), TokenClass::Template)));
        words.extend(THOUGHT_WORDS.iter().map(|w| (w.to_string(), TokenClass::Thought)));
        words.extend(kg.kinds().into_iter().map(|k| (k, TokenClass::Descriptor)));
        words.extend(kg.relations.iter().map(|r| (r.clone(), TokenClass::Relation)));
        words.extend(kg.entities.iter().map(|e| (e.name.clone(), TokenClass::Entity)));
        Self::new(words)
    }

    pub fn new(words: Vec<(String, TokenClass)>) -> Result<Self, PolicyError> {
        let mut tokens = fixed_surfaces();
        let mut classes = vec![TokenClass::Tag; 9];
        classes.extend(std::iter::repeat_n(TokenClass::Structural, FIXED - 9));
        let mut index = HashMap::new();
        for (id, t) in tokens.iter().enumerate() {
            index.insert(t.clone(), id as u32);
        }
        for (w, class) in words {
            if w.is_empty() || w.contains(|c: char| c.is_whitespace() || c == '"' || c == '<' || c == '\\') {
                return Err(PolicyError::InvalidToken(w));
            }
            if index.insert(w.clone(), tokens.len() as u32).is_some() {
                return Err(PolicyError::InvalidToken(w));
            }
            tokens.push(w);
            classes.push(class);
        }
        let mut scaffold: Vec<(String, u32)> = tokens[..FIXED]
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_empty())
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        scaffold.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));
        Ok(Self { tokens, classes, index, scaffold })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn surface(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn class(&self, id: u32) -> TokenClass {
        self.classes[id as usize]
    }

    pub fn classes(&self) -> &[TokenClass] {
        &self.classes
    }

    /// Ids of all tokens of one class, in id order.
    pub fn ids_of(&self, class: TokenClass) -> Vec<u32> {
        (0..self.len() as u32).filter(|&i| self.class(i) == class).collect()
    }

    /// Encodes whitespace-separated content words.
    pub fn encode_words(&self, text: &str) -> Result<Vec<u32>, PolicyError> {
        text.split_whitespace()
            .map(|w| {
                self.id(w)
                    .filter(|&id| self.class(id).is_word())
                    .ok_or_else(|| PolicyError::UnknownToken(w.to_string()))
            })
            .collect()
    }

    /// Renders tokens: adjacent words are joined by one space, scaffold and
    /// tags attach without spaces, and a newline follows each closing
    /// think/tool-call/tool-response tag that is not the last token.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if id == EOS_ID {
                continue;
            }
            if i > 0 {
                let prev = ids[i - 1];
                if self.class(prev).is_word() && self.class(id).is_word() {
                    out.push(' ');
                } else if matches!(prev, THINK_CLOSE_ID | CALL_CLOSE_ID | RESPONSE_CLOSE_ID) {
                    out.push('\n');
                }
            }
            out.push_str(self.surface(id));
        }
        out
    }

    /// Inverse of [`Vocabulary::detokenize`] for texts built from this vocabulary.
    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>, PolicyError> {
        let mut out = Vec::new();
        let mut rest = text;
        'outer: while !rest.is_empty() {
            let trimmed = rest.trim_start();
            if trimmed.is_empty() {
                break;
            }
            rest = trimmed;
            for (surface, id) in &self.scaffold {
                if let Some(tail) = rest.strip_prefix(surface.as_str()) {
                    out.push(*id);
                    rest = tail;
                    continue 'outer;
                }
            }
            let end = rest
                .find(|c: char| c.is_whitespace() || c == '"' || c == '<')
                .unwrap_or(rest.len());
            let word = &rest[..end.max(1)];
            match self.id(word).filter(|&id| self.class(id).is_word()) {
                Some(id) => out.push(id),
                None => return Err(PolicyError::UnknownToken(word.to_string())),
            }
            rest = &rest[end.max(1)..];
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::generate_world;
    use crate::grammar::{parse_rollout, render_segments, Observation, ObservedResult, Segment};

    fn vocab() -> (KnowledgeGraph, Vocabulary) {
        let kg = generate_world(2, 30, 4).unwrap();
        let v = Vocabulary::from_graph(&kg).unwrap();
        (kg, v)
    }

    #[test]
    fn fixed_ids_are_stable() {
        let (_, v) = vocab();
        assert_eq!(v.surface(THINK_OPEN_ID), "<think>");
        assert_eq!(v.surface(ANSWER_CLOSE_ID), "</answer>");
        assert_eq!(v.surface(EOS_ID), "");
        assert_eq!(v.class(EOS_ID), TokenClass::Tag);
        assert_eq!(v.class(RESULT_SEP_ID), TokenClass::Structural);
        assert_eq!(v.class(FIXED as u32), TokenClass::Template);
    }

    #[test]
    fn detokenize_matches_canonical_render() {
        let (kg, v) = vocab();
        let a = &kg.entities[0].name;
        let b = &kg.entities[1].name;
        let r = &kg.relations[0];
        let segs = vec![
            Segment::Thought("search".into()),
            Segment::search([format!("{r} {a}"), a.clone()]),
            Segment::ToolResponse(Observation::Results(vec![
                ObservedResult { title: a.clone(), snippet: format!("{a} {r} {b}") },
                ObservedResult { title: b.clone(), snippet: format!("{b} is a city") },
            ])),
            Segment::Thought("found so".into()),
            Segment::search([b.clone()]),
            Segment::ToolResponse(Observation::Notice(BUDGET_NOTICE.into())),
            Segment::Thought("answer".into()),
            Segment::Answer(b.clone()),
        ];
        let text = render_segments(&segs).unwrap();
        let ids = v.tokenize(&text).unwrap();
        assert_eq!(v.detokenize(&ids), text);
        assert_eq!(parse_rollout(&v.detokenize(&ids)).unwrap(), segs);
        assert!(ids.contains(&NOTICE_BUDGET_ID));
        assert!(ids.contains(&QUERY_SEP_ID));
    }

    #[test]
    fn empty_results_and_malformed_notice_parse() {
        let (_, v) = vocab();
        let empty = [RESPONSE_OPEN_ID, RESPONSE_PREFIX_ID, RESPONSE_SUFFIX_ID, RESPONSE_CLOSE_ID];
        assert_eq!(v.detokenize(&empty), r#"<tool_response>{"name": "web_search", "content": {"results": []}}</tool_response>"#);
        let notice = v.detokenize(&[NOTICE_MALFORMED_ID]);
        assert!(notice.contains(MALFORMED_NOTICE));
    }

    #[test]
    fn rejects_unknown_words() {
        let (_, v) = vocab();
        assert!(matches!(v.encode_words("what is Zzzzq"), Err(PolicyError::UnknownToken(_))));
        assert!(v.tokenize("<think>nonsenseword</think>").is_err());
    }
}
