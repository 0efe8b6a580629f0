//! Incremental conditioning state and its sparse feature encoding.

use std::ops::Range;

use super::vocab::{
    TokenClass, CALL_CLOSE_ID, CALL_OPEN_ID, EOS_ID, RESPONSE_CLOSE_ID, RESPONSE_OPEN_ID,
};
use super::{Architecture, PolicyError};

/// Everything the policy conditions on at one decoding step.
#[derive(Debug, Clone)]
pub struct ContextState<'a> {
    arch: Architecture,
    classes: &'a [TokenClass],
    prompt: Vec<u32>,
    trajectory: Vec<u32>,
    call_count: u32,
    last_tag: u32,
    observation: Vec<u32>,
    in_response: bool,
    open_call: Option<usize>,
    closed_call: Option<Range<usize>>,
}

impl<'a> ContextState<'a> {
    pub fn new(arch: Architecture, classes: &'a [TokenClass], prompt: &[u32]) -> Result<Self, PolicyError> {
        if prompt.len() > arch.question_slots as usize {
            return Err(PolicyError::ContextOverflow {
                what: "question",
                len: prompt.len(),
                limit: arch.question_slots as usize,
            });
        }
        if let Some(&t) = prompt.iter().find(|&&t| t as usize >= classes.len()) {
            return Err(PolicyError::UnknownToken(t.to_string()));
        }
        Ok(Self {
            arch,
            classes,
            prompt: prompt.to_vec(),
            trajectory: Vec::new(),
            call_count: 0,
            last_tag: 0,
            observation: Vec::new(),
            in_response: false,
            open_call: None,
            closed_call: None,
        })
    }

    pub fn trajectory(&self) -> &[u32] {
        &self.trajectory
    }

    pub fn call_count(&self) -> u32 {
        self.call_count
    }

    /// True when the trajectory already fills the token cap.
    pub fn is_full(&self) -> bool {
        self.trajectory.len() >= self.arch.max_sequence as usize
    }

    /// Token range of the call payload closed by the most recent token, if
    /// that token was a `</tool_call>` matching an open `<tool_call>`.
    pub fn closed_call(&self) -> Option<Range<usize>> {
        self.closed_call.clone()
    }

    pub fn push(&mut self, token: u32) -> Result<(), PolicyError> {
        if token as usize >= self.classes.len() {
            return Err(PolicyError::UnknownToken(token.to_string()));
        }
        if self.is_full() {
            return Err(PolicyError::ContextOverflow {
                what: "trajectory",
                len: self.trajectory.len() + 1,
                limit: self.arch.max_sequence as usize,
            });
        }
        let idx = self.trajectory.len();
        self.trajectory.push(token);
        self.closed_call = None;
        if token < EOS_ID {
            self.last_tag = token + 1;
        }
        match token {
            CALL_OPEN_ID => {
                self.call_count += 1;
                self.open_call = Some(idx);
            }
            CALL_CLOSE_ID => {
                self.closed_call = self.open_call.take().map(|start| start + 1..idx);
            }
            RESPONSE_OPEN_ID => {
                self.in_response = true;
                self.observation.clear();
            }
            RESPONSE_CLOSE_ID => self.in_response = false,
            _ => {
                if self.in_response
                    && self.classes[token as usize].is_word()
                    && self.observation.len() < self.arch.observation_slots as usize
                {
                    self.observation.push(token);
                }
            }
        }
        Ok(())
    }

    /// Active feature indices and `(copy slot, token)` pairs.
    pub fn features(&self, active: &mut Vec<u32>, copies: &mut Vec<(u32, u32)>) {
        active.clear();
        copies.clear();
        let a = &self.arch;
        let v = a.v();
        let w = a.slot_width();
        let q = a.question_slots as usize;
        let c = a.window as usize;
        let put = |slot: usize, t: u32, active: &mut Vec<u32>| {
            active.push((slot * w + t as usize) as u32);
            active.push((slot * w + v + self.classes[t as usize].index()) as u32);
        };
        let offset = q - self.prompt.len();
        for (i, &t) in self.prompt.iter().enumerate() {
            put(offset + i, t, active);
            copies.push(((offset + i) as u32, t));
        }
        let m = c.min(self.trajectory.len());
        let recent = &self.trajectory[self.trajectory.len() - m..];
        for (j, &t) in recent.iter().enumerate() {
            put(q + c - m + j, t, active);
        }
        for (j, &t) in self.observation.iter().enumerate() {
            put(q + c + j, t, active);
            copies.push(((q + j) as u32, t));
        }
        let base = a.token_slots() * w;
        let bucket = (self.call_count as usize).min(a.call_buckets as usize - 1);
        active.push((base + bucket) as u32);
        active.push((base + a.call_buckets as usize + self.last_tag as usize) as u32);
    }
}

#[cfg(test)]
mod tests {
    use super::super::vocab::*;
    use super::*;
    use crate::env::generate_world;

    #[test]
    fn features_are_in_range_and_track_state() {
        let kg = generate_world(1, 20, 3).unwrap();
        let vocab = Vocabulary::from_graph(&kg).unwrap();
        let arch = Architecture { window: 4, ..Architecture::new(vocab.len()) };
        let prompt = vocab.encode_words(&format!("what is the {} of {}", kg.relations[0], kg.entities[0].name)).unwrap();
        let mut st = ContextState::new(arch, vocab.classes(), &prompt).unwrap();
        let (mut act, mut cop) = (Vec::new(), Vec::new());
        st.features(&mut act, &mut cop);
        assert_eq!(act.len(), 2 * prompt.len() + 2);
        assert_eq!(cop.len(), prompt.len());
        let ent = vocab.id(&kg.entities[3].name).unwrap();
        for t in [THINK_OPEN_ID, THINK_CLOSE_ID, CALL_OPEN_ID, CALL_PREFIX_ID, ent, CALL_SUFFIX_ID, CALL_CLOSE_ID] {
            st.push(t).unwrap();
        }
        assert_eq!(st.closed_call(), Some(3..6));
        assert_eq!(st.call_count(), 1);
        for t in [RESPONSE_OPEN_ID, RESPONSE_PREFIX_ID, RESULT_OPEN_ID, ent, RESULT_MID_ID, ent, RESPONSE_CLOSE_ID] {
            st.push(t).unwrap();
        }
        assert_eq!(st.closed_call(), None);
        st.features(&mut act, &mut cop);
        assert!(act.iter().all(|&f| (f as usize) < arch.feature_dim()));
        assert_eq!(cop.len(), prompt.len() + 2);
        assert_eq!(act.len(), 2 * prompt.len() + 2 * 4 + 2 * 2 + 2);
    }

    #[test]
    fn overflow_is_reported() {
        let kg = generate_world(1, 20, 3).unwrap();
        let vocab = Vocabulary::from_graph(&kg).unwrap();
        let arch = Architecture { question_slots: 2, max_sequence: 3, ..Architecture::new(vocab.len()) };
        let long = vocab.encode_words("what is the").unwrap();
        assert!(matches!(
            ContextState::new(arch, vocab.classes(), &long),
            Err(PolicyError::ContextOverflow { .. })
        ));
        let mut st = ContextState::new(arch, vocab.classes(), &long[..2]).unwrap();
        for _ in 0..3 {
            st.push(THINK_OPEN_ID).unwrap();
        }
        assert!(matches!(st.push(THINK_OPEN_ID), Err(PolicyError::ContextOverflow { .. })));
    }
}
