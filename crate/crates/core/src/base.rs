//! Bootstrap base policy.
//!
//! The base is fitted to scripted demonstrations that exercise the rollout
//! format and the search tool without ever consulting an answer: queries and
//! answers are drawn at random from words visible in the question or in the
//! latest search results.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{question_text, Environment, SearchBudget};
use crate::grammar::{Rollout, TokenTrace};
use crate::policy::sampler::respond_to_call;
use crate::policy::vocab::*;
use crate::policy::{Architecture, PolicyError, PolicyParams, PolicySnapshot, SnapshotRole};
use crate::records::ScoredRollout;
use crate::reward::{hybrid_reward, RewardMode};
use crate::rsft::{sft_train, RsftError, SftConfig};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseConfig {
    pub demos: usize,
    /// Upper bound on searches per unplanned demonstration.
    pub max_demo_calls: u32,
    /// Chance that a demonstration searches once per relation in the
    /// question, and that each search names the relation of its step.
    pub plan_prob: f64,
    pub init_scale: f64,
    pub sft: SftConfig,
    /// Search budget recorded in demonstration traces.
    pub max_searches: u32,
}

impl Default for BaseConfig {
    fn default() -> Self {
        Self {
            demos: 1500,
            max_demo_calls: 3,
            plan_prob: 0.5,
            init_scale: 0.05,
            sft: SftConfig { learning_rate: 0.5, batch_size: 16, epochs: 10 },
            max_searches: 10,
        }
    }
}

/// Entity words of the first `results` results in a response span, other
/// than `exclude`.
fn observed_entities(vocab: &Vocabulary, response: &[u32], results: usize, exclude: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut seen = 0;
    for &t in response {
        if t == RESULT_CLOSE_ID {
            seen += 1;
            if seen >= results {
                break;
            }
        }
        if t != exclude && vocab.class(t) == TokenClass::Entity && !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

struct DemoBuilder {
    tokens: Vec<u32>,
    mask: Vec<bool>,
}

impl DemoBuilder {
    fn agent(&mut self, ids: &[u32]) {
        self.tokens.extend_from_slice(ids);
        self.mask.extend(std::iter::repeat_n(true, ids.len()));
    }

    fn injected(&mut self, ids: &[u32]) {
        self.tokens.extend_from_slice(ids);
        self.mask.extend(std::iter::repeat_n(false, ids.len()));
    }

    fn thought(&mut self, vocab: &Vocabulary, rng: &mut ChaCha8Rng, extra: Option<u32>) {
        let word = vocab.id(THOUGHT_WORDS[rng.gen_range(0..THOUGHT_WORDS.len())]).expect("thought word");
        self.agent(&[THINK_OPEN_ID, word]);
        if let Some(e) = extra {
            self.agent(&[e]);
        }
        self.agent(&[THINK_CLOSE_ID]);
    }
}

/// One scripted demonstration for a random in-domain question shape.
pub fn demo_rollout(env: &Environment, cfg: &BaseConfig, seed: u64) -> Result<ScoredRollout, PolicyError> {
    let vocab = &env.vocab;
    let kg = &env.kg;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchor = &kg.entities[rng.gen_range(0..kg.holdout_start())].name;
    let hops = rng.gen_range(1..=3usize);
    let relations: Vec<&str> = (0..hops).map(|_| kg.relations[rng.gen_range(0..kg.relations.len())].as_str()).collect();
    let text = question_text(anchor, &relations, false);
    let prompt = vocab.encode_words(&text)?;
    let anchor_id = vocab.id(anchor).ok_or_else(|| PolicyError::UnknownToken(anchor.clone()))?;
    let relation_ids = vocab.encode_words(&relations.join(" "))?;

    let planned = rng.gen_bool(cfg.plan_prob);
    let calls = if planned { hops as u32 } else { rng.gen_range(0..=cfg.max_demo_calls) }.min(cfg.max_searches);
    let mut budget = SearchBudget::new(cfg.max_searches);
    let mut demo = DemoBuilder { tokens: Vec::new(), mask: Vec::new() };
    let mut entities = vec![anchor_id];
    let mention = rng.gen_bool(0.5).then_some(anchor_id);
    demo.thought(vocab, &mut rng, mention);
    for j in 0..calls as usize {
        let entity = *entities.choose(&mut rng).expect("entity");
        let mut call = vec![CALL_PREFIX_ID];
        if rng.gen_bool(0.8) {
            let relation = if j < hops && rng.gen_bool(cfg.plan_prob) {
                relation_ids[j]
            } else {
                *relation_ids.choose(&mut rng).expect("relation")
            };
            call.push(relation);
        }
        call.extend([entity, CALL_SUFFIX_ID]);
        demo.agent(&[CALL_OPEN_ID]);
        demo.agent(&call);
        demo.agent(&[CALL_CLOSE_ID]);
        let response = respond_to_call(env, &call, &mut budget)?;
        demo.injected(&response);
        let seen = observed_entities(vocab, &response, 3, entity);
        if !seen.is_empty() {
            entities = seen;
        }
        demo.thought(vocab, &mut rng, None);
    }
    let answer = *entities.choose(&mut rng).expect("entity");
    demo.agent(&[ANSWER_OPEN_ID, answer, ANSWER_CLOSE_ID]);

    let rendered = vocab.detokenize(&demo.tokens);
    let mut rollout = Rollout::from_text_lenient("demo", &text, &rendered);
    let n = demo.tokens.len();
    rollout.trace = Some(TokenTrace {
        prompt_ids: prompt,
        token_ids: demo.tokens,
        action_mask: demo.mask,
        log_probs: vec![0.0; n],
        temperature: 1.0,
        max_searches: cfg.max_searches,
    });
    Ok(ScoredRollout {
        reward: hybrid_reward(&rendered, "", RewardMode::Judge, &env.judge),
        tool_call_count: rollout.tool_call_count(),
        rollout,
        iteration_index: 0,
        seed,
        sequence: 0,
    })
}

/// Small random initialization fitted to `cfg.demos` demonstrations.
pub fn build_base(env: &Environment, arch: Architecture, cfg: &BaseConfig, seed: u64) -> Result<PolicyParams, RsftError> {
    arch.validate()?;
    if arch.v() != env.vocab.len() {
        return Err(PolicyError::ArchitectureMismatch("vocabulary size".into()).into());
    }
    let demos: Vec<ScoredRollout> = (0..cfg.demos)
        .into_par_iter()
        .map(|i| demo_rollout(env, cfg, derive_seed(seed, &[0, i as u64])))
        .collect::<Result<_, _>>()?;
    let init = PolicySnapshot::new(SnapshotRole::Base, PolicyParams::random(arch, cfg.init_scale, derive_seed(seed, &[1])));
    if demos.is_empty() {
        return Ok(init.thaw());
    }
    Ok(sft_train(&init, &env.vocab, &demos, &cfg.sft, derive_seed(seed, &[2]))?.params)
}
