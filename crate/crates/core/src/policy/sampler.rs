//! Agent loop: decode tokens, execute completed tool calls, inject responses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::context::ContextState;
use super::model::{argmax_allowed, banned_token, step_distribution, Decoding, Scratch};
use super::vocab::*;
use super::{PolicyError, PolicyParams};
use crate::env::{Environment, Question, SearchBudget, SearchResult};
use crate::grammar::{parse_call_payload, Rollout, TokenTrace};

/// Anything that can answer a question inside the environment.
pub trait Agent: Sync {
    fn act(&self, question: &Question, env: &Environment, max_searches: u32) -> Result<Rollout, PolicyError>;
}

impl Agent for PolicyParams {
    fn act(&self, question: &Question, env: &Environment, max_searches: u32) -> Result<Rollout, PolicyError> {
        greedy_rollout(self, question, env, max_searches)
    }
}

enum Chooser<'r> {
    Sample(&'r mut ChaCha8Rng),
    Greedy,
}

fn push_words(vocab: &Vocabulary, text: &str, out: &mut Vec<u32>) -> Result<(), PolicyError> {
    out.extend(vocab.encode_words(text)?);
    Ok(())
}

/// Response tokens for a list of search results.
pub fn encode_results(vocab: &Vocabulary, results: &[SearchResult]) -> Result<Vec<u32>, PolicyError> {
    let mut out = vec![RESPONSE_OPEN_ID, RESPONSE_PREFIX_ID];
    for (i, r) in results.iter().enumerate() {
        if i > 0 {
            out.push(RESULT_SEP_ID);
        }
        out.push(RESULT_OPEN_ID);
        push_words(vocab, &r.title, &mut out)?;
        out.push(RESULT_MID_ID);
        push_words(vocab, &r.snippet, &mut out)?;
        out.push(RESULT_CLOSE_ID);
    }
    out.extend([RESPONSE_SUFFIX_ID, RESPONSE_CLOSE_ID]);
    Ok(out)
}

/// Executes the call whose payload tokens are `call` and returns the
/// injected response tokens.
pub fn respond_to_call(env: &Environment, call: &[u32], budget: &mut SearchBudget) -> Result<Vec<u32>, PolicyError> {
    let body = env.vocab.detokenize(call);
    let Some(queries) = parse_call_payload(&body) else {
        return Ok(vec![RESPONSE_OPEN_ID, NOTICE_MALFORMED_ID, RESPONSE_CLOSE_ID]);
    };
    match env.index.web_search_many(&queries, env.top_k, budget) {
        Ok(results) => encode_results(&env.vocab, &results),
        Err(_) => Ok(vec![RESPONSE_OPEN_ID, NOTICE_BUDGET_ID, RESPONSE_CLOSE_ID]),
    }
}

fn draw(p: &[f64], u: f64) -> u32 {
    let mut acc = 0.0;
    let mut last = 0;
    for (t, &x) in p.iter().enumerate() {
        if x > 0.0 {
            acc += x;
            last = t;
            if u < acc {
                return t as u32;
            }
        }
    }
    last as u32
}

fn run_episode(
    params: &PolicyParams,
    question: &Question,
    env: &Environment,
    decoding: Decoding,
    mut chooser: Chooser<'_>,
) -> Result<Rollout, PolicyError> {
    let vocab = &env.vocab;
    params.check_vocab(vocab)?;
    let prompt = vocab.encode_words(&question.text)?;
    let mut state = ContextState::new(params.arch, vocab.classes(), &prompt)?;
    let mut budget = SearchBudget::new(decoding.max_searches);
    let mut s = Scratch::default();
    let mut p = Vec::with_capacity(vocab.len());
    let (mut tokens, mut mask, mut log_probs) = (Vec::new(), Vec::new(), Vec::new());
    while !state.is_full() {
        let (max, log_sum) = step_distribution(params, &state, &decoding, &mut s, &mut p);
        let y = match &mut chooser {
            Chooser::Sample(rng) => draw(&p, rng.gen::<f64>()),
            Chooser::Greedy => argmax_allowed(&s.z, banned_token(&state, &decoding)),
        };
        state.push(y)?;
        tokens.push(y);
        mask.push(true);
        log_probs.push(s.z[y as usize] / decoding.temperature - max - log_sum);
        if y == ANSWER_CLOSE_ID || y == EOS_ID {
            break;
        }
        if let Some(range) = state.closed_call() {
            let call = state.trajectory()[range].to_vec();
            for t in respond_to_call(env, &call, &mut budget)? {
                if state.is_full() {
                    break;
                }
                state.push(t)?;
                tokens.push(t);
                mask.push(false);
                log_probs.push(0.0);
            }
        }
    }
    let text = vocab.detokenize(&tokens);
    let mut rollout = Rollout::from_text_lenient(&question.id, &question.text, &text);
    rollout.trace = Some(TokenTrace {
        prompt_ids: prompt,
        token_ids: tokens,
        action_mask: mask,
        log_probs,
        temperature: decoding.temperature,
        max_searches: decoding.max_searches,
    });
    Ok(rollout)
}

/// Samples one trajectory at `temperature`; fully determined by the inputs.
pub fn sample_rollout(
    params: &PolicyParams,
    question: &Question,
    env: &Environment,
    temperature: f64,
    max_searches: u32,
    seed: u64,
) -> Result<Rollout, PolicyError> {
    let decoding = Decoding::new(temperature, max_searches)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_episode(params, question, env, decoding, Chooser::Sample(&mut rng))
}

/// Argmax decoding; recorded log-probabilities are at temperature 1.
pub fn greedy_rollout(
    params: &PolicyParams,
    question: &Question,
    env: &Environment,
    max_searches: u32,
) -> Result<Rollout, PolicyError> {
    run_episode(params, question, env, Decoding::new(1.0, max_searches)?, Chooser::Greedy)
}
