//! Forward pass, log-probabilities and exact backpropagation.

use super::context::ContextState;
use super::vocab::{TokenClass, Vocabulary, CALL_OPEN_ID};
use super::{PolicyError, PolicyParams};
use crate::grammar::TokenTrace;

/// Decoding settings that shape the next-token distribution.
///
/// Once `max_searches` tool calls have been opened, `<tool_call>` is removed
/// from the support, so sampled trajectories never exceed the search budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoding {
    pub temperature: f64,
    pub max_searches: u32,
}

impl Decoding {
    pub fn new(temperature: f64, max_searches: u32) -> Result<Self, PolicyError> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(PolicyError::InvalidTemperature(temperature));
        }
        Ok(Self { temperature, max_searches })
    }

    pub fn for_trace(trace: &TokenTrace) -> Result<Self, PolicyError> {
        Self::new(trace.temperature, trace.max_searches)
    }

    fn banned(&self, state: &ContextState<'_>) -> Option<u32> {
        (state.call_count() >= self.max_searches).then_some(CALL_OPEN_ID)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reusable buffers for one decoding step.
#[derive(Debug, Clone, Default)]
pub(crate) struct Scratch {
    pub active: Vec<u32>,
    pub copies: Vec<(u32, u32)>,
    pub h: Vec<f64>,
    pub z: Vec<f64>,
}

/// Raw (untempered) logits for the current state; fills `s.h` and `s.z`.
pub(crate) fn logits(params: &PolicyParams, state: &ContextState<'_>, s: &mut Scratch) {
    let arch = params.arch;
    let lay = arch.layout();
    let (hd, v) = (arch.h(), arch.v());
    let w = &params.values;
    state.features(&mut s.active, &mut s.copies);
    s.h.clear();
    s.h.extend_from_slice(&w[lay.b1..lay.b1 + hd]);
    for &f in &s.active {
        let row = &w[lay.w1 + f as usize * hd..][..hd];
        for (a, r) in s.h.iter_mut().zip(row) {
            *a += r;
        }
    }
    for a in s.h.iter_mut() {
        *a = a.tanh();
    }
    s.z.clear();
    s.z.extend((0..v).map(|t| w[lay.b2 + t] + dot(&w[lay.w2 + t * hd..][..hd], &s.h)));
    for &(slot, t) in &s.copies {
        let gate = &w[lay.copy_gate + slot as usize * hd..][..hd];
        s.z[t as usize] += w[lay.copy_bias + slot as usize] + dot(gate, &s.h);
    }
}

/// Tempered softmax of `z` into `p`, excluding `banned`. Returns `(max, log_sum)`
/// so that `log p[t] = z[t] / T - max - log_sum`.
fn softmax(z: &[f64], temperature: f64, banned: Option<u32>, p: &mut Vec<f64>) -> (f64, f64) {
    let allowed = |t: usize| banned != Some(t as u32);
    let max = z
        .iter()
        .enumerate()
        .filter(|(t, _)| allowed(*t))
        .map(|(_, &x)| x / temperature)
        .fold(f64::NEG_INFINITY, f64::max);
    p.clear();
    p.extend(z.iter().enumerate().map(|(t, &x)| if allowed(t) { (x / temperature - max).exp() } else { 0.0 }));
    let sum: f64 = p.iter().sum();
    for x in p.iter_mut() {
        *x /= sum;
    }
    (max, sum.ln())
}

/// Index of the largest allowed logit; ties go to the lowest id.
pub(crate) fn argmax_allowed(z: &[f64], banned: Option<u32>) -> u32 {
    let mut best = None::<(usize, f64)>;
    for (t, &x) in z.iter().enumerate() {
        if banned == Some(t as u32) {
            continue;
        }
        if best.is_none_or(|(_, b)| x > b) {
            best = Some((t, x));
        }
    }
    best.expect("vocabulary has an allowed token").0 as u32
}

/// Distribution and log-probability helper used by the sampler.
pub(crate) fn step_distribution(
    params: &PolicyParams,
    state: &ContextState<'_>,
    decoding: &Decoding,
    s: &mut Scratch,
    p: &mut Vec<f64>,
) -> (f64, f64) {
    logits(params, state, s);
    softmax(&s.z, decoding.temperature, decoding.banned(state), p)
}

pub(crate) fn banned_token(state: &ContextState<'_>, decoding: &Decoding) -> Option<u32> {
    decoding.banned(state)
}

/// Next-token distribution over the whole vocabulary (no decoding constraint).
pub fn next_token_distribution(
    params: &PolicyParams,
    vocab: &Vocabulary,
    prompt: &[u32],
    trajectory: &[u32],
    temperature: f64,
) -> Result<Vec<f64>, PolicyError> {
    params.check_vocab(vocab)?;
    Decoding::new(temperature, u32::MAX)?;
    let mut state = ContextState::new(params.arch, vocab.classes(), prompt)?;
    for &t in trajectory {
        state.push(t)?;
    }
    let mut s = Scratch::default();
    let mut p = Vec::new();
    logits(params, &state, &mut s);
    softmax(&s.z, temperature, None, &mut p);
    Ok(p)
}

#[derive(Debug, Clone)]
struct StepCache {
    token: u32,
    active: Vec<u32>,
    copies: Vec<(u32, u32)>,
    h: Vec<f64>,
    p: Vec<f64>,
}

/// Cached forward pass over the agent tokens of a trajectory.
#[derive(Debug, Clone)]
pub struct TraceForward {
    steps: Vec<StepCache>,
    pub log_probs: Vec<f64>,
    temperature: f64,
}

impl TraceForward {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Runs the policy over `tokens`, scoring only positions where `mask` is set.
pub fn forward_trace(
    params: &PolicyParams,
    classes: &[TokenClass],
    prompt: &[u32],
    tokens: &[u32],
    mask: &[bool],
    decoding: &Decoding,
) -> Result<TraceForward, PolicyError> {
    forward_teacher_forced(params, classes, prompt, tokens, tokens, mask, decoding)
}

/// Like [`forward_trace`], but the conditioning stream `context` and the
/// scored stream `targets` are given separately: position `t` is scored as
/// `targets[t]` given `context[..t]`. Unmasked targets are never read.
pub fn forward_teacher_forced(
    params: &PolicyParams,
    classes: &[TokenClass],
    prompt: &[u32],
    context: &[u32],
    targets: &[u32],
    mask: &[bool],
    decoding: &Decoding,
) -> Result<TraceForward, PolicyError> {
    if classes.len() != params.arch.v() {
        return Err(PolicyError::ArchitectureMismatch("vocabulary size".into()));
    }
    for len in [mask.len(), targets.len()] {
        if len != context.len() {
            return Err(PolicyError::WeightLength { expected: context.len(), got: len });
        }
    }
    let mut state = ContextState::new(params.arch, classes, prompt)?;
    let mut s = Scratch::default();
    let mut steps = Vec::new();
    let mut log_probs = Vec::new();
    for ((&c, &t), &agent) in context.iter().zip(targets).zip(mask) {
        if agent {
            if t as usize >= classes.len() {
                return Err(PolicyError::UnknownToken(t.to_string()));
            }
            let banned = decoding.banned(&state);
            if banned == Some(t) {
                return Err(PolicyError::BannedToken(t));
            }
            let mut p = Vec::with_capacity(classes.len());
            logits(params, &state, &mut s);
            let (max, log_sum) = softmax(&s.z, decoding.temperature, banned, &mut p);
            log_probs.push(s.z[t as usize] / decoding.temperature - max - log_sum);
            steps.push(StepCache {
                token: t,
                active: s.active.clone(),
                copies: s.copies.clone(),
                h: s.h.clone(),
                p,
            });
        }
        state.push(c)?;
    }
    Ok(TraceForward { steps, log_probs, temperature: decoding.temperature })
}

/// Adds the gradient of `sum_t weights[t] * log p_t` to `grad`.
pub fn backward_trace(
    params: &PolicyParams,
    fwd: &TraceForward,
    weights: &[f64],
    grad: &mut [f64],
) -> Result<(), PolicyError> {
    if weights.len() != fwd.steps.len() {
        return Err(PolicyError::WeightLength { expected: fwd.steps.len(), got: weights.len() });
    }
    if grad.len() != params.values.len() {
        return Err(PolicyError::ArchitectureMismatch("gradient length".into()));
    }
    let arch = params.arch;
    let lay = arch.layout();
    let (hd, v) = (arch.h(), arch.v());
    let w = &params.values;
    let mut dz = vec![0.0; v];
    let mut dh = vec![0.0; hd];
    for (step, &wt) in fwd.steps.iter().zip(weights) {
        if wt == 0.0 {
            continue;
        }
        let scale = wt / fwd.temperature;
        for (d, &p) in dz.iter_mut().zip(&step.p) {
            *d = -scale * p;
        }
        dz[step.token as usize] += scale;
        dh.iter_mut().for_each(|x| *x = 0.0);
        for (t, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad[lay.b2 + t] += d;
            let row = &w[lay.w2 + t * hd..][..hd];
            let grow = &mut grad[lay.w2 + t * hd..][..hd];
            for k in 0..hd {
                grow[k] += d * step.h[k];
                dh[k] += d * row[k];
            }
        }
        for &(slot, t) in &step.copies {
            let d = dz[t as usize];
            let slot = slot as usize;
            grad[lay.copy_bias + slot] += d;
            let gate = &w[lay.copy_gate + slot * hd..][..hd];
            let grow = &mut grad[lay.copy_gate + slot * hd..][..hd];
            for k in 0..hd {
                grow[k] += d * step.h[k];
                dh[k] += d * gate[k];
            }
        }
        for k in 0..hd {
            dh[k] *= 1.0 - step.h[k] * step.h[k];
            grad[lay.b1 + k] += dh[k];
        }
        for &f in &step.active {
            let grow = &mut grad[lay.w1 + f as usize * hd..][..hd];
            for k in 0..hd {
                grow[k] += dh[k];
            }
        }
    }
    Ok(())
}

fn trace_forward(params: &PolicyParams, vocab: &Vocabulary, trace: &TokenTrace) -> Result<TraceForward, PolicyError> {
    params.check_vocab(vocab)?;
    forward_trace(
        params,
        vocab.classes(),
        &trace.prompt_ids,
        &trace.token_ids,
        &trace.action_mask,
        &Decoding::for_trace(trace)?,
    )
}

/// Log-probability of every agent token under `params`, at the trace's
/// temperature and search budget.
pub fn sequence_log_probs(params: &PolicyParams, vocab: &Vocabulary, trace: &TokenTrace) -> Result<Vec<f64>, PolicyError> {
    Ok(trace_forward(params, vocab, trace)?.log_probs)
}

/// Exact gradient of `sum_t weights[t] * log p_t` over agent tokens.
pub fn grad_weighted_log_probs(
    params: &PolicyParams,
    vocab: &Vocabulary,
    trace: &TokenTrace,
    weights: &[f64],
) -> Result<Vec<f64>, PolicyError> {
    let fwd = trace_forward(params, vocab, trace)?;
    let mut grad = vec![0.0; params.values.len()];
    backward_trace(params, &fwd, weights, &mut grad)?;
    Ok(grad)
}
