//! Fixtures shared by the integration tests and the acceptance harness.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use searchloop_core::grammar::{
    FormatErrorKind, Observation, ObservedResult, Segment, ANSWER_CLOSE, ANSWER_OPEN, THINK_CLOSE, THINK_OPEN,
    TOOL_CALL_CLOSE, TOOL_CALL_OPEN, TOOL_RESPONSE_CLOSE, TOOL_RESPONSE_OPEN,
};
use searchloop_core::records::ScoredRollout;

const ALPHABET: &[&str] = &[
    "a", "b", "z", "Q", "0", "7", " ", "  ", "\n", "\t", "\"", "\\", "<", ">", "/", "{", "}", "[", "]", ",", ":",
    "é", "ß", "日本", "🙂", "think", "answer", "tool_call", "<thin", "answer>", "</", "\u{0}",
];

const TAGS: [&str; 8] = [
    THINK_OPEN, THINK_CLOSE, TOOL_CALL_OPEN, TOOL_CALL_CLOSE, TOOL_RESPONSE_OPEN, TOOL_RESPONSE_CLOSE, ANSWER_OPEN, ANSWER_CLOSE,
];

/// Random text that is a legal payload: not blank and free of tag literals.
pub fn payload<R: Rng>(rng: &mut R) -> String {
    loop {
        let n = rng.gen_range(1..12);
        let s: String = (0..n).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect();
        let has_tag = TAGS.iter().any(|t| s.contains(t));
        if !s.trim().is_empty() && !has_tag {
            return s;
        }
    }
}

fn observation<R: Rng>(rng: &mut R) -> Observation {
    if rng.gen_bool(0.2) {
        return Observation::Notice(payload(rng));
    }
    let n = rng.gen_range(0..4);
    Observation::Results((0..n).map(|_| ObservedResult { title: payload(rng), snippet: payload(rng) }).collect())
}

/// A grammar-valid segment list with `cycles` search cycles.
pub fn valid_segments<R: Rng>(rng: &mut R, cycles: usize) -> Vec<Segment> {
    let mut segs = Vec::with_capacity(3 * cycles + 2);
    for _ in 0..cycles {
        segs.push(Segment::Thought(payload(rng)));
        let q = rng.gen_range(1..4);
        segs.push(Segment::search((0..q).map(|_| payload(rng)).collect::<Vec<_>>()));
        segs.push(Segment::ToolResponse(observation(rng)));
    }
    segs.push(Segment::Thought(payload(rng)));
    segs.push(Segment::Answer(payload(rng)));
    segs
}

/// Malformed rollout texts with the violation each must be rejected for.
pub fn malformed_corpus() -> Vec<(String, FormatErrorKind)> {
    use FormatErrorKind::*;
    let t = "<think>x</think>";
    let a = "<answer>y</answer>";
    let c = r#"<tool_call>{"name": "web_search", "arguments": {"queries": ["q"]}}</tool_call>"#;
    let r = r#"<tool_response>{"name": "web_search", "content": {"results": []}}</tool_response>"#;
    let call = |p: &str| format!("{t}<tool_call>{p}</tool_call>{r}{t}{a}");
    let resp = |p: &str| format!("{t}{c}<tool_response>{p}</tool_response>{t}{a}");
    vec![
        (String::new(), MissingAnswer),
        (a.to_string(), WrongOrder),
        (t.to_string(), MissingAnswer),
        (format!("{t}{t}{a}"), WrongOrder),
        (format!("{t}{c}"), WrongOrder),
        (format!("{t}{c}{t}{a}"), WrongOrder),
        (format!("{t}{c}{r}{a}"), WrongOrder),
        (format!("{t}{r}{t}{a}"), WrongOrder),
        (format!("{t}{a}{a}"), TrailingContent),
        (format!("{t}{a} trailing"), TrailingContent),
        (format!("lead {t}{a}"), TrailingContent),
        (format!("{t}gap{a}"), TrailingContent),
        ("<think>x<answer>y</answer>".to_string(), UnbalancedTag),
        ("<think>x".to_string(), UnbalancedTag),
        (format!("</think>{a}"), UnbalancedTag),
        (format!("{t}<answer>y</think>"), UnbalancedTag),
        (format!("<think>\n </think>{a}"), EmptyPayload),
        (format!("{t}<answer></answer>"), EmptyPayload),
        (call(r#"{"name": "web_search", "arguments": {"queries": []}}"#), MalformedToolCall),
        (call(r#"{"name": "calculator", "arguments": {"queries": ["q"]}}"#), MalformedToolCall),
        (call(r#"{"name": "web_search", "arguments": {"queries": [" "]}}"#), MalformedToolCall),
        (call("search(q)"), MalformedToolCall),
        (resp(r#"{"name": "web_search", "content": {}}"#), MalformedToolResponse),
        (resp("plain text"), MalformedToolResponse),
    ]
}

/// Record fixture for filter tests.
pub fn record(qid: &str, total: f64, calls: usize, iteration: u32, sequence: u64) -> ScoredRollout {
    use searchloop_core::grammar::Rollout;
    use searchloop_core::reward::{RewardBreakdown, RewardMode};
    let format = if total > 0.0 { 1.0 } else { 0.0 };
    ScoredRollout {
        rollout: Rollout::from_text_lenient(qid, "q", "<think>t</think><answer>a</answer>"),
        reward: RewardBreakdown {
            format_reward: format,
            answer_reward: (2.0 * total - format).max(0.0),
            total,
            mode: RewardMode::F1,
            answer_evaluated: format > 0.0,
        },
        tool_call_count: calls,
        iteration_index: iteration,
        seed: sequence,
        sequence,
    }
}

/// Random pool of at most `max` records over a handful of question ids.
pub fn random_pool<R: Rng>(rng: &mut R, max: usize) -> Vec<ScoredRollout> {
    let n = rng.gen_range(0..=max);
    let qids = rng.gen_range(1..12);
    let mut iteration = 1;
    (0..n)
        .map(|i| {
            if rng.gen_bool(0.2) {
                iteration += 1;
            }
            let total = [0.0, 0.5, 0.7, 0.75, 1.0][rng.gen_range(0..5)];
            record(&format!("q{}", rng.gen_range(0..qids)), total, rng.gen_range(0..5), iteration, i as u64)
        })
        .collect()
}

/// Independent composition of the three filter rules: threshold, then the
/// per-question best record, then the global top `k`. Ties prefer more
/// calls, then a later iteration, then an earlier append.
pub fn brute_force_filter(pool: &[ScoredRollout], threshold: f64, k: usize) -> Vec<ScoredRollout> {
    let key = |r: &ScoredRollout| (std::cmp::Reverse(r.tool_call_count), std::cmp::Reverse(r.iteration_index), r.sequence);
    let mut groups: BTreeMap<&str, Vec<&ScoredRollout>> = BTreeMap::new();
    for r in pool.iter().filter(|r| r.reward.total >= threshold) {
        groups.entry(r.question_id()).or_default().push(r);
    }
    let mut best: Vec<&ScoredRollout> = groups.values().map(|g| *g.iter().min_by_key(|r| key(r)).unwrap()).collect();
    best.sort_by_key(|r| key(r));
    best.into_iter().take(k).cloned().collect()
}
