//! Rollout data model and the tagged text format.
//!
//! A rollout is zero or more `(thought, tool call, tool response)` cycles
//! followed by one final thought and one answer:
//!
//! ```text
//! <think>...</think>
//! <tool_call>{"name": "web_search", "arguments": {"queries": ["..."]}}</tool_call>
//! <tool_response>{"name": "web_search", "content": {"results": [...]}}</tool_response>
//! <think>...</think>
//! <answer>...</answer>
//! ```
//!
//! The parser is strict: stray text outside blocks, unbalanced or misordered
//! tags, and tool payloads that are not exactly the expected JSON shape are
//! all rejected. Whitespace between blocks is ignored.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const TOOL_CALL_OPEN: &str = "<tool_call>";
pub const TOOL_CALL_CLOSE: &str = "</tool_call>";
pub const TOOL_RESPONSE_OPEN: &str = "<tool_response>";
pub const TOOL_RESPONSE_CLOSE: &str = "</tool_response>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

/// The only tool the agent may call.
pub const TOOL_NAME: &str = "web_search";

pub(crate) const CALL_PREFIX: &str = r#"{"name": "web_search", "arguments": {"queries": ["#;
pub(crate) const CALL_SUFFIX: &str = "]}}";
pub(crate) const RESPONSE_PREFIX: &str = r#"{"name": "web_search", "content": {"results": ["#;
pub(crate) const RESPONSE_SUFFIX: &str = "]}}";
pub(crate) const RESULT_TITLE: &str = r#"{"title": "#;
pub(crate) const RESULT_SNIPPET: &str = r#", "snippet": "#;
pub(crate) const RESULT_END: &str = "}";
pub(crate) const LIST_SEP: &str = ", ";
pub(crate) const NOTICE_PREFIX: &str = r#"{"name": "web_search", "content": {"error": "#;
pub(crate) const NOTICE_SUFFIX: &str = "}}";

/// One title/snippet pair as it appears inside a tool response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedResult {
    pub title: String,
    pub snippet: String,
}

/// Payload of a tool response block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Observation {
    Results(Vec<ObservedResult>),
    /// The environment declined the call (budget exhausted, malformed call).
    Notice(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentKind {
    Thought,
    ToolCall,
    ToolResponse,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Thought(String),
    ToolCall { name: String, queries: Vec<String> },
    ToolResponse(Observation),
    Answer(String),
}

impl Segment {
    pub fn kind(&self) -> SegmentKind {
        match self {
            Segment::Thought(_) => SegmentKind::Thought,
            Segment::ToolCall { .. } => SegmentKind::ToolCall,
            Segment::ToolResponse(_) => SegmentKind::ToolResponse,
            Segment::Answer(_) => SegmentKind::Answer,
        }
    }

    pub fn search(queries: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Segment::ToolCall {
            name: TOOL_NAME.to_string(),
            queries: queries.into_iter().map(Into::into).collect(),
        }
    }
}

/// A question together with its trajectory.
///
/// `segments` is empty when `format_error` is set. `trace` is present when the
/// rollout was produced by the policy; it holds the token-level view used for
/// training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub question_id: String,
    pub question_text: String,
    pub text: String,
    pub segments: Vec<Segment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_error: Option<FormatError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TokenTrace>,
}

/// Token-level record of a sampled trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTrace {
    /// Tokenized question the policy conditions on.
    pub prompt_ids: Vec<u32>,
    pub token_ids: Vec<u32>,
    /// `true` iff the token was generated by the agent.
    pub action_mask: Vec<bool>,
    /// Log-probability under the sampling policy; `0.0` for injected tokens.
    pub log_probs: Vec<f64>,
    pub temperature: f64,
    pub max_searches: u32,
}

impl TokenTrace {
    pub fn agent_token_count(&self) -> usize {
        self.action_mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FormatErrorKind {
    UnbalancedTag,
    WrongOrder,
    TrailingContent,
    MalformedToolCall,
    MalformedToolResponse,
    EmptyPayload,
    MissingAnswer,
}

/// First grammar violation found in a rollout text; `position` is a byte offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{kind:?} at byte {position}")]
pub struct FormatError {
    pub kind: FormatErrorKind,
    pub position: usize,
}

impl FormatError {
    fn at(kind: FormatErrorKind, position: usize) -> Self {
        Self { kind, position }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("invalid rollout structure at segment {index}: {reason}")]
    InvalidStructure { index: usize, reason: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    ThinkOpen,
    ThinkClose,
    CallOpen,
    CallClose,
    ResponseOpen,
    ResponseClose,
    AnswerOpen,
    AnswerClose,
}

const TAGS: [(Tag, &str); 8] = [
    (Tag::ThinkOpen, THINK_OPEN),
    (Tag::ThinkClose, THINK_CLOSE),
    (Tag::CallOpen, TOOL_CALL_OPEN),
    (Tag::CallClose, TOOL_CALL_CLOSE),
    (Tag::ResponseOpen, TOOL_RESPONSE_OPEN),
    (Tag::ResponseClose, TOOL_RESPONSE_CLOSE),
    (Tag::AnswerOpen, ANSWER_OPEN),
    (Tag::AnswerClose, ANSWER_CLOSE),
];

impl Tag {
    fn closing(self) -> Option<Tag> {
        match self {
            Tag::ThinkOpen => Some(Tag::ThinkClose),
            Tag::CallOpen => Some(Tag::CallClose),
            Tag::ResponseOpen => Some(Tag::ResponseClose),
            Tag::AnswerOpen => Some(Tag::AnswerClose),
            _ => None,
        }
    }
}

fn contains_tag(s: &str) -> bool {
    TAGS.iter().any(|(_, t)| s.contains(t))
}

/// Finds the next tag at or after `from`, returning `(tag, start, end)`.
fn next_tag(text: &str, from: usize) -> Option<(Tag, usize, usize)> {
    let bytes = text.as_bytes();
    let mut i = from;
    while let Some(off) = text[i..].find('<') {
        let start = i + off;
        for (tag, lit) in TAGS {
            if bytes[start..].starts_with(lit.as_bytes()) {
                return Some((tag, start, start + lit.len()));
            }
        }
        i = start + 1;
    }
    None
}

fn first_non_ws(text: &str, from: usize, to: usize) -> Option<usize> {
    text[from..to]
        .char_indices()
        .find(|(_, c)| !c.is_whitespace())
        .map(|(i, _)| from + i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Expect {
    Start,
    AfterThought,
    AfterCall,
    AfterResponse,
    Done,
}

/// Parses a rollout text into its segments.
pub fn parse_rollout(text: &str) -> Result<Vec<Segment>, FormatError> {
    use FormatErrorKind::*;
    let mut segments = Vec::new();
    let mut state = Expect::Start;
    let mut pos = 0;
    loop {
        let Some((tag, start, end)) = next_tag(text, pos) else {
            if let Some(p) = first_non_ws(text, pos, text.len()) {
                return Err(FormatError::at(TrailingContent, p));
            }
            return match state {
                Expect::Done => Ok(segments),
                Expect::AfterCall => Err(FormatError::at(WrongOrder, text.len())),
                _ => Err(FormatError::at(MissingAnswer, text.len())),
            };
        };
        if let Some(p) = first_non_ws(text, pos, start) {
            return Err(FormatError::at(TrailingContent, p));
        }
        let Some(close) = tag.closing() else {
            return Err(FormatError::at(UnbalancedTag, start));
        };
        let allowed = match state {
            Expect::Start | Expect::AfterResponse => tag == Tag::ThinkOpen,
            Expect::AfterThought => matches!(tag, Tag::CallOpen | Tag::AnswerOpen),
            Expect::AfterCall => tag == Tag::ResponseOpen,
            Expect::Done => return Err(FormatError::at(TrailingContent, start)),
        };
        if !allowed {
            return Err(FormatError::at(WrongOrder, start));
        }
        let (found, cstart, cend) =
            next_tag(text, end).ok_or(FormatError::at(UnbalancedTag, start))?;
        if found != close {
            return Err(FormatError::at(UnbalancedTag, cstart));
        }
        let body = &text[end..cstart];
        let segment = match tag {
            Tag::ThinkOpen | Tag::AnswerOpen => {
                if body.trim().is_empty() {
                    return Err(FormatError::at(EmptyPayload, end));
                }
                if tag == Tag::ThinkOpen {
                    Segment::Thought(body.to_string())
                } else {
                    Segment::Answer(body.to_string())
                }
            }
            Tag::CallOpen => {
                let queries =
                    parse_call_payload(body).ok_or(FormatError::at(MalformedToolCall, end))?;
                Segment::ToolCall { name: TOOL_NAME.to_string(), queries }
            }
            Tag::ResponseOpen => Segment::ToolResponse(
                parse_response_payload(body).ok_or(FormatError::at(MalformedToolResponse, end))?,
            ),
            _ => unreachable!("only opening tags reach here"),
        };
        state = match tag {
            Tag::ThinkOpen => Expect::AfterThought,
            Tag::CallOpen => Expect::AfterCall,
            Tag::ResponseOpen => Expect::AfterResponse,
            _ => Expect::Done,
        };
        segments.push(segment);
        pos = cend;
    }
}

fn object_with_keys<'a>(
    v: &'a Value,
    keys: &[&str],
) -> Option<&'a serde_json::Map<String, Value>> {
    let obj = v.as_object()?;
    (obj.len() == keys.len() && keys.iter().all(|k| obj.contains_key(*k))).then_some(obj)
}

pub(crate) fn parse_call_payload(body: &str) -> Option<Vec<String>> {
    let v: Value = serde_json::from_str(body.trim()).ok()?;
    let obj = object_with_keys(&v, &["name", "arguments"])?;
    if obj["name"].as_str()? != TOOL_NAME {
        return None;
    }
    let args = object_with_keys(&obj["arguments"], &["queries"])?;
    let list = args["queries"].as_array()?;
    if list.is_empty() {
        return None;
    }
    list.iter()
        .map(|q| q.as_str().filter(|s| !s.trim().is_empty()).map(str::to_string))
        .collect()
}

fn parse_response_payload(body: &str) -> Option<Observation> {
    let v: Value = serde_json::from_str(body.trim()).ok()?;
    let obj = object_with_keys(&v, &["name", "content"])?;
    if obj["name"].as_str()? != TOOL_NAME {
        return None;
    }
    let content = obj["content"].as_object()?;
    if content.len() != 1 {
        return None;
    }
    if let Some(msg) = content.get("error") {
        return Some(Observation::Notice(msg.as_str()?.to_string()));
    }
    let results = content.get("results")?.as_array()?;
    results
        .iter()
        .map(|r| {
            let r = object_with_keys(r, &["title", "snippet"])?;
            Some(ObservedResult {
                title: r["title"].as_str()?.to_string(),
                snippet: r["snippet"].as_str()?.to_string(),
            })
        })
        .collect::<Option<Vec<_>>>()
        .map(Observation::Results)
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

pub(crate) fn render_call_payload(queries: &[String]) -> String {
    let body: Vec<String> = queries.iter().map(|q| json_str(q)).collect();
    format!("{CALL_PREFIX}{}{CALL_SUFFIX}", body.join(LIST_SEP))
}

pub(crate) fn render_observation(obs: &Observation) -> String {
    match obs {
        Observation::Results(results) => {
            let body: Vec<String> = results
                .iter()
                .map(|r| {
                    format!(
                        "{RESULT_TITLE}{}{RESULT_SNIPPET}{}{RESULT_END}",
                        json_str(&r.title),
                        json_str(&r.snippet)
                    )
                })
                .collect();
            format!("{RESPONSE_PREFIX}{}{RESPONSE_SUFFIX}", body.join(LIST_SEP))
        }
        Observation::Notice(msg) => format!("{NOTICE_PREFIX}{}{NOTICE_SUFFIX}", json_str(msg)),
    }
}

/// Checks the segment-order and payload invariants of a rollout.
pub fn validate_segments(segments: &[Segment]) -> Result<(), GrammarError> {
    let bad = |index, reason| Err(GrammarError::InvalidStructure { index, reason });
    if segments.len() < 2 {
        return bad(segments.len(), "a rollout ends with a thought and an answer");
    }
    let n = segments.len();
    if !(n - 2).is_multiple_of(3) {
        return bad(n - 1, "incomplete search cycle");
    }
    for (i, seg) in segments.iter().enumerate() {
        let expected = if i == n - 1 {
            SegmentKind::Answer
        } else if i == n - 2 {
            SegmentKind::Thought
        } else {
            [SegmentKind::Thought, SegmentKind::ToolCall, SegmentKind::ToolResponse][i % 3]
        };
        if seg.kind() != expected {
            return bad(i, "segments out of grammar order");
        }
        match seg {
            Segment::Thought(t) | Segment::Answer(t) => {
                if t.trim().is_empty() {
                    return bad(i, "empty payload");
                }
                if contains_tag(t) {
                    return bad(i, "payload contains a tag");
                }
            }
            Segment::ToolCall { name, queries } => {
                if name != TOOL_NAME {
                    return bad(i, "unknown tool");
                }
                if queries.is_empty() || queries.iter().any(|q| q.trim().is_empty()) {
                    return bad(i, "tool call needs non-empty queries");
                }
                if queries.iter().any(|q| contains_tag(q)) {
                    return bad(i, "payload contains a tag");
                }
            }
            Segment::ToolResponse(obs) => {
                let text = render_observation(obs);
                if contains_tag(&text) {
                    return bad(i, "payload contains a tag");
                }
            }
        }
    }
    Ok(())
}

/// Renders segments in the canonical form: one newline between blocks.
pub fn render_segments(segments: &[Segment]) -> Result<String, GrammarError> {
    validate_segments(segments)?;
    let blocks: Vec<String> = segments
        .iter()
        .map(|seg| match seg {
            Segment::Thought(t) => format!("{THINK_OPEN}{t}{THINK_CLOSE}"),
            Segment::ToolCall { queries, .. } => {
                format!("{TOOL_CALL_OPEN}{}{TOOL_CALL_CLOSE}", render_call_payload(queries))
            }
            Segment::ToolResponse(obs) => {
                format!("{TOOL_RESPONSE_OPEN}{}{TOOL_RESPONSE_CLOSE}", render_observation(obs))
            }
            Segment::Answer(a) => format!("{ANSWER_OPEN}{a}{ANSWER_CLOSE}"),
        })
        .collect();
    Ok(blocks.join("\n"))
}

pub fn render_rollout(rollout: &Rollout) -> Result<String, GrammarError> {
    render_segments(&rollout.segments)
}

/// Format reward: `1.0` iff the text parses.
pub fn check_format(text: &str) -> f64 {
    if parse_rollout(text).is_ok() {
        1.0
    } else {
        0.0
    }
}

pub fn count_tool_calls(segments: &[Segment]) -> usize {
    segments
        .iter()
        .filter(|s| s.kind() == SegmentKind::ToolCall)
        .count()
}

/// The answer payload, if the segments end in one.
pub fn answer_of(segments: &[Segment]) -> Option<&str> {
    match segments.last() {
        Some(Segment::Answer(a)) => Some(a),
        _ => None,
    }
}

impl Rollout {
    pub fn from_text(
        question_id: impl Into<String>,
        question_text: impl Into<String>,
        text: &str,
    ) -> Result<Self, FormatError> {
        let segments = parse_rollout(text)?;
        Ok(Self {
            question_id: question_id.into(),
            question_text: question_text.into(),
            text: text.to_string(),
            segments,
            format_error: None,
            trace: None,
        })
    }

    /// Like [`Rollout::from_text`] but records a format violation instead of failing.
    pub fn from_text_lenient(
        question_id: impl Into<String>,
        question_text: impl Into<String>,
        text: &str,
    ) -> Self {
        let (segments, format_error) = match parse_rollout(text) {
            Ok(s) => (s, None),
            Err(e) => (Vec::new(), Some(e)),
        };
        Self {
            question_id: question_id.into(),
            question_text: question_text.into(),
            text: text.to_string(),
            segments,
            format_error,
            trace: None,
        }
    }

    pub fn from_segments(
        question_id: impl Into<String>,
        question_text: impl Into<String>,
        segments: Vec<Segment>,
    ) -> Result<Self, GrammarError> {
        let text = render_segments(&segments)?;
        Ok(Self {
            question_id: question_id.into(),
            question_text: question_text.into(),
            text,
            segments,
            format_error: None,
            trace: None,
        })
    }

    pub fn is_well_formed(&self) -> bool {
        self.format_error.is_none()
    }

    pub fn tool_call_count(&self) -> usize {
        count_tool_calls(&self.segments)
    }

    pub fn answer(&self) -> Option<&str> {
        answer_of(&self.segments)
    }
}
