//! Reasoning over matched paths: batched prompts and brace-delimited answers.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::kg::KnowledgeGraph;
use crate::llm::{ChatMessage, LlmError, LlmGateway, Phase, Transcript};
use crate::matcher::ScoredPath;
use crate::planner::Query;
use crate::prompt::PromptSet;

/// Trim, collapse inner whitespace, lowercase.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    /// Index of the reasoning batch that first produced this answer.
    pub batch: usize,
    /// Not the tail entity of any supplied path.
    pub ungrounded: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSet {
    pub answers: Vec<Answer>,
    /// The completion had no `{...}` group at all.
    pub no_answer_marker: bool,
}

impl AnswerSet {
    /// Adds `text` unless an equal answer (after normalization) is present.
    pub fn insert(&mut self, text: &str, batch: usize) -> bool {
        let norm = normalize_answer(text);
        if norm.is_empty() || self.answers.iter().any(|a| normalize_answer(&a.text) == norm) {
            return false;
        }
        self.answers.push(Answer { text: text.to_owned(), batch, ungrounded: false });
        true
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.answers.iter().map(|a| a.text.as_str())
    }

    pub fn grounded(&self) -> impl Iterator<Item = &Answer> {
        self.answers.iter().filter(|a| !a.ungrounded)
    }

    /// `{a, b}`, the answer format the reasoning prompt asks for.
    pub fn render(&self) -> String {
        format!("{{{}}}", self.texts().collect::<Vec<_>>().join(", "))
    }
}

/// Answers from the last `{...}` group of `text`; empty with
/// `no_answer_marker` when there is none.
pub fn parse_answers(text: &str) -> AnswerSet {
    let mut set = AnswerSet::default();
    let group = text.rfind('}').and_then(|close| text[..close].rfind('{').map(|open| &text[open + 1..close]));
    match group {
        None => set.no_answer_marker = true,
        Some(inner) => {
            for part in inner.split(',') {
                set.insert(part.trim(), 0);
            }
        }
    }
    set
}

/// `(start, r1 → r2, tail)`.
pub fn render_path(kg: &KnowledgeGraph, path: &ScoredPath) -> String {
    let label = |e| kg.entity_label(e).unwrap_or("?");
    format!("({}, {}, {})", label(path.path.start), path.relations.labels().join(" → "), label(path.path.tail()))
}

pub fn build_reasoning_prompt(
    prompts: &PromptSet,
    kg: &KnowledgeGraph,
    q: &Query,
    paths: &[ScoredPath],
) -> Vec<ChatMessage> {
    let lines: Vec<String> = paths.iter().map(|p| render_path(kg, p)).collect();
    let text = prompts.reasoning.render(&[("question", &q.question), ("paths", &lines.join("\n"))]);
    vec![ChatMessage::user(text)]
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub paths: usize,
    pub answers: Vec<String>,
    pub no_answer_marker: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reasoning {
    pub answers: AnswerSet,
    pub batches: Vec<BatchRecord>,
}

#[derive(Debug, thiserror::Error)]
#[error("all {count} reasoning batches failed; first failure: {first}")]
pub struct ReasonError {
    pub count: usize,
    pub first: LlmError,
}

/// One completion per run of at most `batch_limit` consecutive paths; the
/// answer set is the union over batches. Failed batches are recorded and
/// skipped unless every batch fails.
pub fn answer_question(
    llm: &LlmGateway,
    prompts: &PromptSet,
    kg: &KnowledgeGraph,
    q: &Query,
    matched: &[ScoredPath],
    batch_limit: usize,
    transcript: &mut Transcript,
) -> Result<Reasoning, ReasonError> {
    let mut out = Reasoning::default();
    let mut first_error = None;
    let mut marker_seen = false;
    for (i, batch) in matched.chunks(batch_limit.max(1)).enumerate() {
        let messages = build_reasoning_prompt(prompts, kg, q, batch);
        let mut record = BatchRecord { paths: batch.len(), ..BatchRecord::default() };
        match llm.exchange(Phase::Reasoning, &messages, transcript) {
            Ok(text) => {
                let parsed = parse_answers(&text);
                record.no_answer_marker = parsed.no_answer_marker;
                marker_seen |= !parsed.no_answer_marker;
                for a in parsed.texts() {
                    record.answers.push(a.to_owned());
                    out.answers.insert(a, i);
                }
            }
            Err(e) => {
                record.error = Some(e.to_string());
                first_error.get_or_insert(e);
            }
        }
        out.batches.push(record);
    }
    if let Some(first) = first_error {
        if out.batches.iter().all(|b| b.error.is_some()) {
            return Err(ReasonError { count: out.batches.len(), first });
        }
    }
    out.answers.no_answer_marker = !out.batches.is_empty() && !marker_seen;

    let tails: HashSet<String> =
        matched.iter().filter_map(|p| kg.entity_label(p.path.tail())).map(normalize_answer).collect();
    for a in &mut out.answers.answers {
        a.ungrounded = !tails.contains(&normalize_answer(&a.text));
    }
    Ok(out)
}
