//! Pre-planning: draft relation paths, gather similar KG relations, re-plan.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbedError, EmbeddingGateway};
use crate::kg::INVERSE_MARKER;
use crate::llm::{ChatMessage, LlmError, LlmGateway, Phase, Transcript};
use crate::matcher::RelationPath;
use crate::prompt::PromptSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub question: String,
    pub topic_entities: Vec<String>,
}

/// A label replaced by its nearest vocabulary label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snap {
    pub from: String,
    pub to: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidatePathSet {
    /// Keyed by the number of relations in each path.
    pub by_length: BTreeMap<usize, Vec<RelationPath>>,
    pub raw_llm_text: String,
    /// Some path did not have the length its marker announced.
    pub inconsistent: bool,
    /// Some path is longer than the planner's maximum.
    pub over_length: bool,
    pub snapped: Vec<Snap>,
}

impl CandidatePathSet {
    pub fn is_empty(&self) -> bool {
        self.by_length.values().all(Vec::is_empty)
    }

    /// Shortest first, then in parse order.
    pub fn paths(&self) -> impl Iterator<Item = &RelationPath> {
        self.by_length.values().flatten()
    }

    pub fn max_len(&self) -> usize {
        self.paths().map(RelationPath::len).max().unwrap_or(0)
    }

    /// Distinct relations in path order.
    pub fn relations(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.paths().flat_map(|p| p.labels()).map(String::as_str).filter(|l| seen.insert(*l)).collect()
    }

    fn insert(&mut self, path: RelationPath) {
        let slot = self.by_length.entry(path.len()).or_default();
        if !slot.contains(&path) {
            slot.push(path);
        }
    }

    /// Text in the answer format of the planning prompts; parses back to the
    /// same paths.
    pub fn render(&self) -> String {
        let top = self.by_length.keys().copied().max().unwrap_or(0).max(3);
        let mut out = String::new();
        for len in 1..=top {
            match self.by_length.get(&len).filter(|v| !v.is_empty()) {
                None => out.push_str(&format!("Length {len} reasoning path: None: {{}}.\n")),
                Some(paths) => {
                    for p in paths {
                        out.push_str(&format!("Length {len} reasoning path: {{{}}}.\n", p.labels().join(", ")));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
#[error("no reasoning path in braces found in: {raw:?}")]
pub struct PathSetError {
    pub raw: String,
}

/// Extracts relation paths from a planning answer.
///
/// The text is split at every "Length N reasoning path" marker (any case).
/// Within each segment the last `{...}` group is the path; `{}` and `None`
/// mean no path. Paths are stored under their actual relation count.
pub fn parse_path_sets(text: &str) -> Result<CandidatePathSet, PathSetError> {
    let mut set = CandidatePathSet { raw_llm_text: text.to_owned(), ..CandidatePathSet::default() };
    let markers = find_markers(text);
    let segments: Vec<(Option<usize>, &str)> = if markers.is_empty() {
        vec![(None, text)]
    } else {
        markers
            .iter()
            .enumerate()
            .map(|(i, &(pos, len))| {
                let end = markers.get(i + 1).map_or(text.len(), |m| m.0);
                (Some(len), &text[pos..end])
            })
            .collect()
    };

    let mut any_braces = false;
    for (stated, segment) in segments {
        let Some(inner) = last_brace_group(segment) else { continue };
        any_braces = true;
        let labels = split_labels(inner);
        if labels.is_empty() {
            continue;
        }
        if stated != Some(labels.len()) {
            set.inconsistent = true;
        }
        if let Ok(path) = RelationPath::new(labels) {
            set.insert(path);
        }
    }
    if !any_braces {
        return Err(PathSetError { raw: text.to_owned() });
    }
    Ok(set)
}

/// Byte offsets and stated lengths of "length N reasoning path" markers.
fn find_markers(text: &str) -> Vec<(usize, usize)> {
    let lower = text.to_ascii_lowercase();
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(off) = lower[from..].find("length ") {
        let pos = from + off;
        let rest = &lower[pos + 7..];
        let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
        if digits > 0 && rest[digits..].starts_with(" reasoning path") {
            if let Ok(n) = rest[..digits].parse() {
                out.push((pos, n));
            }
        }
        from = pos + 7;
    }
    out
}

fn last_brace_group(segment: &str) -> Option<&str> {
    let close = segment.rfind('}')?;
    let open = segment[..close].rfind('{')?;
    Some(&segment[open + 1..close])
}

fn split_labels(inner: &str) -> Vec<String> {
    inner
        .split(',')
        .map(|l| l.trim().trim_matches(|c| matches!(c, '"' | '\'' | '`')).trim())
        .filter(|l| !l.is_empty() && !l.eq_ignore_ascii_case("none"))
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSource {
    pub relation: String,
    pub ranked: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelationPool {
    pub sources: Vec<PoolSource>,
    pub relations: Vec<String>,
}

impl RelationPool {
    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }
}

/// `max(3, cap / sources)`.
pub fn default_per_relation_k(cap: usize, sources: usize) -> usize {
    (cap / sources.max(1)).max(3)
}

/// For every distinct relation of `initial`, the `per_relation_k` most similar
/// vocabulary labels; merged round-robin by rank, deduplicated, cut at `cap`.
pub fn extract_relation_pool(
    initial: &CandidatePathSet,
    vocab: &[String],
    embeddings: &EmbeddingGateway,
    per_relation_k: Option<usize>,
    cap: usize,
) -> Result<RelationPool, EmbedError> {
    let relations = initial.relations();
    if relations.is_empty() {
        return Ok(RelationPool::default());
    }
    let k = per_relation_k.unwrap_or_else(|| default_per_relation_k(cap, relations.len()));
    let mut sources = Vec::with_capacity(relations.len());
    for r in relations {
        let ranked = embeddings.top_k_similar_relations(r, vocab, k)?;
        sources.push(PoolSource { relation: r.to_owned(), ranked });
    }
    let mut seen = HashSet::new();
    let mut pool = Vec::new();
    let depth = sources.iter().map(|s| s.ranked.len()).max().unwrap_or(0);
    'merge: for rank in 0..depth {
        for s in &sources {
            if pool.len() == cap {
                break 'merge;
            }
            if let Some((label, _)) = s.ranked.get(rank) {
                if seen.insert(label.as_str()) {
                    pool.push(label.clone());
                }
            }
        }
    }
    Ok(RelationPool { sources, relations: pool })
}

pub fn build_initial_prompt(prompts: &PromptSet, q: &Query) -> Vec<ChatMessage> {
    let topics = q.topic_entities.join(", ");
    let text = prompts.initial_planning.render(&[("question", &q.question), ("topic_entities", &topics)]);
    vec![ChatMessage::user(text)]
}

pub fn build_replanning_prompt(prompts: &PromptSet, q: &Query, pool: &RelationPool) -> Vec<ChatMessage> {
    let topics = q.topic_entities.join(", ");
    let relations = pool.relations.join("; ");
    let text =
        prompts.replanning.render(&[("question", &q.question), ("topic_entities", &topics), ("relations", &relations)]);
    vec![ChatMessage::user(text)]
}

const FORMAT_REMINDER: &str = "Your answer did not contain any reasoning path in curly braces. \
Answer again in the same format as the examples: for each of the lengths 1, 2 and 3 write \
\"Length N reasoning path:\" followed by the relations of the path in curly braces, \
or None: {} if no such path exists.";

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Parse(#[from] PathSetError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub relation_cap: usize,
    /// `None` uses [`default_per_relation_k`].
    pub per_relation_k: Option<usize>,
    pub max_path_len: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { relation_cap: 30, per_relation_k: None, max_path_len: 3 }
    }
}

pub struct Planner<'a> {
    llm: &'a LlmGateway,
    embeddings: &'a EmbeddingGateway,
    prompts: &'a PromptSet,
    vocab: &'a [String],
    known: HashSet<&'a str>,
    cfg: &'a PlannerConfig,
}

impl<'a> Planner<'a> {
    pub fn new(
        llm: &'a LlmGateway,
        embeddings: &'a EmbeddingGateway,
        prompts: &'a PromptSet,
        vocab: &'a [String],
        cfg: &'a PlannerConfig,
    ) -> Self {
        let known = vocab.iter().map(String::as_str).collect();
        Self { llm, embeddings, prompts, vocab, known, cfg }
    }

    pub fn initial_plan(&self, q: &Query, transcript: &mut Transcript) -> Result<CandidatePathSet, PlanError> {
        let messages = build_initial_prompt(self.prompts, q);
        let mut set = self.complete_and_parse(Phase::InitialPlanning, messages, transcript)?;
        set.over_length = set.max_len() > self.cfg.max_path_len;
        Ok(set)
    }

    pub fn relation_pool(&self, initial: &CandidatePathSet) -> Result<RelationPool, PlanError> {
        Ok(extract_relation_pool(initial, self.vocab, self.embeddings, self.cfg.per_relation_k, self.cfg.relation_cap)?)
    }

    /// Re-plans from `pool`; labels outside the vocabulary are replaced by
    /// their nearest vocabulary label.
    pub fn replan(
        &self,
        q: &Query,
        pool: &RelationPool,
        transcript: &mut Transcript,
    ) -> Result<CandidatePathSet, PlanError> {
        let messages = build_replanning_prompt(self.prompts, q, pool);
        let parsed = self.complete_and_parse(Phase::Replanning, messages, transcript)?;
        let mut set = CandidatePathSet {
            raw_llm_text: parsed.raw_llm_text,
            inconsistent: parsed.inconsistent,
            ..CandidatePathSet::default()
        };
        for path in parsed.by_length.into_values().flatten() {
            let mut labels = Vec::with_capacity(path.len());
            for label in path.labels() {
                labels.push(self.snap(label, &mut set.snapped)?);
            }
            set.insert(RelationPath::new(labels).expect("snapped labels are non-empty"));
        }
        set.over_length = set.max_len() > self.cfg.max_path_len;
        Ok(set)
    }

    fn snap(&self, label: &str, snapped: &mut Vec<Snap>) -> Result<String, PlanError> {
        let base = label.strip_suffix(INVERSE_MARKER).unwrap_or(label);
        if self.known.contains(base) {
            return Ok(label.to_owned());
        }
        if let Some(s) = snapped.iter().find(|s| s.from == label) {
            return Ok(s.to.clone());
        }
        let (to, similarity) = self
            .embeddings
            .top_k_similar_relations(label, self.vocab, 1)?
            .into_iter()
            .next()
            .expect("vocabulary is non-empty");
        snapped.push(Snap { from: label.to_owned(), to: to.clone(), similarity });
        Ok(to)
    }

    /// One completion; when nothing parses, one more with a format reminder.
    fn complete_and_parse(
        &self,
        phase: Phase,
        mut messages: Vec<ChatMessage>,
        transcript: &mut Transcript,
    ) -> Result<CandidatePathSet, PlanError> {
        let text = self.llm.exchange(phase, &messages, transcript)?;
        match parse_path_sets(&text) {
            Ok(set) => Ok(set),
            Err(_) => {
                messages.push(ChatMessage::assistant(text));
                messages.push(ChatMessage::user(FORMAT_REMINDER));
                let text = self.llm.exchange(phase, &messages, transcript)?;
                Ok(parse_path_sets(&text)?)
            }
        }
    }
}
