//! Matching LLM-proposed relation paths against the knowledge graph.
//!
//! Three strategies are provided:
//!
//! * [`PathMatcher::beam_match`] walks the candidate position by position and
//!   keeps only the cheapest partial paths at each step.
//! * [`PathMatcher::dijkstra_avg_match`] runs a uniform-cost search over
//!   (entity, depth) states and ranks complete paths by their mean step cost.
//! * [`PathMatcher::heuristic_top_k`] scores whole paths of any length by the
//!   similarity of their concatenated labels to the candidate, so a path of a
//!   different length than the candidate can still match.
//!
//! [`PathMatcher::brute_force_top_k`] enumerates every cycle-free path and is
//! kept as the reference the other strategies are tested against.
//!
//! Step costs are `1 - cosine` and lie in [0, 2]; a path's score is
//! `1 - cost`. Result lists are ordered by score (descending), then by path
//! length (longer first), then by relation-label sequence, then by
//! entity-id sequence.

mod beam;
mod heuristic;
mod oracle;
mod pathfind;
mod report;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use oracle::{OracleScoring, BRUTE_FORCE_PATH_LIMIT};
pub use report::{write_match_report, MatchReportLine};

use crate::embedding::{cosine, EmbedError, EmbeddingGateway, EmbeddingVector};
use crate::kg::{Direction, EntityId, KnowledgeGraph, RelationRef};

#[derive(Debug, thiserror::Error)]
pub enum MatchError {
    #[error("invalid match configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid relation path: {0}")]
    InvalidPath(String),
    #[error("unknown entity id {0}")]
    UnknownEntity(u32),
    #[error("enumeration exceeds {limit} paths")]
    Capacity { limit: u64 },
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// An ordered sequence of relation labels, without entities.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationPath(Vec<String>);

impl RelationPath {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self, MatchError> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(MatchError::InvalidPath("relation path is empty".into()));
        }
        if labels.iter().any(|l| l.trim().is_empty()) {
            return Err(MatchError::InvalidPath("relation path contains an empty label".into()));
        }
        Ok(Self(labels))
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Labels joined with single spaces, the text embedded for whole-path
    /// similarity.
    pub fn sentence(&self) -> String {
        self.0.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hop {
    pub relation: RelationRef,
    pub entity: EntityId,
}

/// A relation path grounded in the graph, from `start` through each hop.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReasoningPath {
    pub start: EntityId,
    pub hops: Vec<Hop>,
}

impl ReasoningPath {
    pub fn new(start: EntityId) -> Self {
        Self { start, hops: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    pub fn tail(&self) -> EntityId {
        self.hops.last().map_or(self.start, |h| h.entity)
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> + '_ {
        std::iter::once(self.start).chain(self.hops.iter().map(|h| h.entity))
    }

    pub fn visits(&self, e: EntityId) -> bool {
        self.entities().any(|x| x == e)
    }

    pub fn extended(&self, hop: Hop) -> Self {
        let mut hops = Vec::with_capacity(self.hops.len() + 1);
        hops.extend_from_slice(&self.hops);
        hops.push(hop);
        Self { start: self.start, hops }
    }

    pub fn relation_labels(&self, kg: &KnowledgeGraph) -> Vec<String> {
        self.hops.iter().map(|h| kg.relation_ref_label(h.relation).to_owned()).collect()
    }

    /// Every hop is an edge of `kg` and no entity repeats.
    pub fn is_valid_in(&self, kg: &KnowledgeGraph) -> bool {
        let mut prev = self.start;
        if !kg.contains_entity(prev) {
            return false;
        }
        for hop in &self.hops {
            if !kg.has_edge(prev, hop.relation, hop.entity) {
                return false;
            }
            prev = hop.entity;
        }
        let mut seen: Vec<EntityId> = self.entities().collect();
        seen.sort_unstable();
        seen.windows(2).all(|w| w[0] != w[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPath {
    pub path: ReasoningPath,
    pub relations: RelationPath,
    /// Similarity-derived score; higher is better.
    pub score: f64,
    /// `1 - score`.
    pub cost: f64,
}

impl ScoredPath {
    pub(crate) fn new(kg: &KnowledgeGraph, path: ReasoningPath, score: f64) -> Self {
        let relations = RelationPath(path.relation_labels(kg));
        Self { path, relations, score, cost: 1.0 - score }
    }

    pub fn entity_labels<'g>(&self, kg: &'g KnowledgeGraph) -> Vec<&'g str> {
        self.path.entities().map(|e| kg.entity_label(e).unwrap_or("?")).collect()
    }
}

/// The result ordering shared by every strategy.
pub fn rank_order(a: &ScoredPath, b: &ScoredPath) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.path.len().cmp(&a.path.len()))
        .then_with(|| a.relations.cmp(&b.relations))
        .then_with(|| a.path.entities().cmp(b.path.entities()))
}

pub fn sort_ranked(paths: &mut [ScoredPath]) {
    paths.sort_by(rank_order);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Beam,
    Pathfind,
    #[default]
    Heuristic,
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "beam" | "b" => Ok(Self::Beam),
            "pathfind" | "dijkstra" | "p" => Ok(Self::Pathfind),
            "heuristic" | "h" => Ok(Self::Heuristic),
            other => Err(format!("unknown strategy `{other}` (expected beam, pathfind or heuristic)")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Beam => "beam",
            Self::Pathfind => "pathfind",
            Self::Heuristic => "heuristic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub strategy: Strategy,
    pub top_k: usize,
    pub beam_width: usize,
    /// Longest path explored by the heuristic strategy; `None` means one
    /// more than the candidate's length.
    pub max_len: Option<usize>,
    pub frontier_cap: usize,
    pub exact_mode: bool,
    pub direction: Direction,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Heuristic,
            top_k: 16,
            beam_width: 8,
            max_len: None,
            frontier_cap: 5000,
            exact_mode: false,
            direction: Direction::Forward,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        if self.top_k == 0 {
            return Err(MatchError::InvalidConfig("top_k must be at least 1".into()));
        }
        if self.beam_width == 0 {
            return Err(MatchError::InvalidConfig("beam_width must be at least 1".into()));
        }
        if self.max_len == Some(0) {
            return Err(MatchError::InvalidConfig("max_len must be at least 1".into()));
        }
        if self.frontier_cap == 0 {
            return Err(MatchError::InvalidConfig("frontier_cap must be at least 1".into()));
        }
        Ok(())
    }

    pub fn effective_max_len(&self, candidate: &RelationPath) -> usize {
        self.max_len.unwrap_or(candidate.len() + 1)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchOutcome {
    pub paths: Vec<ScoredPath>,
    /// A search bound cut exploration short; results may be approximate.
    pub truncated: bool,
}

/// Runs matching strategies over one graph with one embedding gateway.
#[derive(Clone, Copy)]
pub struct PathMatcher<'a> {
    kg: &'a KnowledgeGraph,
    embeddings: &'a EmbeddingGateway,
}

impl<'a> PathMatcher<'a> {
    pub fn new(kg: &'a KnowledgeGraph, embeddings: &'a EmbeddingGateway) -> Self {
        Self { kg, embeddings }
    }

    pub fn graph(&self) -> &'a KnowledgeGraph {
        self.kg
    }

    /// `1 - sim(kg_label, candidate_label)`.
    pub fn step_cost(&self, kg_label: &str, candidate_label: &str) -> Result<f64, MatchError> {
        Ok(1.0 - self.embeddings.similarity(kg_label, candidate_label)?)
    }

    /// Cosine similarity of the two label lists, each joined into one sentence.
    pub fn path_similarity<A: AsRef<str>, B: AsRef<str>>(&self, a: &[A], b: &[B]) -> Result<f64, MatchError> {
        if a.is_empty() || b.is_empty() {
            return Err(MatchError::InvalidPath("path similarity needs non-empty label lists".into()));
        }
        Ok(self.embeddings.similarity(&join(a), &join(b))?)
    }

    /// Dispatches on `cfg.strategy`.
    pub fn run(
        &self,
        start: EntityId,
        candidate: &RelationPath,
        cfg: &MatchConfig,
    ) -> Result<MatchOutcome, MatchError> {
        match cfg.strategy {
            Strategy::Beam => self.beam_match(start, candidate, cfg),
            Strategy::Pathfind => self.dijkstra_avg_match(start, candidate, cfg),
            Strategy::Heuristic => self.heuristic_top_k(start, candidate, cfg),
        }
    }

    fn check_start(&self, start: EntityId) -> Result<(), MatchError> {
        if self.kg.contains_entity(start) {
            Ok(())
        } else {
            Err(MatchError::UnknownEntity(start.0))
        }
    }

    fn check_fixed_length(&self, candidate: &RelationPath, cfg: &MatchConfig) -> Result<(), MatchError> {
        cfg.validate()?;
        if let Some(max) = cfg.max_len {
            if candidate.len() > max {
                return Err(MatchError::InvalidConfig(format!(
                    "candidate length {} exceeds max_len {max}",
                    candidate.len()
                )));
            }
        }
        Ok(())
    }
}

fn join<S: AsRef<str>>(labels: &[S]) -> String {
    let mut out = String::new();
    for (i, l) in labels.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(l.as_ref());
    }
    out
}

/// Memoized `1 - sim(edge label, candidate[position])` for one search.
struct StepCosts<'a> {
    kg: &'a KnowledgeGraph,
    embeddings: &'a EmbeddingGateway,
    candidate: Vec<Arc<EmbeddingVector>>,
    memo: HashMap<(RelationRef, usize), f64>,
}

impl<'a> StepCosts<'a> {
    fn new(m: &PathMatcher<'a>, candidate: &RelationPath) -> Result<Self, MatchError> {
        let candidate = m.embeddings.embed(candidate.labels())?;
        Ok(Self { kg: m.kg, embeddings: m.embeddings, candidate, memo: HashMap::new() })
    }

    fn cost(&mut self, relation: RelationRef, position: usize) -> Result<f64, MatchError> {
        if let Some(&c) = self.memo.get(&(relation, position)) {
            return Ok(c);
        }
        let v = self.embeddings.embed_one(self.kg.relation_ref_label(relation))?;
        let c = 1.0 - cosine(&v, &self.candidate[position])?;
        self.memo.insert((relation, position), c);
        Ok(c)
    }
}

/// Search-queue key ordered like [`rank_order`] restricted to one path
/// length: primary value ascending, then label ranks, then entity ids.
#[derive(Debug, Clone)]
struct QueueEntry {
    primary: f64,
    /// Longer first among equal primaries (used by the variable-length search).
    len_desc: u32,
    ranks: Vec<u32>,
    entities: Vec<u32>,
    path: ReasoningPath,
}

impl QueueEntry {
    fn new(kg: &KnowledgeGraph, primary: f64, path: ReasoningPath) -> Self {
        let ranks = path.hops.iter().map(|h| kg.relation_rank(h.relation)).collect();
        let entities = path.entities().map(|e| e.0).collect();
        Self { primary, len_desc: u32::MAX - path.len() as u32, ranks, entities, path }
    }
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for QueueEntry {}
impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.primary
            .total_cmp(&other.primary)
            .then_with(|| self.len_desc.cmp(&other.len_desc))
            .then_with(|| self.ranks.cmp(&other.ranks))
            .then_with(|| self.entities.cmp(&other.entities))
    }
}
