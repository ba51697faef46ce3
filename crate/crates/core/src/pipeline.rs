//! One question end to end: plan, match, reason.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, EmbeddingKind, LlmKind, PipelineConfig, EMBED_API_KEY_ENV, LLM_API_KEY_ENV};
use crate::embedding::{
    EmbedError, EmbeddingGateway, HttpEmbeddingProvider, MockEmbeddingProvider, ScriptedEmbeddingProvider,
};
use crate::kg::{EntityId, KgError, KnowledgeGraph};
use crate::llm::{CompletionParams, HttpChatProvider, LlmError, LlmGateway, ScriptedChatProvider, Transcript};
use crate::matcher::{sort_ranked, MatchConfig, MatchError, PathMatcher, RelationPath, ScoredPath};
use crate::planner::{CandidatePathSet, PlanError, Planner, PlannerConfig, Query, RelationPool};
use crate::prompt::{
    PromptSet, PromptTemplate, TemplateError, INITIAL_PLANNING_PLACEHOLDERS, REASONING_PLACEHOLDERS,
    REPLANNING_PLACEHOLDERS,
};
use crate::reasoner::{answer_question, normalize_answer, AnswerSet, ReasonError, Reasoning};

#[derive(Debug, thiserror::Error)]
pub enum SetupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("knowledge graph: {0}")]
    Kg(#[from] KgError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("llm: {0}")]
    Llm(#[from] LlmError),
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("planning failed: {0}")]
    Plan(#[from] PlanError),
    #[error("matching failed: {0}")]
    Match(#[from] MatchError),
    #[error("reasoning failed: {0}")]
    Reason(#[from] ReasonError),
}

/// A failed run together with everything recorded before the failure.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct PipelineFailure {
    pub error: PipelineError,
    pub trace: Box<Trace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePath {
    pub score: f64,
    pub relations: Vec<String>,
    pub entities: Vec<String>,
}

/// Everything a run did, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub query: Option<Query>,
    pub resolved_topics: Vec<String>,
    pub unresolved_topics: Vec<String>,
    pub initial: Option<CandidatePathSet>,
    pub pool: Option<RelationPool>,
    pub replanned: Option<CandidatePathSet>,
    /// Re-planning produced nothing; the initial paths were matched instead.
    pub fallback_initial: bool,
    pub candidates: Vec<RelationPath>,
    pub matched: Vec<TracePath>,
    /// Some matcher run hit a search bound.
    pub truncated: bool,
    pub reasoning: Option<Reasoning>,
    pub transcript: Transcript,
    pub answers: AnswerSet,
    pub error: Option<String>,
}

pub struct Pipeline {
    kg: KnowledgeGraph,
    vocab: Vec<String>,
    by_normalized_label: HashMap<String, Option<EntityId>>,
    embeddings: EmbeddingGateway,
    llm: LlmGateway,
    prompts: PromptSet,
    matcher: MatchConfig,
    planner: PlannerConfig,
    batch_limit: usize,
}

impl Pipeline {
    pub fn new(
        kg: KnowledgeGraph,
        embeddings: EmbeddingGateway,
        llm: LlmGateway,
        prompts: PromptSet,
        matcher: MatchConfig,
        planner: PlannerConfig,
        batch_limit: usize,
    ) -> Self {
        let vocab = kg.relation_vocabulary();
        let mut by_normalized_label: HashMap<String, Option<EntityId>> = HashMap::new();
        for i in 0..kg.entity_count() {
            let id = EntityId(i as u32);
            let label = normalize_answer(kg.entity_label(id).expect("dense ids"));
            by_normalized_label.entry(label).and_modify(|slot| *slot = None).or_insert(Some(id));
        }
        Self { kg, vocab, by_normalized_label, embeddings, llm, prompts, matcher, planner, batch_limit }
    }

    /// Builds providers and loads the graph and prompts named by `cfg`.
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self, SetupError> {
        cfg.validate()?;
        let kg = load_graph(cfg.kg_path.as_deref().expect("validated"))?;
        let embeddings = build_embeddings(cfg)?;
        let llm = build_llm(cfg)?;
        let prompts = load_prompts(cfg)?;
        Ok(Self::new(kg, embeddings, llm, prompts, cfg.matcher.clone(), cfg.planner.clone(), cfg.batch_limit))
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        &self.kg
    }

    pub fn embeddings(&self) -> &EmbeddingGateway {
        &self.embeddings
    }

    pub fn llm(&self) -> &LlmGateway {
        &self.llm
    }

    /// Exact label first, then a unique case- and whitespace-insensitive match.
    pub fn resolve_topic(&self, label: &str) -> Option<EntityId> {
        self.kg.entity_id(label).or_else(|| self.by_normalized_label.get(&normalize_answer(label)).copied().flatten())
    }

    pub fn run(&self, q: &Query) -> Result<Trace, PipelineFailure> {
        let mut trace = Trace { query: Some(q.clone()), ..Trace::default() };
        match self.run_into(q, &mut trace) {
            Ok(()) => Ok(trace),
            Err(error) => {
                trace.error = Some(error.to_string());
                Err(PipelineFailure { error, trace: Box::new(trace) })
            }
        }
    }

    fn run_into(&self, q: &Query, trace: &mut Trace) -> Result<(), PipelineError> {
        let mut starts = Vec::new();
        for t in &q.topic_entities {
            match self.resolve_topic(t) {
                Some(id) => {
                    if !starts.contains(&id) {
                        starts.push(id);
                    }
                    trace.resolved_topics.push(t.clone());
                }
                None => trace.unresolved_topics.push(t.clone()),
            }
        }
        if starts.is_empty() {
            trace.error = Some("no topic entity found in the knowledge graph".into());
            return Ok(());
        }

        let planner = Planner::new(&self.llm, &self.embeddings, &self.prompts, &self.vocab, &self.planner);
        let initial = planner.initial_plan(q, &mut trace.transcript)?;
        trace.initial = Some(initial.clone());
        let pool = planner.relation_pool(&initial)?;
        trace.pool = Some(pool.clone());
        if !pool.is_empty() {
            trace.replanned = Some(planner.replan(q, &pool, &mut trace.transcript)?);
        }
        trace.candidates = match &trace.replanned {
            Some(set) if !set.is_empty() => set.paths().cloned().collect(),
            _ => {
                trace.fallback_initial = true;
                initial.paths().cloned().collect()
            }
        };

        let matched = self.match_candidates(&starts, &trace.candidates, &mut trace.truncated)?;
        trace.matched = matched
            .iter()
            .map(|p| TracePath {
                score: p.score,
                relations: p.relations.labels().to_vec(),
                entities: p.entity_labels(&self.kg).into_iter().map(str::to_owned).collect(),
            })
            .collect();

        let query = Query { topic_entities: trace.resolved_topics.clone(), ..q.clone() };
        let reasoning = answer_question(
            &self.llm,
            &self.prompts,
            &self.kg,
            &query,
            &matched,
            self.batch_limit,
            &mut trace.transcript,
        )?;
        trace.answers = reasoning.answers.clone();
        trace.reasoning = Some(reasoning);
        Ok(())
    }

    /// Every start against every candidate; union keeps each distinct path
    /// once at its best score, then the overall top-k.
    pub fn match_candidates(
        &self,
        starts: &[EntityId],
        candidates: &[RelationPath],
        truncated: &mut bool,
    ) -> Result<Vec<ScoredPath>, MatchError> {
        let Some(longest) = candidates.iter().map(RelationPath::len).max() else {
            return Ok(Vec::new());
        };
        let cfg = MatchConfig { max_len: Some(self.matcher.max_len.unwrap_or(longest + 1)), ..self.matcher.clone() };
        let matcher = PathMatcher::new(&self.kg, &self.embeddings);
        let mut best: HashMap<crate::matcher::ReasoningPath, ScoredPath> = HashMap::new();
        for &start in starts {
            for cand in candidates {
                let out = matcher.run(start, cand, &cfg)?;
                *truncated |= out.truncated;
                for p in out.paths {
                    match best.get(&p.path) {
                        Some(prev) if prev.score >= p.score => {}
                        _ => {
                            best.insert(p.path.clone(), p);
                        }
                    }
                }
            }
        }
        let mut all: Vec<ScoredPath> = best.into_values().collect();
        sort_ranked(&mut all);
        all.truncate(cfg.top_k);
        Ok(all)
    }
}

/// Reads a triple file.
pub fn load_graph(path: &Path) -> Result<KnowledgeGraph, KgError> {
    let file = std::fs::File::open(path)
        .map_err(|e| KgError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    KnowledgeGraph::load_triples(std::io::BufReader::new(file))
}

/// The embedding gateway `cfg` describes, cache attached.
pub fn build_embeddings(cfg: &PipelineConfig) -> Result<EmbeddingGateway, SetupError> {
    let e = &cfg.embedding;
    let provider: Box<dyn crate::embedding::EmbeddingProvider> = match e.kind {
        EmbeddingKind::Mock => Box::new(MockEmbeddingProvider::new(e.dim)?),
        EmbeddingKind::Scripted => {
            Box::new(ScriptedEmbeddingProvider::from_file(e.fixture.as_deref().expect("validated"))?)
        }
        EmbeddingKind::Http => Box::new(HttpEmbeddingProvider::new(
            e.endpoint.clone().expect("validated"),
            e.model.clone(),
            std::env::var(EMBED_API_KEY_ENV).ok(),
        )),
    };
    let mut gw = EmbeddingGateway::new(provider).with_retry(cfg.retry);
    if let Some(cache) = &e.cache {
        gw = gw.with_cache_file(cache)?;
    }
    Ok(gw)
}

fn build_llm(cfg: &PipelineConfig) -> Result<LlmGateway, SetupError> {
    let l = &cfg.llm;
    let provider: Box<dyn crate::llm::ChatProvider> = match l.kind {
        LlmKind::Scripted => Box::new(ScriptedChatProvider::from_file(l.fixture.as_deref().expect("validated"))?),
        LlmKind::Http => {
            Box::new(HttpChatProvider::new(l.endpoint.clone().expect("validated"), std::env::var(LLM_API_KEY_ENV).ok()))
        }
    };
    let params = CompletionParams { model: l.model.clone(), temperature: l.temperature, max_output: l.max_output };
    Ok(LlmGateway::new(provider, params).with_retry(cfg.retry))
}

fn load_prompts(cfg: &PipelineConfig) -> Result<PromptSet, TemplateError> {
    let mut set = PromptSet::default();
    let load = |p: &Path, required| PromptTemplate::from_file(p, required);
    if let Some(p) = &cfg.prompts.initial_planning {
        set.initial_planning = load(p, INITIAL_PLANNING_PLACEHOLDERS)?;
    }
    if let Some(p) = &cfg.prompts.replanning {
        set.replanning = load(p, REPLANNING_PLACEHOLDERS)?;
    }
    if let Some(p) = &cfg.prompts.reasoning {
        set.reasoning = load(p, REASONING_PLACEHOLDERS)?;
    }
    Ok(set)
}
