use std::collections::BTreeSet;
use std::sync::Arc;

use super::{
    sort_ranked, Hop, MatchConfig, MatchError, MatchOutcome, PathMatcher, QueueEntry, ReasoningPath, RelationPath,
    ScoredPath,
};
use crate::embedding::{cosine, EmbeddingVector};
use crate::kg::EntityId;

impl PathMatcher<'_> {
    /// Variable-length matching. Every cycle-free path of 1..=max_len hops is
    /// a result candidate with heuristic value `h = 1 - sim(path, candidate)`
    /// over the concatenated labels; the `top_k` lowest-h paths are returned.
    ///
    /// Expansion is best-first on each prefix's own h. Outside exact mode the
    /// open set and the number of scored paths are both capped by
    /// `frontier_cap`, and hitting a cap sets `truncated`. Exact mode scores
    /// every path.
    pub fn heuristic_top_k(
        &self,
        start: EntityId,
        candidate: &RelationPath,
        cfg: &MatchConfig,
    ) -> Result<MatchOutcome, MatchError> {
        cfg.validate()?;
        self.check_start(start)?;
        let kg = self.kg;
        let max_len = cfg.effective_max_len(candidate);
        let target = self.embeddings.embed_one(&candidate.sentence())?;
        let budget = if cfg.exact_mode { usize::MAX } else { cfg.frontier_cap };

        let mut open: BTreeSet<QueueEntry> = BTreeSet::new();
        let mut scored: Vec<ScoredPath> = Vec::new();
        let mut truncated = false;

        let root = ReasoningPath::new(start);
        let children = self.score_children(&root, &target, cfg, budget.saturating_sub(scored.len()), &mut truncated)?;
        for (path, sim) in children {
            scored.push(ScoredPath::new(kg, path.clone(), sim));
            open.insert(QueueEntry::new(kg, 1.0 - sim, path));
        }

        while let Some(entry) = open.pop_first() {
            if entry.path.len() >= max_len {
                continue;
            }
            let remaining = budget.saturating_sub(scored.len());
            if remaining == 0 {
                truncated = true;
                break;
            }
            for (path, sim) in self.score_children(&entry.path, &target, cfg, remaining, &mut truncated)? {
                scored.push(ScoredPath::new(kg, path.clone(), sim));
                open.insert(QueueEntry::new(kg, 1.0 - sim, path));
                if !cfg.exact_mode && open.len() > cfg.frontier_cap {
                    open.pop_last();
                    truncated = true;
                }
            }
        }

        sort_ranked(&mut scored);
        scored.truncate(cfg.top_k);
        Ok(MatchOutcome { paths: scored, truncated })
    }

    /// One-hop extensions of `prefix` with their similarity to the target. At most
    /// `limit` children are scored; their embeddings are fetched in one batch.
    fn score_children(
        &self,
        prefix: &ReasoningPath,
        target: &Arc<EmbeddingVector>,
        cfg: &MatchConfig,
        limit: usize,
        truncated: &mut bool,
    ) -> Result<Vec<(ReasoningPath, f64)>, MatchError> {
        let kg = self.kg;
        let mut children = Vec::new();
        for edge in kg.edges(prefix.tail(), cfg.direction) {
            if prefix.visits(edge.target) {
                continue;
            }
            if children.len() == limit {
                *truncated = true;
                break;
            }
            children.push(prefix.extended(Hop { relation: edge.relation, entity: edge.target }));
        }
        if children.is_empty() {
            return Ok(Vec::new());
        }
        let sentences: Vec<String> = children.iter().map(|p| p.relation_labels(kg).join(" ")).collect();
        let vectors = self.embeddings.embed(&sentences)?;
        children.into_iter().zip(vectors).map(|(path, v)| Ok((path, cosine(&v, target)?))).collect()
    }
}
