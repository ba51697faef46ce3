use std::cmp::Ordering;

use super::{Hop, MatchError, PathMatcher, ReasoningPath, RelationPath, ScoredPath};
use crate::kg::{Direction, EntityId};

/// Enumeration stops with [`MatchError::Capacity`] past this many paths.
pub const BRUTE_FORCE_PATH_LIMIT: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleScoring {
    /// Whole-path similarity over every path of 1..=max_len hops.
    Similarity,
    /// Mean position-aligned step cost over paths of exactly `candidate.len()` hops.
    MeanStepCost,
}

impl PathMatcher<'_> {
    /// Exhaustive reference ranking. Enumerates every cycle-free path by DFS,
    /// scores each one independently and sorts the full list.
    pub fn brute_force_top_k(
        &self,
        start: EntityId,
        candidate: &RelationPath,
        k: usize,
        max_len: usize,
        direction: Direction,
        scoring: OracleScoring,
    ) -> Result<Vec<ScoredPath>, MatchError> {
        self.check_start(start)?;
        let (min_len, max_len) = match scoring {
            OracleScoring::Similarity => (1, max_len),
            OracleScoring::MeanStepCost => (candidate.len(), candidate.len()),
        };
        let mut all = Vec::new();
        let mut stack = vec![ReasoningPath::new(start)];
        let mut count: u64 = 0;
        while let Some(p) = stack.pop() {
            if p.len() >= min_len {
                count += 1;
                if count > BRUTE_FORCE_PATH_LIMIT {
                    return Err(MatchError::Capacity { limit: BRUTE_FORCE_PATH_LIMIT });
                }
                all.push(p.clone());
            }
            if p.len() < max_len {
                for edge in self.kg.edges(p.tail(), direction) {
                    if !p.visits(edge.target) {
                        stack.push(p.extended(Hop { relation: edge.relation, entity: edge.target }));
                    }
                }
            }
        }

        let mut scored = Vec::with_capacity(all.len());
        for p in all {
            let labels = p.relation_labels(self.kg);
            let score = match scoring {
                OracleScoring::Similarity => self.path_similarity(&labels, candidate.labels())?,
                OracleScoring::MeanStepCost => {
                    let mut sum = 0.0;
                    for (l, c) in labels.iter().zip(candidate.labels()) {
                        sum += self.step_cost(l, c)?;
                    }
                    1.0 - sum / candidate.len() as f64
                }
            };
            scored.push(ScoredPath::new(self.kg, p, score));
        }
        scored.sort_by(oracle_order);
        scored.truncate(k);
        Ok(scored)
    }
}

fn oracle_order(a: &ScoredPath, b: &ScoredPath) -> Ordering {
    if a.score != b.score {
        return if a.score > b.score { Ordering::Less } else { Ordering::Greater };
    }
    if a.path.len() != b.path.len() {
        return b.path.len().cmp(&a.path.len());
    }
    let la = a.relations.labels();
    let lb = b.relations.labels();
    if la != lb {
        return la.cmp(lb);
    }
    let ea: Vec<u32> = a.path.entities().map(|e| e.0).collect();
    let eb: Vec<u32> = b.path.entities().map(|e| e.0).collect();
    ea.cmp(&eb)
}
