use std::collections::BTreeSet;

use super::{
    Hop, MatchConfig, MatchError, MatchOutcome, PathMatcher, QueueEntry, ReasoningPath, RelationPath, ScoredPath,
    StepCosts,
};
use crate::kg::EntityId;

impl PathMatcher<'_> {
    /// Uniform-cost search over (entity, depth) states with position-aligned
    /// edge costs `1 - sim(edge, candidate[depth])`. Complete paths are ranked
    /// by mean step cost, so `score = 1 - total / len`.
    ///
    /// Every returned path has exactly `candidate.len()` hops. The search
    /// stops once no queued prefix can still reach the current top-k.
    pub fn dijkstra_avg_match(
        &self,
        start: EntityId,
        candidate: &RelationPath,
        cfg: &MatchConfig,
    ) -> Result<MatchOutcome, MatchError> {
        self.check_fixed_length(candidate, cfg)?;
        self.check_start(start)?;
        let kg = self.kg;
        let n = candidate.len();
        let mean_score = |total: f64| 1.0 - total / n as f64;
        let mut costs = StepCosts::new(self, candidate)?;

        let mut open = BTreeSet::new();
        open.insert(QueueEntry::new(kg, 0.0, ReasoningPath::new(start)));
        // best complete paths so far, kept in rank order
        let mut best: Vec<ScoredPath> = Vec::new();
        let mut truncated = false;

        let threshold = |best: &[ScoredPath]| (best.len() >= cfg.top_k).then(|| best[cfg.top_k - 1].score);

        while let Some(entry) = open.pop_first() {
            // scores only fall as cost accumulates, so this bounds every
            // completion of `entry`
            let bound = mean_score(entry.primary);
            if threshold(&best).is_some_and(|kth| bound < kth) {
                break;
            }
            if entry.path.len() == n {
                let scored = ScoredPath::new(kg, entry.path, bound);
                let pos = best.partition_point(|p| super::rank_order(p, &scored).is_lt());
                best.insert(pos, scored);
                best.truncate(cfg.top_k);
                continue;
            }
            let depth = entry.path.len();
            for edge in kg.edges(entry.path.tail(), cfg.direction) {
                if entry.path.visits(edge.target) {
                    continue;
                }
                let total = entry.primary + costs.cost(edge.relation, depth)?;
                if threshold(&best).is_some_and(|kth| mean_score(total) < kth) {
                    continue;
                }
                let path = entry.path.extended(Hop { relation: edge.relation, entity: edge.target });
                open.insert(QueueEntry::new(kg, total, path));
                if open.len() > cfg.frontier_cap {
                    open.pop_last();
                    truncated = true;
                }
            }
        }
        Ok(MatchOutcome { paths: best, truncated })
    }
}
