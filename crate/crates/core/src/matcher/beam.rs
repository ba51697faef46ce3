use super::{
    sort_ranked, Hop, MatchConfig, MatchError, MatchOutcome, PathMatcher, QueueEntry, RelationPath, ScoredPath,
    StepCosts,
};
use crate::kg::EntityId;

impl PathMatcher<'_> {
    /// Position-aligned beam search. Step `j` compares each edge label with
    /// `candidate[j]`; between steps only the `beam_width` cheapest prefixes
    /// survive. The last step ranks every expansion and keeps `top_k`.
    ///
    /// Returns only paths of exactly `candidate.len()` hops.
    pub fn beam_match(
        &self,
        start: EntityId,
        candidate: &RelationPath,
        cfg: &MatchConfig,
    ) -> Result<MatchOutcome, MatchError> {
        self.check_fixed_length(candidate, cfg)?;
        self.check_start(start)?;
        let kg = self.kg;
        let n = candidate.len();
        let mut costs = StepCosts::new(self, candidate)?;

        let mut beam = vec![QueueEntry::new(kg, 0.0, super::ReasoningPath::new(start))];
        for step in 0..n {
            let mut next = Vec::new();
            for partial in &beam {
                for edge in kg.edges(partial.path.tail(), cfg.direction) {
                    if partial.path.visits(edge.target) {
                        continue;
                    }
                    let sum = partial.primary + costs.cost(edge.relation, step)?;
                    let path = partial.path.extended(Hop { relation: edge.relation, entity: edge.target });
                    next.push(QueueEntry::new(kg, sum, path));
                }
            }
            next.sort_unstable();
            if step + 1 < n {
                next.truncate(cfg.beam_width);
            }
            beam = next;
            if beam.is_empty() {
                break;
            }
        }

        let mut paths: Vec<ScoredPath> =
            beam.into_iter().map(|e| ScoredPath::new(kg, e.path, 1.0 - e.primary / n as f64)).collect();
        sort_ranked(&mut paths);
        paths.truncate(cfg.top_k);
        Ok(MatchOutcome { paths, truncated: false })
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::*;

    #[test]
    fn single_step_ranks_neighbours_by_cost() {
        let kg = grandfather();
        let gw = gateway();
        let m = PathMatcher::new(&kg, &gw);
        let alice = kg.entity_id("Alice").unwrap();
        let cand = RelationPath::new(["grandfather"]).unwrap();
        let cfg = MatchConfig { strategy: Strategy::Beam, beam_width: 1, ..MatchConfig::default() };
        let out = m.beam_match(alice, &cand, &cfg).unwrap();
        assert_eq!(out.paths.len(), 4);
        let mut expected: Vec<(f64, String)> = ["grandfather", "father", "spouse", "profession"]
            .iter()
            .map(|l| (m.step_cost(l, "grandfather").unwrap(), l.to_string()))
            .collect();
        expected.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let got: Vec<&str> = out.paths.iter().map(|p| p.relations.labels()[0].as_str()).collect();
        let want: Vec<&str> = expected.iter().map(|e| e.1.as_str()).collect();
        assert_eq!(got, want);
        for (p, (c, _)) in out.paths.iter().zip(&expected) {
            assert!((p.cost - c).abs() < 1e-12);
        }
    }

    #[test]
    fn width_one_falls_into_trap() {
        let kg = trap();
        let gw = gateway();
        let m = PathMatcher::new(&kg, &gw);
        let start = kg.entity_id("Freedonia").unwrap();
        let cfg = MatchConfig { strategy: Strategy::Beam, beam_width: 1, ..MatchConfig::default() };
        let out = m.beam_match(start, &trap_candidate(), &cfg).unwrap();
        assert!(out.paths.is_empty());
        let wide = MatchConfig { beam_width: 2, ..cfg };
        let out = m.beam_match(start, &trap_candidate(), &wide).unwrap();
        assert_eq!(labels(&out.paths[0]), ["location.country.capital_city", "location.city.mayor"]);
    }

    #[test]
    fn no_path_of_required_length_is_empty_not_error() {
        let kg = grandfather();
        let gw = gateway();
        let m = PathMatcher::new(&kg, &gw);
        let alice = kg.entity_id("Alice").unwrap();
        let cand = RelationPath::new(["a", "b", "c"]).unwrap();
        let out = m.beam_match(alice, &cand, &MatchConfig::default()).unwrap();
        assert!(out.paths.is_empty());
    }

    #[test]
    fn candidate_longer_than_max_len_rejected() {
        let kg = grandfather();
        let gw = gateway();
        let m = PathMatcher::new(&kg, &gw);
        let alice = kg.entity_id("Alice").unwrap();
        let cand = RelationPath::new(["father", "father"]).unwrap();
        let cfg = MatchConfig { max_len: Some(1), ..MatchConfig::default() };
        assert!(matches!(m.beam_match(alice, &cand, &cfg), Err(MatchError::InvalidConfig(_))));
    }
}
