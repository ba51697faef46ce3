//! In-memory triple store with interned labels and sorted adjacency indexes.
//!
//! Entity and relation ids are dense and assigned in first-appearance order
//! while loading, so the same input always produces the same ids. The graph
//! is immutable once built and can be shared freely between threads.

use std::fmt;
use std::io::{BufRead, Write};

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

/// Suffix appended to a relation label when an edge is walked tail-to-head.
pub const INVERSE_MARKER: &str = "~inv";

#[derive(Debug, thiserror::Error)]
pub enum KgError {
    #[error("line {line}: expected 3 tab-separated fields, found {found}")]
    Parse { line: usize, found: usize },
    #[error("line {line}: empty label")]
    EmptyLabel { line: usize },
    #[error("unknown entity id {0}")]
    UnknownEntity(u32),
    #[error("unknown entity `{0}`")]
    UnknownEntityLabel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

/// A relation as it appears on a traversed edge: the stored relation, walked
/// either head-to-tail or tail-to-head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationRef {
    pub id: RelationId,
    pub inverse: bool,
}

impl RelationRef {
    pub fn forward(id: RelationId) -> Self {
        Self { id, inverse: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub relation: RelationRef,
    pub target: EntityId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Forward,
    Inverse,
    Both,
}

#[derive(Debug, Default, Clone)]
pub struct KnowledgeGraph {
    entities: IndexSet<String>,
    relations: IndexSet<String>,
    inverse_labels: Vec<String>,
    label_ranks: Vec<u32>,
    triples: Vec<Triple>,
    out_index: Vec<Vec<(RelationId, EntityId)>>,
    in_index: Vec<Vec<(RelationId, EntityId)>>,
}

impl KnowledgeGraph {
    /// Reads `head<TAB>relation<TAB>tail` lines. Blank lines and lines
    /// starting with `#` are skipped; repeated triples are stored once.
    pub fn load_triples<R: BufRead>(source: R) -> Result<Self, KgError> {
        let mut builder = GraphBuilder::default();
        for (idx, line) in source.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(KgError::Parse { line: idx + 1, found: fields.len() });
            }
            if fields.iter().any(|f| f.is_empty()) {
                return Err(KgError::EmptyLabel { line: idx + 1 });
            }
            builder.add(fields[0], fields[1], fields[2]);
        }
        Ok(builder.finish())
    }

    pub fn load_str(text: &str) -> Result<Self, KgError> {
        Self::load_triples(text.as_bytes())
    }

    pub fn from_triples<'a, I>(triples: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut builder = GraphBuilder::default();
        for (h, r, t) in triples {
            builder.add(h, r, t);
        }
        builder.finish()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.entities.get_index_of(label).map(|i| EntityId(i as u32))
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.relations.get_index_of(label).map(|i| RelationId(i as u32))
    }

    pub fn entity_label(&self, id: EntityId) -> Option<&str> {
        self.entities.get_index(id.0 as usize).map(String::as_str)
    }

    pub fn relation_label(&self, id: RelationId) -> Option<&str> {
        self.relations.get_index(id.0 as usize).map(String::as_str)
    }

    /// Label of a traversed relation; inverse edges carry the `~inv` suffix.
    ///
    /// Panics if the id does not belong to this graph.
    pub fn relation_ref_label(&self, rel: RelationRef) -> &str {
        if rel.inverse {
            &self.inverse_labels[rel.id.0 as usize]
        } else {
            &self.relations[rel.id.0 as usize]
        }
    }

    /// Position of the relation's label in lexicographic label order, so
    /// rank sequences compare like label sequences.
    pub fn relation_rank(&self, rel: RelationRef) -> u32 {
        self.label_ranks[2 * rel.id.0 as usize + usize::from(rel.inverse)]
    }

    /// Resolves a label that may carry the inverse marker.
    pub fn resolve_relation_label(&self, label: &str) -> Option<RelationRef> {
        if let Some(id) = self.relation_id(label) {
            return Some(RelationRef::forward(id));
        }
        let base = label.strip_suffix(INVERSE_MARKER)?;
        self.relation_id(base).map(|id| RelationRef { id, inverse: true })
    }

    pub fn contains_entity(&self, id: EntityId) -> bool {
        (id.0 as usize) < self.entities.len()
    }

    /// Adjacent edges of `entity`. Forward edges come first when both
    /// directions are requested.
    pub fn neighbors(&self, entity: EntityId, direction: Direction) -> Result<Vec<Edge>, KgError> {
        if !self.contains_entity(entity) {
            return Err(KgError::UnknownEntity(entity.0));
        }
        Ok(self.edges(entity, direction).collect())
    }

    /// Unchecked variant of [`neighbors`](Self::neighbors) used by the search loops.
    pub(crate) fn edges(&self, entity: EntityId, direction: Direction) -> impl Iterator<Item = Edge> + '_ {
        let idx = entity.0 as usize;
        let forward: &[(RelationId, EntityId)] = match direction {
            Direction::Forward | Direction::Both => &self.out_index[idx],
            Direction::Inverse => &[],
        };
        let inverse: &[(RelationId, EntityId)] = match direction {
            Direction::Inverse | Direction::Both => &self.in_index[idx],
            Direction::Forward => &[],
        };
        forward
            .iter()
            .map(|&(r, t)| Edge { relation: RelationRef::forward(r), target: t })
            .chain(inverse.iter().map(|&(r, h)| Edge { relation: RelationRef { id: r, inverse: true }, target: h }))
    }

    pub fn has_edge(&self, from: EntityId, relation: RelationRef, to: EntityId) -> bool {
        let Some(list) =
            (if relation.inverse { self.in_index.get(from.0 as usize) } else { self.out_index.get(from.0 as usize) })
        else {
            return false;
        };
        list.binary_search(&(relation.id, to)).is_ok()
    }

    /// Distinct stored relation labels in lexicographic order. Inverse
    /// labels are never included.
    pub fn relation_vocabulary(&self) -> Vec<String> {
        let mut vocab: Vec<String> = self.relations.iter().cloned().collect();
        vocab.sort();
        vocab
    }

    pub fn max_out_degree(&self, direction: Direction) -> usize {
        (0..self.entities.len()).map(|i| self.edges(EntityId(i as u32), direction).count()).max().unwrap_or(0)
    }

    /// Writes the triple set as TSV, ordered by (head, relation, tail) label.
    pub fn dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut rows: Vec<(&str, &str, &str)> = self
            .triples
            .iter()
            .map(|t| {
                (
                    self.entities[t.head.0 as usize].as_str(),
                    self.relations[t.relation.0 as usize].as_str(),
                    self.entities[t.tail.0 as usize].as_str(),
                )
            })
            .collect();
        rows.sort_unstable();
        for (h, r, t) in rows {
            writeln!(out, "{h}\t{r}\t{t}")?;
        }
        Ok(())
    }

    pub fn dump_string(&self) -> String {
        let mut buf = Vec::new();
        self.dump(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("labels are UTF-8")
    }
}

#[derive(Default)]
struct GraphBuilder {
    entities: IndexSet<String>,
    relations: IndexSet<String>,
    triples: Vec<Triple>,
}

impl GraphBuilder {
    fn add(&mut self, head: &str, relation: &str, tail: &str) {
        let head = EntityId(self.entities.insert_full(head.to_owned()).0 as u32);
        let relation = RelationId(self.relations.insert_full(relation.to_owned()).0 as u32);
        let tail = EntityId(self.entities.insert_full(tail.to_owned()).0 as u32);
        self.triples.push(Triple { head, relation, tail });
    }

    fn finish(mut self) -> KnowledgeGraph {
        self.triples.sort_unstable();
        self.triples.dedup();
        let n = self.entities.len();
        let mut out_index = vec![Vec::new(); n];
        let mut in_index = vec![Vec::new(); n];
        for t in &self.triples {
            out_index[t.head.0 as usize].push((t.relation, t.tail));
            in_index[t.tail.0 as usize].push((t.relation, t.head));
        }
        for list in out_index.iter_mut().chain(in_index.iter_mut()) {
            list.sort_unstable();
        }
        let inverse_labels: Vec<String> = self.relations.iter().map(|r| format!("{r}{INVERSE_MARKER}")).collect();
        let mut by_label: Vec<(&str, usize)> = Vec::with_capacity(2 * self.relations.len());
        for (i, (fwd, inv)) in self.relations.iter().zip(&inverse_labels).enumerate() {
            by_label.push((fwd, 2 * i));
            by_label.push((inv, 2 * i + 1));
        }
        by_label.sort_unstable();
        let mut label_ranks = vec![0u32; by_label.len()];
        let mut rank = 0u32;
        for (pos, &(label, slot)) in by_label.iter().enumerate() {
            if pos > 0 && by_label[pos - 1].0 != label {
                rank += 1;
            }
            label_ranks[slot] = rank;
        }
        KnowledgeGraph {
            entities: self.entities,
            relations: self.relations,
            inverse_labels,
            label_ranks,
            triples: self.triples,
            out_index,
            in_index,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts_distinct_entities() {
        let g = KnowledgeGraph::load_str("a\tr\tb\nb\tr\tc\na\ts\tc\n").unwrap();
        assert_eq!(g.triple_count(), 3);
        assert_eq!(g.entity_count(), 3);
        assert_eq!(g.relation_count(), 2);
    }

    #[test]
    fn duplicate_lines_are_stored_once() {
        let g = KnowledgeGraph::load_str("a\tr\tb\na\tr\tb\n").unwrap();
        assert_eq!(g.triple_count(), 1);
    }

    #[test]
    fn wrong_field_count_reports_line() {
        match KnowledgeGraph::load_str("a\tb") {
            Err(KgError::Parse { line: 1, found: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match KnowledgeGraph::load_str("# comment\na\tr\tb\n\nx\ty\tz\tw\n") {
            Err(KgError::Parse { line: 4, found: 4 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_stream_is_empty_graph() {
        let g = KnowledgeGraph::load_str("").unwrap();
        assert_eq!(g.triple_count(), 0);
        assert!(g.relation_vocabulary().is_empty());
    }

    #[test]
    fn ids_follow_first_appearance() {
        let g = KnowledgeGraph::load_str("z\tq\ty\ny\tp\tx\n").unwrap();
        assert_eq!(g.entity_id("z"), Some(EntityId(0)));
        assert_eq!(g.entity_id("y"), Some(EntityId(1)));
        assert_eq!(g.entity_id("x"), Some(EntityId(2)));
        assert_eq!(g.relation_id("p"), Some(RelationId(1)));
    }

    #[test]
    fn neighbors_by_direction() {
        let g = KnowledgeGraph::load_str("A\tr\tB\n").unwrap();
        let a = g.entity_id("A").unwrap();
        let b = g.entity_id("B").unwrap();
        let r = g.relation_id("r").unwrap();
        assert!(g.neighbors(b, Direction::Forward).unwrap().is_empty());
        assert_eq!(
            g.neighbors(a, Direction::Forward).unwrap(),
            vec![Edge { relation: RelationRef::forward(r), target: b }]
        );
        let inv = g.neighbors(b, Direction::Inverse).unwrap();
        assert_eq!(inv.len(), 1);
        assert_eq!(g.relation_ref_label(inv[0].relation), "r~inv");
        assert_eq!(inv[0].target, a);
        assert!(matches!(g.neighbors(EntityId(9), Direction::Both), Err(KgError::UnknownEntity(9))));
    }

    #[test]
    fn vocabulary_sorted_and_deduplicated() {
        let g = KnowledgeGraph::load_str("x\tb\ty\ny\ta\tz\nz\ta\tx\n").unwrap();
        assert_eq!(g.relation_vocabulary(), vec!["a", "b"]);
        assert_eq!(g.relation_vocabulary().len(), g.relation_count());
    }

    #[test]
    fn ranks_follow_label_order() {
        let g = KnowledgeGraph::load_str("a\tzeta\tb\nb\talpha\tc\nc\tzeta~inv\ta\n").unwrap();
        let zeta = RelationRef::forward(g.relation_id("zeta").unwrap());
        let alpha = RelationRef::forward(g.relation_id("alpha").unwrap());
        let zeta_inv = RelationRef { inverse: true, ..zeta };
        assert!(g.relation_rank(alpha) < g.relation_rank(zeta));
        assert!(g.relation_rank(zeta) < g.relation_rank(zeta_inv));
        // a stored label that collides with a synthetic inverse label shares its rank
        let literal = RelationRef::forward(g.relation_id("zeta~inv").unwrap());
        assert_eq!(g.relation_rank(literal), g.relation_rank(zeta_inv));
    }

    #[test]
    fn inverse_label_resolution() {
        let g = KnowledgeGraph::load_str("a\tpeople.person.children\tb\n").unwrap();
        let r = g.resolve_relation_label("people.person.children~inv").unwrap();
        assert!(r.inverse);
        assert!(g.resolve_relation_label("nope~inv").is_none());
    }

    fn arb_lines() -> impl Strategy<Value = Vec<(u8, u8, u8)>> {
        prop::collection::vec((0u8..12, 0u8..5, 0u8..12), 0..60)
    }

    fn render(lines: &[(u8, u8, u8)]) -> String {
        lines.iter().map(|(h, r, t)| format!("n{h}\trel.{r}\tn{t}\n")).collect()
    }

    proptest! {
        #[test]
        fn each_triple_indexed_once_each_way(lines in arb_lines()) {
            let g = KnowledgeGraph::load_str(&render(&lines)).unwrap();
            let out_total: usize = (0..g.entity_count()).map(|i| g.out_index[i].len()).sum();
            let in_total: usize = (0..g.entity_count()).map(|i| g.in_index[i].len()).sum();
            prop_assert_eq!(out_total, g.triple_count());
            prop_assert_eq!(in_total, g.triple_count());
            for t in g.triples() {
                let outs = g.out_index[t.head.0 as usize].iter().filter(|&&e| e == (t.relation, t.tail)).count();
                let ins = g.in_index[t.tail.0 as usize].iter().filter(|&&e| e == (t.relation, t.head)).count();
                prop_assert_eq!(outs, 1);
                prop_assert_eq!(ins, 1);
            }
            for list in g.out_index.iter().chain(g.in_index.iter()) {
                prop_assert!(list.windows(2).all(|w| w[0] < w[1]));
            }
        }

        #[test]
        fn dump_load_dump_is_stable(lines in arb_lines()) {
            let g = KnowledgeGraph::load_str(&render(&lines)).unwrap();
            let first = g.dump_string();
            let second = KnowledgeGraph::load_str(&first).unwrap().dump_string();
            prop_assert_eq!(first, second);
        }

        #[test]
        fn any_loadable_text_survives_a_dump(text in "[ab# \t\r\n]{0,40}") {
            if let Ok(g) = KnowledgeGraph::load_str(&text) {
                let again = KnowledgeGraph::load_str(&g.dump_string()).unwrap();
                prop_assert_eq!(again.triple_count(), g.triple_count());
                prop_assert_eq!(again.entity_count(), g.entity_count());
                prop_assert_eq!(again.dump_string(), g.dump_string());
            }
        }

        #[test]
        fn both_is_forward_plus_inverse(lines in arb_lines()) {
            let g = KnowledgeGraph::load_str(&render(&lines)).unwrap();
            for i in 0..g.entity_count() {
                let e = EntityId(i as u32);
                let f = g.neighbors(e, Direction::Forward).unwrap();
                let inv = g.neighbors(e, Direction::Inverse).unwrap();
                let both = g.neighbors(e, Direction::Both).unwrap();
                prop_assert_eq!(both.len(), f.len() + inv.len());
                prop_assert_eq!(&both[..f.len()], &f[..]);
            }
        }
    }
}
