use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::MatchOutcome;
use crate::kg::KnowledgeGraph;

/// One ranked path as written by `karpa match`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReportLine {
    pub rank: usize,
    pub score: f64,
    pub cost: f64,
    pub relations: Vec<String>,
    pub entities: Vec<String>,
    pub truncated: bool,
}

/// Writes one JSON object per ranked path, rank starting at 1.
pub fn write_match_report<W: Write>(kg: &KnowledgeGraph, outcome: &MatchOutcome, mut out: W) -> io::Result<()> {
    for (i, p) in outcome.paths.iter().enumerate() {
        let line = MatchReportLine {
            rank: i + 1,
            score: p.score,
            cost: p.cost,
            relations: p.relations.labels().to_vec(),
            entities: p.entity_labels(kg).into_iter().map(str::to_owned).collect(),
            truncated: outcome.truncated,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
