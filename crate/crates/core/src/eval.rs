//! Dataset loading, per-sample scoring and aggregate reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::EvalMode;
use crate::digest::sha256_hex;
use crate::llm::UsageLedger;
use crate::pipeline::{Pipeline, Trace};
use crate::planner::Query;
use crate::reasoner::{normalize_answer, AnswerSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QASample {
    pub id: String,
    pub question: String,
    pub topic_entities: Vec<String>,
    /// One alias list per gold answer.
    pub gold_answers: Vec<Vec<String>>,
}

impl QASample {
    pub fn query(&self) -> Query {
        Query { id: self.id.clone(), question: self.question.clone(), topic_entities: self.topic_entities.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Simple,
    Webqsp,
    Cwq,
}

impl std::str::FromStr for DatasetFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "simple" => Ok(Self::Simple),
            "webqsp" => Ok(Self::Webqsp),
            "cwq" => Ok(Self::Cwq),
            other => Err(format!("unknown dataset format `{other}` (expected simple, webqsp or cwq)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("record {index}: {reason}")]
    Record { index: usize, reason: String },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

fn record_err(index: usize, reason: impl Into<String>) -> DatasetError {
    DatasetError::Record { index, reason: reason.into() }
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<QASample>, DatasetError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DatasetError::Io { path: path.display().to_string(), reason: e.to_string() })?;
    parse_dataset(&text, format)
}

/// Records keep their file order. Indices in errors are 0-based.
///
/// * `simple`: line-JSON `{id, question, topics: [..], answers: [[alias, ..], ..]}`.
/// * `webqsp`: the original `{"Questions": [...]}` document, or line-JSON with
///   `id`, `question`, `q_entity` and `answer` (or `a_entity`).
/// * `cwq`: a JSON array of `{ID, question, answers: [{answer, aliases}]}`
///   with optional `topic_entities`, or the same line-JSON shape as `webqsp`.
pub fn parse_dataset(text: &str, format: DatasetFormat) -> Result<Vec<QASample>, DatasetError> {
    let trimmed = text.trim_start();
    let samples = match format {
        DatasetFormat::Simple => json_lines(text)?.iter().enumerate().map(|(i, v)| simple_record(i, v)).collect(),
        DatasetFormat::Webqsp if trimmed.starts_with('{') && is_document(trimmed) => webqsp_document(trimmed),
        DatasetFormat::Cwq if trimmed.starts_with('[') => cwq_document(trimmed),
        DatasetFormat::Webqsp | DatasetFormat::Cwq => {
            json_lines(text)?.iter().enumerate().map(|(i, v)| entity_list_record(i, v)).collect()
        }
    }?;
    Ok(samples)
}

fn is_document(text: &str) -> bool {
    serde_json::from_str::<Value>(text).is_ok_and(|v| v.get("Questions").is_some())
}

fn json_lines(text: &str) -> Result<Vec<Value>, DatasetError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| record_err(i, e.to_string())))
        .collect()
}

fn field<'a>(i: usize, v: &'a Value, name: &str) -> Result<&'a Value, DatasetError> {
    v.get(name).filter(|f| !f.is_null()).ok_or_else(|| record_err(i, format!("missing field `{name}`")))
}

fn string(i: usize, v: &Value, name: &str) -> Result<String, DatasetError> {
    match field(i, v, name)? {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(record_err(i, format!("field `{name}` must be a string"))),
    }
}

fn strings(i: usize, v: &Value, name: &str) -> Result<Vec<String>, DatasetError> {
    match field(i, v, name)? {
        Value::Array(items) => items
            .iter()
            .map(|x| x.as_str().map(str::to_owned).ok_or_else(|| record_err(i, format!("`{name}` must hold strings"))))
            .collect(),
        Value::String(s) => Ok(vec![s.clone()]),
        _ => Err(record_err(i, format!("field `{name}` must be a list of strings"))),
    }
}

fn non_empty(i: usize, gold: Vec<Vec<String>>) -> Result<Vec<Vec<String>>, DatasetError> {
    let gold: Vec<Vec<String>> = gold
        .into_iter()
        .map(|aliases| aliases.into_iter().filter(|a| !a.trim().is_empty()).collect::<Vec<_>>())
        .filter(|aliases| !aliases.is_empty())
        .collect();
    if gold.is_empty() {
        return Err(record_err(i, "no gold answers"));
    }
    Ok(gold)
}

fn simple_record(i: usize, v: &Value) -> Result<QASample, DatasetError> {
    let answers = match field(i, v, "answers")? {
        Value::Array(items) => items
            .iter()
            .map(|a| match a {
                Value::String(s) => Ok(vec![s.clone()]),
                Value::Array(aliases) => aliases
                    .iter()
                    .map(|x| x.as_str().map(str::to_owned).ok_or_else(|| record_err(i, "aliases must be strings")))
                    .collect(),
                _ => Err(record_err(i, "each answer must be an alias list")),
            })
            .collect::<Result<Vec<_>, _>>()?,
        _ => return Err(record_err(i, "field `answers` must be a list")),
    };
    Ok(QASample {
        id: string(i, v, "id")?,
        question: string(i, v, "question")?,
        topic_entities: strings(i, v, "topics")?,
        gold_answers: non_empty(i, answers)?,
    })
}

fn entity_list_record(i: usize, v: &Value) -> Result<QASample, DatasetError> {
    let answers = if v.get("answer").is_some_and(|a| !a.is_null()) {
        strings(i, v, "answer")?
    } else {
        strings(i, v, "a_entity")?
    };
    Ok(QASample {
        id: string(i, v, "id")?,
        question: string(i, v, "question")?,
        topic_entities: strings(i, v, "q_entity")?,
        gold_answers: non_empty(i, answers.into_iter().map(|a| vec![a]).collect())?,
    })
}

fn webqsp_document(text: &str) -> Result<Vec<QASample>, DatasetError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| record_err(0, e.to_string()))?;
    let questions = doc["Questions"].as_array().ok_or_else(|| record_err(0, "`Questions` must be a list"))?;
    questions
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let question = string(i, q, "ProcessedQuestion").or_else(|_| string(i, q, "RawQuestion"))?;
            let parses = field(i, q, "Parses")?.as_array().ok_or_else(|| record_err(i, "`Parses` must be a list"))?;
            let mut topics = Vec::new();
            let mut gold: Vec<Vec<String>> = Vec::new();
            for p in parses {
                if let Some(t) = p.get("TopicEntityName").and_then(Value::as_str) {
                    if !topics.iter().any(|x| x == t) {
                        topics.push(t.to_owned());
                    }
                }
                for a in p.get("Answers").and_then(Value::as_array).into_iter().flatten() {
                    let aliases: Vec<String> = ["EntityName", "AnswerArgument"]
                        .iter()
                        .filter_map(|k| a.get(*k).and_then(Value::as_str))
                        .map(str::to_owned)
                        .collect();
                    if !aliases.is_empty() && !gold.contains(&aliases) {
                        gold.push(aliases);
                    }
                }
            }
            Ok(QASample {
                id: string(i, q, "QuestionId")?,
                question,
                topic_entities: topics,
                gold_answers: non_empty(i, gold)?,
            })
        })
        .collect()
}

fn cwq_document(text: &str) -> Result<Vec<QASample>, DatasetError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| record_err(0, e.to_string()))?;
    let items = doc.as_array().ok_or_else(|| record_err(0, "expected a list of questions"))?;
    items
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let answers =
                field(i, q, "answers")?.as_array().ok_or_else(|| record_err(i, "`answers` must be a list"))?;
            let gold = answers
                .iter()
                .map(|a| {
                    let mut aliases = vec![string(i, a, "answer")?];
                    if let Some(extra) = a.get("aliases").and_then(Value::as_array) {
                        aliases.extend(extra.iter().filter_map(Value::as_str).map(str::to_owned));
                    }
                    Ok(aliases)
                })
                .collect::<Result<Vec<_>, DatasetError>>()?;
            let topics = if q.get("topic_entities").is_some() { strings(i, q, "topic_entities")? } else { Vec::new() };
            Ok(QASample {
                id: string(i, q, "ID")?,
                question: string(i, q, "question")?,
                topic_entities: topics,
                gold_answers: non_empty(i, gold)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub hit1: u8,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub exact: u8,
}

/// The predictions a mode scores: strict drops ungrounded answers.
pub fn scored_predictions(pred: &AnswerSet, mode: EvalMode) -> Vec<&str> {
    pred.answers.iter().filter(|a| mode == EvalMode::Lenient || !a.ungrounded).map(|a| a.text.as_str()).collect()
}

/// Surface-normalized matching of predictions against alias lists.
pub fn score_sample(pred: &AnswerSet, gold: &[Vec<String>], mode: EvalMode) -> SampleScore {
    score_strings(&scored_predictions(pred, mode), gold)
}

pub fn score_strings(preds: &[&str], gold: &[Vec<String>]) -> SampleScore {
    let mut preds: Vec<String> = preds.iter().map(|p| normalize_answer(p)).filter(|p| !p.is_empty()).collect();
    preds.sort();
    preds.dedup();
    let gold: Vec<Vec<String>> =
        gold.iter().map(|aliases| aliases.iter().map(|a| normalize_answer(a)).collect()).collect();
    let matches = |p: &str, g: &[String]| g.iter().any(|a| a == p);

    let matched_preds = preds.iter().filter(|p| gold.iter().any(|g| matches(p, g))).count();
    let matched_gold = gold.iter().filter(|g| preds.iter().any(|p| matches(p, g))).count();
    let precision = if preds.is_empty() { 0.0 } else { matched_preds as f64 / preds.len() as f64 };
    let recall = if gold.is_empty() { 0.0 } else { matched_gold as f64 / gold.len() as f64 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    let exact = preds.len() == gold.len() && !gold.is_empty() && perfect_matching(&preds, &gold, matches);
    SampleScore { hit1: u8::from(matched_preds > 0), precision, recall, f1, exact: u8::from(exact) }
}

/// Kuhn's augmenting-path bipartite matching; true when every prediction
/// pairs with a distinct gold answer.
fn perfect_matching(preds: &[String], gold: &[Vec<String>], matches: impl Fn(&str, &[String]) -> bool) -> bool {
    let adj: Vec<Vec<usize>> =
        preds.iter().map(|p| (0..gold.len()).filter(|&g| matches(p, &gold[g])).collect()).collect();
    let mut owner: Vec<Option<usize>> = vec![None; gold.len()];
    fn augment(p: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &g in &adj[p] {
            if seen[g] {
                continue;
            }
            seen[g] = true;
            if owner[g].is_none_or(|q| augment(q, adj, seen, owner)) {
                owner[g] = Some(p);
                return true;
            }
        }
        false
    }
    (0..preds.len()).all(|p| augment(p, &adj, &mut vec![false; gold.len()], &mut owner))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub question: String,
    pub predicted: Vec<String>,
    pub ungrounded: Vec<String>,
    pub gold: Vec<Vec<String>>,
    #[serde(flatten)]
    pub score: SampleScore,
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub fallback_initial: bool,
    pub truncated: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub samples: usize,
    pub hit1: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy_exact: f64,
    pub accuracy_recall: f64,
    pub calls_per_question: f64,
    pub prompt_tokens_per_question: f64,
    pub completion_tokens_per_question: f64,
    pub tokens_per_question: f64,
    pub errors: usize,
}

impl Aggregate {
    /// Macro means over `records`.
    pub fn from_records(records: &[SampleRecord]) -> Self {
        let n = records.len();
        if n == 0 {
            return Self::default();
        }
        let mean = |f: &dyn Fn(&SampleRecord) -> f64| records.iter().map(f).sum::<f64>() / n as f64;
        Self {
            samples: n,
            hit1: mean(&|r| f64::from(r.score.hit1)),
            f1: mean(&|r| r.score.f1),
            precision: mean(&|r| r.score.precision),
            recall: mean(&|r| r.score.recall),
            accuracy_exact: mean(&|r| f64::from(r.score.exact)),
            accuracy_recall: mean(&|r| r.score.recall),
            calls_per_question: mean(&|r| r.calls as f64),
            prompt_tokens_per_question: mean(&|r| r.prompt_tokens as f64),
            completion_tokens_per_question: mean(&|r| r.completion_tokens as f64),
            tokens_per_question: mean(&|r| (r.prompt_tokens + r.completion_tokens) as f64),
            errors: records.iter().filter(|r| r.error.is_some()).count(),
        }
    }

    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("samples", self.samples as f64),
            ("hit1", self.hit1),
            ("f1", self.f1),
            ("precision", self.precision),
            ("recall", self.recall),
            ("accuracy_exact", self.accuracy_exact),
            ("accuracy_recall", self.accuracy_recall),
            ("calls_per_question", self.calls_per_question),
            ("prompt_tokens_per_question", self.prompt_tokens_per_question),
            ("completion_tokens_per_question", self.completion_tokens_per_question),
            ("tokens_per_question", self.tokens_per_question),
            ("errors", self.errors as f64),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_digest: String,
    pub mode: EvalMode,
    pub samples: Vec<SampleRecord>,
    pub aggregate: Aggregate,
    pub usage: UsageLedger,
}

impl EvalReport {
    pub fn new(config_digest: String, mode: EvalMode, samples: Vec<SampleRecord>, usage: UsageLedger) -> Self {
        let aggregate = Aggregate::from_records(&samples);
        Self { config_digest, mode, samples, aggregate, usage }
    }

    pub fn render(&self) -> String {
        let mode = match self.mode {
            EvalMode::Strict => "strict",
            EvalMode::Lenient => "lenient",
        };
        let mut out = String::new();
        out.push_str("# karpa evaluation report\n");
        let _ = writeln!(out, "config_digest: {}", self.config_digest);
        let _ = writeln!(out, "mode: {mode}");
        out.push_str("averaging: macro, the arithmetic mean of per-sample values\n");
        out.push_str("accuracy_exact: share of samples whose predicted set equals the gold set\n");
        out.push_str("accuracy_recall: mean per-sample recall\n");
        out.push_str("hit1: share of samples with at least one correct prediction\n");
        out.push_str("tokens: provider-reported where available, otherwise ceil(chars / 4)\n");
        out.push_str("\n## samples\n");
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("record serializes"));
            out.push('\n');
        }
        out.push_str("\n## aggregate\n");
        out.push_str(&serde_json::to_string_pretty(&self.aggregate).expect("aggregate serializes"));
        out.push_str("\n\n## usage\n");
        out.push_str(&serde_json::to_string_pretty(&self.usage).expect("usage serializes"));
        out.push('\n');
        out
    }

    /// `metric<TAB>value` lines.
    pub fn tsv(&self) -> String {
        let mut out = String::from("metric\tvalue\n");
        for (k, v) in self.aggregate.rows() {
            let _ = writeln!(out, "{k}\t{v}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub mode: EvalMode,
    pub concurrency: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub config_digest: String,
}

/// What a checkpoint file holds for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCheckpoint {
    pub config_digest: String,
    pub record: SampleRecord,
    pub trace: Trace,
}

/// `<sanitized id>-<8 hex of sha256(id)>.json`.
pub fn checkpoint_file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .take(64)
        .collect();
    format!("{safe}-{}.json", &sha256_hex(id)[..8])
}

pub fn record_from_trace(sample: &QASample, trace: &Trace, mode: EvalMode) -> SampleRecord {
    let failed = trace.error.is_some() && trace.reasoning.is_none();
    let score = if failed { SampleScore::default() } else { score_sample(&trace.answers, &sample.gold_answers, mode) };
    let usage = &trace.transcript.usage;
    SampleRecord {
        id: sample.id.clone(),
        question: sample.question.clone(),
        predicted: trace.answers.texts().map(str::to_owned).collect(),
        ungrounded: trace.answers.answers.iter().filter(|a| a.ungrounded).map(|a| a.text.clone()).collect(),
        gold: sample.gold_answers.clone(),
        score,
        calls: usage.calls,
        prompt_tokens: usage.prompt_tokens,
        completion_tokens: usage.completion_tokens,
        fallback_initial: trace.fallback_initial,
        truncated: trace.truncated,
        error: trace.error.clone(),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Runs every sample, reusing checkpoints written under the same config
/// digest. Output order is dataset order whatever the concurrency.
pub fn evaluate(pipeline: &Pipeline, samples: &[QASample], opts: &EvalOptions) -> Result<EvalReport, EvalError> {
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| EvalError::Checkpoint { path: dir.display().to_string(), reason: e.to_string() })?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.concurrency.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    let results: Vec<Result<(SampleRecord, UsageLedger), EvalError>> =
        pool.install(|| samples.par_iter().map(|s| evaluate_one(pipeline, s, opts)).collect());
    let mut records = Vec::with_capacity(samples.len());
    let mut usage = UsageLedger::default();
    for r in results {
        let (record, ledger) = r?;
        usage.merge(&ledger);
        records.push(record);
    }
    Ok(EvalReport::new(opts.config_digest.clone(), opts.mode, records, usage))
}

fn evaluate_one(
    pipeline: &Pipeline,
    sample: &QASample,
    opts: &EvalOptions,
) -> Result<(SampleRecord, UsageLedger), EvalError> {
    let path = opts.checkpoint_dir.as_ref().map(|d| d.join(checkpoint_file_name(&sample.id)));
    if let Some(path) = &path {
        if let Ok(text) = std::fs::read_to_string(path) {
            if let Ok(cp) = serde_json::from_str::<SampleCheckpoint>(&text) {
                if cp.config_digest == opts.config_digest && cp.record.id == sample.id {
                    let record = record_from_trace(sample, &cp.trace, opts.mode);
                    return Ok((record, cp.trace.transcript.usage));
                }
            }
        }
    }
    let trace = match pipeline.run(&sample.query()) {
        Ok(t) => t,
        Err(failure) => *failure.trace,
    };
    let record = record_from_trace(sample, &trace, opts.mode);
    if let Some(path) = &path {
        let cp = SampleCheckpoint { config_digest: opts.config_digest.clone(), record: record.clone(), trace };
        let body = serde_json::to_string(&cp).expect("checkpoint serializes");
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, body)
            .and_then(|()| std::fs::rename(&tmp, path))
            .map_err(|e| EvalError::Checkpoint { path: path.display().to_string(), reason: e.to_string() })?;
        return Ok((record, cp.trace.transcript.usage));
    }
    let usage = trace.transcript.usage;
    Ok((record, usage))
}
