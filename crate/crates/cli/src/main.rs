use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use karpa::config::{ConfigError, EvalMode, PipelineConfig, CONFIG_ENV};
use karpa::embedding::{CacheFile, EmbedError};
use karpa::eval::{evaluate, load_dataset, DatasetFormat, EvalOptions};
use karpa::kg::{KgError, KnowledgeGraph};
use karpa::llm::LlmError;
use karpa::matcher::{write_match_report, PathMatcher, RelationPath, Strategy};
use karpa::pipeline::{build_embeddings, load_graph, Pipeline, SetupError};
use karpa::planner::Query;

#[derive(Parser)]
#[command(name = "karpa", version, about = "Knowledge-graph question answering with pre-planned relation paths")]
struct Cli {
    /// Key-value config file; `KARPA_SECTION__KEY` variables override it.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a triple file and report its size.
    Ingest {
        tsv: PathBuf,
        /// Print the normalized triple dump instead of counts.
        #[arg(long)]
        dump: bool,
    },
    /// Answer one question and print the run trace as JSON.
    Ask {
        #[arg(long)]
        question: String,
        /// Topic entity label; repeat for several.
        #[arg(long = "topic", required = true)]
        topics: Vec<String>,
        /// Print only the answer set.
        #[arg(long)]
        answers_only: bool,
    },
    /// Run the pipeline over a dataset and write a report.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "simple")]
        format: DatasetFormat,
        /// Report destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a metric/value TSV summary here.
        #[arg(long)]
        tsv: Option<PathBuf>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<EvalMode>,
        #[arg(long)]
        concurrency: Option<usize>,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
    },
    /// Match one relation path from a topic entity and print ranked paths.
    Match {
        #[arg(long)]
        topic: String,
        /// Comma-separated relation labels.
        #[arg(long)]
        path: String,
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Inspect or empty the embedding cache named by `embedding.cache`.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    Stats,
    Clear,
}

fn parse_mode(s: &str) -> Result<EvalMode, String> {
    match s.to_ascii_lowercase().as_str() {
        "strict" => Ok(EvalMode::Strict),
        "lenient" => Ok(EvalMode::Lenient),
        other => Err(format!("unknown mode `{other}` (expected strict or lenient)")),
    }
}

/// A failure and the exit status it maps to.
#[derive(Debug)]
enum Failure {
    Config(String),
    Data(String),
    Provider(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Provider(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Config(m) | Self::Data(m) | Self::Provider(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<KgError> for Failure {
    fn from(e: KgError) -> Self {
        Self::Data(format!("knowledge graph: {e}"))
    }
}

impl From<EmbedError> for Failure {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::Cache(_) => Self::Data(e.to_string()),
            _ => Self::Provider(e.to_string()),
        }
    }
}

impl From<SetupError> for Failure {
    fn from(e: SetupError) -> Self {
        match e {
            SetupError::Config(e) => e.into(),
            SetupError::Template(e) => Self::Config(e.to_string()),
            SetupError::Kg(e) => e.into(),
            SetupError::Embed(e) => e.into(),
            SetupError::Llm(e @ LlmError::Fixture { .. }) => Self::Data(format!("llm: {e}")),
            SetupError::Llm(e) => Self::Provider(format!("llm: {e}")),
        }
    }
}

fn io_failure(what: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", what.display()))
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    let (mut cfg, base) = match path {
        Some(p) => (PipelineConfig::from_file(p)?, p.parent().unwrap_or(Path::new(".")).to_owned()),
        None => (PipelineConfig::default(), PathBuf::from(".")),
    };
    cfg.apply_env(std::env::vars(), &base)?;
    Ok(cfg)
}

fn write_output(out: Option<&Path>, body: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, body).map_err(|e| io_failure(p, e)),
        None => std::io::stdout().write_all(body.as_bytes()).map_err(|e| io_failure(Path::new("stdout"), e)),
    }
}

fn ingest(tsv: &Path, dump: bool) -> Result<(), Failure> {
    let kg: KnowledgeGraph = load_graph(tsv)?;
    if dump {
        return write_output(None, &kg.dump_string());
    }
    let summary = format!(
        "entities\t{}\nrelations\t{}\ntriples\t{}\n",
        kg.entity_count(),
        kg.relation_count(),
        kg.triple_count()
    );
    write_output(None, &summary)
}

fn ask(cfg: &PipelineConfig, question: String, topics: Vec<String>, answers_only: bool) -> Result<(), Failure> {
    let pipeline = Pipeline::from_config(cfg)?;
    let q = Query { id: "ask".into(), question, topic_entities: topics };
    let (trace, failure) = match pipeline.run(&q) {
        Ok(t) => (t, None),
        Err(f) => {
            let msg = f.error.to_string();
            (*f.trace, Some(Failure::Provider(msg)))
        }
    };
    let body = if answers_only {
        format!("{}\n", trace.answers.render())
    } else {
        format!("{}\n", serde_json::to_string_pretty(&trace).expect("trace serializes"))
    };
    write_output(None, &body)?;
    if let Some(f) = failure {
        return Err(f);
    }
    if trace.resolved_topics.is_empty() {
        return Err(Failure::Data(trace.error.unwrap_or_else(|| "no topic entity resolved".into())));
    }
    Ok(())
}

struct EvalArgs {
    dataset: PathBuf,
    format: DatasetFormat,
    out: Option<PathBuf>,
    tsv: Option<PathBuf>,
    mode: Option<EvalMode>,
    concurrency: Option<usize>,
    checkpoint_dir: Option<PathBuf>,
}

fn eval(mut cfg: PipelineConfig, args: EvalArgs) -> Result<(), Failure> {
    if let Some(m) = args.mode {
        cfg.eval.mode = m;
    }
    if let Some(c) = args.concurrency {
        cfg.eval.concurrency = c;
    }
    if args.checkpoint_dir.is_some() {
        cfg.eval.checkpoint_dir = args.checkpoint_dir;
    }
    let pipeline = Pipeline::from_config(&cfg)?;
    let samples = load_dataset(&args.dataset, args.format).map_err(|e| Failure::Data(format!("dataset: {e}")))?;
    let opts = EvalOptions {
        mode: cfg.eval.mode,
        concurrency: cfg.eval.concurrency,
        checkpoint_dir: cfg.eval.checkpoint_dir.clone(),
        config_digest: cfg.digest(),
    };
    let report = evaluate(&pipeline, &samples, &opts).map_err(|e| Failure::Data(e.to_string()))?;
    write_output(args.out.as_deref(), &report.render())?;
    if let Some(p) = &args.tsv {
        std::fs::write(p, report.tsv()).map_err(|e| io_failure(p, e))?;
    }
    Ok(())
}

fn run_match(
    mut cfg: PipelineConfig,
    topic: &str,
    path: &str,
    strategy: Option<Strategy>,
    top_k: Option<usize>,
) -> Result<(), Failure> {
    if let Some(s) = strategy {
        cfg.matcher.strategy = s;
    }
    if let Some(k) = top_k {
        cfg.matcher.top_k = k;
    }
    cfg.validate_retrieval()?;
    let kg = load_graph(cfg.kg_path.as_deref().expect("validated"))?;
    let embeddings = build_embeddings(&cfg)?;
    let start = kg.entity_id(topic).ok_or_else(|| Failure::Data(format!("unknown entity `{topic}`")))?;
    let candidate = RelationPath::new(path.split(',').map(str::trim).filter(|l| !l.is_empty()))
        .map_err(|e| Failure::Config(format!("--path: {e}")))?;
    let outcome = PathMatcher::new(&kg, &embeddings)
        .run(start, &candidate, &cfg.matcher)
        .map_err(|e| Failure::Provider(format!("matching: {e}")))?;
    let mut buf = Vec::new();
    write_match_report(&kg, &outcome, &mut buf).expect("writing to memory");
    write_output(None, &String::from_utf8(buf).expect("report is utf-8"))
}

fn cache(cfg: &PipelineConfig, action: CacheAction) -> Result<(), Failure> {
    let path = cfg.embedding.cache.as_deref().ok_or_else(|| Failure::Config("embedding.cache is not set".into()))?;
    match action {
        CacheAction::Stats => {
            let s = CacheFile::stats(path)?;
            write_output(None, &format!("records\t{}\nidentities\t{}\nbytes\t{}\n", s.records, s.identities, s.bytes))
        }
        CacheAction::Clear => {
            CacheFile::clear(path)?;
            write_output(None, &format!("cleared {}\n", path.display()))
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Ingest { tsv, dump } => ingest(&tsv, dump),
        Command::Ask { question, topics, answers_only } => ask(&load_config(config)?, question, topics, answers_only),
        Command::Eval { dataset, format, out, tsv, mode, concurrency, checkpoint_dir } => {
            eval(load_config(config)?, EvalArgs { dataset, format, out, tsv, mode, concurrency, checkpoint_dir })
        }
        Command::Match { topic, path, strategy, top_k } => {
            run_match(load_config(config)?, &topic, &path, strategy, top_k)
        }
        Command::Cache { action } => cache(&load_config(config)?, action),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("karpa: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn modes_parse_case_insensitively() {
        assert_eq!(parse_mode("Strict").unwrap(), EvalMode::Strict);
        assert_eq!(parse_mode("lenient").unwrap(), EvalMode::Lenient);
        assert!(parse_mode("loose").is_err());
    }

    #[test]
    fn failures_map_to_distinct_exit_codes() {
        let codes: Vec<u8> =
            [Failure::Config(String::new()), Failure::Data(String::new()), Failure::Provider(String::new())]
                .iter()
                .map(Failure::code)
                .collect();
        assert_eq!(codes, [2, 3, 4]);
        assert_eq!(Failure::from(EmbedError::Cache("x".into())).code(), 3);
    }

    #[test]
    fn global_config_flag_parses_after_the_subcommand() {
        let cli = Cli::try_parse_from(["karpa", "cache", "stats", "--config", "k.conf"]).unwrap();
        assert_eq!(cli.config.as_deref(), Some(Path::new("k.conf")));
    }
}
