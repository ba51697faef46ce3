use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(rel)
}

fn karpa(args: &[&str]) -> Output {
    karpa_env(args, &[])
}

fn karpa_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_karpa"));
    cmd.args(args).env_remove("KARPA_CONFIG");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn conf(rel: &str) -> String {
    fixture(rel).display().to_string()
}

#[test]
fn ingest_reports_counts_and_dumps() {
    let kg = conf("brahui/kg.tsv");
    let o = karpa(&["ingest", &kg]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "entities\t7\nrelations\t8\ntriples\t9\n");
    let dump = stdout(&karpa(&["ingest", &kg, "--dump"]));
    assert_eq!(dump.lines().count(), 9);
}

#[test]
fn ingest_rejects_malformed_triples() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "a\tb\n").unwrap();
    let o = karpa(&["ingest", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn ask_is_deterministic() {
    let c = conf("brahui/config.conf");
    let q = "Name the president of the country whose main spoken language was Brahui in 1980?";
    let args = ["--config", &c, "ask", "--question", q, "--topic", "Brahui Language"];
    let a = karpa(&args);
    let b = karpa(&args);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let trace: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(trace["transcript"]["usage"]["calls"], 3);

    let short = karpa(&["--config", &c, "ask", "--question", q, "--topic", "Brahui Language", "--answers-only"]);
    assert_eq!(stdout(&short), "{Muhammad Zia-ul-Haq}\n");
}

#[test]
fn config_can_come_from_the_environment() {
    let c = conf("brahui/config.conf");
    let q = "Name the president of the country whose main spoken language was Brahui in 1980?";
    let o =
        karpa_env(&["ask", "--question", q, "--topic", "Brahui Language", "--answers-only"], &[("KARPA_CONFIG", &c)]);
    assert_eq!(stdout(&o), "{Muhammad Zia-ul-Haq}\n");
}

#[test]
fn unknown_topic_is_a_data_error() {
    let c = conf("brahui/config.conf");
    let o = karpa(&["--config", &c, "ask", "--question", "Who?", "--topic", "Atlantis"]);
    assert_eq!(code(&o), 3);
    let trace: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(trace["unresolved_topics"][0], "Atlantis");
}

#[test]
fn unscripted_question_is_a_provider_error() {
    let c = conf("brahui/config.conf");
    let o = karpa(&["--config", &c, "ask", "--question", "Something else?", "--topic", "Pakistan"]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no scripted response"));
}

#[test]
fn config_errors_exit_with_two() {
    let o = karpa(&["--config", "/nonexistent/karpa.conf", "ask", "--question", "q", "--topic", "t"]);
    assert_eq!(code(&o), 2);
    let c = conf("brahui/config.conf");
    let o = karpa_env(&["--config", &c, "cache", "stats"], &[("KARPA_MATCHER__BOGUS", "1")]);
    assert_eq!(code(&o), 2);
    let o = karpa_env(&["--config", &c, "cache", "stats"], &[("KARPA_MATCHER__TOP_K", "many")]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&karpa(&["ask"])), 2);
}

#[test]
fn eval_reports_are_identical_across_concurrency() {
    let c = conf("qa20/config.conf");
    let ds = conf("qa20/dataset.jsonl");
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for threads in ["1", "1", "4"] {
        let out = dir.path().join(format!("report-{}.txt", reports.len()));
        let tsv = dir.path().join("summary.tsv");
        let o = karpa(&[
            "--config",
            &c,
            "eval",
            "--dataset",
            &ds,
            "--format",
            "simple",
            "--concurrency",
            threads,
            "--out",
            out.to_str().unwrap(),
            "--tsv",
            tsv.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(std::fs::read_to_string(&tsv).unwrap().contains("calls_per_question\t3.45"));
        reports.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);
}

#[test]
fn eval_with_a_missing_dataset_is_a_data_error() {
    let c = conf("qa20/config.conf");
    let o = karpa(&["--config", &c, "eval", "--dataset", "/nonexistent.jsonl"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn match_shows_the_trap() {
    let c = conf("trap/heuristic.conf");
    let path = "location.country.capital,location.city.mayor";
    let beam = karpa(&["--config", &c, "match", "--topic", "Freedonia", "--path", path, "--strategy", "beam"]);
    assert_eq!(code(&beam), 0);
    let heuristic = karpa(&["--config", &c, "match", "--topic", "Freedonia", "--path", path]);
    let first: serde_json::Value = serde_json::from_str(stdout(&heuristic).lines().next().unwrap()).unwrap();
    assert_eq!(first["rank"], 1);
    assert_eq!(first["relations"], serde_json::json!(["location.country.capital_city", "location.city.mayor"]));
    assert_ne!(beam.stdout, heuristic.stdout);
    let unknown = karpa(&["--config", &c, "match", "--topic", "Nowhere", "--path", path]);
    assert_eq!(code(&unknown), 3);
}

#[test]
fn cache_stats_and_clear() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("karpa.conf");
    std::fs::write(
        &cfg,
        format!("kg.path = {}\nembedding.cache = embeddings.cache\n", fixture("trap/kg.tsv").display()),
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let m = karpa(&["--config", c, "match", "--topic", "Freedonia", "--path", "location.city.mayor"]);
    assert_eq!(code(&m), 0, "{}", String::from_utf8_lossy(&m.stderr));
    let stats = stdout(&karpa(&["--config", c, "cache", "stats"]));
    let records: usize = stats.lines().next().unwrap().strip_prefix("records\t").unwrap().parse().unwrap();
    assert!(records > 0);
    assert_eq!(code(&karpa(&["--config", c, "cache", "clear"])), 0);
    assert!(stdout(&karpa(&["--config", c, "cache", "stats"])).starts_with("records\t0\n"));
}
