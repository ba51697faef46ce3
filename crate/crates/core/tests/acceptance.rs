//! One pass/fail line per acceptance criterion. Runs without the libtest
//! harness so the lines always print; exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use karpa::config::{EvalMode, PipelineConfig};
use karpa::embedding::EmbeddingGateway;
use karpa::eval::{evaluate, load_dataset, score_sample, score_strings, DatasetFormat, EvalOptions, SampleScore};
use karpa::kg::{Direction, EntityId, KnowledgeGraph};
use karpa::matcher::{MatchConfig, OracleScoring, PathMatcher, RelationPath, ScoredPath, Strategy};
use karpa::pipeline::Pipeline;
use karpa::planner::parse_path_sets;
use karpa::reasoner::{parse_answers, AnswerSet};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture_pipeline(dir: &str, conf: &str) -> (PipelineConfig, Pipeline) {
    let cfg = PipelineConfig::from_file(&fixtures().join(dir).join(conf)).expect("fixture config");
    let pipeline = Pipeline::from_config(&cfg).expect("fixture pipeline");
    (cfg, pipeline)
}

const WORDS: [&str; 24] = [
    "people",
    "person",
    "location",
    "country",
    "city",
    "capital",
    "film",
    "director",
    "music",
    "album",
    "artist",
    "language",
    "spoken",
    "government",
    "office",
    "holder",
    "spouse",
    "children",
    "parent",
    "currency",
    "used",
    "contains",
    "born",
    "award",
];

fn random_label(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..=3);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(".")
}

/// A graph of at most 200 entities and 50 relation labels with out-degree
/// in 0..=4.
fn random_kg(rng: &mut ChaCha8Rng) -> (KnowledgeGraph, Vec<String>) {
    let entities = rng.random_range(10..=200);
    let mut labels: Vec<String> = Vec::new();
    for _ in 0..rng.random_range(3..=50) {
        let l = random_label(rng);
        if !labels.contains(&l) {
            labels.push(l);
        }
    }
    let mut text = String::new();
    for h in 0..entities {
        for _ in 0..rng.random_range(0..=4) {
            let t = rng.random_range(0..entities);
            let r = &labels[rng.random_range(0..labels.len())];
            text.push_str(&format!("e{h}\t{r}\te{t}\n"));
        }
    }
    text.push_str("e0\tanchor.only\te1\n");
    (KnowledgeGraph::load_str(&text).expect("random kg"), labels)
}

fn same(a: &[ScoredPath], b: &[ScoredPath]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.path == y.path && x.score == y.score)
}

fn oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let gw = EmbeddingGateway::mock(64).expect("mock");
    let mut rng = ChaCha8Rng::seed_from_u64(0x004b_4152_5041);
    let (mut heuristic_checks, mut dijkstra_checks, mut non_empty) = (0, 0, 0);
    for graph in 0..50 {
        let (kg, labels) = random_kg(&mut rng);
        let matcher = PathMatcher::new(&kg, &gw);
        let starts: Vec<EntityId> = (0..kg.entity_count() as u32)
            .map(EntityId)
            .filter(|&e| !kg.neighbors(e, Direction::Forward).expect("entity").is_empty())
            .collect();
        for _ in 0..8 {
            let start = starts[rng.random_range(0..starts.len())];
            let cand_len = rng.random_range(1..=3);
            let cand = RelationPath::new((0..cand_len).map(|_| labels[rng.random_range(0..labels.len())].clone()))
                .expect("candidate");
            let max_len = rng.random_range(cand_len..=4);
            let direction = if rng.random_bool(0.25) { Direction::Both } else { Direction::Forward };

            let cfg = MatchConfig {
                strategy: Strategy::Heuristic,
                top_k: 16,
                max_len: Some(max_len),
                exact_mode: true,
                direction,
                ..MatchConfig::default()
            };
            let got = matcher.heuristic_top_k(start, &cand, &cfg).map_err(|e| e.to_string())?;
            let want = matcher
                .brute_force_top_k(start, &cand, 16, max_len, direction, OracleScoring::Similarity)
                .map_err(|e| e.to_string())?;
            ensure(!got.truncated && same(&got.paths, &want), || {
                let show = |v: &[ScoredPath]| {
                    v.iter().map(|p| format!("{:?}@{}", p.relations.labels(), p.score)).collect::<Vec<_>>()
                };
                format!("graph {graph}: heuristic differs from brute force for {:?} max_len {max_len} {direction:?}\n{:?}\n{:?}", cand.labels(), show(&got.paths), show(&want))
            })?;
            heuristic_checks += 1;
            non_empty += usize::from(!want.is_empty());

            let cfg = MatchConfig { strategy: Strategy::Pathfind, top_k: 1, direction, ..MatchConfig::default() };
            let got = matcher.dijkstra_avg_match(start, &cand, &cfg).map_err(|e| e.to_string())?;
            let want = matcher
                .brute_force_top_k(start, &cand, 1, cand_len, direction, OracleScoring::MeanStepCost)
                .map_err(|e| e.to_string())?;
            ensure(same(&got.paths, &want), || {
                format!("graph {graph}: dijkstra best differs from brute-force mean-cost best for {:?}", cand.labels())
            })?;
            dijkstra_checks += 1;
            non_empty += usize::from(!want.is_empty());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{heuristic_checks} heuristic and {dijkstra_checks} dijkstra comparisons agree ({non_empty} non-empty), {secs:.1}s"
    ))
}

fn trap() -> Outcome {
    let kg = KnowledgeGraph::load_str(&std::fs::read_to_string(fixtures().join("trap/kg.tsv")).expect("trap kg"))
        .expect("trap kg parses");
    let gw = EmbeddingGateway::mock(64).expect("mock");
    let m = PathMatcher::new(&kg, &gw);
    let start = kg.entity_id("Freedonia").expect("start");
    let cand = RelationPath::new(["location.country.capital", "location.city.mayor"]).expect("candidate");
    let optimum = ["location.country.capital_city", "location.city.mayor"];
    let first = |paths: &[ScoredPath]| paths.first().map(|p| p.relations.labels().to_vec());

    let beam = m
        .beam_match(start, &cand, &MatchConfig { beam_width: 1, ..MatchConfig::default() })
        .map_err(|e| e.to_string())?;
    let dijkstra = m.dijkstra_avg_match(start, &cand, &MatchConfig::default()).map_err(|e| e.to_string())?;
    let heuristic = m.heuristic_top_k(start, &cand, &MatchConfig::default()).map_err(|e| e.to_string())?;
    let opt = Some(optimum.map(String::from).to_vec());
    ensure(!beam.paths.iter().any(|p| p.relations.labels() == optimum), || "beam_width=1 found the optimum".into())?;
    ensure(first(&dijkstra.paths) == opt, || format!("dijkstra best {:?}", first(&dijkstra.paths)))?;
    ensure(first(&heuristic.paths) == opt, || format!("heuristic best {:?}", first(&heuristic.paths)))?;

    let (_, b) = fixture_pipeline("trap", "beam.conf");
    let (_, h) = fixture_pipeline("trap", "heuristic.conf");
    let q = karpa::planner::Query {
        id: "trap".into(),
        question: "Who is the mayor of the capital of Freedonia?".into(),
        topic_entities: vec!["Freedonia".into()],
    };
    let tb = b.run(&q).map_err(|e| e.to_string())?;
    let th = h.run(&q).map_err(|e| e.to_string())?;
    ensure(tb != th, || "pipeline traces are identical".into())?;
    ensure(th.answers.texts().collect::<Vec<_>>() == ["Rufus Firefly"], || {
        format!("heuristic answers {:?}", th.answers)
    })?;
    ensure(!tb.answers.texts().any(|a| a == "Rufus Firefly"), || "beam pipeline found the gold tail".into())?;
    Ok(format!("beam returns {} paths; dijkstra and heuristic rank the optimum first", beam.paths.len()))
}

fn length_fairness() -> Outcome {
    // every step has the same cost: one edge label, one candidate label
    let (edge, asked) = ("people.person.parent", "people.person.father");
    let chain: String = (0..4).map(|i| format!("a{i}\t{edge}\ta{}\n", i + 1)).collect();
    let kg = KnowledgeGraph::load_str(&chain).expect("chain");
    let gw = EmbeddingGateway::mock(64).expect("mock");
    let m = PathMatcher::new(&kg, &gw);
    let step = m.step_cost(edge, asked).map_err(|e| e.to_string())?;
    ensure(step > 0.0 && step < 1.0, || format!("step cost {step} makes the check vacuous"))?;
    let start = kg.entity_id("a0").expect("a0");
    let mut costs = Vec::new();
    for len in 1..=4 {
        let cand = RelationPath::new(vec![asked; len]).expect("candidate");
        let out = m.dijkstra_avg_match(start, &cand, &MatchConfig::default()).map_err(|e| e.to_string())?;
        let p = out.paths.first().ok_or_else(|| format!("no path of length {len}"))?;
        ensure(p.path.len() == len, || format!("length {len} returned {} hops", p.path.len()))?;
        costs.push(p.cost);
    }
    ensure(costs.iter().all(|c| (c - step).abs() <= 1e-9), || format!("mean costs {costs:?} vs step {step}"))?;
    Ok(format!("mean cost {step:.6} at lengths 1..=4"))
}

fn variable_length() -> Outcome {
    let kg = KnowledgeGraph::load_str(
        "Alice\tgrandfather\tGeorge\nAlice\tfather\tBob\nBob\tfather\tCharles\nAlice\tspouse\tDan\nAlice\tprofession\tEngineer\n",
    )
    .expect("grandfather kg");
    let gw = EmbeddingGateway::mock(64).expect("mock");
    let m = PathMatcher::new(&kg, &gw);
    let start = kg.entity_id("Alice").expect("Alice");
    let cand = RelationPath::new(["grandfather"]).expect("candidate");
    let h = m
        .heuristic_top_k(start, &cand, &MatchConfig { top_k: 2, max_len: Some(2), ..MatchConfig::default() })
        .map_err(|e| e.to_string())?;
    let top2: Vec<Vec<String>> = h.paths.iter().map(|p| p.relations.labels().to_vec()).collect();
    ensure(
        top2.contains(&vec!["grandfather".into()]) && top2.contains(&vec!["father".into(), "father".into()]),
        || format!("heuristic top-2 {top2:?}"),
    )?;
    let d = m.dijkstra_avg_match(start, &cand, &MatchConfig::default()).map_err(|e| e.to_string())?;
    ensure(!d.paths.is_empty() && d.paths.iter().all(|p| p.path.len() == 1), || {
        "dijkstra returned a 2-hop path".into()
    })?;
    Ok(format!("heuristic top-2 {top2:?}; dijkstra returns only 1-hop paths"))
}

fn interaction_accounting() -> Outcome {
    let (_, pipeline) = fixture_pipeline("qa20", "config.conf");
    let samples = load_dataset(&fixtures().join("qa20/dataset.jsonl"), DatasetFormat::Simple).expect("dataset");
    let mut total = 0u64;
    for s in &samples {
        let trace = pipeline.run(&s.query()).map_err(|e| format!("{}: {e}", s.id))?;
        let expected = 2 + trace.matched.len().div_ceil(8) as u64;
        let calls = trace.transcript.usage.calls;
        ensure(calls == expected, || format!("{}: {calls} calls for {} paths", s.id, trace.matched.len()))?;
        total += calls;
    }
    let mean = total as f64 / samples.len() as f64;
    ensure((3.0..=4.0).contains(&mean), || format!("mean calls/question {mean}"))?;
    Ok(format!("calls = 2 + ceil(selected/8) on all {} questions; mean {mean:.2}", samples.len()))
}

const BRAHUI_PLAN: &str = "Length 1 reasoning path: The answer entity cannot be reached within a single step, so the length 1 reasoning path is None: {}.
Length 2 reasoning path: The answer entity may be reached by first finding the corresponding country through the relation \"language.human language.main country\", and then finding the president of the country through the relation \"government.government position held.office holder\". So the length 2 reasoning path is: {language.human_language.main_country, government.government_position_held.office_holder}.
Length 3 reasoning path: The answer entity does not require 3 steps to reach, so the length 3 reasoning path is None: {}.";

const RIFT_VALLEY_REASONING: &str = "Let's analyze the reasoning paths step-by-step to determine the correct answer to the question.
1.(Rift Valley Province, location.administrative division.country, Kenya): Rift Valley Province is located in Kenya. However, it does not provide information about the currency used in Kenya, so Kenya is not the direct answer to the question.
2.(Rift Valley Province, location.location.geo location, UnName Entity): The UnName Entity is not the answer of question.
3.(Rift Valley Province, location.administrative division.country → location.country.currency used,
Kenyan shilling): Kenyan shilling is the form of currency used in the nation where Rift Valley Province is located, so 'Kenyan shilling' is the right answer to the question.
The correct answer to the question is the Kenyan shilling, as identified in the fourth reasoning path. Therefore, the correct tail entity is:
{Kenyan shilling}.";

fn prompt_parse_fidelity() -> Outcome {
    let set = parse_path_sets(BRAHUI_PLAN).map_err(|e| e.to_string())?;
    let paths: Vec<String> = set.paths().map(|p| format!("{{{}}}", p.labels().join(", "))).collect();
    let want = "{language.human_language.main_country, government.government_position_held.office_holder}";
    ensure(paths == [want], || format!("paths {paths:?}"))?;
    ensure(set.by_length.get(&2).is_some_and(|v| v.len() == 1) && !set.inconsistent, || "length bucket".into())?;
    let answers = parse_answers(RIFT_VALLEY_REASONING).render();
    ensure(answers.as_bytes() == b"{Kenyan shilling}", || format!("answers {answers}"))?;
    Ok(format!("{want} and {answers}"))
}

fn pred(items: &[&str]) -> AnswerSet {
    let mut s = AnswerSet::default();
    for (i, t) in items.iter().enumerate() {
        s.insert(t, i);
    }
    s
}

fn gold(items: &[&[&str]]) -> Vec<Vec<String>> {
    items.iter().map(|g| g.iter().map(|s| s.to_string()).collect()).collect()
}

/// Set-based recomputation over distinct lowercase strings without aliases.
fn reference_f1(preds: &[String], golds: &[String]) -> (f64, f64, f64) {
    let mut p: Vec<&String> = preds.iter().collect();
    p.sort();
    p.dedup();
    let mut g: Vec<&String> = golds.iter().collect();
    g.sort();
    g.dedup();
    let hits = p.iter().filter(|x| g.contains(x)).count() as f64;
    let precision = if p.is_empty() { 0.0 } else { hits / p.len() as f64 };
    let recall = if g.is_empty() { 0.0 } else { hits / g.len() as f64 };
    let f1 = if hits == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    (precision, recall, f1)
}

fn metric_correctness() -> Outcome {
    let m = EvalMode::Lenient;
    let cases = [
        (
            score_sample(&pred(&["a"]), &gold(&[&["a"]]), m),
            SampleScore { hit1: 1, precision: 1.0, recall: 1.0, f1: 1.0, exact: 1 },
        ),
        (
            score_sample(&pred(&["a", "b"]), &gold(&[&["a"], &["c"]]), m),
            SampleScore { hit1: 1, precision: 0.5, recall: 0.5, f1: 0.5, exact: 0 },
        ),
        (score_sample(&pred(&[]), &gold(&[&["a"]]), m), SampleScore::default()),
    ];
    for (i, (got, want)) in cases.iter().enumerate() {
        ensure(got == want, || format!("analytic case {i}: {got:?} != {want:?}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let letters = ["a", "b", "c", "d", "e", "f"];
    for case in 0..1000 {
        let preds: Vec<String> =
            (0..rng.random_range(0..6)).map(|_| letters[rng.random_range(0..6)].to_owned()).collect();
        let golds: Vec<String> =
            (0..rng.random_range(1..5)).map(|_| letters[rng.random_range(0..6)].to_owned()).collect();
        let mut distinct = golds.clone();
        distinct.sort();
        distinct.dedup();
        let gold_lists: Vec<Vec<String>> = distinct.iter().map(|g| vec![g.clone()]).collect();
        let refs: Vec<&str> = preds.iter().map(String::as_str).collect();
        let s = score_strings(&refs, &gold_lists);
        let (p, r, f) = reference_f1(&preds, &golds);
        let identity =
            if s.precision + s.recall > 0.0 { 2.0 * s.precision * s.recall / (s.precision + s.recall) } else { 0.0 };
        let bounded = [s.precision, s.recall, s.f1].iter().all(|v| (0.0..=1.0).contains(v));
        ensure(bounded && (s.f1 - identity).abs() < 1e-12, || format!("case {case}: {s:?}"))?;
        ensure((s.precision - p).abs() < 1e-12 && (s.recall - r).abs() < 1e-12 && (s.f1 - f).abs() < 1e-12, || {
            format!("case {case}: {s:?} vs reference ({p}, {r}, {f})")
        })?;
    }
    Ok("3 analytic fixtures; 1000 randomized cases match the reference and the F1 identity".into())
}

fn determinism() -> Outcome {
    let (cfg, pipeline) = fixture_pipeline("qa20", "config.conf");
    let samples = load_dataset(&fixtures().join("qa20/dataset.jsonl"), DatasetFormat::Simple).expect("dataset");
    let run = |concurrency| {
        let opts = EvalOptions { mode: cfg.eval.mode, concurrency, checkpoint_dir: None, config_digest: cfg.digest() };
        evaluate(&pipeline, &samples, &opts).map(|r| r.render()).map_err(|e| e.to_string())
    };
    let a = run(1)?;
    let b = run(1)?;
    let c = run(4)?;
    ensure(a == b, || "two sequential runs differ".into())?;
    ensure(a == c, || "sequential and concurrent runs differ".into())?;
    Ok(format!("{} byte reports identical across 2 sequential runs and a 4-thread run", a.len()))
}

fn live_mode() -> Option<Outcome> {
    let config = std::env::var_os("KARPA_LIVE_CONFIG")?;
    let dataset = std::env::var_os("KARPA_LIVE_DATASET")?;
    Some((|| {
        let mut cfg = PipelineConfig::from_file(Path::new(&config)).map_err(|e| e.to_string())?;
        cfg.apply_env(std::env::vars(), Path::new(".")).map_err(|e| e.to_string())?;
        let pipeline = Pipeline::from_config(&cfg).map_err(|e| e.to_string())?;
        let mut samples = load_dataset(Path::new(&dataset), DatasetFormat::Webqsp).map_err(|e| e.to_string())?;
        samples.truncate(20);
        let opts = EvalOptions {
            mode: cfg.eval.mode,
            concurrency: cfg.eval.concurrency,
            checkpoint_dir: cfg.eval.checkpoint_dir.clone(),
            config_digest: cfg.digest(),
        };
        let report = evaluate(&pipeline, &samples, &opts).map_err(|e| e.to_string())?;
        let text = report.render();
        let a = &report.aggregate;
        ensure(a.samples == samples.len() && text.contains("## aggregate") && a.f1.is_finite(), || {
            "malformed report".into()
        })?;
        Ok(format!("{} samples, hit1 {:.3}, f1 {:.3}, {} errors", a.samples, a.hit1, a.f1, a.errors))
    })())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("global vs local search on the trap graph", trap),
        ("length fairness of mean step cost", length_fairness),
        ("variable-length matching", variable_length),
        ("interaction accounting", interaction_accounting),
        ("prompt and parse fidelity", prompt_parse_fidelity),
        ("metric correctness", metric_correctness),
        ("end-to-end determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {reason}", i + 1);
            }
        }
    }
    match live_mode() {
        None => println!("criterion 9: SKIP live mode: set KARPA_LIVE_CONFIG and KARPA_LIVE_DATASET to run"),
        Some(Ok(detail)) => println!("criterion 9: PASS live mode: {detail}"),
        Some(Err(reason)) => {
            failed += 1;
            println!("criterion 9: FAIL live mode: {reason}");
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
