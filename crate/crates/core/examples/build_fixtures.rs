//! Regenerates the scripted fixtures under `tests/fixtures/`.
//!
//! A rule-based stand-in plays the LLM: planning replies are written per
//! question, and reasoning replies name the tails of exactly those paths
//! whose relations equal the question's gold path. Every exchange is
//! recorded, replayed through the scripted provider and checked.
//!
//! `cargo run -p karpa --example build_fixtures [out_dir]`

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use karpa::config::{EvalMode, PipelineConfig};
use karpa::embedding::EmbeddingGateway;
use karpa::eval::{evaluate, load_dataset, DatasetFormat, EvalOptions};
use karpa::kg::KnowledgeGraph;
use karpa::llm::{ChatMessage, CompletionParams, LlmGateway, RecordingChatProvider};
use karpa::pipeline::Pipeline;
use karpa::planner::Query;
use karpa::prompt::PromptSet;

const CAPITAL: &str = "location.country.capital";
const CONTAINED_BY: &str = "location.location.containedby";
const CURRENCY: &str = "location.country.currency_used";
const OFFICIAL_LANGUAGE: &str = "location.country.official_language";
const MAIN_COUNTRY: &str = "language.human_language.main_country";
const OFFICE_HOLDER: &str = "government.government_position_held.office_holder";
const NATIONALITY: &str = "people.person.nationality";
const SPOUSE: &str = "people.person.spouse_s";
const CHILDREN: &str = "people.person.children";
const PROFESSION: &str = "people.person.profession";
const BIRTHPLACE: &str = "people.person.place_of_birth";

/// What the stand-in LLM says about one question.
#[derive(Clone)]
struct Script {
    id: String,
    question: String,
    topics: Vec<String>,
    answers: Vec<String>,
    initial: String,
    replan: String,
    gold: Vec<String>,
}

fn length_line(n: usize, why: &str, path: Option<&[&str]>) -> String {
    match path {
        Some(p) => {
            format!("Length {n} reasoning path: {why} So the length {n} reasoning path is: {{{}}}.", p.join(", "))
        }
        None => format!("Length {n} reasoning path: {why} So the length {n} reasoning path is None: {{}}."),
    }
}

fn plan_text(paths: [(&str, Option<&[&str]>); 3]) -> String {
    paths.iter().enumerate().map(|(i, (why, p))| length_line(i + 1, why, *p)).collect::<Vec<_>>().join("\n")
}

/// The question that follows the last `Q:` marker.
fn question_of(prompt: &str) -> &str {
    let tail = &prompt[prompt.rfind("\nQ:\n").map_or(0, |i| i + 4)..];
    tail.lines().next().unwrap_or("").trim()
}

/// `(start, r1 → r2, tail)` → relations and tail.
fn parse_path_line(line: &str) -> Option<(Vec<String>, String)> {
    let inner = line.trim().strip_prefix('(')?.strip_suffix(')')?;
    let mut parts = inner.splitn(3, ", ");
    let _start = parts.next()?;
    let rels = parts.next()?.split(" → ").map(str::to_owned).collect();
    Some((rels, parts.next()?.to_owned()))
}

fn respond(scripts: &HashMap<String, Script>, messages: &[ChatMessage]) -> String {
    let prompt = &messages.last().expect("non-empty").content;
    let script = scripts.get(question_of(prompt)).unwrap_or_else(|| panic!("no script for {}", question_of(prompt)));
    let last_block = &prompt[prompt.rfind("\nQ:\n").unwrap_or(0)..];
    if let Some(i) = last_block.find("Reasoning Paths:\n") {
        let listing = last_block[i + "Reasoning Paths:\n".len()..].trim_end().trim_end_matches("A:").trim_end();
        let mut lines = Vec::new();
        let mut tails: Vec<String> = Vec::new();
        for (n, line) in listing.lines().enumerate() {
            let Some((rels, tail)) = parse_path_line(line) else { continue };
            if rels == script.gold {
                lines.push(format!("{}.{line}: {tail} is the right answer to the question.", n + 1));
                if !tails.contains(&tail) {
                    tails.push(tail);
                }
            } else {
                lines.push(format!("{}.{line}: {tail} is not the answer of the question.", n + 1));
            }
        }
        if tails.is_empty() {
            lines.push("None of the tail entities answers the question, so the answer set is empty: {}.".into());
        } else {
            lines.push(format!("Therefore, the correct tail entities are:\n{{{}}}.", tails.join(", ")));
        }
        lines.join("\n")
    } else if last_block.contains("\nRelations: ") {
        script.replan.clone()
    } else {
        script.initial.clone()
    }
}

struct Country {
    name: &'static str,
    capital: &'static str,
    currency: &'static str,
    language: &'static str,
    leader: &'static str,
    spouse: &'static str,
    child: &'static str,
    spouse_job: &'static str,
}

const COUNTRIES: [Country; 10] = [
    Country {
        name: "Freedonia",
        capital: "Fredville",
        currency: "Freedonian crown",
        language: "Freedonian",
        leader: "Rufus Firefly",
        spouse: "Gloria Teasdale",
        child: "Bobby Firefly",
        spouse_job: "Actor",
    },
    Country {
        name: "Sylvania",
        capital: "Sylvan City",
        currency: "Sylvanian mark",
        language: "Sylvanese",
        leader: "Trentino Vasquez",
        spouse: "Vera Marcal",
        child: "Luca Vasquez",
        spouse_job: "Engineer",
    },
    Country {
        name: "Graustark",
        capital: "Edelweiss",
        currency: "Graustark gavvo",
        language: "Graustarkian",
        leader: "Yetive Lorry",
        spouse: "Grenfall Lorry",
        child: "Robin Lorry",
        spouse_job: "Teacher",
    },
    Country {
        name: "Ruritania",
        capital: "Strelsau",
        currency: "Ruritanian thaler",
        language: "Ruritanian",
        leader: "Rudolf Elphberg",
        spouse: "Flavia Elphberg",
        child: "Henry Elphberg",
        spouse_job: "Actor",
    },
    Country {
        name: "Genovia",
        capital: "Pyrus",
        currency: "Genovian euro",
        language: "Genovian",
        leader: "Clarisse Renaldi",
        spouse: "Rupert Renaldi",
        child: "Mia Renaldi",
        spouse_job: "Engineer",
    },
    Country {
        name: "Elbonia",
        capital: "Mudville",
        currency: "Elbonian grubnick",
        language: "Elbonian",
        leader: "Wally Grubnik",
        spouse: "Asok Grubnik",
        child: "Tina Grubnik",
        spouse_job: "Teacher",
    },
    Country {
        name: "Borduria",
        capital: "Szohod",
        currency: "Bordurian khol",
        language: "Bordurian",
        leader: "Kurvi Tasch",
        spouse: "Mira Tasch",
        child: "Ivo Tasch",
        spouse_job: "Actor",
    },
    Country {
        name: "Syldavia",
        capital: "Klow",
        currency: "Syldavian khor",
        language: "Syldavian",
        leader: "Ottokar Zorrin",
        spouse: "Irma Zorrin",
        child: "Milo Zorrin",
        spouse_job: "Engineer",
    },
    Country {
        name: "Latveria",
        capital: "Doomstadt",
        currency: "Latverian franc",
        language: "Latverian",
        leader: "Victor Werner",
        spouse: "Cynthia Werner",
        child: "Kristoff Werner",
        spouse_job: "Teacher",
    },
    Country {
        name: "Zubrowka",
        capital: "Lutz",
        currency: "Zubrowkan klubeck",
        language: "Zubrowkan",
        leader: "Gustave Hendl",
        spouse: "Agatha Hendl",
        child: "Zero Hendl",
        spouse_job: "Actor",
    },
];

/// The full schema; every country contributes 14 triples.
fn world(countries: &[Country]) -> String {
    let mut out = String::new();
    let mut t = |h: &str, r: &str, tl: &str| out.push_str(&format!("{h}\t{r}\t{tl}\n"));
    for c in countries {
        t(c.name, CAPITAL, c.capital);
        t(c.capital, CONTAINED_BY, c.name);
        t(c.name, CURRENCY, c.currency);
        t(c.name, OFFICIAL_LANGUAGE, c.language);
        t(c.language, MAIN_COUNTRY, c.name);
        t(c.name, OFFICE_HOLDER, c.leader);
        t(c.leader, NATIONALITY, c.name);
        t(c.leader, SPOUSE, c.spouse);
        t(c.spouse, SPOUSE, c.leader);
        t(c.leader, CHILDREN, c.child);
        t(c.spouse, CHILDREN, c.child);
        t(c.leader, PROFESSION, "Politician");
        t(c.spouse, PROFESSION, c.spouse_job);
        t(c.child, BIRTHPLACE, c.capital);
    }
    out
}

/// A thinner schema: no topic reaches more than eight paths within one hop
/// of its longest candidate, so every question needs one reasoning batch.
/// The organizations only have outgoing edges and are never reached.
fn sparse_world(countries: &[Country]) -> String {
    let mut out = String::new();
    let mut t = |h: &str, r: &str, tl: &str| out.push_str(&format!("{h}\t{r}\t{tl}\n"));
    for c in countries {
        t(c.name, CAPITAL, c.capital);
        t(c.capital, CONTAINED_BY, c.name);
        t(c.name, CURRENCY, c.currency);
        t(c.name, OFFICIAL_LANGUAGE, c.language);
        t(c.language, MAIN_COUNTRY, c.name);
        t(c.name, OFFICE_HOLDER, c.leader);
        t(c.leader, NATIONALITY, c.name);
        t(c.leader, SPOUSE, c.spouse);
        t(c.spouse, CHILDREN, c.child);
        t(c.leader, PROFESSION, "Politician");
        t(c.child, BIRTHPLACE, c.capital);
    }
    let orgs = ["League of Small Nations", "Treaty of Klopstokia", "Northern Customs Union", "Council of Regents"];
    for (i, org) in orgs.iter().enumerate() {
        for c in countries.iter().skip(i % 2) {
            t(org, "organization.organization.member", c.name);
        }
    }
    out
}

/// Question template `k` about country `c`.
fn template(k: usize, c: &Country, id: String) -> Script {
    let (question, topic, answer, gold, initial, distractor): (String, &str, &str, Vec<&str>, String, Option<&[&str]>) =
        match k % 6 {
            0 => (
                format!("What currency is used in the country whose capital is {}?", c.capital),
                c.capital,
                c.currency,
                vec![CONTAINED_BY, CURRENCY],
                plan_text([
                    ("A city has no currency relation of its own.", None),
                    (
                        "First find the country that contains the city, then the currency that country uses.",
                        Some(&["location.city.country", "location.country.currency"]),
                    ),
                    ("Two steps suffice.", None),
                ]),
                None,
            ),
            1 => (
                format!("Who holds office in the country where {} is mainly spoken?", c.language),
                c.language,
                c.leader,
                vec![MAIN_COUNTRY, OFFICE_HOLDER],
                plan_text([
                    ("The office holder is not one step from a language.", None),
                    (
                        "First find the main country of the language, then who holds office there.",
                        Some(&["language.human_language.main_country", "government.office_holder"]),
                    ),
                    ("Two steps suffice.", None),
                ]),
                None,
            ),
            2 => (
                format!("Who is the spouse of {}?", c.leader),
                c.leader,
                c.spouse,
                vec![SPOUSE],
                plan_text([
                    ("The spouse is one step away.", Some(&["people.person.spouse"])),
                    (
                        "Find the children, then their other parent.",
                        Some(&["people.person.children", "people.person.parents"]),
                    ),
                    ("Three steps are not needed.", None),
                ]),
                Some(&[CHILDREN]),
            ),
            3 => (
                format!("What is the capital of the country {} is a citizen of?", c.leader),
                c.leader,
                c.capital,
                vec![NATIONALITY, CAPITAL],
                plan_text([
                    ("A person has no capital.", None),
                    (
                        "Find the person's nationality, then that country's capital.",
                        Some(&["people.person.citizenship", "location.country.capital_city"]),
                    ),
                    ("Two steps suffice.", None),
                ]),
                Some(&[NATIONALITY]),
            ),
            4 => (
                format!("Where was the child of {} born?", c.spouse),
                c.spouse,
                c.capital,
                vec![CHILDREN, BIRTHPLACE],
                plan_text([
                    ("The birthplace belongs to the child, not to the parent.", None),
                    (
                        "Find the children, then their place of birth.",
                        Some(&["people.person.child", "people.person.birthplace"]),
                    ),
                    ("Two steps suffice.", None),
                ]),
                None,
            ),
            _ => (
                format!("Which language is official in {}?", c.name),
                c.name,
                c.language,
                vec![OFFICIAL_LANGUAGE],
                plan_text([
                    (
                        "The official language is one step from the country.",
                        Some(&["location.country.languages_spoken"]),
                    ),
                    (
                        "Find the capital, then the language spoken there.",
                        Some(&["location.country.capital", "location.location.language"]),
                    ),
                    ("Three steps are not needed.", None),
                ]),
                None,
            ),
        };
    let none = "No such path can be formed from the provided relations.";
    let lines: Vec<String> = (1..=3)
        .map(|n| match distractor {
            _ if gold.len() == n => {
                length_line(n, "The provided relations connect the topic entity to the answer.", Some(&gold))
            }
            Some(d) if d.len() == n => length_line(n, "This provided relation may also lead to the answer.", Some(d)),
            _ => length_line(n, none, None),
        })
        .collect();
    Script {
        id,
        question,
        topics: vec![topic.to_owned()],
        answers: vec![answer.to_owned()],
        initial,
        replan: lines.join("\n"),
        gold: gold.into_iter().map(str::to_owned).collect(),
    }
}

fn brahui() -> (String, Script) {
    let kg = [
        ("Brahui Language", MAIN_COUNTRY, "Pakistan"),
        ("Brahui Language", "language.human_language.language_family", "Dravidian languages"),
        ("Pakistan", OFFICE_HOLDER, "Muhammad Zia-ul-Haq"),
        ("Pakistan", CAPITAL, "Islamabad"),
        ("Pakistan", OFFICIAL_LANGUAGE, "Urdu"),
        ("Pakistan", "location.location.contains", "Balochistan"),
        ("Muhammad Zia-ul-Haq", NATIONALITY, "Pakistan"),
        ("Urdu", MAIN_COUNTRY, "Pakistan"),
        ("Balochistan", CONTAINED_BY, "Pakistan"),
    ]
    .iter()
    .map(|(h, r, t)| format!("{h}\t{r}\t{t}\n"))
    .collect();
    let gold = [MAIN_COUNTRY, OFFICE_HOLDER];
    let initial = "Length 1 reasoning path: The answer entity cannot be reached within a single step, so the length 1 reasoning path is None: {}.\n\
Length 2 reasoning path: The answer entity may be reached by first finding the corresponding country through the relation \"language.human language.main country\", and then finding the president of the country through the relation \"government.government position held.office holder\". So the length 2 reasoning path is: {language.human_language.main_country, government.government_position_held.office_holder}.\n\
Length 3 reasoning path: The answer entity does not require 3 steps to reach, so the length 3 reasoning path is None: {}.";
    let script = Script {
        id: "brahui".into(),
        question: "Name the president of the country whose main spoken language was Brahui in 1980?".into(),
        topics: vec!["Brahui Language".into()],
        answers: vec!["Muhammad Zia-ul-Haq".into()],
        initial: initial.into(),
        replan: initial.replace("through the relation \"language", "through the provided relation \"language"),
        gold: gold.map(str::to_owned).to_vec(),
    };
    (kg, script)
}

fn trap() -> (String, Script) {
    let kg = "Freedonia\tlocation.country.capital\tOld Fort\n\
Freedonia\tlocation.country.capital_city\tFredville\n\
Fredville\tlocation.city.mayor\tRufus Firefly\n\
Fredville\tlocation.city.population\t120000\n"
        .to_owned();
    let text = plan_text([
        ("The mayor is not one step from a country.", None),
        ("Find the capital, then its mayor.", Some(&["location.country.capital", "location.city.mayor"])),
        ("Two steps suffice.", None),
    ]);
    let script = Script {
        id: "trap".into(),
        question: "Who is the mayor of the capital of Freedonia?".into(),
        topics: vec!["Freedonia".into()],
        answers: vec!["Rufus Firefly".into()],
        initial: text.clone(),
        replan: text,
        gold: vec!["location.country.capital_city".into(), "location.city.mayor".into()],
    };
    (kg, script)
}

fn dataset_lines(scripts: &[Script]) -> String {
    scripts
        .iter()
        .map(|s| {
            let answers: Vec<Vec<&str>> = s.answers.iter().map(|a| vec![a.as_str()]).collect();
            serde_json::json!({"id": s.id, "question": s.question, "topics": s.topics, "answers": answers}).to_string()
                + "\n"
        })
        .collect()
}

struct Case {
    dir: &'static str,
    kg: String,
    scripts: Vec<Script>,
    /// Extra config lines; one pipeline run per variant.
    variants: Vec<(&'static str, Vec<(&'static str, &'static str)>)>,
}

fn apply(cfg: &mut PipelineConfig, pairs: &[(&str, &str)]) {
    for (k, v) in pairs {
        cfg.set("fixture", k, v, Path::new(".")).expect("fixture config key");
    }
}

fn config_text(pairs: &[(&str, &str)]) -> String {
    let mut out = String::from("kg.path = kg.tsv\nembedding.kind = mock\nembedding.dim = 256\nllm.kind = scripted\nllm.fixture = llm.jsonl\nllm.model = scripted\n");
    for (k, v) in pairs {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}

fn build(case: &Case, root: &Path) {
    let dir = root.join(case.dir);
    std::fs::create_dir_all(&dir).expect("fixture dir");
    let by_question: HashMap<String, Script> = case.scripts.iter().map(|s| (s.question.clone(), s.clone())).collect();
    let recorder = Arc::new(RecordingChatProvider::new(move |m: &[ChatMessage]| respond(&by_question, m)));
    let kg_path = dir.join("kg.tsv");
    std::fs::write(&kg_path, &case.kg).expect("write kg");
    std::fs::write(dir.join("dataset.jsonl"), dataset_lines(&case.scripts)).expect("write dataset");

    for (name, pairs) in &case.variants {
        let mut cfg = PipelineConfig::default();
        apply(&mut cfg, pairs);
        let pipeline = Pipeline::new(
            KnowledgeGraph::load_str(&case.kg).expect("kg"),
            EmbeddingGateway::mock(cfg.embedding.dim).expect("mock"),
            LlmGateway::new(
                Box::new(Arc::clone(&recorder)),
                CompletionParams { model: "scripted".into(), ..CompletionParams::default() },
            ),
            PromptSet::default(),
            cfg.matcher.clone(),
            cfg.planner.clone(),
            cfg.batch_limit,
        );
        for s in &case.scripts {
            let q = Query { id: s.id.clone(), question: s.question.clone(), topic_entities: s.topics.clone() };
            pipeline.run(&q).unwrap_or_else(|e| panic!("{}: {e}", s.id));
        }
        std::fs::write(dir.join(format!("{name}.conf")), config_text(pairs)).expect("write config");
    }
    let mut fixture = Vec::new();
    recorder.write_fixture(&mut fixture).expect("fixture");
    std::fs::write(dir.join("llm.jsonl"), fixture).expect("write fixture");

    // Replay through the scripted provider.
    for (name, _) in &case.variants {
        let cfg = PipelineConfig::from_file(&dir.join(format!("{name}.conf"))).expect("config");
        let pipeline = Pipeline::from_config(&cfg).expect("pipeline");
        let samples = load_dataset(&dir.join("dataset.jsonl"), DatasetFormat::Simple).expect("dataset");
        let opts =
            EvalOptions { mode: EvalMode::Lenient, concurrency: 1, checkpoint_dir: None, config_digest: cfg.digest() };
        let report = evaluate(&pipeline, &samples, &opts).expect("eval");
        let a = &report.aggregate;
        println!(
            "{}/{name}: samples {} hit1 {:.3} f1 {:.3} calls/q {:.2} errors {}",
            case.dir, a.samples, a.hit1, a.f1, a.calls_per_question, a.errors
        );
        for r in &report.samples {
            println!("  {} calls {} predicted {:?}", r.id, r.calls, r.predicted);
        }
    }
}

fn main() {
    let root: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures"));

    let (kg, script) = brahui();
    build(&Case { dir: "brahui", kg, scripts: vec![script], variants: vec![("config", vec![])] }, &root);

    let toy: Vec<Script> = (0..5).map(|k| template(k, &COUNTRIES[k], format!("toy-{k}"))).collect();
    build(
        &Case { dir: "toy", kg: sparse_world(&COUNTRIES[..5]), scripts: toy, variants: vec![("config", vec![])] },
        &root,
    );

    let qa20: Vec<Script> = (0..20).map(|i| template(i, &COUNTRIES[i % 10], format!("qa-{i:02}"))).collect();
    build(&Case { dir: "qa20", kg: world(&COUNTRIES), scripts: qa20, variants: vec![("config", vec![])] }, &root);

    let (kg, script) = trap();
    build(
        &Case {
            dir: "trap",
            kg,
            scripts: vec![script],
            variants: vec![
                ("beam", vec![("matcher.strategy", "beam"), ("matcher.beam_width", "1")]),
                ("heuristic", vec![("matcher.strategy", "heuristic")]),
            ],
        },
        &root,
    );
}
