//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `MOLRAG_BLESS=1` first re-records the replay fixtures and golden reports
//! against the local imitation model in `support`.

mod support;

#[path = "../../core/tests/gen/mod.rs"]
mod gen;
#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::ffi::OsString;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Output};
use std::time::{Duration, Instant};

use molrag::evaluate::RunManifest;
use molrag::persist::load_store;
use molrag::report::column_specs;
use molrag_core::backend::{BackendError, BackendErrorKind, ChatBackend, CompletionResult, FinishReason};
use molrag_core::bm25::{Bm25Index, Bm25Params, Tokenizer};
use molrag_core::calibration::{calibrated_query, extract_payload, CalibrationPolicy, ExtractionStrategy, FailureReason};
use molrag_core::fingerprint::{dice_similarity, morgan_fingerprint, FingerprintParams, MorganFingerprint};
use molrag_core::metrics::{bleu_n, levenshtein, levenshtein_mean, rouge_scores, score_molecules, EvalPair, TextUnit};
use molrag_core::prompt::{ChatPrompt, PromptTemplate};
use molrag_core::smiles::{molecules_equal, parse_smiles, write_smiles};
use molrag_core::store::{MoleculeRecord, RetrievalStrategy, Store};
use molrag_core::Task;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use serde_json::Value;
use support::{Behavior, CountingListener, MockLlm};

type Outcome = Result<String, String>;
type Check = fn(&Ctx) -> Outcome;

const TASKS: [Task; 2] = [Task::Mol2Cap, Task::Cap2Mol];
const MOCK_KEY_VAR: &str = "MOLRAG_MOCK_KEY";
const MOCK_KEY: &str = "mock-key-for-local-server";
const CONTEXT_LIMIT: usize = 1000;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

struct Ctx {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    store_dir: PathBuf,
    store: Store,
}

fn replay_dir() -> PathBuf {
    support::fixtures().join("replay")
}

fn replay_fixture(task: Task) -> PathBuf {
    replay_dir().join(format!("{task}.jsonl"))
}

fn golden_report(task: Task) -> PathBuf {
    replay_dir().join(format!("{task}.report.json"))
}

fn run_config() -> PathBuf {
    replay_dir().join("run.toml")
}

fn test_tsv() -> PathBuf {
    support::fixtures().join("chebi_test.tsv")
}

macro_rules! argv {
    ($($a:expr),* $(,)?) => {
        [$(OsString::from($a)),*]
    };
}

fn molrag(args: &[OsString]) -> Output {
    Command::new(support::bin())
        .env_remove("RUST_LOG")
        .arg("-q")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> Result<String, String> {
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)))
    }
}

impl Ctx {
    fn new() -> Ctx {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let store_dir = root.join("store");
        let train = support::fixtures().join("chebi_train.tsv");
        ok(&molrag(&argv![
            "ingest",
            "--tsv",
            &train,
            "--out",
            &store_dir,
        ])).expect("ingest");
        let (store, _) = load_store(&store_dir).unwrap();
        Ctx {
            _tmp: tmp,
            root,
            store_dir,
            store,
        }
    }

    fn evaluate_replay(&self, task: Task, out: &Path, endpoint: &str) -> Result<String, String> {
        ok(&molrag(&argv![
            "--config",
            &run_config(),
            "evaluate",
            "--task",
            &task.as_str(),
            "--store",
            &self.store_dir,
            "--test",
            &test_tsv(),
            "--replay",
            &replay_fixture(task),
            "--backend",
            &endpoint,
            "--out",
            &out,
        ]))
    }
}

fn tsv_rows(name: &str) -> Vec<(String, String, String)> {
    std::fs::read_to_string(support::fixtures().join(name))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].to_string(), f[1].to_string(), f[2].to_string())
        })
        .collect()
}

fn smiles_round_trip(_: &Ctx) -> Outcome {
    let text = std::fs::read_to_string(support::fixtures().join("smiles_corpus.txt")).unwrap();
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let started = Instant::now();
    let mut parsed = 0usize;
    let mut mismatches = Vec::new();
    for s in &lines {
        let Ok(m) = parse_smiles(s) else { continue };
        parsed += 1;
        let written = write_smiles(&m);
        match parse_smiles(&written) {
            Ok(back) if molecules_equal(&m, &back) => {}
            _ => mismatches.push(format!("{s} -> {written}")),
        }
    }
    let elapsed = started.elapsed();
    let rate = parsed as f64 / lines.len() as f64;
    ensure!(mismatches.is_empty(), "{} round-trip mismatches, first: {}", mismatches.len(), mismatches[0]);
    ensure!(rate >= 0.99, "parse rate {rate:.4} below 0.99");
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "{parsed}/{} parsed ({:.2}%), all isomorphic after write+parse, {:.2} s",
        lines.len(),
        rate * 100.0,
        elapsed.as_secs_f64()
    ))
}

fn fingerprint_oracle(_: &Ctx) -> Outcome {
    let mols: Vec<_> = oracles::FINGERPRINT_FIXTURE.iter().map(|s| parse_smiles(s).unwrap()).collect();
    oracles::check_environment_bijection(&mols, 2)?;
    let params = FingerprintParams::default();
    for (m, s) in mols.iter().zip(oracles::FINGERPRINT_FIXTURE) {
        let fp = morgan_fingerprint(m, params);
        let d = dice_similarity(&fp, &fp).map_err(|e| e.to_string())?;
        ensure!(d == 1.0, "self-similarity of {s} is {d}");
    }
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let pair = (gen::molecule(16), gen::molecule(16));
    runner
        .run(&pair, |(a, b)| {
            let (fa, fb) = (morgan_fingerprint(&a, params), morgan_fingerprint(&b, params));
            let x = dice_similarity(&fa, &fb).unwrap();
            prop_assert_eq!(x, dice_similarity(&fb, &fa).unwrap());
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert!((x - oracles::dice_brute(fa.bits(), fb.bits())).abs() < 1e-12);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let bits = prop::collection::vec(0u32..256, 0..40)
        .prop_map(|b| MorganFingerprint::from_bits(b, FingerprintParams::new(2, 256).unwrap()).unwrap());
    runner
        .run(&(bits.clone(), bits), |(a, b)| {
            match (dice_similarity(&a, &b), dice_similarity(&b, &a)) {
                (Ok(x), Ok(y)) => {
                    prop_assert_eq!(x, y);
                    prop_assert!((0.0..=1.0).contains(&x));
                }
                (Err(_), Err(_)) => prop_assert!(a.bits().is_empty() && b.bits().is_empty()),
                _ => prop_assert!(false, "asymmetric error"),
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("environment multisets match neighbourhood enumeration on 20 molecules; self-similarity 1.0; 2x1000 fuzzed pairs symmetric and in [0,1]".into())
}

const VOCAB: [&str; 14] = [
    "acid", "amine", "alcohol", "ring", "benzene", "ester", "ketone", "role", "metabolite", "conjugate",
    "base", "anion", "is", "a",
];

fn bm25_oracle(_: &Ctx) -> Outcome {
    let word = || {
        prop_oneof![
            9 => prop::sample::select(&VOCAB[..]).prop_map(String::from),
            1 => Just("unseen".to_string()),
        ]
    };
    let corpus = prop::collection::vec(prop::collection::vec(prop::sample::select(&VOCAB[..]).prop_map(String::from), 0..16), 1..=50)
        .prop_filter("needs a token", |d| d.iter().any(|x| !x.is_empty()));
    let queries = prop::collection::vec(prop::collection::vec(word(), 1..6), 100);
    let mut runner = TestRunner::new(Config {
        cases: 100,
        failure_persistence: None,
        ..Config::default()
    });
    let params = Bm25Params::default();
    let started = Instant::now();
    runner
        .run(&(corpus, queries), |(docs, queries)| {
            let texts: Vec<String> = docs.iter().map(|d| d.join(" ")).collect();
            let index = Bm25Index::build(&texts, params, Tokenizer::Words).unwrap();
            for q in &queries {
                let want = oracles::bm25_brute(&docs, q, params.k1, params.b);
                let got = index.score_all(q);
                for (g, w) in got.iter().zip(&want) {
                    prop_assert!((g - w).abs() <= 1e-9, "{} vs {}", g, w);
                }
                let top: Vec<usize> = index.top_n(&q.join(" "), docs.len()).unwrap().into_iter().map(|(d, _)| d).collect();
                prop_assert_eq!(top, oracles::rank_brute(&want));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "100 random corpora of 1-50 documents x 100 queries: rankings equal, scores within 1e-9, {:.2} s",
        elapsed.as_secs_f64()
    ))
}

fn dry_run(ctx: &Ctx, task: Task, strategy: &str, input: &str) -> Result<Value, String> {
    let out = ok(&molrag(&argv![
            "query",
            "--dry-run",
            "--store",
            &ctx.store_dir,
            "--task",
            &task.as_str(),
            "--strategy",
            &strategy,
            "--n-shots",
            "5",
            "--seed",
            "7",
            &input,
        ]))?;
    serde_json::from_str(&out).map_err(|e| e.to_string())
}

fn retrieval_determinism(ctx: &Ctx) -> Outcome {
    let rows = tsv_rows("chebi_test.tsv");
    let mut compared = 0;
    for task in TASKS {
        let strategies: &[&str] = match task {
            Task::Mol2Cap => &["random", "bm25", "morgan_fts"],
            Task::Cap2Mol => &["random", "bm25"],
        };
        for (_, smiles, caption) in rows.iter().step_by(10) {
            let input = if task == Task::Mol2Cap { smiles } else { caption };
            for s in strategies {
                let a = dry_run(ctx, task, s, input)?;
                let b = dry_run(ctx, task, s, input)?;
                ensure!(
                    a["examples_used"] == b["examples_used"] && a["prompt_digest"] == b["prompt_digest"],
                    "{task} {s} differs between invocations for {input}"
                );
                ensure!(a["examples_used"].as_array().map_or(0, Vec::len) == 5, "{task} {s}: wrong example count");
                compared += 1;
            }
        }
    }
    let test: BTreeMap<String, String> = rows.into_iter().map(|(id, s, _)| (id, s)).collect();
    let pairs = std::fs::read_to_string(support::fixtures().join("near_duplicates.tsv")).unwrap();
    let mut near = 0;
    for line in pairs.lines().skip(1) {
        let (test_id, train_id) = line.split_once('\t').unwrap();
        let got = ctx
            .store
            .retrieve_mol2cap(&test[test_id], 1, RetrievalStrategy::MorganFts)
            .map_err(|e| e.to_string())?;
        ensure!(got[0].id == train_id, "query {test_id}: top-1 is {}, expected {train_id}", got[0].id);
        near += 1;
    }
    Ok(format!(
        "{compared} (query, strategy) pairs identical across two process runs; {near}/{near} near-duplicates rank first under morgan_fts"
    ))
}

#[derive(Clone)]
enum Step {
    Reply(&'static str),
    Fail(BackendErrorKind),
}

struct Scripted {
    steps: RefCell<VecDeque<Step>>,
    calls: RefCell<usize>,
}

impl Scripted {
    fn new(steps: Vec<Step>) -> Scripted {
        Scripted {
            steps: RefCell::new(steps.into()),
            calls: RefCell::new(0),
        }
    }
}

impl ChatBackend for Scripted {
    fn complete(&self, _: &ChatPrompt) -> Result<CompletionResult, BackendError> {
        *self.calls.borrow_mut() += 1;
        let mut steps = self.steps.borrow_mut();
        let step = if steps.len() > 1 { steps.pop_front().unwrap() } else { steps[0].clone() };
        match step {
            Step::Reply(t) => Ok(CompletionResult {
                raw_text: t.into(),
                finish_reason: FinishReason::Stop,
                latency: Duration::ZERO,
                attempt_count: 1,
            }),
            Step::Fail(kind) => Err(BackendError::new(kind, "scripted")),
        }
    }
}

fn calibration_machine(ctx: &Ctx) -> Outcome {
    let template = PromptTemplate::parse(molrag::templates::builtin(Task::Mol2Cap)).unwrap();
    let examples: Vec<&MoleculeRecord> = ctx.store.records().iter().take(5).collect();
    let good = r#"{"caption": "The molecule is a diol."}"#;
    let run = |b: &Scripted, policy: &CalibrationPolicy| calibrated_query(b, &template, Task::Mol2Cap, "CCO", &examples, policy);
    let default = CalibrationPolicy::default();

    let b = Scripted::new(vec![Step::Reply(good)]);
    let a = run(&b, &default).map_err(|e| e.to_string())?;
    ensure!(a.query_count == 1 && *b.calls.borrow() == 1, "(a) query_count {}", a.query_count);

    let ctxerr = Step::Fail(BackendErrorKind::ContextLengthExceeded);
    let b = Scripted::new(vec![ctxerr.clone(), ctxerr, Step::Reply(good)]);
    let out = run(&b, &default).map_err(|e| e.to_string())?;
    ensure!(out.final_shot_count == 5 - 2, "(b) final_shot_count {}", out.final_shot_count);
    ensure!(out.query_count == 1, "(b) length errors were charged: {}", out.query_count);

    for allowance in 1..=6 {
        let b = Scripted::new(vec![Step::Reply("I would rather not say.")]);
        let policy = CalibrationPolicy {
            max_error_allowance: allowance,
            ..CalibrationPolicy::default()
        };
        let err = run(&b, &policy).err().ok_or("(c) garbage was accepted")?;
        ensure!(err.reason == FailureReason::AllowanceExhausted, "(c) reason {}", err.reason);
        ensure!(
            *b.calls.borrow() == allowance as usize && err.attempts == allowance,
            "(c) allowance {allowance}: {} queries",
            b.calls.borrow()
        );
    }

    let cases: Vec<Value> =
        serde_json::from_str(&std::fs::read_to_string(support::fixtures().join("chatty_responses.json")).unwrap()).unwrap();
    let all = ExtractionStrategy::ALL;
    let mut fired: BTreeMap<String, usize> = BTreeMap::new();
    for case in &cases {
        let task: Task = case["task"].as_str().unwrap().parse().unwrap();
        let raw = case["raw"].as_str().unwrap();
        let got = extract_payload(raw, task, &all);
        match case["strategy"].as_str() {
            None => {
                ensure!(got.is_err(), "(d) refusal accepted: {raw}");
                *fired.entry("rejected".into()).or_default() += 1;
            }
            Some(name) => {
                let want: ExtractionStrategy = name.parse().unwrap();
                let got = got.map_err(|_| format!("(d) nothing extracted from {raw}"))?;
                ensure!(got.strategy == want && got.value == case["value"].as_str().unwrap(), "(d) {raw}: got {got:?}");
                let pos = all.iter().position(|s| *s == want).unwrap();
                ensure!(extract_payload(raw, task, &all[..pos]).is_err(), "(d) an earlier strategy fires on {raw}");
                *fired.entry(name.into()).or_default() += 1;
            }
        }
    }
    ensure!(cases.len() == 15, "(d) fixture has {} responses", cases.len());
    Ok(format!(
        "(a) 1 query; (b) final_shot_count {}; (c) failure after exactly max_error_allowance queries for 1..=6; (d) 15 responses {:?}",
        out.final_shot_count, fired
    ))
}

fn metric_fixtures(_: &Ctx) -> Outcome {
    let sheet: Value =
        serde_json::from_str(&std::fs::read_to_string(support::fixtures().join("metric_worksheet.json")).unwrap()).unwrap();
    for (block, unit) in [("captions", TextUnit::Words), ("smiles", TextUnit::Chars)] {
        let b = &sheet[block];
        let pairs: Vec<EvalPair> = b["pairs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| EvalPair::ok(p[0].as_str().unwrap(), p[1].as_str().unwrap()))
            .collect();
        ensure!(pairs.len() == 5, "{block}: {} pairs", pairs.len());
        let r = rouge_scores(&pairs, unit).map_err(|e| e.to_string())?;
        let got = [
            ("bleu2", bleu_n(&pairs, 2, unit).map_err(|e| e.to_string())?),
            ("bleu4", bleu_n(&pairs, 4, unit).map_err(|e| e.to_string())?),
            ("rouge1", r.rouge1_f),
            ("rouge2", r.rouge2_f),
            ("rougeL", r.rouge_l_f),
            ("levenshtein", levenshtein_mean(&pairs).map_err(|e| e.to_string())?),
        ];
        for (key, value) in got {
            let want = b[key].as_f64().unwrap();
            ensure!((value - want).abs() < 1e-6, "{block} {key}: {value} vs hand-worked {want}");
        }
    }
    ensure!(levenshtein("kitten", "sitting") == 3, "kitten/sitting");
    let pairs: Vec<EvalPair> = oracles::EM_FIXTURE.iter().map(|(p, r)| EvalPair::ok(*p, *r)).collect();
    let s = score_molecules(&pairs, FingerprintParams::default()).map_err(|e| e.to_string())?;
    let mut matches = 0;
    for (item, (p, _)) in s.items.iter().zip(oracles::EM_FIXTURE) {
        if item.score.exact_match {
            ensure!(item.score.valid && item.score.morgan_fts == 1.0, "EM without FTS/validity for {p}");
            matches += 1;
        }
    }
    let exact: Vec<EvalPair> = s
        .items
        .iter()
        .zip(oracles::EM_FIXTURE)
        .filter(|(i, _)| i.score.exact_match)
        .map(|(_, (p, r))| EvalPair::ok(p, r))
        .collect();
    let e = score_molecules(&exact, FingerprintParams::default()).map_err(|e| e.to_string())?;
    ensure!(e.exact_match == 1.0 && e.morgan_fts == 1.0 && e.validity == 1.0, "exact-match subset: {e:?}");
    Ok(format!(
        "5 caption + 5 SMILES pairs within 1e-6 on 6 metrics; kitten/sitting = 3; {matches} exact matches all with FTS 1 and valid"
    ))
}

fn end_to_end_replay(ctx: &Ctx) -> Outcome {
    let guard = CountingListener::start();
    let mut notes = Vec::new();
    for task in TASKS {
        let a = ctx.root.join(format!("e2e-{task}-a"));
        let b = ctx.root.join(format!("e2e-{task}-b"));
        ctx.evaluate_replay(task, &a, &guard.url())?;
        ctx.evaluate_replay(task, &b, &guard.url())?;
        let ra = std::fs::read(a.join("report.json")).unwrap();
        let rb = std::fs::read(b.join("report.json")).unwrap();
        ensure!(ra == rb, "{task}: report.json differs between runs");
        let golden = std::fs::read(golden_report(task)).map_err(|e| format!("golden report: {e}"))?;
        ensure!(ra == golden, "{task}: report.json differs from the committed golden report");
        let report: Value = serde_json::from_slice(&ra).unwrap();
        let items = report["counts"]["items"].as_u64().unwrap_or(0);
        ensure!(items == 50, "{task}: {items} items");
        notes.push(format!("{task} 50 items, {} failed", report["counts"]["failed"]));
    }
    ensure!(guard.connections() == 0, "replay opened {} connections", guard.connections());

    for (task, mask, input) in [
        (Task::Mol2Cap, "[CAPTION_MASK]", "CCO"),
        (Task::Cap2Mol, "[MOLECULE_MASK]", "The molecule is an alcohol."),
    ] {
        let out = ok(&molrag(&argv![
            "query",
            "--dry-run",
            "--store",
            &ctx.store_dir,
            "--task",
            &task.as_str(),
            "--n-shots",
            "0",
            &input,
        ]))?;
        let v: Value = serde_json::from_str(&out).unwrap();
        let system = v["system_text"].as_str().unwrap_or("");
        let other = task.input_mask();
        ensure!(system.contains(mask) && system.contains(other), "{task} zero-shot prompt lacks {mask}/{other}");
    }

    let live = live_cycle(ctx)?;
    Ok(format!(
        "{}; repeated runs and golden byte-identical; 0 network connections; zero-shot prompts carry both mask spans; {live}",
        notes.join(", ")
    ))
}

/// Record a small run against the local imitation model, then replay it.
fn live_cycle(ctx: &Ctx) -> Result<String, String> {
    std::env::set_var(MOCK_KEY_VAR, MOCK_KEY);
    let server = MockLlm::start(MOCK_KEY, Behavior::Copycat { context_limit: CONTEXT_LIMIT });
    let fixture = ctx.root.join("live.jsonl");
    let live_out = ctx.root.join("live-record");
    let args = |out: &Path, mode: &str, url: &str| {
        argv![
            "--config",
            &run_config(),
            "evaluate",
            "--task",
            "cap2mol",
            "--n-shots",
            "2",
            "--store",
            &ctx.store_dir,
            "--test",
            &test_tsv(),
            "--backend",
            url,
            mode,
            &fixture,
            "--out",
            out,
        ]
    };
    ok(&molrag(&args(&live_out, "--record", &server.url())))?;
    let calls = server.requests();
    drop(server);
    let replay_out = ctx.root.join("live-replay");
    let guard = CountingListener::start();
    ok(&molrag(&args(&replay_out, "--replay", &guard.url())))?;
    let x = std::fs::read(live_out.join("report.json")).unwrap();
    let y = std::fs::read(replay_out.join("report.json")).unwrap();
    ensure!(x == y, "replayed report differs from the recorded live run");
    ensure!(guard.connections() == 0, "replay touched the network");
    Ok(format!("live record ({calls} HTTP calls) then replay gives the same report"))
}

const MANIFEST_KEYS: [&str; 17] = [
    "tool",
    "version",
    "command",
    "run",
    "retrieval",
    "test_tsv",
    "test_sha256",
    "test_items",
    "store_record_count",
    "store_files",
    "fingerprint",
    "bm25",
    "template",
    "template_version",
    "template_sha256",
    "fixture_sha256",
    "outputs",
];

/// Runs the ablation grid. `mode` is `--replay` or `--record`.
fn ablate(ctx: &Ctx, task: Task, mode: &str, fixture: &Path, endpoint: &str, out: &Path) -> Result<String, String> {
    ok(&molrag(&argv![
        "--config",
        &run_config(),
        "ablate",
        "--task",
        task.as_str(),
        "--store",
        &ctx.store_dir,
        "--test",
        &test_tsv(),
        "--backend",
        endpoint,
        mode,
        fixture,
        "--out",
        out,
    ]))
}

fn ablation_shape(ctx: &Ctx) -> Outcome {
    let guard = CountingListener::start();
    let url = guard.url();
    let mut notes = Vec::new();
    for task in TASKS {
        let out = ctx.root.join(format!("ablate-{task}"));
        ablate(ctx, task, "--replay", &replay_fixture(task), &url, &out)?;
        let text = std::fs::read_to_string(out.join("comparison.txt")).map_err(|e| e.to_string())?;
        let cmp: Value = serde_json::from_str(&std::fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
        let rows = cmp["rows"].as_array().cloned().unwrap_or_default();
        ensure!(rows.len() == 13, "{task}: {} rows", rows.len());
        let mut want = vec!["zero-shot".to_string()];
        for n in [1, 2, 5, 10] {
            for s in ["random", "bm25", "morgan_fts"] {
                want.push(format!("{n}-shot ({s})"));
            }
        }
        let methods: Vec<String> = rows.iter().map(|r| r["method"].as_str().unwrap_or("").to_string()).collect();
        ensure!(methods == want, "{task}: rows {methods:?}");
        let header = text.lines().find(|l| l.contains("Method")).ok_or("no table header")?;
        let mut at = 0;
        for c in column_specs(task) {
            let p = header[at..].find(c.name).ok_or(format!("{task}: column {} missing or out of order", c.name))?;
            at += p + c.name.len();
        }
        for r in &rows {
            ensure!(
                r["columns"].as_object().map_or(0, |o| o.len()) == column_specs(task).len(),
                "{task}: row {} has the wrong columns",
                r["cell"]
            );
        }
        let mut applicable = 0;
        for r in &rows {
            let cell = r["cell"].as_str().unwrap();
            let path = out.join(cell).join("manifest.json");
            let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            let v: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
            for k in MANIFEST_KEYS {
                ensure!(v.get(k).is_some_and(|x| !x.is_null() || k == "fixture_sha256"), "{cell}: manifest lacks {k}");
            }
            let m: RunManifest = serde_json::from_str(&text).map_err(|e| format!("{cell}: {e}"))?;
            if m.skipped.is_none() {
                applicable += 1;
                ensure!(m.fixture_sha256.is_some(), "{cell}: no fixture checksum");
                for f in ["report.json", "report.txt", "items.jsonl", "failures.jsonl"] {
                    ensure!(out.join(cell).join(f).exists(), "{cell}: missing {f}");
                }
            }
        }
        // the manifest alone reproduces a cell
        let cell = if task == Task::Mol2Cap { "n5_morgan_fts" } else { "n5_bm25" };
        let rerun = ctx.root.join(format!("rerun-{task}"));
        ok(&molrag(&argv![
            "--config",
            &run_config(),
            "evaluate",
            "--rerun",
            &out.join(cell).join("manifest.json"),
            "--out",
            &rerun,
        ]))?;
        let a = std::fs::read(out.join(cell).join("report.json")).unwrap();
        let b = std::fs::read(rerun.join("report.json")).unwrap();
        ensure!(a == b, "{task}: re-running {cell} from its manifest changed report.json");
        notes.push(format!("{task} 13 rows ({applicable} run, {} n/a)", 13 - applicable));
    }
    ensure!(guard.connections() == 0, "ablation touched the network");
    Ok(format!(
        "{}; every cell manifest complete; a cell re-run from its manifest reproduces its report",
        notes.join(", ")
    ))
}

/// Re-records the replay fixtures and golden reports.
fn bless() {
    std::env::set_var(MOCK_KEY_VAR, MOCK_KEY);
    let ctx = Ctx::new();
    let server = MockLlm::start(MOCK_KEY, Behavior::Copycat { context_limit: CONTEXT_LIMIT });
    std::fs::create_dir_all(replay_dir()).unwrap();
    for task in TASKS {
        let fixture = replay_fixture(task);
        let _ = std::fs::remove_file(&fixture);
        let out = ctx.root.join(format!("bless-{task}"));
        ablate(&ctx, task, "--record", &fixture, &server.url(), &out).expect("recording ablation");
        let golden = ctx.root.join(format!("golden-{task}"));
        let guard = CountingListener::start();
        ctx.evaluate_replay(task, &golden, &guard.url()).expect("replay evaluate");
        std::fs::copy(golden.join("report.json"), golden_report(task)).unwrap();
        eprintln!("blessed {task}: {} HTTP calls so far", server.requests());
    }
}

fn main() -> ExitCode {
    if std::env::var_os("MOLRAG_BLESS").is_some_and(|v| v == "1") {
        bless();
    }
    let ctx = Ctx::new();
    let criteria: [(&str, Check); 8] = [
        ("smiles_round_trip", smiles_round_trip),
        ("fingerprint_oracle", fingerprint_oracle),
        ("bm25_oracle", bm25_oracle),
        ("retrieval_determinism", retrieval_determinism),
        ("calibration_state_machine", calibration_machine),
        ("metric_fixtures", metric_fixtures),
        ("end_to_end_replay", end_to_end_replay),
        ("ablation_shape", ablation_shape),
    ];
    let mut failed = BTreeSet::new();
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(|| check(&ctx))).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                println!("FAIL {name}: {why}");
                failed.insert(name);
            }
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
