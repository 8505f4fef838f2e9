//! `molrag` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad usage or configuration,
//! 3 a query whose output never passed calibration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use molrag::ablate::{ablate, Grid};
use molrag::client::{connect, flush_recording};
use molrag::config::{resolve, ConfigError, FileConfig, Overrides, RunConfig, StrategyName};
use molrag::evaluate::{evaluate, load_test_set, RunManifest};
use molrag::persist::{load_store, save_store, sha256_hex, Split};
use molrag::templates::load_template;
use molrag::tsv::load_chebi_tsv;
use molrag_core::bm25::Bm25Params;
use molrag_core::calibration::calibrated_query_with_store;
use molrag_core::fingerprint::FingerprintParams;
use molrag_core::prompt::build_prompt;
use molrag_core::smiles::is_valid_smiles;
use molrag_core::store::Store;
use molrag_core::Task;
use serde_json::json;

/// Writes to stdout, treating a closed pipe as a normal end of output.
macro_rules! emit {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, $($arg)*);
    }};
}

macro_rules! emit_raw {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let mut out = std::io::stdout().lock();
        let _ = write!(out, $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "molrag", version, about = "Retrieval-augmented molecule-caption translation")]
struct Cli {
    /// TOML config file; command-line flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (repeat for trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a store from a CID/SMILES/description TSV.
    Ingest(IngestArgs),
    /// Verify a store and print its manifest.
    InspectStore {
        #[arg(long)]
        store: PathBuf,
    },
    /// Translate one molecule or caption.
    Query {
        #[command(flatten)]
        run: RunArgs,
        /// Print the retrieved examples and prompt without calling a backend.
        #[arg(long)]
        dry_run: bool,
        /// Where to write the transcript if calibration fails.
        #[arg(long)]
        transcript_dir: Option<PathBuf>,
        /// SMILES for mol2cap, caption text for cap2mol.
        input: String,
    },
    /// Run the pipeline over a test split and write reports.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Repeat the run described by an earlier manifest.json.
        #[arg(long, conflicts_with_all = ["test"])]
        rerun: Option<PathBuf>,
    },
    /// Evaluate every n-shot and strategy combination.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1, 2, 5, 10])]
        shots: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values = ["random", "bm25", "morgan_fts"])]
        strategies: Vec<StrategyName>,
    },
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    tsv: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "train")]
    split: Split,
    #[arg(long, default_value_t = 2)]
    radius: u32,
    #[arg(long, default_value_t = 2048)]
    nbits: u32,
    #[arg(long, default_value_t = 1.5)]
    k1: f64,
    #[arg(long, default_value_t = 0.75)]
    b: f64,
}

#[derive(Args, Default)]
struct RunArgs {
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    n_shots: Option<usize>,
    /// random, bm25, morgan_fts, bm25_caption or bm25_smiles_chargram.
    #[arg(long)]
    strategy: Option<StrategyName>,
    #[arg(long)]
    seed: Option<u64>,
    /// Chat-completions endpoint URL; selects the live HTTP backend.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Serve replies from a recorded fixture; no network access.
    #[arg(long, conflicts_with = "record")]
    replay: Option<PathBuf>,
    /// Call the live backend and record every exchange to this fixture.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    max_error_allowance: Option<u32>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            store: self.store.clone(),
            task: self.task,
            n_shots: self.n_shots,
            strategy: self.strategy,
            seed: self.seed,
            endpoint_url: self.backend.clone(),
            model_name: self.model.clone(),
            replay: self.replay.clone(),
            record: self.record.clone(),
            template: self.template.clone(),
            concurrency: self.concurrency,
            max_retries: self.max_retries,
            max_error_allowance: self.max_error_allowance,
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
    Calibration(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(format!("molrag={level}")))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Calibration(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn file_config(cli_path: Option<&Path>) -> Result<FileConfig, Failure> {
    match cli_path {
        Some(p) => Ok(FileConfig::load(p)?),
        None => Ok(FileConfig::default()),
    }
}

fn open_store(config: &RunConfig) -> anyhow::Result<(Store, molrag::persist::StoreManifest)> {
    load_store(&config.store).with_context(|| format!("cannot open store {}", config.store.display()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = file_config(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(args) => ingest(&args),
        Command::InspectStore { store } => inspect(&store),
        Command::Query {
            run,
            dry_run,
            transcript_dir,
            input,
        } => {
            let config = resolve(&run.overrides(), &file)?;
            query(&config, &input, dry_run, transcript_dir.as_deref())
        }
        Command::Evaluate { run, test, out, rerun } => {
            let out = out
                .or(file.out().map(Path::to_path_buf))
                .ok_or_else(|| Failure::Usage("--out is required".into()))?;
            let (config, test) = match rerun {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("cannot read {}", path.display()))?;
                    let m: RunManifest = serde_json::from_str(&text)
                        .map_err(|e| Failure::Usage(format!("{}: not a run manifest: {e}", path.display())))?;
                    check_inputs(&m)?;
                    (m.run, m.test_tsv)
                }
                None => {
                    let config = resolve(&run.overrides(), &file)?;
                    let test = test
                        .or(file.test_tsv().map(Path::to_path_buf))
                        .ok_or_else(|| Failure::Usage("--test is required".into()))?;
                    (config, test)
                }
            };
            evaluate_cmd(&config, &test, &out)
        }
        Command::Ablate {
            run,
            test,
            out,
            shots,
            strategies,
        } => {
            let config = resolve(&run.overrides(), &file)?;
            let test = test
                .or(file.test_tsv().map(Path::to_path_buf))
                .ok_or_else(|| Failure::Usage("--test is required".into()))?;
            let out = out
                .or(file.out().map(Path::to_path_buf))
                .ok_or_else(|| Failure::Usage("--out is required".into()))?;
            if let Some(n) = shots.iter().find(|&&n| n > molrag::config::MAX_SHOTS) {
                return Err(Failure::Usage(format!("--shots value {n} exceeds {}", molrag::config::MAX_SHOTS)));
            }
            ablate_cmd(&config, &test, &out, &Grid { shots, strategies })
        }
    }
}

fn ingest(args: &IngestArgs) -> Result<(), Failure> {
    let fp = FingerprintParams::new(args.radius, args.nbits)
        .map_err(|e| Failure::Usage(format!("fingerprint parameters: {e}")))?;
    let bm25 = Bm25Params { k1: args.k1, b: args.b };
    bm25.validate().map_err(|e| Failure::Usage(format!("BM25 parameters: {e}")))?;
    let started = Instant::now();
    let (records, report) = load_chebi_tsv(&args.tsv, fp).map_err(|e| anyhow!(e))?;
    log::info!(
        "parsed {} in {:.2} s: {report}",
        args.tsv.display(),
        started.elapsed().as_secs_f64()
    );
    if records.is_empty() {
        return Err(anyhow!("{}: no usable rows\n{report}", args.tsv.display()).into());
    }
    let store = Store::build(records, bm25).map_err(|e| anyhow!("cannot build store: {e}"))?;
    let manifest = save_store(&store, &args.out, args.split).map_err(|e| anyhow!(e))?;
    let report_path = args.out.join("ingest_report.json");
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    std::fs::write(&report_path, text).with_context(|| format!("cannot write {}", report_path.display()))?;
    log::info!("ingest finished in {:.2} s", started.elapsed().as_secs_f64());
    emit!(
        "{}",
        json!({
            "store": args.out,
            "rows": report.rows,
            "records": manifest.record_count,
            "quarantined": report.quarantined.len(),
            "parse_rate": report.parse_rate(),
        })
    );
    Ok(())
}

fn inspect(dir: &Path) -> Result<(), Failure> {
    let (store, manifest) = load_store(dir).with_context(|| format!("cannot open store {}", dir.display()))?;
    emit!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "manifest": manifest,
            "checksums": "verified",
            "caption_terms": store.caption_index().term_count(),
            "smiles_terms": store.smiles_index().term_count(),
            "caption_avgdl": store.caption_index().avgdl(),
        }))
        .expect("json")
    );
    Ok(())
}

fn query(config: &RunConfig, input: &str, dry_run: bool, transcript_dir: Option<&Path>) -> Result<(), Failure> {
    let (store, _) = open_store(config)?;
    let template = load_template(config.template.as_deref(), config.task).map_err(|e| Failure::Usage(e.to_string()))?;
    let strategy = config.retrieval();
    let strategy_name = molrag::evaluate::retrieval_name(config);
    if dry_run {
        let examples = match (config.n_shots, strategy) {
            (0, _) | (_, None) => Vec::new(),
            (n, Some(s)) => match config.task {
                Task::Mol2Cap => store.retrieve_mol2cap(input, n, s),
                Task::Cap2Mol => store.retrieve_cap2mol(input, n, s),
            }
            .map_err(|e| anyhow!("retrieval failed: {e}"))?,
        };
        let prompt = build_prompt(&template.template, config.task, input, &examples).map_err(|e| anyhow!("{e}"))?;
        let out = json!({
            "input": input,
            "task": config.task,
            "n_shots": config.n_shots,
            "strategy": strategy_name,
            "examples_used": examples.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(),
            "prompt_digest": prompt.digest(),
            "token_estimate": prompt.token_estimate,
            "system_text": prompt.system_text,
            "user_text": prompt.user_text,
        });
        emit!("{}", serde_json::to_string_pretty(&out).expect("json"));
        return Ok(());
    }
    let client = connect(config).map_err(|e| anyhow!(e))?;
    let result = calibrated_query_with_store(
        &client,
        &store,
        &template.template,
        config.task,
        input,
        config.n_shots,
        // only consulted when n_shots > 0, where validation guarantees a strategy
        strategy.unwrap_or(molrag_core::store::RetrievalStrategy::Random { seed: config.seed }),
        &config.calibration,
    );
    flush_recording(&client, config).context("cannot write recorded fixture")?;
    match result {
        Ok(out) => {
            let mut v = json!({
                "input": input,
                "output": out.value,
                "examples_used": out.examples_used,
                "query_count": out.query_count,
                "strategy": strategy_name,
                "task": config.task,
                "n_shots": config.n_shots,
                "final_shot_count": out.final_shot_count,
                "extraction": out.extraction,
                "repairs_applied": out.repairs_applied,
            });
            if config.task == Task::Cap2Mol {
                v["valid"] = json!(is_valid_smiles(&out.value));
            }
            emit!("{}", serde_json::to_string_pretty(&v).expect("json"));
            Ok(())
        }
        Err(f) => {
            let dir = transcript_dir.map_or_else(std::env::temp_dir, Path::to_path_buf);
            let path = dir.join(format!("molrag-failure-{}.json", &sha256_hex(input.as_bytes())[..16]));
            let body = json!({
                "input": input,
                "reason": f.reason.to_string(),
                "attempts": f.attempts,
                "backend_calls": f.backend_calls,
                "last_raw_text": f.last_raw_text,
                "transcript": f.transcript,
            });
            std::fs::create_dir_all(&dir).ok();
            std::fs::write(&path, serde_json::to_string_pretty(&body).expect("json"))
                .with_context(|| format!("cannot write {}", path.display()))?;
            Err(Failure::Calibration(format!("{f}; transcript written to {}", path.display())))
        }
    }
}

/// Refuses a re-run whose store or test file changed since the manifest.
fn check_inputs(m: &RunManifest) -> Result<(), Failure> {
    let store = molrag::persist::read_manifest(&m.run.store).context("cannot open store")?;
    if store.files != m.store_files {
        return Err(anyhow!("store {} differs from the one in the manifest", m.run.store.display()).into());
    }
    let bytes = std::fs::read(&m.test_tsv).with_context(|| format!("cannot read {}", m.test_tsv.display()))?;
    if sha256_hex(&bytes) != m.test_sha256 {
        return Err(anyhow!("test file {} changed since the manifest was written", m.test_tsv.display()).into());
    }
    if let (Some(want), molrag::config::BackendMode::Replay { fixture }) = (&m.fixture_sha256, &m.run.mode) {
        let bytes = std::fs::read(fixture).with_context(|| format!("cannot read {}", fixture.display()))?;
        if sha256_hex(&bytes) != *want {
            return Err(anyhow!("replay fixture {} changed since the manifest was written", fixture.display()).into());
        }
    }
    Ok(())
}

fn evaluate_cmd(config: &RunConfig, test_path: &Path, out: &Path) -> Result<(), Failure> {
    let (store, store_manifest) = open_store(config)?;
    let template = load_template(config.template.as_deref(), config.task).map_err(|e| Failure::Usage(e.to_string()))?;
    let test = load_test_set(test_path, store.fp_params()).map_err(|e| anyhow!(e))?;
    let manifest = RunManifest::new(config, &store_manifest, &template, &test).map_err(|e| anyhow!(e))?;
    let client = connect(config).map_err(|e| anyhow!(e))?;
    let result = evaluate(&client, &store, &template, &test, &manifest, out);
    flush_recording(&client, config).context("cannot write recorded fixture")?;
    let summary = result.map_err(|e| anyhow!(e))?;
    emit_raw!("{}", molrag::report::report_text(&summary.report));
    Ok(())
}

fn ablate_cmd(config: &RunConfig, test_path: &Path, out: &Path, grid: &Grid) -> Result<(), Failure> {
    let (store, store_manifest) = open_store(config)?;
    let template = load_template(config.template.as_deref(), config.task).map_err(|e| Failure::Usage(e.to_string()))?;
    let test = load_test_set(test_path, store.fp_params()).map_err(|e| anyhow!(e))?;
    let client = connect(config).map_err(|e| anyhow!(e))?;
    let result = ablate(&client, config, &store, &store_manifest, &template, &test, grid, out);
    flush_recording(&client, config).context("cannot write recorded fixture")?;
    let comparison = result.map_err(|e| anyhow!(e))?;
    emit_raw!("{}", molrag::ablate::comparison_text(&comparison));
    Ok(())
}
