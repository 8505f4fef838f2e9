//! Batch evaluation over a test split: concurrent item pipelines, a per-item
//! checkpoint for resuming, and the report files.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use molrag_core::backend::ChatBackend;
use molrag_core::calibration::{
    calibrated_query_with_store, CalibratedOutput, CalibrationFailure, ExtractionStrategy, TranscriptEntry,
};
use molrag_core::fingerprint::FingerprintParams;
use molrag_core::smiles::is_valid_smiles;
use molrag_core::store::{MoleculeRecord, RetrievalStrategy, Store};
use molrag_core::Task;
use serde::{Deserialize, Serialize};

use crate::config::{BackendMode, RunConfig};
use crate::persist::{sha256_hex, StoreManifest};
use crate::report::{build_report, report_json, report_text, ConfigEcho, MetricReport};
use crate::templates::LoadedTemplate;
use crate::tsv::{load_chebi_tsv, IngestError, IngestReport};

pub const RUN_MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.jsonl";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const ITEMS_FILE: &str = "items.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{0}")]
    Ingest(#[from] IngestError),
    #[error("{}: test file has no usable rows", path.display())]
    EmptyTestSet { path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: existing run was made with different settings; use a fresh output directory", path.display())]
    CheckpointMismatch { path: PathBuf },
    #[error("{}: {message}", path.display())]
    Corrupt { path: PathBuf, message: String },
    #[error("scoring failed: {0:?}")]
    Metrics(molrag_core::metrics::MetricError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Test items plus provenance.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub path: PathBuf,
    pub sha256: String,
    pub items: Vec<MoleculeRecord>,
    pub ingest: IngestReport,
}

pub fn load_test_set(path: &Path, params: FingerprintParams) -> Result<TestSet, EvalError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let (items, ingest) = load_chebi_tsv(path, params)?;
    if items.is_empty() {
        return Err(EvalError::EmptyTestSet { path: path.to_path_buf() });
    }
    Ok(TestSet {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
        items,
        ingest,
    })
}

/// Everything a re-run needs, written before the first item is queried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub run: RunConfig,
    /// Strategy actually used for retrieval, `none` for zero-shot.
    pub retrieval: String,
    pub test_tsv: PathBuf,
    pub test_sha256: String,
    pub test_items: usize,
    pub test_quarantined: usize,
    pub store_record_count: usize,
    pub store_files: BTreeMap<String, String>,
    pub fingerprint: FingerprintParams,
    pub bm25: molrag_core::bm25::Bm25Params,
    pub template: String,
    pub template_version: String,
    pub template_sha256: String,
    /// SHA-256 of the replay fixture, when replaying.
    pub fixture_sha256: Option<String>,
    /// Set when the cell was not run, with the reason.
    pub skipped: Option<String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(
        config: &RunConfig,
        store: &StoreManifest,
        template: &LoadedTemplate,
        test: &TestSet,
    ) -> Result<RunManifest, EvalError> {
        let fixture_sha256 = match &config.mode {
            BackendMode::Replay { fixture } => Some(sha256_hex(&std::fs::read(fixture).map_err(io_err(fixture))?)),
            _ => None,
        };
        // absolute paths so that the manifest works from any directory
        let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
        let mut run = config.clone();
        run.store = abs(&run.store);
        run.template = run.template.as_deref().map(abs);
        match &mut run.mode {
            BackendMode::Replay { fixture } | BackendMode::Record { fixture } => *fixture = abs(fixture),
            BackendMode::Http => {}
        }
        Ok(RunManifest {
            tool: "molrag".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: "evaluate".to_string(),
            run,
            retrieval: retrieval_name(config),
            test_tsv: abs(&test.path),
            test_sha256: test.sha256.clone(),
            test_items: test.items.len(),
            test_quarantined: test.ingest.quarantined.len(),
            store_record_count: store.record_count,
            store_files: store.files.clone(),
            fingerprint: store.fingerprint,
            bm25: store.bm25,
            template: template.origin.clone(),
            template_version: template.template.version.clone(),
            template_sha256: template.sha256.clone(),
            fixture_sha256,
            skipped: None,
            outputs: [REPORT_JSON_FILE, REPORT_TEXT_FILE, ITEMS_FILE, FAILURES_FILE, CHECKPOINT_FILE]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        })
    }

    pub fn config_echo(&self) -> ConfigEcho {
        ConfigEcho {
            n_shots: self.run.n_shots,
            strategy: if self.run.n_shots == 0 {
                "none".to_string()
            } else {
                self.run.strategy.as_str().to_string()
            },
            seed: self.run.seed,
            fingerprint: self.fingerprint,
            bm25: self.bm25,
            model_name: self.run.backend.model_name.clone(),
            temperature: self.run.backend.temperature,
            template_version: self.template_version.clone(),
            max_error_allowance: self.run.calibration.max_error_allowance,
            correction_strategies: self.run.calibration.correction_strategies.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub fn retrieval_name(config: &RunConfig) -> String {
    if config.n_shots == 0 {
        return "none".to_string();
    }
    config.retrieval().map_or("not_applicable".to_string(), |r| r.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Ok,
    CalibrationFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub reason: String,
    pub attempts: u32,
    pub backend_calls: u32,
    pub last_raw_text: Option<String>,
    pub transcript: Vec<TranscriptEntry>,
}

/// One test item's outcome: a checkpoint line, and (without `failure`) an
/// `items.jsonl` line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub index: usize,
    pub id: String,
    pub input: String,
    pub reference: String,
    pub status: ItemStatus,
    /// Empty when calibration failed.
    pub prediction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<bool>,
    pub query_count: u32,
    pub backend_calls: u32,
    pub extraction: Option<ExtractionStrategy>,
    pub repairs_applied: Vec<ExtractionStrategy>,
    pub initial_shot_count: usize,
    pub final_shot_count: usize,
    pub examples_used: Vec<String>,
    pub prompt_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureRecord>,
}

fn item_io(task: Task, rec: &MoleculeRecord) -> (&str, &str) {
    match task {
        Task::Mol2Cap => (&rec.smiles, &rec.caption),
        Task::Cap2Mol => (&rec.caption, &rec.smiles),
    }
}

pub fn item_record(
    task: Task,
    index: usize,
    rec: &MoleculeRecord,
    n_shots: usize,
    result: Result<CalibratedOutput, CalibrationFailure>,
) -> ItemRecord {
    let (input, reference) = item_io(task, rec);
    let base = ItemRecord {
        index,
        id: rec.id.clone(),
        input: input.to_string(),
        reference: reference.to_string(),
        status: ItemStatus::Ok,
        prediction: String::new(),
        valid: None,
        query_count: 0,
        backend_calls: 0,
        extraction: None,
        repairs_applied: Vec::new(),
        initial_shot_count: n_shots,
        final_shot_count: n_shots,
        examples_used: Vec::new(),
        prompt_digest: None,
        failure: None,
    };
    match result {
        Ok(out) => ItemRecord {
            valid: (task == Task::Cap2Mol).then(|| is_valid_smiles(&out.value)),
            prediction: out.value,
            query_count: out.query_count,
            backend_calls: out.backend_calls,
            extraction: Some(out.extraction),
            repairs_applied: out.repairs_applied,
            initial_shot_count: out.initial_shot_count,
            final_shot_count: out.final_shot_count,
            examples_used: out.examples_used,
            prompt_digest: Some(out.prompt_digest),
            ..base
        },
        Err(f) => {
            let final_shot_count = f.transcript.last().map_or(n_shots, |t| t.shot_count);
            ItemRecord {
                status: ItemStatus::CalibrationFailed,
                valid: (task == Task::Cap2Mol).then_some(false),
                query_count: f.attempts,
                backend_calls: f.backend_calls,
                final_shot_count,
                prompt_digest: f.transcript.last().map(|t| t.prompt_digest.clone()),
                failure: Some(FailureRecord {
                    reason: f.reason.to_string(),
                    attempts: f.attempts,
                    backend_calls: f.backend_calls,
                    last_raw_text: f.last_raw_text,
                    transcript: f.transcript,
                }),
                ..base
            }
        }
    }
}

/// Reads the checkpoint, dropping a torn last line. Later lines for the
/// same index win.
fn read_checkpoint(path: &Path) -> Result<BTreeMap<usize, ItemRecord>, EvalError> {
    let mut done = BTreeMap::new();
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(done),
        Err(e) => return Err(EvalError::Io { path: path.to_path_buf(), source: e }),
    };
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<ItemRecord>(line) {
            Ok(rec) => {
                done.insert(rec.index, rec);
            }
            Err(_) if i + 1 == lines.len() => log::warn!("{}: ignoring torn last line", path.display()),
            Err(e) => {
                return Err(EvalError::Corrupt {
                    path: path.to_path_buf(),
                    message: format!("line {}: {e}", i + 1),
                })
            }
        }
    }
    Ok(done)
}

fn jsonl<T: Serialize>(rows: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(&r).expect("row serializes"));
        out.push('\n');
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<(), EvalError> {
    std::fs::write(path, text).map_err(io_err(path))
}

/// Writes the manifest, or checks an existing one matches.
pub fn prepare_out_dir(out: &Path, manifest: &RunManifest) -> Result<(), EvalError> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join(RUN_MANIFEST_FILE);
    match std::fs::read_to_string(&path) {
        Ok(existing) => {
            let old: RunManifest = serde_json::from_str(&existing).map_err(|e| EvalError::Corrupt {
                path: path.clone(),
                message: e.to_string(),
            })?;
            if old != *manifest {
                return Err(EvalError::CheckpointMismatch { path });
            }
            Ok(())
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => write_file(&path, &manifest.to_json()),
        Err(e) => Err(EvalError::Io { path, source: e }),
    }
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub report: MetricReport,
    pub resumed_items: usize,
    pub queried_items: usize,
}

/// Runs (or resumes) one evaluation into `out`.
///
/// Items already in the checkpoint are not queried again. Items are
/// processed by up to `config.concurrency` threads; outputs are ordered by
/// item index, so they do not depend on completion order.
pub fn evaluate<B: ChatBackend + Sync + ?Sized>(
    backend: &B,
    store: &Store,
    template: &LoadedTemplate,
    test: &TestSet,
    manifest: &RunManifest,
    out: &Path,
) -> Result<EvalSummary, EvalError> {
    let config = &manifest.run;
    prepare_out_dir(out, manifest)?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let mut done = read_checkpoint(&ckpt_path)?;
    done.retain(|&i, _| i < test.items.len());
    let resumed = done.len();
    // Rewrite so a torn line from an interrupted run is gone before appending.
    write_file(&ckpt_path, &jsonl(done.values()))?;
    let pending: Vec<usize> = (0..test.items.len()).filter(|i| !done.contains_key(i)).collect();
    if resumed > 0 {
        log::info!("resuming: {resumed} items already done, {} to go", pending.len());
    }

    let strategy = config.retrieval().unwrap_or(RetrievalStrategy::Random { seed: config.seed });
    let task = config.task;
    let started = Instant::now();
    let mut ckpt = OpenOptions::new()
        .append(true)
        .open(&ckpt_path)
        .map_err(io_err(&ckpt_path))?;
    let next = AtomicUsize::new(0);
    let workers = config.concurrency.clamp(1, pending.len().max(1));
    let write_result: Result<(), EvalError> = std::thread::scope(|s| {
        let (tx, rx) = mpsc::channel::<ItemRecord>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, pending) = (&next, &pending);
            s.spawn(move || loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&index) = pending.get(k) else { break };
                let rec = &test.items[index];
                let (input, _) = item_io(task, rec);
                let result = calibrated_query_with_store(
                    backend,
                    store,
                    &template.template,
                    task,
                    input,
                    config.n_shots,
                    strategy,
                    &config.calibration,
                );
                if tx.send(item_record(task, index, rec, config.n_shots, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (k, item) in rx.iter().enumerate() {
            append_line(&mut ckpt, &item).map_err(io_err(&ckpt_path))?;
            if item.status == ItemStatus::CalibrationFailed {
                log::warn!("item {} ({}) failed calibration", item.index, item.id);
            }
            if (k + 1) % 25 == 0 {
                log::info!("{}/{} items queried", k + 1, pending.len());
            }
            done.insert(item.index, item);
        }
        Ok(())
    });
    write_result?;
    log::info!(
        "queried {} items in {:.1} s",
        pending.len(),
        started.elapsed().as_secs_f64()
    );

    let items: Vec<ItemRecord> = done.into_values().collect();
    let report = build_report(task, manifest.config_echo(), &items, test.ingest.quarantined.len())
        .map_err(EvalError::Metrics)?;
    write_outputs(out, &report, &items)?;
    Ok(EvalSummary {
        report,
        resumed_items: resumed,
        queried_items: pending.len(),
    })
}

fn append_line(file: &mut File, item: &ItemRecord) -> std::io::Result<()> {
    let mut line = serde_json::to_string(item).expect("item serializes");
    line.push('\n');
    file.write_all(line.as_bytes())?;
    file.flush()
}

fn write_outputs(out: &Path, report: &MetricReport, items: &[ItemRecord]) -> Result<(), EvalError> {
    write_file(&out.join(REPORT_JSON_FILE), &report_json(report))?;
    write_file(&out.join(REPORT_TEXT_FILE), &report_text(report))?;
    let public = items.iter().map(|it| ItemRecord {
        failure: None,
        ..it.clone()
    });
    write_file(&out.join(ITEMS_FILE), &jsonl(public))?;
    #[derive(Serialize)]
    struct FailureLine<'a> {
        index: usize,
        id: &'a str,
        #[serde(flatten)]
        failure: &'a FailureRecord,
    }
    let failures = items.iter().filter_map(|it| {
        it.failure.as_ref().map(|f| FailureLine {
            index: it.index,
            id: &it.id,
            failure: f,
        })
    });
    write_file(&out.join(FAILURES_FILE), &jsonl(failures))
}
