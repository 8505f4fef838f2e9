//! The n-shot by strategy grid: one evaluation per cell and a consolidated
//! comparison table.

use std::path::Path;

use molrag_core::backend::ChatBackend;
use molrag_core::store::Store;
use molrag_core::Task;
use serde::Serialize;

use crate::config::{RunConfig, StrategyName};
use crate::evaluate::{evaluate, io_err, prepare_out_dir, retrieval_name, EvalError, RunManifest, TestSet};
use crate::persist::StoreManifest;
use crate::report::{method_label, out_of_scope_note, render_table, table_header, table_row, Columns};
use crate::templates::LoadedTemplate;

pub const COMPARISON_JSON_FILE: &str = "comparison.json";
pub const COMPARISON_TEXT_FILE: &str = "comparison.txt";
pub const DEFAULT_SHOTS: [usize; 5] = [0, 1, 2, 5, 10];
pub const DEFAULT_STRATEGIES: [StrategyName; 3] = [StrategyName::Random, StrategyName::Bm25, StrategyName::MorganFts];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub shots: Vec<usize>,
    pub strategies: Vec<StrategyName>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            shots: DEFAULT_SHOTS.to_vec(),
            strategies: DEFAULT_STRATEGIES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub name: String,
    pub n_shots: usize,
    pub strategy: StrategyName,
}

impl Grid {
    /// Cells in table order. All zero-shot cells are the same experiment, so
    /// `0` contributes one cell whatever the strategies.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &n in &self.shots {
            if n == 0 {
                if !cells.iter().any(|c: &Cell| c.n_shots == 0) {
                    cells.push(Cell {
                        name: "zero_shot".to_string(),
                        n_shots: 0,
                        strategy: self.strategies.first().copied().unwrap_or(StrategyName::Random),
                    });
                }
                continue;
            }
            for &s in &self.strategies {
                let name = format!("n{n}_{s}");
                if !cells.iter().any(|c| c.name == name) {
                    cells.push(Cell { name, n_shots: n, strategy: s });
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub cell: String,
    pub method: String,
    pub n_shots: usize,
    pub strategy: String,
    pub retrieval: String,
    pub status: CellStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub failed_items: usize,
    pub columns: Columns,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub task: Task,
    pub model_name: String,
    pub seed: u64,
    pub items: usize,
    pub rows: Vec<ComparisonRow>,
}

pub fn comparison_text(c: &Comparison) -> String {
    let rows: Vec<Vec<String>> = c.rows.iter().map(|r| table_row(c.task, &r.method, &r.columns)).collect();
    let mut out = format!(
        "{} ablation  model {}  seed {}  items {}\n\n",
        c.task, c.model_name, c.seed, c.items
    );
    out.push_str(&render_table(&table_header(c.task), &rows));
    out.push('\n');
    out.push_str(&out_of_scope_note(c.task));
    for r in c.rows.iter().filter(|r| r.status == CellStatus::NotApplicable) {
        out.push_str(&format!("{}: not applicable ({})\n", r.method, r.note.as_deref().unwrap_or("")));
    }
    out
}

/// Runs every cell of `grid` into `out/<cell>/`, then writes the comparison
/// files. Cells already complete are resumed from their checkpoints, which
/// costs no backend calls.
#[allow(clippy::too_many_arguments)]
pub fn ablate<B: ChatBackend + Sync + ?Sized>(
    backend: &B,
    base: &RunConfig,
    store: &Store,
    store_manifest: &StoreManifest,
    template: &LoadedTemplate,
    test: &TestSet,
    grid: &Grid,
    out: &Path,
) -> Result<Comparison, EvalError> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut rows = Vec::new();
    for cell in grid.cells() {
        let config = RunConfig {
            n_shots: cell.n_shots,
            strategy: cell.strategy,
            ..base.clone()
        };
        let dir = out.join(&cell.name);
        let mut manifest = RunManifest::new(&config, store_manifest, template, test)?;
        manifest.command = format!("ablate:{}", cell.name);
        let method = method_label(cell.n_shots, cell.strategy.as_str());
        if cell.n_shots > 0 && config.retrieval().is_none() {
            let note = format!(
                "{} needs molecule queries; {} queries are {}",
                cell.strategy,
                config.task,
                match config.task {
                    Task::Mol2Cap => "molecules",
                    Task::Cap2Mol => "captions",
                }
            );
            manifest.skipped = Some(note.clone());
            manifest.outputs.clear();
            prepare_out_dir(&dir, &manifest)?;
            rows.push(ComparisonRow {
                cell: cell.name,
                method,
                n_shots: cell.n_shots,
                strategy: cell.strategy.as_str().to_string(),
                retrieval: retrieval_name(&config),
                status: CellStatus::NotApplicable,
                note: Some(note),
                failed_items: 0,
                columns: Columns::out_of_scope(config.task),
            });
            continue;
        }
        log::info!("cell {}: {}", cell.name, method);
        let summary = evaluate(backend, store, template, test, &manifest, &dir)?;
        rows.push(ComparisonRow {
            cell: cell.name,
            method: summary.report.method.clone(),
            n_shots: cell.n_shots,
            strategy: summary.report.config.strategy.clone(),
            retrieval: retrieval_name(&config),
            status: CellStatus::Ok,
            note: None,
            failed_items: summary.report.counts.failed,
            columns: summary.report.columns,
        });
    }
    let comparison = Comparison {
        task: base.task,
        model_name: base.backend.model_name.clone(),
        seed: base.seed,
        items: test.items.len(),
        rows,
    };
    let mut json = serde_json::to_string_pretty(&comparison).expect("comparison serializes");
    json.push('\n');
    let path = out.join(COMPARISON_JSON_FILE);
    std::fs::write(&path, json).map_err(io_err(&path))?;
    let path = out.join(COMPARISON_TEXT_FILE);
    std::fs::write(&path, comparison_text(&comparison)).map_err(io_err(&path))?;
    Ok(comparison)
}
