//! Metric reports: JSON, aligned text tables and the column sets for each task.

use std::collections::BTreeMap;

use molrag_core::bm25::Bm25Params;
use molrag_core::calibration::ExtractionStrategy;
use molrag_core::fingerprint::FingerprintParams;
use molrag_core::metrics::{score_captions, score_molecules, EvalPair, MetricError};
use molrag_core::Task;
use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;
use serde_json::{json, Value};

use crate::evaluate::{ItemRecord, ItemStatus};

/// Cell text for columns this toolkit does not compute.
pub const OUT_OF_SCOPE: &str = "n/a \u{2014} out of scope";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Better {
    Higher,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnSpec {
    pub name: &'static str,
    pub better: Better,
    /// Decimal places in text tables.
    pub places: usize,
}

const fn up(name: &'static str) -> ColumnSpec {
    ColumnSpec { name, better: Better::Higher, places: 3 }
}

pub const MOL2CAP_COLUMNS: [ColumnSpec; 7] = [
    up("BLEU-2"),
    up("BLEU-4"),
    up("ROUGE-1"),
    up("ROUGE-2"),
    up("ROUGE-L"),
    up("METEOR"),
    up("Text2Mol"),
];

pub const CAP2MOL_COLUMNS: [ColumnSpec; 9] = [
    up("BLEU"),
    up("EM"),
    ColumnSpec { name: "Levenshtein", better: Better::Lower, places: 2 },
    up("MACCS FTS"),
    up("RDK FTS"),
    up("Morgan FTS"),
    ColumnSpec { name: "FCD", better: Better::Lower, places: 2 },
    up("Text2Mol"),
    up("Validity"),
];

pub fn column_specs(task: Task) -> &'static [ColumnSpec] {
    match task {
        Task::Mol2Cap => &MOL2CAP_COLUMNS,
        Task::Cap2Mol => &CAP2MOL_COLUMNS,
    }
}

/// Column values in table order; `None` is out of scope.
#[derive(Debug, Clone, PartialEq)]
pub struct Columns(pub Vec<(&'static str, Option<f64>)>);

impl Columns {
    pub fn out_of_scope(task: Task) -> Columns {
        Columns(column_specs(task).iter().map(|c| (c.name, None)).collect())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.iter().find(|(n, _)| *n == name).and_then(|(_, v)| *v)
    }
}

impl Serialize for Columns {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (name, value) in &self.0 {
            match value {
                Some(v) => map.serialize_entry(name, v)?,
                None => map.serialize_entry(name, OUT_OF_SCOPE)?,
            }
        }
        map.end()
    }
}

/// Settings that shaped the numbers, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub n_shots: usize,
    pub strategy: String,
    pub seed: u64,
    pub fingerprint: FingerprintParams,
    pub bm25: Bm25Params,
    pub model_name: String,
    pub temperature: f64,
    pub template_version: String,
    pub max_error_allowance: u32,
    pub correction_strategies: Vec<ExtractionStrategy>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counts {
    pub items: usize,
    pub completed: usize,
    pub failed: usize,
    /// Test rows skipped at load.
    pub quarantined: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invalid: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Secondary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub morgan_fts_valid_only: Option<f64>,
    pub mean_query_count: f64,
    pub mean_final_shot_count: f64,
    /// How many accepted answers each extraction strategy produced.
    pub extraction: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub task: Task,
    pub method: String,
    pub config: ConfigEcho,
    pub bleu: &'static str,
    pub tokenization: &'static str,
    pub failed_items: &'static str,
    pub counts: Counts,
    pub columns: Columns,
    pub secondary: Secondary,
    pub items: Vec<Value>,
}

/// Row label in the style `10-shot (bm25)` or `zero-shot`.
pub fn method_label(n_shots: usize, strategy: &str) -> String {
    if n_shots == 0 {
        "zero-shot".to_string()
    } else {
        format!("{n_shots}-shot ({strategy})")
    }
}

/// Scores finished items. `items` must be in test-set order.
pub fn build_report(
    task: Task,
    config: ConfigEcho,
    items: &[ItemRecord],
    quarantined: usize,
) -> Result<MetricReport, MetricError> {
    let pairs: Vec<EvalPair> = items
        .iter()
        .map(|it| match it.status {
            ItemStatus::Ok => EvalPair::ok(it.prediction.clone(), it.reference.clone()),
            ItemStatus::CalibrationFailed => EvalPair::failed(it.reference.clone()),
        })
        .collect();
    let failed = items.iter().filter(|it| it.status == ItemStatus::CalibrationFailed).count();
    let mut counts = Counts {
        items: items.len(),
        completed: items.len() - failed,
        failed,
        quarantined,
        valid: None,
        invalid: None,
    };
    let mut extraction = BTreeMap::new();
    for it in items {
        if let Some(s) = it.extraction {
            *extraction.entry(s.as_str().to_string()).or_insert(0) += 1;
        }
    }
    let n = items.len().max(1) as f64;
    let mut secondary = Secondary {
        morgan_fts_valid_only: None,
        mean_query_count: items.iter().map(|it| it.query_count as f64).sum::<f64>() / n,
        mean_final_shot_count: items.iter().map(|it| it.final_shot_count as f64).sum::<f64>() / n,
        extraction,
    };
    let (columns, rows) = match task {
        Task::Mol2Cap => {
            let s = score_captions(&pairs)?;
            let columns = Columns(vec![
                ("BLEU-2", Some(s.bleu2)),
                ("BLEU-4", Some(s.bleu4)),
                ("ROUGE-1", Some(s.rouge1)),
                ("ROUGE-2", Some(s.rouge2)),
                ("ROUGE-L", Some(s.rouge_l)),
                ("METEOR", None),
                ("Text2Mol", None),
            ]);
            let rows = items
                .iter()
                .zip(&s.items)
                .map(|(it, sc)| {
                    json!({
                        "index": it.index,
                        "id": it.id,
                        "status": it.status,
                        "rouge1_f": sc.rouge.rouge1_f,
                        "rouge2_f": sc.rouge.rouge2_f,
                        "rougeL_f": sc.rouge.rouge_l_f,
                    })
                })
                .collect();
            (columns, rows)
        }
        Task::Cap2Mol => {
            let s = score_molecules(&pairs, config.fingerprint)?;
            counts.valid = Some(s.valid_count);
            counts.invalid = Some(s.invalid_count);
            secondary.morgan_fts_valid_only = s.morgan_fts_valid_only;
            let columns = Columns(vec![
                ("BLEU", Some(s.bleu)),
                ("EM", Some(s.exact_match)),
                ("Levenshtein", Some(s.levenshtein)),
                ("MACCS FTS", None),
                ("RDK FTS", None),
                ("Morgan FTS", Some(s.morgan_fts)),
                ("FCD", None),
                ("Text2Mol", None),
                ("Validity", Some(s.validity)),
            ]);
            let rows = items
                .iter()
                .zip(&s.items)
                .map(|(it, sc)| {
                    json!({
                        "index": it.index,
                        "id": it.id,
                        "status": it.status,
                        "valid": sc.score.valid,
                        "exact_match": sc.score.exact_match,
                        "morgan_fts": sc.score.morgan_fts,
                        "levenshtein": sc.levenshtein,
                    })
                })
                .collect();
            (columns, rows)
        }
    };
    Ok(MetricReport {
        task,
        method: method_label(config.n_shots, &config.strategy),
        config,
        bleu: "corpus-level, uniform n-gram weights, brevity penalty, 1e-9 smoothing of zero matches",
        tokenization: match task {
            Task::Mol2Cap => "captions: lowercase whitespace words",
            Task::Cap2Mol => "SMILES: characters",
        },
        failed_items: "scored as empty predictions",
        counts,
        columns,
        secondary,
        items: rows,
    })
}

pub fn report_json(report: &MetricReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn format_cell(value: Option<f64>, spec: &ColumnSpec) -> String {
    match value {
        Some(v) => format!("{v:.*}", spec.places),
        None => "n/a".to_string(),
    }
}

/// Aligned table: first column left-aligned, the rest right-aligned.
pub fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        parts.join(" | ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out.push_str(&rule.join("-+-"));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

pub fn table_header(task: Task) -> Vec<String> {
    let mut h = vec!["Method".to_string()];
    h.extend(column_specs(task).iter().map(|c| {
        let arrow = match c.better {
            Better::Higher => "\u{2191}",
            Better::Lower => "\u{2193}",
        };
        format!("{}{arrow}", c.name)
    }));
    h
}

pub fn table_row(task: Task, method: &str, columns: &Columns) -> Vec<String> {
    let mut row = vec![method.to_string()];
    row.extend(column_specs(task).iter().map(|c| format_cell(columns.get(c.name), c)));
    row
}

pub fn out_of_scope_note(task: Task) -> String {
    let names: Vec<&str> = match task {
        Task::Mol2Cap => vec!["METEOR", "Text2Mol"],
        Task::Cap2Mol => vec!["MACCS FTS", "RDK FTS", "FCD", "Text2Mol"],
    };
    format!("{OUT_OF_SCOPE}: {}\n", names.join(", "))
}

pub fn report_text(report: &MetricReport) -> String {
    let c = &report.counts;
    let mut out = format!(
        "{} {}  model {}  template {}\nitems {}  completed {}  failed {}  quarantined {}",
        report.task,
        report.method,
        report.config.model_name,
        report.config.template_version,
        c.items,
        c.completed,
        c.failed,
        c.quarantined
    );
    if let (Some(v), Some(i)) = (c.valid, c.invalid) {
        out.push_str(&format!("  valid {v}  invalid {i}"));
    }
    out.push_str("\n\n");
    out.push_str(&render_table(
        &table_header(report.task),
        &[table_row(report.task, &report.method, &report.columns)],
    ));
    out.push('\n');
    out.push_str(&out_of_scope_note(report.task));
    if let Some(v) = report.secondary.morgan_fts_valid_only {
        out.push_str(&format!("Morgan FTS over valid predictions only: {v:.3}\n"));
    }
    out.push_str(&format!(
        "mean charged queries per item: {:.2}\n",
        report.secondary.mean_query_count
    ));
    out
}
