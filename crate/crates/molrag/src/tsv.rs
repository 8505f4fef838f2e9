//! ChEBI-20 style TSV ingest: header `CID\tSMILES\tdescription`, one pair per row.

use std::fmt;
use std::path::{Path, PathBuf};

use molrag_core::fingerprint::FingerprintParams;
use molrag_core::store::{MoleculeRecord, RecordError};
use serde::Serialize;

pub const COLUMNS: [&str; 3] = ["CID", "SMILES", "description"];

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{}: missing column {column}", path.display())]
    MissingColumn { path: PathBuf, column: &'static str },
    #[error("{}: {source}", path.display())]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: file is empty", path.display())]
    EmptyFile { path: PathBuf },
}

/// A row that was skipped, with a machine-readable reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QuarantinedRow {
    /// 1-based line number in the file.
    pub line: usize,
    pub cid: String,
    pub reason: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub rows: usize,
    pub accepted: usize,
    pub quarantined: Vec<QuarantinedRow>,
}

impl IngestReport {
    pub fn parse_rate(&self) -> f64 {
        if self.rows == 0 {
            return 0.0;
        }
        self.accepted as f64 / self.rows as f64
    }
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} rows, {} accepted, {} quarantined",
            self.rows,
            self.accepted,
            self.quarantined.len()
        )?;
        for q in &self.quarantined {
            write!(f, "\n  line {} ({}): {}: {}", q.line, q.cid, q.reason, q.detail)?;
        }
        Ok(())
    }
}

pub fn load_chebi_tsv(
    path: &Path,
    params: FingerprintParams,
) -> Result<(Vec<MoleculeRecord>, IngestReport), IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::IoFailure {
        path: path.to_path_buf(),
        source,
    })?;
    parse_chebi_tsv(&text, params).map_err(|e| match e {
        TableError::Empty => IngestError::EmptyFile { path: path.to_path_buf() },
        TableError::MissingColumn(column) => IngestError::MissingColumn {
            path: path.to_path_buf(),
            column,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableError {
    Empty,
    MissingColumn(&'static str),
}

/// Raw rows of a ChEBI-style table: `(line, cid, smiles, caption)`, or the
/// line and field count of a row with too few fields.
pub(crate) type RawRow<'a> = Result<(usize, &'a str, &'a str, &'a str), (usize, usize)>;

pub(crate) fn split_table(text: &str) -> Result<Vec<RawRow<'_>>, TableError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(TableError::Empty)?;
    let names: Vec<&str> = header.split('\t').map(str::trim).collect();
    let mut idx = [0usize; 3];
    for (slot, column) in idx.iter_mut().zip(COLUMNS) {
        *slot = names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(column))
            .ok_or(TableError::MissingColumn(column))?;
    }
    let width = idx.iter().copied().max().unwrap_or(0) + 1;
    Ok(lines
        .map(|(i, line)| {
            let line = line.strip_suffix('\r').unwrap_or(line);
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < width {
                return Err((i + 1, fields.len()));
            }
            Ok((i + 1, fields[idx[0]].trim(), fields[idx[1]].trim(), fields[idx[2]].trim()))
        })
        .collect())
}

/// Parses table text. Rows are fingerprinted in parallel; output order follows
/// the file.
pub fn parse_chebi_tsv(
    text: &str,
    params: FingerprintParams,
) -> Result<(Vec<MoleculeRecord>, IngestReport), TableError> {
    let rows = split_table(text)?;
    let built = parallel_map(&rows, |row| match *row {
        Ok((_, cid, smiles, caption)) => Some(MoleculeRecord::new(cid, smiles, caption, params)),
        Err(_) => None,
    });
    let mut records = Vec::with_capacity(rows.len());
    let mut quarantined = Vec::new();
    for (row, result) in rows.iter().zip(built) {
        match (row, result) {
            (Ok(_), Some(Ok(rec))) => records.push(rec),
            (Ok((line, cid, _, _)), Some(Err(e))) => {
                let reason = match &e {
                    RecordError::Smiles(p) => variant_name(&p.kind),
                    RecordError::EmptyCaption => "EmptyCaption".to_string(),
                };
                quarantined.push(QuarantinedRow {
                    line: *line,
                    cid: cid.to_string(),
                    reason,
                    detail: e.to_string(),
                });
            }
            (Err((line, got)), _) => quarantined.push(QuarantinedRow {
                line: *line,
                cid: String::new(),
                reason: "ShortRow".to_string(),
                detail: format!("expected {} tab-separated fields, found {got}", COLUMNS.len()),
            }),
            (Ok(_), None) => unreachable!("every well-formed row is built"),
        }
    }
    let report = IngestReport {
        rows: rows.len(),
        accepted: records.len(),
        quarantined,
    };
    Ok((records, report))
}

fn variant_name(kind: &impl fmt::Debug) -> String {
    let s = format!("{kind:?}");
    s.split(['(', ' ', '{']).next().unwrap_or_default().to_string()
}

/// Order-preserving map over scoped threads.
pub(crate) fn parallel_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(16);
    if threads < 2 || items.len() < 256 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(&f).collect::<Vec<U>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("ingest worker panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "CID\tSMILES\tdescription\n";

    #[test]
    fn three_valid_rows() {
        let text = format!(
            "{HEADER}1\tCCO\tThe molecule is ethanol.\n2\tc1ccccc1\tThe molecule is benzene.\n3\tO\tThe molecule is water.\n"
        );
        let (recs, report) = parse_chebi_tsv(&text, FingerprintParams::default()).unwrap();
        assert_eq!(recs.len(), 3);
        assert!(report.quarantined.is_empty());
        assert_eq!(recs[1].id, "2");
    }

    #[test]
    fn open_ring_is_quarantined() {
        let text = format!("{HEADER}1\tC1CC\tbroken\n2\tCC\tThe molecule is ethane.\n");
        let (recs, report) = parse_chebi_tsv(&text, FingerprintParams::default()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(report.quarantined.len(), 1);
        assert_eq!(report.quarantined[0].reason, "UnmatchedRingClosure");
        assert_eq!(report.quarantined[0].line, 2);
    }

    #[test]
    fn header_problems() {
        let p = FingerprintParams::default();
        assert_eq!(parse_chebi_tsv("", p).unwrap_err(), TableError::Empty);
        assert_eq!(
            parse_chebi_tsv("CID\tSMILES\n1\tC\n", p).unwrap_err(),
            TableError::MissingColumn("description")
        );
    }

    #[test]
    fn columns_may_be_reordered_and_rows_short() {
        let text = "description\tCID\tSMILES\nThe molecule is methane.\t7\tC\nonly one field\n";
        let (recs, report) = parse_chebi_tsv(text, FingerprintParams::default()).unwrap();
        assert_eq!(recs[0].id, "7");
        assert_eq!(report.quarantined[0].reason, "ShortRow");
    }

    #[test]
    fn empty_caption_is_quarantined() {
        let text = format!("{HEADER}1\tCC\t \n");
        let (_, report) = parse_chebi_tsv(&text, FingerprintParams::default()).unwrap();
        assert_eq!(report.quarantined[0].reason, "EmptyCaption");
    }
}
