//! On-disk store: a directory holding a JSON manifest, the records as TSV,
//! packed fingerprints and both encoded BM25 indices.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use molrag_core::bm25::{Bm25Index, Bm25Params};
use molrag_core::fingerprint::{FingerprintParams, MorganFingerprint};
use molrag_core::store::{MoleculeRecord, Store, StoreError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::tsv::{split_table, COLUMNS};

pub const FORMAT: &str = "molrag-store/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.tsv";
pub const FINGERPRINTS_FILE: &str = "fingerprints.bin";
pub const CAPTION_INDEX_FILE: &str = "caption.bm25";
pub const SMILES_INDEX_FILE: &str = "smiles.bm25";

const FP_MAGIC: &[u8; 4] = b"MRFP";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}; expected train, validation or test")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

/// How caption text was prepared for the word index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionIndexing {
    pub lowercase: bool,
    pub stop_words: String,
    pub duplicate_captions: String,
}

impl Default for CaptionIndexing {
    fn default() -> Self {
        CaptionIndexing {
            lowercase: true,
            stop_words: "kept".to_string(),
            duplicate_captions: "indexed".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreManifest {
    pub format: String,
    pub record_count: usize,
    pub split: Split,
    pub fingerprint: FingerprintParams,
    pub bm25: Bm25Params,
    pub caption_indexing: CaptionIndexing,
    pub smiles_indexing: String,
    /// File name to lowercase hex SHA-256.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Corrupt { path: PathBuf, message: String },
    #[error("{}: checksum mismatch for {file}", dir.display())]
    ChecksumMismatch { dir: PathBuf, file: String },
    #[error("record {id} cannot be written as TSV: fields may not contain tabs, line breaks or edge whitespace")]
    UnrepresentableField { id: String },
    #[error("{0}")]
    Store(#[from] StoreError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn records_tsv(records: &[MoleculeRecord]) -> Result<String, PersistError> {
    let mut out = COLUMNS.join("\t");
    out.push('\n');
    for r in records {
        if [&r.id, &r.smiles, &r.caption]
            .iter()
            .any(|f| f.contains(['\t', '\n', '\r']) || f.trim() != f.as_str())
        {
            return Err(PersistError::UnrepresentableField { id: r.id.clone() });
        }
        out.push_str(&format!("{}\t{}\t{}\n", r.id, r.smiles, r.caption));
    }
    Ok(out)
}

fn fingerprints_bin(store: &Store) -> Vec<u8> {
    let p = store.fp_params();
    let mut out = Vec::with_capacity(16 + store.len() * p.nbits as usize / 8);
    out.extend_from_slice(FP_MAGIC);
    out.extend_from_slice(&p.radius.to_le_bytes());
    out.extend_from_slice(&p.nbits.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for r in store.records() {
        out.extend_from_slice(&r.fingerprint.to_bitmap());
    }
    out
}

/// File name and contents.
pub type EncodedFile = (&'static str, Vec<u8>);

/// Encoded files and the manifest describing them. Pure, so rebuilding from
/// the same records gives the same checksums.
pub fn encode_store(store: &Store, split: Split) -> Result<(StoreManifest, Vec<EncodedFile>), PersistError> {
    let files = vec![
        (RECORDS_FILE, records_tsv(store.records())?.into_bytes()),
        (FINGERPRINTS_FILE, fingerprints_bin(store)),
        (CAPTION_INDEX_FILE, store.caption_index().encode()),
        (SMILES_INDEX_FILE, store.smiles_index().encode()),
    ];
    let manifest = StoreManifest {
        format: FORMAT.to_string(),
        record_count: store.len(),
        split,
        fingerprint: store.fp_params(),
        bm25: store.bm25_params(),
        caption_indexing: CaptionIndexing::default(),
        smiles_indexing: "character 3-grams of the SMILES text as written".to_string(),
        files: files
            .iter()
            .map(|(name, bytes)| (name.to_string(), sha256_hex(bytes)))
            .collect(),
    };
    Ok((manifest, files))
}

pub fn save_store(store: &Store, dir: &Path, split: Split) -> Result<StoreManifest, PersistError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (manifest, files) = encode_store(store, split)?;
    for (name, bytes) in files {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<StoreManifest, PersistError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: StoreManifest = serde_json::from_str(&text).map_err(|e| PersistError::Corrupt {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if manifest.format != FORMAT {
        return Err(PersistError::Corrupt {
            path,
            message: format!("unsupported store format {:?}", manifest.format),
        });
    }
    Ok(manifest)
}

/// Loads and verifies every file against the manifest checksums.
pub fn load_store(dir: &Path) -> Result<(Store, StoreManifest), PersistError> {
    let manifest = read_manifest(dir)?;
    let read = |name: &str| -> Result<Vec<u8>, PersistError> {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        let expected = manifest.files.get(name).ok_or_else(|| PersistError::Corrupt {
            path: dir.join(MANIFEST_FILE),
            message: format!("no checksum listed for {name}"),
        })?;
        if sha256_hex(&bytes) != *expected {
            return Err(PersistError::ChecksumMismatch {
                dir: dir.to_path_buf(),
                file: name.to_string(),
            });
        }
        Ok(bytes)
    };
    let records_bytes = read(RECORDS_FILE)?;
    let fp_bytes = read(FINGERPRINTS_FILE)?;
    let caption_bytes = read(CAPTION_INDEX_FILE)?;
    let smiles_bytes = read(SMILES_INDEX_FILE)?;

    let corrupt = |name: &str, message: String| PersistError::Corrupt {
        path: dir.join(name),
        message,
    };
    let fingerprints = decode_fingerprints(&fp_bytes, manifest.fingerprint)
        .map_err(|m| corrupt(FINGERPRINTS_FILE, m))?;
    let text = String::from_utf8(records_bytes).map_err(|e| corrupt(RECORDS_FILE, e.to_string()))?;
    let rows = split_table(&text).map_err(|e| corrupt(RECORDS_FILE, format!("{e:?}")))?;
    if rows.len() != manifest.record_count || fingerprints.len() != manifest.record_count {
        return Err(corrupt(
            RECORDS_FILE,
            format!(
                "manifest lists {} records, found {} rows and {} fingerprints",
                manifest.record_count,
                rows.len(),
                fingerprints.len()
            ),
        ));
    }
    let mut records = Vec::with_capacity(rows.len());
    for (row, fingerprint) in rows.into_iter().zip(fingerprints) {
        let (_, id, smiles, caption) = row.map_err(|(line, _)| corrupt(RECORDS_FILE, format!("short row at line {line}")))?;
        records.push(MoleculeRecord {
            id: id.to_string(),
            smiles: smiles.to_string(),
            caption: caption.to_string(),
            fingerprint,
        });
    }
    let caption_index = Bm25Index::decode(&caption_bytes).map_err(|e| corrupt(CAPTION_INDEX_FILE, e.to_string()))?;
    let smiles_index = Bm25Index::decode(&smiles_bytes).map_err(|e| corrupt(SMILES_INDEX_FILE, e.to_string()))?;
    let store = Store::from_parts(records, caption_index, smiles_index)?;
    Ok((store, manifest))
}

fn decode_fingerprints(bytes: &[u8], params: FingerprintParams) -> Result<Vec<MorganFingerprint>, String> {
    let word = |i: usize| -> Option<u32> { Some(u32::from_le_bytes(bytes.get(i..i + 4)?.try_into().ok()?)) };
    if bytes.get(..4) != Some(FP_MAGIC.as_slice()) {
        return Err("bad magic".to_string());
    }
    let (radius, nbits, count) = match (word(4), word(8), word(12)) {
        (Some(r), Some(n), Some(c)) => (r, n, c as usize),
        _ => return Err("truncated header".to_string()),
    };
    if radius != params.radius || nbits != params.nbits {
        return Err("fingerprint parameters differ from the manifest".to_string());
    }
    let width = nbits as usize / 8;
    let body = &bytes[16..];
    if body.len() != width * count {
        return Err(format!("expected {} bytes of bitmaps, found {}", width * count, body.len()));
    }
    body.chunks(width)
        .map(|c| MorganFingerprint::from_bitmap(c, params).map_err(|e| e.to_string()))
        .collect()
}
