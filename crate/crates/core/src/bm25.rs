//! Okapi BM25 over captions (word tokens) or SMILES (character 3-grams).

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.5, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), Bm25Error> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) || !(0.0..=1.0).contains(&self.b) {
            return Err(Bm25Error::InvalidParams);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Bm25Error {
    EmptyCorpus,
    DocIdOutOfRange(usize),
    InvalidParams,
    ZeroResults,
    Decode(&'static str),
}

impl fmt::Display for Bm25Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bm25Error::EmptyCorpus => f.write_str("corpus has no documents with tokens"),
            Bm25Error::DocIdOutOfRange(id) => write!(f, "document id {id} out of range"),
            Bm25Error::InvalidParams => f.write_str("k1 must be positive and b within [0, 1]"),
            Bm25Error::ZeroResults => f.write_str("n must be at least 1"),
            Bm25Error::Decode(why) => write!(f, "corrupt BM25 index: {why}"),
        }
    }
}

impl core::error::Error for Bm25Error {}

/// How text is split into terms. Indexing and querying share one tokenizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    /// Lowercased words, see [`tokenize`].
    Words,
    /// Overlapping character 3-grams, for SMILES.
    CharTrigrams,
}

impl Tokenizer {
    pub fn tokens(self, text: &str) -> Vec<String> {
        match self {
            Tokenizer::Words => tokenize(text),
            Tokenizer::CharTrigrams => char_trigrams(text),
        }
    }

    fn code(self) -> u8 {
        match self {
            Tokenizer::Words => 0,
            Tokenizer::CharTrigrams => 1,
        }
    }

    fn from_code(code: u8) -> Option<Tokenizer> {
        match code {
            0 => Some(Tokenizer::Words),
            1 => Some(Tokenizer::CharTrigrams),
            _ => None,
        }
    }
}

fn opener_of(c: char) -> Option<char> {
    match c {
        ')' => Some('('),
        ']' => Some('['),
        '}' => Some('{'),
        _ => None,
    }
}

/// Caption tokenizer: lowercase, split on whitespace, then strip punctuation
/// from both ends of each token. Interior characters are never touched, so
/// hyphens, locant commas and digits survive; a bracket at either end is kept
/// when its partner is inside the same token (`(2r)-lactate`).
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    lower
        .split_whitespace()
        .filter_map(|raw| {
            let chars: Vec<char> = raw.chars().collect();
            let mut matched = alloc::vec![false; chars.len()];
            let mut stack: Vec<(char, usize)> = Vec::new();
            for (i, &c) in chars.iter().enumerate() {
                if matches!(c, '(' | '[' | '{') {
                    stack.push((c, i));
                } else if let Some(open) = opener_of(c) {
                    if let Some(pos) = stack.iter().rposition(|&(o, _)| o == open) {
                        let (_, j) = stack[pos];
                        stack.truncate(pos);
                        matched[i] = true;
                        matched[j] = true;
                    }
                }
            }
            let keep = |i: usize| chars[i].is_alphanumeric() || matched[i];
            let start = (0..chars.len()).find(|&i| keep(i))?;
            let end = (0..chars.len()).rev().find(|&i| keep(i))?;
            Some(chars[start..=end].iter().collect())
        })
        .collect()
}

/// Overlapping 3-character windows; strings shorter than 3 are one token.
pub fn char_trigrams(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.trim().chars().collect();
    if chars.is_empty() {
        return Vec::new();
    }
    if chars.len() < 3 {
        return alloc::vec![chars.iter().collect()];
    }
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

#[derive(Debug, Clone, PartialEq)]
struct TermEntry {
    idf: f64,
    // sorted by doc id
    postings: Vec<(u32, u32)>,
}

/// Immutable inverted index.
#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    params: Bm25Params,
    tokenizer: Tokenizer,
    terms: BTreeMap<String, TermEntry>,
    doc_lengths: Vec<u32>,
    avgdl: f64,
}

/// Non-negative Okapi IDF: `ln(1 + (N - df + 0.5) / (df + 0.5))`.
pub fn idf(doc_count: usize, df: usize) -> f64 {
    let (n, df) = (doc_count as f64, df as f64);
    libm::log(1.0 + (n - df + 0.5) / (df + 0.5))
}

impl Bm25Index {
    pub fn build<S: AsRef<str>>(
        docs: &[S],
        params: Bm25Params,
        tokenizer: Tokenizer,
    ) -> Result<Bm25Index, Bm25Error> {
        params.validate()?;
        if docs.is_empty() {
            return Err(Bm25Error::EmptyCorpus);
        }
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(docs.len());
        for (id, doc) in docs.iter().enumerate() {
            let tokens = tokenizer.tokens(doc.as_ref());
            doc_lengths.push(tokens.len() as u32);
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *counts.entry(t).or_insert(0) += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push((id as u32, tf));
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        if total == 0 {
            return Err(Bm25Error::EmptyCorpus);
        }
        let avgdl = total as f64 / doc_lengths.len() as f64;
        let n = doc_lengths.len();
        let terms = postings
            .into_iter()
            .map(|(term, postings)| {
                let entry = TermEntry {
                    idf: idf(n, postings.len()),
                    postings,
                };
                (term, entry)
            })
            .collect();
        Ok(Bm25Index {
            params,
            tokenizer,
            terms,
            doc_lengths,
            avgdl,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn tokenizer(&self) -> Tokenizer {
        self.tokenizer
    }

    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn doc_length(&self, doc: usize) -> Option<usize> {
        self.doc_lengths.get(doc).map(|&l| l as usize)
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn idf_of(&self, term: &str) -> Option<f64> {
        self.terms.get(term).map(|e| e.idf)
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.terms.get(term).map_or(0, |e| e.postings.len())
    }

    pub fn term_frequency(&self, term: &str, doc: usize) -> u32 {
        self.terms.get(term).map_or(0, |e| {
            e.postings
                .binary_search_by_key(&(doc as u32), |&(d, _)| d)
                .map_or(0, |i| e.postings[i].1)
        })
    }

    fn term_weight(&self, idf: f64, tf: u32, doc: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let len = self.doc_lengths[doc] as f64;
        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / self.avgdl))
    }

    /// BM25 score of `doc` for a tokenized query. Every query position counts,
    /// so a repeated query token contributes once per occurrence.
    pub fn score(&self, query_tokens: &[String], doc: usize) -> Result<f64, Bm25Error> {
        if doc >= self.doc_count() {
            return Err(Bm25Error::DocIdOutOfRange(doc));
        }
        let mut parts = Vec::new();
        for q in query_tokens {
            if let Some(entry) = self.terms.get(q.as_str()) {
                let tf = self.term_frequency(q, doc);
                if tf > 0 {
                    parts.push(self.term_weight(entry.idf, tf, doc));
                }
            }
        }
        Ok(sorted_sum(parts))
    }

    /// Scores of every document, indexed by doc id.
    pub fn score_all(&self, query_tokens: &[String]) -> Vec<f64> {
        let mut parts: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for q in query_tokens {
            if let Some(entry) = self.terms.get(q.as_str()) {
                for &(doc, tf) in &entry.postings {
                    parts.entry(doc).or_default().push(self.term_weight(entry.idf, tf, doc as usize));
                }
            }
        }
        let mut scores = alloc::vec![0.0; self.doc_count()];
        for (doc, p) in parts {
            scores[doc as usize] = sorted_sum(p);
        }
        scores
    }

    /// Top `n` documents by score, descending; ties go to the lower doc id.
    pub fn top_n(&self, query: &str, n: usize) -> Result<Vec<(usize, f64)>, Bm25Error> {
        if n == 0 {
            return Err(Bm25Error::ZeroResults);
        }
        let tokens = self.tokenizer.tokens(query);
        Ok(rank_scores(&self.score_all(&tokens), n, |_| true))
    }

    /// Serializes to the versioned binary layout: magic `BM25`, u32 version,
    /// f64 k1, f64 b, u8 tokenizer, u8 flags (bit 0 lowercased, bit 1
    /// stop-words kept), u32 doc count, u32 per doc length, u32 term count,
    /// then per term: u32 byte length, UTF-8 bytes, f64 idf, u32 posting
    /// count, (u32 doc, u32 tf) pairs. All little-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.params.k1.to_le_bytes());
        out.extend_from_slice(&self.params.b.to_le_bytes());
        out.push(self.tokenizer.code());
        out.push(FLAG_LOWERCASED | FLAG_STOPWORDS_KEPT);
        out.extend_from_slice(&(self.doc_lengths.len() as u32).to_le_bytes());
        for l in &self.doc_lengths {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out.extend_from_slice(&(self.terms.len() as u32).to_le_bytes());
        for (term, entry) in &self.terms {
            out.extend_from_slice(&(term.len() as u32).to_le_bytes());
            out.extend_from_slice(term.as_bytes());
            out.extend_from_slice(&entry.idf.to_le_bytes());
            out.extend_from_slice(&(entry.postings.len() as u32).to_le_bytes());
            for &(d, tf) in &entry.postings {
                out.extend_from_slice(&d.to_le_bytes());
                out.extend_from_slice(&tf.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Bm25Index, Bm25Error> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Bm25Error::Decode("bad magic"));
        }
        if r.u32()? != FORMAT_VERSION {
            return Err(Bm25Error::Decode("unsupported version"));
        }
        let params = Bm25Params {
            k1: r.f64()?,
            b: r.f64()?,
        };
        params.validate().map_err(|_| Bm25Error::Decode("bad params"))?;
        let tokenizer = Tokenizer::from_code(r.u8()?).ok_or(Bm25Error::Decode("bad tokenizer"))?;
        let _flags = r.u8()?;
        let doc_count = r.u32()? as usize;
        let mut doc_lengths = Vec::with_capacity(doc_count.min(bytes.len() / 4));
        for _ in 0..doc_count {
            doc_lengths.push(r.u32()?);
        }
        let term_count = r.u32()? as usize;
        let mut terms = BTreeMap::new();
        for _ in 0..term_count {
            let len = r.u32()? as usize;
            let term = core::str::from_utf8(r.take(len)?)
                .map_err(|_| Bm25Error::Decode("term is not UTF-8"))?;
            let idf = r.f64()?;
            let count = r.u32()? as usize;
            let mut postings = Vec::with_capacity(count.min(bytes.len() / 8));
            for _ in 0..count {
                let d = r.u32()?;
                if d as usize >= doc_count {
                    return Err(Bm25Error::Decode("posting beyond doc count"));
                }
                postings.push((d, r.u32()?));
            }
            terms.insert(String::from(term), TermEntry { idf, postings });
        }
        if r.pos != bytes.len() {
            return Err(Bm25Error::Decode("trailing bytes"));
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        if doc_count == 0 || total == 0 {
            return Err(Bm25Error::Decode("empty corpus"));
        }
        Ok(Bm25Index {
            params,
            tokenizer,
            terms,
            avgdl: total as f64 / doc_count as f64,
            doc_lengths,
        })
    }
}

/// Sums term contributions in ascending order, so documents with the same
/// contributions get bit-identical scores whatever the query order.
fn sorted_sum(mut parts: Vec<f64>) -> f64 {
    parts.sort_by(f64::total_cmp);
    parts.iter().sum()
}

/// Sorts `(doc, score)` by score descending then doc ascending, keeping the
/// first `n` documents accepted by `keep`.
pub fn rank_scores(scores: &[f64], n: usize, keep: impl Fn(usize) -> bool) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = scores
        .iter()
        .copied()
        .enumerate()
        .filter(|&(d, _)| keep(d))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(n);
    ranked
}

const MAGIC: &[u8; 4] = b"BM25";
const FORMAT_VERSION: u32 = 1;
const FLAG_LOWERCASED: u8 = 1;
const FLAG_STOPWORDS_KEPT: u8 = 2;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], Bm25Error> {
        let end = self.pos.checked_add(n).ok_or(Bm25Error::Decode("truncated"))?;
        let s = self.bytes.get(self.pos..end).ok_or(Bm25Error::Decode("truncated"))?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, Bm25Error> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, Bm25Error> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64, Bm25Error> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(f64::from_le_bytes(a))
    }
}
