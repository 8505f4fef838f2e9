//! Caption and molecule scoring.
//!
//! A pair marked [`PairStatus::CalibrationFailed`] is scored as if nothing it
//! produced matched: no matching n-grams (its length still counts), zero
//! ROUGE, an invalid molecule, and an edit distance of at least the reference
//! length. For an empty prediction this is exactly the score of `""`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::fingerprint::{dice_similarity, morgan_fingerprint, FingerprintParams};
use crate::smiles::{is_valid_molecule, molecules_equal, parse_smiles};

/// Smoothed precision numerator used when an n-gram order has no matches.
pub const BLEU_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatus {
    Ok,
    CalibrationFailed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub prediction: String,
    pub reference: String,
    pub status: PairStatus,
}

impl EvalPair {
    pub fn ok(prediction: impl Into<String>, reference: impl Into<String>) -> EvalPair {
        EvalPair {
            prediction: prediction.into(),
            reference: reference.into(),
            status: PairStatus::Ok,
        }
    }

    pub fn failed(reference: impl Into<String>) -> EvalPair {
        EvalPair {
            prediction: String::new(),
            reference: reference.into(),
            status: PairStatus::CalibrationFailed,
        }
    }

    fn is_failed(&self) -> bool {
        self.status == PairStatus::CalibrationFailed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricError {
    EmptyInput,
    /// BLEU order other than 1 to 4.
    BadOrder(usize),
}

impl fmt::Display for MetricError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricError::EmptyInput => f.write_str("no pairs to score"),
            MetricError::BadOrder(n) => write!(f, "BLEU order {n} is outside 1..=4"),
        }
    }
}

impl core::error::Error for MetricError {}

/// Caption text splits on whitespace after lowercasing; SMILES split into
/// characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextUnit {
    Words,
    Chars,
}

pub fn units(text: &str, unit: TextUnit) -> Vec<String> {
    match unit {
        TextUnit::Words => text.to_lowercase().split_whitespace().map(String::from).collect(),
        TextUnit::Chars => text.chars().map(String::from).collect(),
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn ngram_total(len: usize, n: usize) -> usize {
    (len + 1).saturating_sub(n)
}

/// Clipped n-gram overlap between candidate and reference.
fn clipped_matches(cand: &[String], reference: &[String], n: usize) -> usize {
    let r = ngram_counts(reference, n);
    ngram_counts(cand, n)
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum()
}

/// Corpus BLEU with uniform weights over orders `1..=max_n` and the standard
/// brevity penalty. An order with zero matches uses `1e-9 / max(total, 1)`.
pub fn bleu_n(pairs: &[EvalPair], max_n: usize, unit: TextUnit) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if !(1..=4).contains(&max_n) {
        return Err(MetricError::BadOrder(max_n));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for p in pairs {
        let c = units(&p.prediction, unit);
        let r = units(&p.reference, unit);
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=max_n {
            totals[n - 1] += ngram_total(c.len(), n);
            if !p.is_failed() {
                matches[n - 1] += clipped_matches(&c, &r, n);
            }
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let p = if matches[n] == 0 {
            BLEU_EPSILON / totals[n].max(1) as f64
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_sum += libm::log(p);
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        libm::exp(1.0 - ref_len as f64 / cand_len as f64)
    };
    Ok(clamp_unit(bp * libm::exp(log_sum / max_n as f64)))
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

fn f1(overlap: usize, cand_total: usize, ref_total: usize, equal: bool) -> f64 {
    if cand_total == 0 && ref_total == 0 {
        return if equal { 1.0 } else { 0.0 };
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand_total as f64;
    let r = overlap as f64 / ref_total as f64;
    2.0 * p * r / (p + r)
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScores {
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    #[serde(rename = "rougeL_f")]
    pub rouge_l_f: f64,
}

/// ROUGE-1, ROUGE-2 and ROUGE-L F1 for one pair. When neither side has any
/// n-grams of an order the score is 1 for equal token sequences, else 0.
pub fn rouge_pair(pair: &EvalPair, unit: TextUnit) -> RougeScores {
    if pair.is_failed() {
        return RougeScores {
            rouge1_f: 0.0,
            rouge2_f: 0.0,
            rouge_l_f: 0.0,
        };
    }
    let c = units(&pair.prediction, unit);
    let r = units(&pair.reference, unit);
    let equal = c == r;
    let score = |n| {
        f1(
            clipped_matches(&c, &r, n),
            ngram_total(c.len(), n),
            ngram_total(r.len(), n),
            equal,
        )
    };
    RougeScores {
        rouge1_f: score(1),
        rouge2_f: score(2),
        rouge_l_f: f1(lcs_len(&c, &r), c.len(), r.len(), equal),
    }
}

/// Item F1 scores averaged over pairs.
pub fn rouge_scores(pairs: &[EvalPair], unit: TextUnit) -> Result<RougeScores, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut sum = [0.0f64; 3];
    for p in pairs {
        let s = rouge_pair(p, unit);
        sum[0] += s.rouge1_f;
        sum[1] += s.rouge2_f;
        sum[2] += s.rouge_l_f;
    }
    let k = pairs.len() as f64;
    Ok(RougeScores {
        rouge1_f: sum[0] / k,
        rouge2_f: sum[1] / k,
        rouge_l_f: sum[2] / k,
    })
}

/// Character edit distance, unit costs.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = (diag + usize::from(x != y)).min(up + 1).min(row[j] + 1);
            diag = up;
        }
    }
    row[b.len()]
}

pub fn levenshtein_pair(pair: &EvalPair) -> usize {
    let d = levenshtein(&pair.prediction, &pair.reference);
    if pair.is_failed() {
        d.max(pair.reference.chars().count())
    } else {
        d
    }
}

pub fn levenshtein_mean(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let total: usize = pairs.iter().map(levenshtein_pair).sum();
    Ok(total as f64 / pairs.len() as f64)
}

/// Per-pair molecule checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoleculeItemScore {
    pub valid: bool,
    pub exact_match: bool,
    /// Dice similarity; 0 when the prediction does not parse.
    pub morgan_fts: f64,
    /// Whether the prediction parsed, so `morgan_fts` was computed.
    pub parsed: bool,
}

/// Exact match needs a valid prediction and the same molecular graph as the
/// reference, so a match always implies validity and FTS 1.
pub fn score_molecule_pair(pair: &EvalPair, params: FingerprintParams) -> MoleculeItemScore {
    let none = MoleculeItemScore {
        valid: false,
        exact_match: false,
        morgan_fts: 0.0,
        parsed: false,
    };
    if pair.is_failed() {
        return none;
    }
    let Ok(pred) = parse_smiles(pair.prediction.trim()) else {
        return none;
    };
    let valid = is_valid_molecule(&pred);
    let Ok(reference) = parse_smiles(pair.reference.trim()) else {
        return MoleculeItemScore {
            valid,
            parsed: true,
            ..none
        };
    };
    let exact_match = valid && molecules_equal(&pred, &reference);
    let morgan_fts = if exact_match {
        1.0
    } else {
        dice_similarity(&morgan_fingerprint(&pred, params), &morgan_fingerprint(&reference, params))
            .unwrap_or(0.0)
    };
    MoleculeItemScore {
        valid,
        exact_match,
        morgan_fts,
        parsed: true,
    }
}

fn rate(items: &[MoleculeItemScore], f: impl Fn(&MoleculeItemScore) -> bool) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    items.iter().filter(|s| f(s)).count() as f64 / items.len() as f64
}

pub fn exact_match_rate(pairs: &[EvalPair]) -> f64 {
    let items: Vec<_> = pairs
        .iter()
        .map(|p| score_molecule_pair(p, FingerprintParams::default()))
        .collect();
    rate(&items, |s| s.exact_match)
}

pub fn validity_rate(pairs: &[EvalPair]) -> f64 {
    let items: Vec<_> = pairs
        .iter()
        .map(|p| MoleculeItemScore {
            valid: !p.is_failed() && crate::smiles::is_valid_smiles(p.prediction.trim()),
            exact_match: false,
            morgan_fts: 0.0,
            parsed: false,
        })
        .collect();
    rate(&items, |s| s.valid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FtsScores {
    /// Mean over all pairs, unparseable predictions counting 0.
    pub mean: f64,
    /// Mean over pairs whose prediction parsed; `None` if there are none.
    pub mean_valid_only: Option<f64>,
}

pub fn morgan_fts_mean(pairs: &[EvalPair], params: FingerprintParams) -> FtsScores {
    let items: Vec<_> = pairs.iter().map(|p| score_molecule_pair(p, params)).collect();
    fts_from_items(&items)
}

fn fts_from_items(items: &[MoleculeItemScore]) -> FtsScores {
    let sum: f64 = items.iter().map(|s| s.morgan_fts).sum();
    let parsed = items.iter().filter(|s| s.parsed).count();
    FtsScores {
        mean: if items.is_empty() { 0.0 } else { sum / items.len() as f64 },
        mean_valid_only: (parsed > 0).then(|| sum / parsed as f64),
    }
}

/// Item-level caption scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionItemScore {
    pub rouge: RougeScores,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionScores {
    pub bleu2: f64,
    pub bleu4: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub item_count: usize,
    pub failed_count: usize,
    pub items: Vec<CaptionItemScore>,
}

pub fn score_captions(pairs: &[EvalPair]) -> Result<CaptionScores, MetricError> {
    let rouge = rouge_scores(pairs, TextUnit::Words)?;
    Ok(CaptionScores {
        bleu2: bleu_n(pairs, 2, TextUnit::Words)?,
        bleu4: bleu_n(pairs, 4, TextUnit::Words)?,
        rouge1: rouge.rouge1_f,
        rouge2: rouge.rouge2_f,
        rouge_l: rouge.rouge_l_f,
        item_count: pairs.len(),
        failed_count: pairs.iter().filter(|p| p.is_failed()).count(),
        items: pairs
            .iter()
            .map(|p| CaptionItemScore {
                rouge: rouge_pair(p, TextUnit::Words),
                failed: p.is_failed(),
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoleculeItem {
    #[serde(flatten)]
    pub score: MoleculeItemScore,
    pub levenshtein: usize,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoleculeScores {
    /// Character BLEU-4.
    pub bleu: f64,
    pub exact_match: f64,
    pub levenshtein: f64,
    pub morgan_fts: f64,
    pub morgan_fts_valid_only: Option<f64>,
    pub validity: f64,
    pub item_count: usize,
    pub valid_count: usize,
    pub invalid_count: usize,
    pub failed_count: usize,
    pub items: Vec<MoleculeItem>,
}

pub fn score_molecules(pairs: &[EvalPair], params: FingerprintParams) -> Result<MoleculeScores, MetricError> {
    let bleu = bleu_n(pairs, 4, TextUnit::Chars)?;
    let levenshtein = levenshtein_mean(pairs)?;
    let scores: Vec<MoleculeItemScore> = pairs.iter().map(|p| score_molecule_pair(p, params)).collect();
    let fts = fts_from_items(&scores);
    let failed_count = pairs.iter().filter(|p| p.is_failed()).count();
    let valid_count = scores.iter().filter(|s| s.valid).count();
    Ok(MoleculeScores {
        bleu,
        exact_match: rate(&scores, |s| s.exact_match),
        levenshtein,
        morgan_fts: fts.mean,
        morgan_fts_valid_only: fts.mean_valid_only,
        validity: rate(&scores, |s| s.valid),
        item_count: pairs.len(),
        valid_count,
        invalid_count: pairs.len() - valid_count - failed_count,
        failed_count,
        items: pairs
            .iter()
            .zip(&scores)
            .map(|(p, &score)| MoleculeItem {
                score,
                levenshtein: levenshtein_pair(p),
                failed: p.is_failed(),
            })
            .collect(),
    })
}
