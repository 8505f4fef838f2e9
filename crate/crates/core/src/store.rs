//! In-memory example store and the retrieval strategies over it.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::bm25::{rank_scores, Bm25Error, Bm25Index, Bm25Params, Tokenizer};
use crate::fingerprint::{dice_similarity, morgan_fingerprint, FingerprintParams, MorganFingerprint};
use crate::hash::stable_hash;
use crate::smiles::{molecules_equal, parse_smiles, Molecule, ParseError};

/// One molecule-caption pair with its precomputed fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct MoleculeRecord {
    pub id: String,
    pub smiles: String,
    pub caption: String,
    pub fingerprint: MorganFingerprint,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordError {
    Smiles(ParseError),
    EmptyCaption,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordError::Smiles(e) => write!(f, "{e}"),
            RecordError::EmptyCaption => f.write_str("caption is empty"),
        }
    }
}

impl core::error::Error for RecordError {}

impl MoleculeRecord {
    /// Parses the SMILES and fingerprints it.
    pub fn new(
        id: impl Into<String>,
        smiles: impl Into<String>,
        caption: impl Into<String>,
        params: FingerprintParams,
    ) -> Result<MoleculeRecord, RecordError> {
        let smiles = smiles.into();
        let caption = caption.into();
        if caption.trim().is_empty() {
            return Err(RecordError::EmptyCaption);
        }
        let mol = parse_smiles(&smiles).map_err(RecordError::Smiles)?;
        Ok(MoleculeRecord {
            id: id.into(),
            fingerprint: morgan_fingerprint(&mol, params),
            smiles,
            caption,
        })
    }
}

/// Which neighbors to pull into the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RetrievalStrategy {
    /// Dice similarity of Morgan fingerprints (molecule queries).
    MorganFts,
    /// BM25 over captions (caption queries).
    Bm25Caption,
    /// BM25 over SMILES character 3-grams (molecule queries).
    Bm25SmilesChargram,
    /// Seeded uniform sample without replacement.
    Random { seed: u64 },
}

impl RetrievalStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            RetrievalStrategy::MorganFts => "morgan_fts",
            RetrievalStrategy::Bm25Caption => "bm25_caption",
            RetrievalStrategy::Bm25SmilesChargram => "bm25_smiles_chargram",
            RetrievalStrategy::Random { .. } => "random",
        }
    }
}

impl fmt::Display for RetrievalStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RetrievalStrategy::Random { seed } => write!(f, "random(seed={seed})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Parses a strategy name. `random` needs a seed, passed separately.
impl FromStr for RetrievalStrategy {
    type Err = &'static str;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "morgan_fts" => Ok(RetrievalStrategy::MorganFts),
            "bm25_caption" => Ok(RetrievalStrategy::Bm25Caption),
            "bm25_smiles_chargram" => Ok(RetrievalStrategy::Bm25SmilesChargram),
            "random" => Err("random strategy requires a seed"),
            _ => Err("unknown retrieval strategy"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoreError {
    EmptyStore,
    ParseFailure(ParseError),
    /// e.g. Morgan similarity for a caption query.
    StrategyNotApplicable(&'static str),
    ZeroResults,
    FingerprintParamsMismatch,
    IndexMismatch,
    Bm25(Bm25Error),
}

impl fmt::Display for StoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoreError::EmptyStore => f.write_str("the store has no records"),
            StoreError::ParseFailure(e) => write!(f, "query SMILES does not parse: {e}"),
            StoreError::StrategyNotApplicable(s) => {
                write!(f, "strategy {s} does not apply to this query type")
            }
            StoreError::ZeroResults => f.write_str("n must be at least 1"),
            StoreError::FingerprintParamsMismatch => {
                f.write_str("records use different fingerprint parameters")
            }
            StoreError::IndexMismatch => f.write_str("index document count differs from records"),
            StoreError::Bm25(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for StoreError {}

impl From<Bm25Error> for StoreError {
    fn from(e: Bm25Error) -> Self {
        match e {
            Bm25Error::EmptyCorpus => StoreError::EmptyStore,
            other => StoreError::Bm25(other),
        }
    }
}

/// Records plus both BM25 indices. Immutable once built.
#[derive(Debug, Clone)]
pub struct Store {
    records: Vec<MoleculeRecord>,
    fp_params: FingerprintParams,
    caption_index: Bm25Index,
    smiles_index: Bm25Index,
}

impl Store {
    pub fn build(records: Vec<MoleculeRecord>, bm25_params: Bm25Params) -> Result<Store, StoreError> {
        let first = records.first().ok_or(StoreError::EmptyStore)?;
        let fp_params = first.fingerprint.params();
        if records.iter().any(|r| r.fingerprint.params() != fp_params) {
            return Err(StoreError::FingerprintParamsMismatch);
        }
        let captions: Vec<&str> = records.iter().map(|r| r.caption.as_str()).collect();
        let smiles: Vec<&str> = records.iter().map(|r| r.smiles.as_str()).collect();
        let caption_index = Bm25Index::build(&captions, bm25_params, Tokenizer::Words)?;
        let smiles_index = Bm25Index::build(&smiles, bm25_params, Tokenizer::CharTrigrams)?;
        Ok(Store {
            records,
            fp_params,
            caption_index,
            smiles_index,
        })
    }

    /// Reassembles a store from persisted parts.
    pub fn from_parts(
        records: Vec<MoleculeRecord>,
        caption_index: Bm25Index,
        smiles_index: Bm25Index,
    ) -> Result<Store, StoreError> {
        let first = records.first().ok_or(StoreError::EmptyStore)?;
        let fp_params = first.fingerprint.params();
        if records.iter().any(|r| r.fingerprint.params() != fp_params) {
            return Err(StoreError::FingerprintParamsMismatch);
        }
        if caption_index.doc_count() != records.len()
            || smiles_index.doc_count() != records.len()
            || caption_index.tokenizer() != Tokenizer::Words
            || smiles_index.tokenizer() != Tokenizer::CharTrigrams
        {
            return Err(StoreError::IndexMismatch);
        }
        Ok(Store {
            records,
            fp_params,
            caption_index,
            smiles_index,
        })
    }

    pub fn records(&self) -> &[MoleculeRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn fp_params(&self) -> FingerprintParams {
        self.fp_params
    }

    pub fn bm25_params(&self) -> Bm25Params {
        self.caption_index.params()
    }

    pub fn caption_index(&self) -> &Bm25Index {
        &self.caption_index
    }

    pub fn smiles_index(&self) -> &Bm25Index {
        &self.smiles_index
    }

    /// Examples for a molecule query, best first. A stored record whose graph
    /// equals the query is never returned.
    pub fn retrieve_mol2cap(
        &self,
        query_smiles: &str,
        n: usize,
        strategy: RetrievalStrategy,
    ) -> Result<Vec<&MoleculeRecord>, StoreError> {
        if n == 0 {
            return Err(StoreError::ZeroResults);
        }
        if self.records.is_empty() {
            return Err(StoreError::EmptyStore);
        }
        let query = parse_smiles(query_smiles).map_err(StoreError::ParseFailure)?;
        let query_fp = morgan_fingerprint(&query, self.fp_params);
        let is_self = |i: usize| self.same_molecule(i, &query, &query_fp);
        let picked = match strategy {
            RetrievalStrategy::MorganFts => {
                let scores: Vec<f64> = self
                    .records
                    .iter()
                    .map(|r| dice_similarity(&query_fp, &r.fingerprint).unwrap_or(0.0))
                    .collect();
                ranked_ids(&scores, n, |i| !is_self(i))
            }
            RetrievalStrategy::Bm25SmilesChargram => {
                let tokens = self.smiles_index.tokenizer().tokens(query_smiles);
                let scores = self.smiles_index.score_all(&tokens);
                ranked_ids(&scores, n, |i| !is_self(i))
            }
            RetrievalStrategy::Random { seed } => {
                self.sample(seed, query.source_text(), n, |i| !is_self(i))
            }
            RetrievalStrategy::Bm25Caption => {
                return Err(StoreError::StrategyNotApplicable("bm25_caption"))
            }
        };
        Ok(picked.into_iter().map(|i| &self.records[i]).collect())
    }

    /// Examples for a caption query, best first. A stored record with the
    /// identical caption is never returned.
    pub fn retrieve_cap2mol(
        &self,
        query_caption: &str,
        n: usize,
        strategy: RetrievalStrategy,
    ) -> Result<Vec<&MoleculeRecord>, StoreError> {
        if n == 0 {
            return Err(StoreError::ZeroResults);
        }
        if self.records.is_empty() {
            return Err(StoreError::EmptyStore);
        }
        let query = query_caption.trim();
        let is_self = |i: usize| self.records[i].caption.trim() == query;
        let picked = match strategy {
            RetrievalStrategy::Bm25Caption => {
                let tokens = self.caption_index.tokenizer().tokens(query);
                let scores = self.caption_index.score_all(&tokens);
                ranked_ids(&scores, n, |i| !is_self(i))
            }
            RetrievalStrategy::Random { seed } => self.sample(seed, query, n, |i| !is_self(i)),
            RetrievalStrategy::MorganFts => {
                return Err(StoreError::StrategyNotApplicable("morgan_fts"))
            }
            RetrievalStrategy::Bm25SmilesChargram => {
                return Err(StoreError::StrategyNotApplicable("bm25_smiles_chargram"))
            }
        };
        Ok(picked.into_iter().map(|i| &self.records[i]).collect())
    }

    fn same_molecule(&self, i: usize, query: &Molecule, query_fp: &MorganFingerprint) -> bool {
        let r = &self.records[i];
        if r.fingerprint != *query_fp {
            return false;
        }
        parse_smiles(&r.smiles).is_ok_and(|m| molecules_equal(&m, query))
    }

    /// Partial Fisher-Yates over the eligible records. The generator is seeded
    /// from `seed` and the query text, so each query gets its own stable draw.
    fn sample(&self, seed: u64, query: &str, n: usize, keep: impl Fn(usize) -> bool) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..self.records.len()).filter(|&i| keep(i)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[seed, text_hash(query)]));
        let take = n.min(pool.len());
        for i in 0..take {
            let remaining = (pool.len() - i) as u64;
            let j = i + ((rng.next_u64() as u128 * remaining as u128) >> 64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(take);
        pool
    }
}

fn ranked_ids(scores: &[f64], n: usize, keep: impl Fn(usize) -> bool) -> Vec<usize> {
    rank_scores(scores, n, keep).into_iter().map(|(i, _)| i).collect()
}

fn text_hash(text: &str) -> u64 {
    let words: Vec<u64> = text
        .as_bytes()
        .chunks(8)
        .map(|c| {
            let mut b = [0u8; 8];
            b[..c.len()].copy_from_slice(c);
            u64::from_le_bytes(b)
        })
        .collect();
    stable_hash(&[&[text.len() as u64], words.as_slice()].concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn store() -> Store {
        let rows = [
            ("1", "CCO", "The molecule is ethanol, a primary alcohol."),
            ("2", "CCCO", "The molecule is propan-1-ol, a primary alcohol."),
            ("3", "CC(=O)O", "The molecule is acetic acid, a simple carboxylic acid."),
            ("4", "c1ccccc1", "The molecule is benzene, an aromatic hydrocarbon."),
            ("5", "Cc1ccccc1", "The molecule is toluene, a methylbenzene."),
            ("6", "CCCCO", "The molecule is butan-1-ol, a primary alcohol."),
        ];
        let records = rows
            .iter()
            .map(|(id, s, c)| MoleculeRecord::new(*id, *s, *c, FingerprintParams::default()).unwrap())
            .collect();
        Store::build(records, Bm25Params::default()).unwrap()
    }

    fn ids(rs: &[&MoleculeRecord]) -> Vec<String> {
        rs.iter().map(|r| r.id.clone()).collect()
    }

    #[test]
    fn record_validation() {
        let p = FingerprintParams::default();
        assert!(matches!(MoleculeRecord::new("x", "C1CC", "a", p), Err(RecordError::Smiles(_))));
        assert_eq!(MoleculeRecord::new("x", "C", "  ", p), Err(RecordError::EmptyCaption));
    }

    #[test]
    fn self_exclusion_mol2cap() {
        let s = store();
        let got = s.retrieve_mol2cap("OCC", 3, RetrievalStrategy::MorganFts).unwrap();
        assert!(!ids(&got).contains(&"1".into()));
        assert_eq!(got.len(), 3);
        let all = s.retrieve_mol2cap("OCC", 100, RetrievalStrategy::MorganFts).unwrap();
        assert_eq!(all.len(), 5);
        let rnd = s.retrieve_mol2cap("OCC", 100, RetrievalStrategy::Random { seed: 7 }).unwrap();
        assert_eq!(rnd.len(), 5);
        assert!(!ids(&rnd).contains(&"1".into()));
    }

    #[test]
    fn self_exclusion_cap2mol() {
        let s = store();
        let q = "The molecule is ethanol, a primary alcohol.";
        let got = s.retrieve_cap2mol(q, 2, RetrievalStrategy::Bm25Caption).unwrap();
        assert!(!ids(&got).contains(&"1".into()));
        assert_eq!(got[0].id, "2");
    }

    #[test]
    fn disjoint_caption_falls_back_to_file_order() {
        let s = store();
        let got = s.retrieve_cap2mol("zzz qqq", 3, RetrievalStrategy::Bm25Caption).unwrap();
        assert_eq!(ids(&got), ["1", "2", "3"]);
    }

    #[test]
    fn random_is_seeded() {
        let s = store();
        let a = s.retrieve_cap2mol("q", 3, RetrievalStrategy::Random { seed: 1 }).unwrap();
        let b = s.retrieve_cap2mol("q", 3, RetrievalStrategy::Random { seed: 1 }).unwrap();
        assert_eq!(ids(&a), ids(&b));
        let distinct: alloc::collections::BTreeSet<_> = ids(&a).into_iter().collect();
        assert_eq!(distinct.len(), 3);
    }

    #[test]
    fn strategy_applicability() {
        let s = store();
        assert!(matches!(
            s.retrieve_cap2mol("x", 1, RetrievalStrategy::MorganFts),
            Err(StoreError::StrategyNotApplicable(_))
        ));
        assert!(matches!(
            s.retrieve_mol2cap("C", 1, RetrievalStrategy::Bm25Caption),
            Err(StoreError::StrategyNotApplicable(_))
        ));
        assert!(matches!(
            s.retrieve_mol2cap("C1", 1, RetrievalStrategy::MorganFts),
            Err(StoreError::ParseFailure(_))
        ));
        assert_eq!(s.retrieve_mol2cap("C", 0, RetrievalStrategy::MorganFts), Err(StoreError::ZeroResults));
        assert!(matches!(Store::build(vec![], Bm25Params::default()), Err(StoreError::EmptyStore)));
    }

    #[test]
    fn chargram_strategy_ranks_similar_strings() {
        let s = store();
        let got = s.retrieve_mol2cap("CCCCCO", 1, RetrievalStrategy::Bm25SmilesChargram).unwrap();
        assert_eq!(got[0].id, "6");
    }

    #[test]
    fn strategy_names_parse() {
        for name in ["morgan_fts", "bm25_caption", "bm25_smiles_chargram"] {
            assert_eq!(name.parse::<RetrievalStrategy>().unwrap().name(), name);
        }
        assert!("random".parse::<RetrievalStrategy>().is_err());
    }
}
