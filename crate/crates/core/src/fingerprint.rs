//! Morgan circular fingerprints and Dice similarity.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::hash::stable_hash;
use crate::smiles::Molecule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FingerprintParams {
    pub radius: u32,
    pub nbits: u32,
}

impl Default for FingerprintParams {
    fn default() -> Self {
        FingerprintParams {
            radius: 2,
            nbits: 2048,
        }
    }
}

impl FingerprintParams {
    pub fn new(radius: u32, nbits: u32) -> Result<Self, FingerprintError> {
        let params = FingerprintParams { radius, nbits };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), FingerprintError> {
        if self.nbits < 64 || !self.nbits.is_power_of_two() {
            return Err(FingerprintError::InvalidParams);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FingerprintError {
    /// nbits below 64 or not a power of two.
    InvalidParams,
    ParamMismatch,
    /// Both bit sets empty.
    DegenerateInput,
    /// Bitmap length does not match nbits.
    BadBitmap,
}

impl fmt::Display for FingerprintError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FingerprintError::InvalidParams => "nbits must be a power of two and at least 64",
            FingerprintError::ParamMismatch => "fingerprints differ in radius or nbits",
            FingerprintError::DegenerateInput => "both fingerprints are empty",
            FingerprintError::BadBitmap => "bitmap length does not match nbits",
        })
    }
}

impl core::error::Error for FingerprintError {}

/// Folded set of environment identifiers. `bits` is sorted and unique.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MorganFingerprint {
    bits: Vec<u32>,
    params: FingerprintParams,
}

impl MorganFingerprint {
    pub fn from_bits(
        mut bits: Vec<u32>,
        params: FingerprintParams,
    ) -> Result<MorganFingerprint, FingerprintError> {
        params.validate()?;
        bits.sort_unstable();
        bits.dedup();
        if bits.last().is_some_and(|&b| b >= params.nbits) {
            return Err(FingerprintError::BadBitmap);
        }
        Ok(MorganFingerprint { bits, params })
    }

    pub fn bits(&self) -> &[u32] {
        &self.bits
    }

    pub fn params(&self) -> FingerprintParams {
        self.params
    }

    pub fn cardinality(&self) -> usize {
        self.bits.len()
    }

    /// Packed bitmap, bit `i` at byte `i / 8`, mask `1 << (i % 8)`.
    pub fn to_bitmap(&self) -> Vec<u8> {
        let mut bytes = vec![0u8; self.params.nbits as usize / 8];
        for &b in &self.bits {
            bytes[b as usize / 8] |= 1 << (b % 8);
        }
        bytes
    }

    pub fn from_bitmap(
        bytes: &[u8],
        params: FingerprintParams,
    ) -> Result<MorganFingerprint, FingerprintError> {
        params.validate()?;
        if bytes.len() * 8 != params.nbits as usize {
            return Err(FingerprintError::BadBitmap);
        }
        let bits = bytes
            .iter()
            .enumerate()
            .flat_map(|(i, &byte)| {
                (0..8).filter(move |k| byte & (1 << k) != 0).map(move |k| (i * 8 + k) as u32)
            })
            .collect();
        Ok(MorganFingerprint { bits, params })
    }

    pub fn intersection_count(&self, other: &MorganFingerprint) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < self.bits.len() && j < other.bits.len() {
            match self.bits[i].cmp(&other.bits[j]) {
                core::cmp::Ordering::Less => i += 1,
                core::cmp::Ordering::Greater => j += 1,
                core::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

/// Environment identifiers before folding: `ids[round][atom]`.
///
/// Round 0 hashes the atom invariant tuple. Round `r` hashes the atom's round
/// `r - 1` identifier followed by the sorted `(bond order, neighbor identifier)`
/// pairs from round `r - 1`.
pub fn environment_ids(mol: &Molecule, radius: u32) -> Vec<Vec<u64>> {
    let n = mol.atom_count();
    let mut rounds = Vec::with_capacity(radius as usize + 1);
    let first: Vec<u64> = (0..n)
        .map(|a| stable_hash(&mol.atom_invariant(a).words()))
        .collect();
    rounds.push(first);
    for _ in 0..radius {
        let prev = rounds.last().expect("round 0 exists");
        let next: Vec<u64> = (0..n)
            .map(|a| {
                let mut pairs: Vec<(u64, u64)> = mol
                    .neighbors(a)
                    .iter()
                    .map(|&(nb, b)| (mol.bonds()[b].order.code() as u64, prev[nb]))
                    .collect();
                pairs.sort_unstable();
                let mut words = Vec::with_capacity(2 + 2 * pairs.len());
                words.push(prev[a]);
                words.push(pairs.len() as u64);
                for (order, id) in pairs {
                    words.push(order);
                    words.push(id);
                }
                stable_hash(&words)
            })
            .collect();
        rounds.push(next);
    }
    rounds
}

pub fn morgan_fingerprint(mol: &Molecule, params: FingerprintParams) -> MorganFingerprint {
    let mask = params.nbits as u64 - 1;
    let bits = environment_ids(mol, params.radius)
        .into_iter()
        .flatten()
        .map(|id| (id & mask) as u32)
        .collect();
    MorganFingerprint::from_bits(bits, params).expect("folded bits are within nbits")
}

/// `2|A∩B| / (|A| + |B|)`.
pub fn dice_similarity(a: &MorganFingerprint, b: &MorganFingerprint) -> Result<f64, FingerprintError> {
    if a.params != b.params {
        return Err(FingerprintError::ParamMismatch);
    }
    let total = a.cardinality() + b.cardinality();
    if total == 0 {
        return Err(FingerprintError::DegenerateInput);
    }
    Ok(2.0 * a.intersection_count(b) as f64 / total as f64)
}
