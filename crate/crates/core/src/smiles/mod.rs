//! SMILES parsing, serialization, canonical ranking and graph equality.
//!
//! Stereochemistry is read but never used: chirality tokens are dropped by the
//! parser and bond direction markers are kept on [`Bond`] only for reference.
//! Implicit hydrogens are never materialized as atoms.

mod canon;
mod element;
mod parser;
mod valence;
mod writer;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub use canon::{canonical_invariants, canonical_rank, molecules_equal, CanonicalSequence};
pub use element::Element;
pub use parser::{parse_smiles, ParseError, ParseErrorKind};
pub use valence::{atom_valence, is_valid_molecule, is_valid_smiles};
pub use writer::{write_smiles, write_smiles_with_ranks};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    pub formal_charge: i8,
    pub isotope: Option<u16>,
    pub explicit_h_count: Option<u8>,
    /// Came from a bracket-atom token.
    pub bracket: bool,
}

impl Atom {
    pub fn organic(element: Element, aromatic: bool) -> Atom {
        Atom {
            element,
            aromatic,
            formal_charge: 0,
            isotope: None,
            explicit_h_count: None,
            bracket: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Quadruple,
    Aromatic,
}

impl BondOrder {
    /// Small stable integer code used in invariants and hashing.
    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Quadruple => 4,
            BondOrder::Aromatic => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BondStereo {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bond {
    pub begin: usize,
    pub end: usize,
    pub order: BondOrder,
    pub stereo: Option<BondStereo>,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.begin == atom {
            self.end
        } else {
            self.begin
        }
    }
}

/// Violations of the molecular-graph invariants, reported by [`Molecule::from_parts`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphError {
    AtomIndexOutOfRange { bond: usize },
    SelfLoop { bond: usize },
    DuplicateBond { bond: usize },
    AromaticNotAllowed { atom: usize },
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::AtomIndexOutOfRange { bond } => {
                write!(f, "bond {bond} references an atom that does not exist")
            }
            GraphError::SelfLoop { bond } => write!(f, "bond {bond} joins an atom to itself"),
            GraphError::DuplicateBond { bond } => {
                write!(f, "bond {bond} duplicates an existing bond")
            }
            GraphError::AromaticNotAllowed { atom } => {
                write!(f, "atom {atom} is marked aromatic but its element cannot be")
            }
        }
    }
}

impl core::error::Error for GraphError {}

/// A parsed molecular graph. Immutable once built.
#[derive(Debug, Clone)]
pub struct Molecule {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    source_text: String,
    // (neighbor, bond index), in bond insertion order
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl Molecule {
    /// Builds a molecule from raw parts, checking the graph invariants.
    pub fn from_parts(
        atoms: Vec<Atom>,
        bonds: Vec<Bond>,
        source_text: String,
    ) -> Result<Molecule, GraphError> {
        let mut adjacency: Vec<Vec<(usize, usize)>> = alloc::vec![Vec::new(); atoms.len()];
        for (i, atom) in atoms.iter().enumerate() {
            if atom.aromatic && !atom.element.can_be_aromatic() {
                return Err(GraphError::AromaticNotAllowed { atom: i });
            }
        }
        for (i, bond) in bonds.iter().enumerate() {
            if bond.begin >= atoms.len() || bond.end >= atoms.len() {
                return Err(GraphError::AtomIndexOutOfRange { bond: i });
            }
            if bond.begin == bond.end {
                return Err(GraphError::SelfLoop { bond: i });
            }
            if adjacency[bond.begin].iter().any(|&(n, _)| n == bond.end) {
                return Err(GraphError::DuplicateBond { bond: i });
            }
            adjacency[bond.begin].push((bond.end, i));
            adjacency[bond.end].push((bond.begin, i));
        }
        Ok(Molecule {
            atoms,
            bonds,
            source_text,
            adjacency,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    /// `(neighbor, bond index)` pairs of `atom`.
    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.adjacency[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&Bond> {
        self.adjacency[a]
            .iter()
            .find(|&&(n, _)| n == b)
            .map(|&(_, bi)| &self.bonds[bi])
    }

    /// The invariant tuple shared by canonical ranking and fingerprints:
    /// element, aromatic flag, charge, isotope, explicit H count, heavy degree.
    pub fn atom_invariant(&self, atom: usize) -> AtomInvariant {
        let a = &self.atoms[atom];
        AtomInvariant {
            atomic_number: a.element.atomic_number(),
            aromatic: a.aromatic,
            formal_charge: a.formal_charge,
            isotope: a.isotope,
            explicit_h: a.explicit_h_count,
            degree: self.degree(atom) as u32,
        }
    }

    /// Returns a copy whose atoms are reordered so that new atom `i` is old atom `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Molecule {
        assert_eq!(order.len(), self.atoms.len(), "order must cover every atom");
        let mut new_index = alloc::vec![usize::MAX; order.len()];
        for (new, &old) in order.iter().enumerate() {
            new_index[old] = new;
        }
        let atoms = order.iter().map(|&old| self.atoms[old].clone()).collect();
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                begin: new_index[b.begin],
                end: new_index[b.end],
                order: b.order,
                stereo: b.stereo,
            })
            .collect();
        Molecule::from_parts(atoms, bonds, self.source_text.clone())
            .expect("a permutation preserves graph invariants")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AtomInvariant {
    pub atomic_number: u8,
    pub aromatic: bool,
    pub formal_charge: i8,
    pub isotope: Option<u16>,
    pub explicit_h: Option<u8>,
    pub degree: u32,
}

impl AtomInvariant {
    /// Packs the tuple into fixed-width words for hashing.
    pub fn words(&self) -> [u64; 3] {
        let iso = self.isotope.map_or(0, |i| i as u64 + 1);
        let h = self.explicit_h.map_or(0, |h| h as u64 + 1);
        [
            (self.atomic_number as u64) | ((self.aromatic as u64) << 8) | ((self.formal_charge as u8 as u64) << 16),
            iso | (h << 32),
            self.degree as u64,
        ]
    }
}
