use super::{parse_smiles, BondOrder, Element, Molecule};

/// Computed valence of an unbracketed atom.
///
/// Non-aromatic bonds count their order. Each aromatic bond counts 1, and an
/// aromatic carbon or boron gets one extra unit for its share of the ring's
/// pi system. Aromatic N, O, P, S, Se and As may instead donate a lone pair,
/// so they get no extra unit (pyrrole-type `n`, furan `o`, thiophene `s`).
/// A carbon or boron whose pi electron already sits in an exocyclic multiple
/// bond (pyridone-type `O=c`) gets no extra unit either.
pub fn atom_valence(mol: &Molecule, atom: usize) -> u32 {
    let mut total = 0;
    let mut aromatic_bonds = 0;
    let mut multiple = false;
    for &(_, b) in mol.neighbors(atom) {
        match mol.bonds()[b].order {
            BondOrder::Single => total += 1,
            BondOrder::Double => {
                total += 2;
                multiple = true;
            }
            BondOrder::Triple => {
                total += 3;
                multiple = true;
            }
            BondOrder::Quadruple => {
                total += 4;
                multiple = true;
            }
            BondOrder::Aromatic => aromatic_bonds += 1,
        }
    }
    total += aromatic_bonds;
    let a = &mol.atoms()[atom];
    let pi_unit = a.aromatic && !multiple && matches!(a.element, Element::C | Element::B);
    if pi_unit {
        total += 1;
    }
    total
}

/// Valence check over every unbracketed atom. Bracket atoms are exempt.
pub fn is_valid_molecule(mol: &Molecule) -> bool {
    mol.atoms().iter().enumerate().all(|(i, a)| {
        if a.bracket {
            return true;
        }
        match a.element.max_valence() {
            Some(cap) => atom_valence(mol, i) <= cap,
            None => true,
        }
    })
}

/// True iff `text` parses and passes the valence check.
pub fn is_valid_smiles(text: &str) -> bool {
    parse_smiles(text).is_ok_and(|m| is_valid_molecule(&m))
}
