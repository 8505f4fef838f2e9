//! proptest strategies for random molecular graphs and texts.
#![allow(dead_code)]

use molrag_core::smiles::{Atom, Bond, BondOrder, Element, Molecule};
use proptest::prelude::*;

const PLAIN: [Element; 10] = [
    Element::C,
    Element::C,
    Element::C,
    Element::N,
    Element::O,
    Element::S,
    Element::P,
    Element::F,
    Element::CL,
    Element::BR,
];

fn atom() -> impl Strategy<Value = Atom> {
    let plain = (0..PLAIN.len(), any::<bool>()).prop_map(|(i, arom)| {
        let e = PLAIN[i];
        Atom::organic(e, arom && e.can_be_aromatic())
    });
    let bracket = (1u8..40, any::<bool>(), -2i8..=2, prop::option::of(1u16..300), 0u8..4).prop_map(
        |(z, arom, charge, isotope, h)| {
            let element = Element::from_atomic_number(z).unwrap_or(Element::C);
            Atom {
                element,
                aromatic: arom && element.can_be_aromatic(),
                formal_charge: charge,
                isotope,
                explicit_h_count: Some(h),
                bracket: true,
            }
        },
    );
    prop_oneof![4 => plain, 1 => bracket]
}

fn order() -> impl Strategy<Value = BondOrder> {
    prop_oneof![
        6 => Just(BondOrder::Single),
        2 => Just(BondOrder::Double),
        1 => Just(BondOrder::Triple),
        2 => Just(BondOrder::Aromatic),
    ]
}

/// Random graph: a forest (each atom optionally attached to an earlier one)
/// plus extra ring edges, with random atoms and bond orders.
pub fn molecule(max_atoms: usize) -> impl Strategy<Value = Molecule> {
    (1..=max_atoms)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(atom(), n),
                prop::collection::vec((any::<prop::sample::Index>(), any::<u8>(), order()), n),
                prop::collection::vec((any::<prop::sample::Index>(), any::<prop::sample::Index>(), order()), 0..=n / 2 + 1),
            )
        })
        .prop_map(|(atoms, parents, extra)| {
            let n = atoms.len();
            let mut bonds: Vec<Bond> = Vec::new();
            let has = |a: usize, b: usize, bonds: &Vec<Bond>| {
                bonds.iter().any(|x| (x.begin == a && x.end == b) || (x.begin == b && x.end == a))
            };
            for (i, (p, attach, o)) in parents.into_iter().enumerate().skip(1) {
                // roughly one atom in twelve starts a new fragment
                if attach % 12 != 0 {
                    bonds.push(Bond { begin: p.index(i), end: i, order: o, stereo: None });
                }
            }
            for (x, y, o) in extra {
                let (a, b) = (x.index(n), y.index(n));
                if a != b && !has(a, b, &bonds) {
                    bonds.push(Bond { begin: a, end: b, order: o, stereo: None });
                }
            }
            Molecule::from_parts(atoms, bonds, String::new()).expect("generated graph is well formed")
        })
}

/// A random permutation of `0..n`.
pub fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

pub fn molecule_and_permutation(max_atoms: usize) -> impl Strategy<Value = (Molecule, Vec<usize>)> {
    molecule(max_atoms).prop_flat_map(|m| {
        let n = m.atom_count();
        (Just(m), permutation(n))
    })
}
