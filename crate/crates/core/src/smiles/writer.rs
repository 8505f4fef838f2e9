use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use super::{canonical_rank, Atom, BondOrder, Element, Molecule};

/// DFS frame: atom, parent bond, sorted neighbours, cursor.
type Frame = (usize, Option<usize>, Vec<(usize, usize)>, usize);

/// Serializes `mol` deterministically: depth-first from the lowest canonical
/// rank in each fragment, neighbors taken in rank order, ring-closure labels
/// allocated lowest-free-first in traversal order.
pub fn write_smiles(mol: &Molecule) -> String {
    let ranks = canonical_rank(mol);
    write_smiles_with_ranks(mol, &ranks)
}

/// Like [`write_smiles`] but traversing by an arbitrary atom ordering.
///
/// `ranks` must assign one distinct value per atom. Random orderings give
/// randomized (still valid) SMILES for the same graph.
pub fn write_smiles_with_ranks(mol: &Molecule, ranks: &[usize]) -> String {
    assert_eq!(ranks.len(), mol.atom_count(), "one rank per atom");
    let plan = Plan::build(mol, ranks);
    let mut out = String::new();
    let mut labels = Labels::default();
    for (i, &root) in plan.roots.iter().enumerate() {
        if i > 0 {
            out.push('.');
        }
        emit(mol, &plan, root, &mut labels, &mut out);
    }
    out
}

#[derive(Default)]
struct Labels {
    free: BTreeSet<u16>,
    next: u16,
    // bond index -> label
    open: Vec<(usize, u16)>,
}

impl Labels {
    fn take(&mut self, bond: usize) -> u16 {
        let label = match self.free.pop_first() {
            Some(l) => l,
            None => {
                self.next += 1;
                self.next
            }
        };
        self.open.push((bond, label));
        label
    }

    fn release(&mut self, bond: usize) -> u16 {
        let pos = self
            .open
            .iter()
            .position(|&(b, _)| b == bond)
            .expect("ring bond was opened before being closed");
        let (_, label) = self.open.swap_remove(pos);
        self.free.insert(label);
        label
    }
}

struct Plan {
    roots: Vec<usize>,
    children: Vec<Vec<(usize, usize)>>,
    // ring bonds at each atom in emission order: (bond, opening?)
    ring_bonds: Vec<Vec<(usize, bool)>>,
}

impl Plan {
    fn build(mol: &Molecule, ranks: &[usize]) -> Plan {
        let n = mol.atom_count();
        let mut state = vec![0u8; n];
        let mut plan = Plan {
            roots: Vec::new(),
            children: vec![Vec::new(); n],
            ring_bonds: vec![Vec::new(); n],
        };
        let mut by_rank: Vec<usize> = (0..n).collect();
        by_rank.sort_by_key(|&a| ranks[a]);
        for &start in &by_rank {
            if state[start] != 0 {
                continue;
            }
            plan.roots.push(start);
            // iterative DFS
            let mut stack: Vec<Frame> = Vec::new();
            state[start] = 1;
            stack.push((start, None, sorted_neighbors(mol, start, ranks), 0));
            while let Some(frame) = stack.last_mut() {
                let (atom, parent, ref nbrs, cursor) = *frame;
                if cursor == nbrs.len() {
                    state[atom] = 2;
                    stack.pop();
                    continue;
                }
                let (next, bond) = nbrs[cursor];
                frame.3 += 1;
                if Some(bond) == parent {
                    continue;
                }
                match state[next] {
                    0 => {
                        plan.children[atom].push((next, bond));
                        state[next] = 1;
                        let ns = sorted_neighbors(mol, next, ranks);
                        stack.push((next, Some(bond), ns, 0));
                    }
                    1 => {
                        // back edge to an ancestor still on the stack
                        plan.ring_bonds[next].push((bond, true));
                        plan.ring_bonds[atom].push((bond, false));
                    }
                    _ => {}
                }
            }
        }
        plan
    }
}

fn sorted_neighbors(mol: &Molecule, atom: usize, ranks: &[usize]) -> Vec<(usize, usize)> {
    let mut ns = mol.neighbors(atom).to_vec();
    ns.sort_by_key(|&(n, _)| ranks[n]);
    ns
}

fn emit(mol: &Molecule, plan: &Plan, root: usize, labels: &mut Labels, out: &mut String) {
    // explicit stack of work items keeps deep chains off the call stack
    enum Work {
        Atom(usize),
        Text(&'static str),
        Bond(usize),
    }
    let mut work = vec![Work::Atom(root)];
    while let Some(item) = work.pop() {
        match item {
            Work::Text(t) => out.push_str(t),
            Work::Bond(b) => push_bond(mol, b, out),
            Work::Atom(atom) => {
                push_atom(&mol.atoms()[atom], out);
                for &(bond, opening) in &plan.ring_bonds[atom] {
                    if opening {
                        push_bond(mol, bond, out);
                        push_label(labels.take(bond), out);
                    } else {
                        push_label(labels.release(bond), out);
                    }
                }
                let children = &plan.children[atom];
                // pushed in reverse so the first child is emitted first
                for (i, &(child, bond)) in children.iter().enumerate().rev() {
                    let last = i + 1 == children.len();
                    if !last {
                        work.push(Work::Text(")"));
                    }
                    work.push(Work::Atom(child));
                    work.push(Work::Bond(bond));
                    if !last {
                        work.push(Work::Text("("));
                    }
                }
            }
        }
    }
}

fn push_label(label: u16, out: &mut String) {
    if label < 10 {
        out.push((b'0' + label as u8) as char);
    } else {
        let _ = write!(out, "%{label:02}");
    }
}

fn push_bond(mol: &Molecule, bond: usize, out: &mut String) {
    let b = &mol.bonds()[bond];
    let both_aromatic = mol.atoms()[b.begin].aromatic && mol.atoms()[b.end].aromatic;
    let symbol = match (b.order, both_aromatic) {
        (BondOrder::Single, true) => "-",
        (BondOrder::Single, false) => "",
        (BondOrder::Aromatic, true) => "",
        (BondOrder::Aromatic, false) => ":",
        (BondOrder::Double, _) => "=",
        (BondOrder::Triple, _) => "#",
        (BondOrder::Quadruple, _) => "$",
    };
    out.push_str(symbol);
}

fn push_atom(atom: &Atom, out: &mut String) {
    let plain = !atom.bracket
        && atom.formal_charge == 0
        && atom.isotope.is_none()
        && atom.explicit_h_count.is_none()
        && atom.element.is_organic_subset();
    if plain {
        push_symbol(atom, out);
        return;
    }
    out.push('[');
    if let Some(iso) = atom.isotope {
        let _ = write!(out, "{iso}");
    }
    push_symbol(atom, out);
    match atom.explicit_h_count {
        None | Some(0) => {}
        Some(1) => out.push('H'),
        Some(h) => {
            let _ = write!(out, "H{h}");
        }
    }
    match atom.formal_charge {
        0 => {}
        1 => out.push('+'),
        -1 => out.push('-'),
        c if c > 0 => {
            let _ = write!(out, "+{c}");
        }
        c => {
            let _ = write!(out, "-{}", -(c as i32));
        }
    }
    out.push(']');
}

fn push_symbol(atom: &Atom, out: &mut String) {
    if atom.aromatic {
        match atom.element {
            Element::SE => out.push_str("se"),
            Element::AS => out.push_str("as"),
            e => {
                for c in e.symbol().chars() {
                    out.push(c.to_ascii_lowercase());
                }
            }
        }
    } else {
        out.push_str(atom.element.symbol());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::{molecules_equal, parse_smiles};

    fn round_trip(s: &str) -> String {
        let m = parse_smiles(s).unwrap();
        let w = write_smiles(&m);
        let back = parse_smiles(&w).unwrap_or_else(|e| panic!("{s} -> {w}: {e}"));
        assert!(molecules_equal(&m, &back), "{s} -> {w}");
        w
    }

    #[test]
    fn methane() {
        assert_eq!(round_trip("C"), "C");
    }

    #[test]
    fn branched_propane_is_a_path() {
        let w = round_trip("C(C)C");
        let m = parse_smiles(&w).unwrap();
        assert_eq!(m.atom_count(), 3);
        let mut degrees: Vec<usize> = (0..3).map(|a| m.degree(a)).collect();
        degrees.sort_unstable();
        assert_eq!(degrees, [1, 1, 2]);
    }

    #[test]
    fn assorted_round_trips() {
        for s in [
            "c1ccccc1",
            "c1ccccc1-c1ccccc1",
            "CC(=O)Oc1ccccc1C(=O)O",
            "[Na+].[Cl-]",
            "[13CH3]C#N",
            "C1CC2CCC1CC2",
            "C12C3C4C1C5C2C3C45",
            "O=C1C=CC(=O)C=C1",
            "c1cc[nH]c1",
            "[O-][N+](=O)c1ccccc1",
            "C%10CCCCCCCCC%10",
            "[2H]OC",
            "N[C@@H](C)C(=O)O",
            "C:C",
            "[Fe+3].[O-2]",
            "*C(*)C",
            "C$C",
        ] {
            round_trip(s);
        }
    }

    #[test]
    fn many_simultaneous_rings_use_percent_labels() {
        // one hub atom closing eleven rings onto a chain
        let mut s = String::from("C");
        for i in 1..=11 {
            let _ = write!(s, "%{:02}", i + 10);
        }
        s.push('C');
        for i in 1..=11 {
            let _ = write!(s, "C%{:02}", i + 10);
        }
        let m = parse_smiles(&s).unwrap();
        round_trip(&s);
        assert_eq!(m.atom_count(), 13);
    }

    #[test]
    fn deep_chain_does_not_overflow() {
        let s = "C".repeat(20_000);
        let m = parse_smiles(&s).unwrap();
        assert_eq!(write_smiles_with_ranks(&m, &(0..m.atom_count()).collect::<Vec<_>>()), s);
    }
}
