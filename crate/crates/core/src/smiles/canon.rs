//! Morgan-style canonical ranking and exact graph equality.

use alloc::vec;
use alloc::vec::Vec;

use super::{AtomInvariant, Molecule};

/// Colored graph view used by refinement: per vertex, `(neighbor, bond code)`.
struct Graph {
    adj: Vec<Vec<(usize, u8)>>,
}

impl Graph {
    fn of(mol: &Molecule) -> Graph {
        let adj = (0..mol.atom_count())
            .map(|a| {
                mol.neighbors(a)
                    .iter()
                    .map(|&(n, b)| (n, mol.bonds()[b].order.code()))
                    .collect()
            })
            .collect();
        Graph { adj }
    }

    /// Disjoint union; vertices of `b` are shifted by `a`'s vertex count.
    fn union(a: &Graph, b: &Graph) -> Graph {
        let off = a.adj.len();
        let mut adj = a.adj.clone();
        adj.extend(
            b.adj
                .iter()
                .map(|ns| ns.iter().map(|&(n, c)| (n + off, c)).collect()),
        );
        Graph { adj }
    }
}

/// Dense ranks (0..k) of `keys`, ordered by key.
fn dense_ranks<K: Ord>(keys: &[K]) -> (Vec<u32>, usize) {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut ranks = vec![0u32; keys.len()];
    let mut class = 0u32;
    for (i, &v) in order.iter().enumerate() {
        if i > 0 && keys[order[i - 1]] != keys[v] {
            class += 1;
        }
        ranks[v] = class;
    }
    let count = if keys.is_empty() { 0 } else { class as usize + 1 };
    (ranks, count)
}

/// Iterates neighborhood refinement until the partition stops splitting.
fn refine(graph: &Graph, mut classes: Vec<u32>) -> Vec<u32> {
    let (ranks, mut count) = dense_ranks(&classes);
    classes = ranks;
    loop {
        let keys: Vec<(u32, Vec<(u32, u8)>)> = (0..classes.len())
            .map(|v| {
                let mut ns: Vec<(u32, u8)> =
                    graph.adj[v].iter().map(|&(n, c)| (classes[n], c)).collect();
                ns.sort_unstable();
                (classes[v], ns)
            })
            .collect();
        let (next, next_count) = dense_ranks(&keys);
        if next_count == count {
            return classes;
        }
        classes = next;
        count = next_count;
    }
}

fn initial_invariants(mol: &Molecule) -> Vec<AtomInvariant> {
    (0..mol.atom_count()).map(|a| mol.atom_invariant(a)).collect()
}

/// Canonical ranks: a permutation of `0..atom_count`.
///
/// Atoms start from their invariant tuple (element, aromatic flag, charge,
/// isotope, explicit H, degree) and are refined by the sorted multiset of
/// `(neighbor class, bond order)` pairs until stable. Remaining ties are
/// broken by promoting one atom out of the lowest tied class, then refining
/// again. Stereochemistry plays no part.
pub fn canonical_rank(mol: &Molecule) -> Vec<usize> {
    let graph = Graph::of(mol);
    let (init, _) = dense_ranks(&initial_invariants(mol));
    let mut classes = refine(&graph, init);
    loop {
        let n = classes.len();
        let mut counts = vec![0usize; n];
        for &c in &classes {
            counts[c as usize] += 1;
        }
        let Some(tied) = (0..n).find(|&c| counts[c] > 1) else {
            return classes.into_iter().map(|c| c as usize).collect();
        };
        let chosen = classes
            .iter()
            .position(|&c| c as usize == tied)
            .expect("tied class has members");
        let split: Vec<u32> = classes
            .iter()
            .enumerate()
            .map(|(v, &c)| {
                let bump = (c as usize == tied && v != chosen) as u32;
                c * 2 + bump
            })
            .collect();
        classes = refine(&graph, split);
    }
}

/// Rank-ordered description of a molecule: for each rank, the atom invariant
/// and the sorted `(neighbor rank, bond order)` list. Equal sequences imply
/// isomorphic graphs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalSequence(pub Vec<(AtomInvariant, Vec<(usize, u8)>)>);

pub fn canonical_invariants(mol: &Molecule) -> CanonicalSequence {
    let ranks = canonical_rank(mol);
    canonical_invariants_with(mol, &ranks)
}

fn canonical_invariants_with(mol: &Molecule, ranks: &[usize]) -> CanonicalSequence {
    let mut by_rank: Vec<usize> = vec![0; ranks.len()];
    for (atom, &r) in ranks.iter().enumerate() {
        by_rank[r] = atom;
    }
    CanonicalSequence(
        by_rank
            .iter()
            .map(|&atom| {
                let mut ns: Vec<(usize, u8)> = mol
                    .neighbors(atom)
                    .iter()
                    .map(|&(n, b)| (ranks[n], mol.bonds()[b].order.code()))
                    .collect();
                ns.sort_unstable();
                (mol.atom_invariant(atom), ns)
            })
            .collect(),
    )
}

/// Graph isomorphism over atom invariants and bond orders.
///
/// The canonical sequences are compared first; when they differ the answer is
/// settled by a backtracking search over a joint refinement of both graphs,
/// so a non-canonical tie-break can never produce a false negative.
pub fn molecules_equal(a: &Molecule, b: &Molecule) -> bool {
    if a.atom_count() != b.atom_count() || a.bond_count() != b.bond_count() {
        return false;
    }
    if canonical_invariants(a) == canonical_invariants(b) {
        return true;
    }
    search_isomorphism(a, b)
}

fn search_isomorphism(a: &Molecule, b: &Molecule) -> bool {
    let n = a.atom_count();
    let (ga, gb) = (Graph::of(a), Graph::of(b));
    let union = Graph::union(&ga, &gb);
    let mut inv = initial_invariants(a);
    inv.extend(initial_invariants(b));
    let (init, _) = dense_ranks(&inv);
    let colors = refine(&union, init);
    let (ca, cb) = colors.split_at(n);

    let mut hist_a = ca.to_vec();
    let mut hist_b = cb.to_vec();
    hist_a.sort_unstable();
    hist_b.sort_unstable();
    if hist_a != hist_b {
        return false;
    }

    // visit order: connected, starting from the rarest color in each component
    let mut freq = vec![0usize; colors.len()];
    for &c in ca {
        freq[c as usize] += 1;
    }
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    while order.len() < n {
        let start = (0..n)
            .filter(|&v| !seen[v])
            .min_by_key(|&v| (freq[ca[v] as usize], v))
            .expect("unvisited atom remains");
        seen[start] = true;
        let mut head = order.len();
        order.push(start);
        while head < order.len() {
            let v = order[head];
            head += 1;
            for &(w, _) in &ga.adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    order.push(w);
                }
            }
        }
    }

    let mut map_ab = vec![usize::MAX; n];
    let mut used_b = vec![false; n];
    extend_mapping(&ga, &gb, ca, cb, &order, 0, &mut map_ab, &mut used_b)
}

#[allow(clippy::too_many_arguments)]
fn extend_mapping(
    ga: &Graph,
    gb: &Graph,
    ca: &[u32],
    cb: &[u32],
    order: &[usize],
    depth: usize,
    map_ab: &mut [usize],
    used_b: &mut [bool],
) -> bool {
    let Some(&va) = order.get(depth) else {
        return true;
    };
    for vb in 0..gb.adj.len() {
        if used_b[vb] || cb[vb] != ca[va] {
            continue;
        }
        let mut mapped_a = 0;
        let consistent = ga.adj[va].iter().all(|&(na, code)| {
            let image = map_ab[na];
            if image == usize::MAX {
                return true;
            }
            mapped_a += 1;
            gb.adj[vb].iter().any(|&(nb, c)| nb == image && c == code)
        });
        if !consistent {
            continue;
        }
        let mapped_b = gb.adj[vb].iter().filter(|&&(nb, _)| used_b[nb]).count();
        if mapped_a != mapped_b {
            continue;
        }
        map_ab[va] = vb;
        used_b[vb] = true;
        if extend_mapping(ga, gb, ca, cb, order, depth + 1, map_ab, used_b) {
            return true;
        }
        map_ab[va] = usize::MAX;
        used_b[vb] = false;
    }
    false
}
