//! Brute-force reference implementations shared by integration tests.
//! Each one is written directly from the definition and avoids the library's
//! own helpers except for graph access.
#![allow(dead_code)]

use std::collections::BTreeMap;

use molrag_core::smiles::{BondOrder, Molecule};

fn order_tag(o: BondOrder) -> &'static str {
    match o {
        BondOrder::Single => "-",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Quadruple => "$",
        BondOrder::Aromatic => ":",
    }
}

fn atom_label(mol: &Molecule, a: usize) -> String {
    let at = &mol.atoms()[a];
    format!(
        "{}{}{}i{:?}h{:?}d{}",
        at.element.symbol(),
        if at.aromatic { "ar" } else { "al" },
        at.formal_charge,
        at.isotope,
        at.explicit_h_count,
        mol.neighbors(a).len()
    )
}

/// Text of the depth-`r` neighbourhood tree rooted at each atom, built level
/// by level: level 0 is the atom label, level `k` is the level `k - 1` text
/// followed by the sorted `(bond, neighbour level k - 1 text)` list.
pub fn environment_strings(mol: &Molecule, radius: u32) -> Vec<Vec<String>> {
    let n = mol.atom_count();
    let mut levels: Vec<Vec<String>> = vec![(0..n).map(|a| atom_label(mol, a)).collect()];
    for _ in 0..radius {
        let prev = levels.last().unwrap();
        let next = (0..n)
            .map(|a| {
                let mut branches: Vec<String> = mol
                    .neighbors(a)
                    .iter()
                    .map(|&(nb, b)| format!("{}{}", order_tag(mol.bonds()[b].order), prev[nb]))
                    .collect();
                branches.sort();
                format!("{}[{}]", prev[a], branches.join(","))
            })
            .collect();
        levels.push(next);
    }
    levels
}

/// Exhaustive isomorphism test by backtracking over atom mappings.
pub fn brute_isomorphic(a: &Molecule, b: &Molecule) -> bool {
    let n = a.atom_count();
    if n != b.atom_count() || a.bond_count() != b.bond_count() {
        return false;
    }
    let la: Vec<String> = (0..n).map(|i| atom_label(a, i)).collect();
    let lb: Vec<String> = (0..n).map(|i| atom_label(b, i)).collect();
    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    fn go(
        i: usize,
        a: &Molecule,
        b: &Molecule,
        la: &[String],
        lb: &[String],
        map: &mut [usize],
        used: &mut [bool],
    ) -> bool {
        if i == map.len() {
            return true;
        }
        for j in 0..map.len() {
            if used[j] || la[i] != lb[j] {
                continue;
            }
            let consistent = (0..i).all(|k| {
                let ea = a.bond_between(i, k).map(|x| x.order);
                let eb = b.bond_between(j, map[k]).map(|x| x.order);
                ea == eb
            });
            if !consistent {
                continue;
            }
            map[i] = j;
            used[j] = true;
            if go(i + 1, a, b, la, lb, map, used) {
                return true;
            }
            used[j] = false;
        }
        false
    }
    go(0, a, b, &la, &lb, &mut map, &mut used)
}

/// Okapi BM25 evaluated term by term from the definition, over query token
/// positions, with the non-negative idf `ln(1 + (N - df + 0.5) / (df + 0.5))`.
/// Per-term values are added smallest first so that documents whose terms
/// contribute the same values tie exactly.
pub fn bm25_brute(docs: &[Vec<String>], query: &[String], k1: f64, b: f64) -> Vec<f64> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    docs.iter()
        .map(|d| {
            let dl = d.len() as f64;
            let mut parts: Vec<f64> = query
                .iter()
                .map(|q| {
                    let df = docs.iter().filter(|x| x.contains(q)).count() as f64;
                    let tf = d.iter().filter(|t| *t == q).count() as f64;
                    let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                    idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl))
                })
                .filter(|&w| w > 0.0)
                .collect();
            parts.sort_by(|x, y| x.partial_cmp(y).unwrap());
            parts.iter().sum()
        })
        .collect()
}

/// Document ids by descending score, ties by ascending id.
pub fn rank_brute(scores: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&x, &y| scores[y].partial_cmp(&scores[x]).unwrap().then(x.cmp(&y)));
    ids
}

/// Dice over explicit bit sets.
pub fn dice_brute(a: &[u32], b: &[u32]) -> f64 {
    let sa: std::collections::BTreeSet<_> = a.iter().collect();
    let sb: std::collections::BTreeSet<_> = b.iter().collect();
    2.0 * sa.intersection(&sb).count() as f64 / (sa.len() + sb.len()) as f64
}

pub fn multiset<T: Ord + Clone>(items: &[T]) -> BTreeMap<T, usize> {
    let mut m = BTreeMap::new();
    for x in items {
        *m.entry(x.clone()).or_insert(0) += 1;
    }
    m
}

/// Fingerprint oracle check over `mols` up to `radius`: identifier and
/// neighbourhood-text classes must coincide (a bijection per round) and each
/// molecule's identifier multiset must mirror its text multiset.
pub fn check_environment_bijection(mols: &[Molecule], radius: u32) -> Result<(), String> {
    use molrag_core::fingerprint::environment_ids;
    for r in 0..=radius as usize {
        let mut id_of: BTreeMap<String, u64> = BTreeMap::new();
        let mut text_of: BTreeMap<u64, String> = BTreeMap::new();
        for (mi, mol) in mols.iter().enumerate() {
            let ids = environment_ids(mol, radius);
            let texts = environment_strings(mol, radius);
            for a in 0..mol.atom_count() {
                let (id, text) = (ids[r][a], texts[r][a].clone());
                if let Some(&prev) = id_of.get(&text) {
                    if prev != id {
                        return Err(format!("molecule {mi} atom {a} round {r}: equal environments, different ids"));
                    }
                }
                if let Some(prev) = text_of.get(&id) {
                    if *prev != text {
                        return Err(format!("molecule {mi} atom {a} round {r}: id shared by different environments"));
                    }
                }
                id_of.insert(text.clone(), id);
                text_of.insert(id, text);
            }
            let by_id = multiset(&ids[r]);
            let by_text = multiset(&texts[r]);
            let mut a: Vec<usize> = by_id.values().copied().collect();
            let mut b: Vec<usize> = by_text.values().copied().collect();
            a.sort_unstable();
            b.sort_unstable();
            if a != b {
                return Err(format!("molecule {mi} round {r}: multiset shapes differ"));
            }
        }
    }
    Ok(())
}

/// Twenty molecules covering charges, isotopes, stereo marks, aromatic
/// heteroatoms and disconnected parts.
pub const FINGERPRINT_FIXTURE: [&str; 20] = [
    "C",
    "CCO",
    "CC(=O)O",
    "c1ccccc1",
    "Oc1ccccc1",
    "CC(=O)Oc1ccccc1C(=O)O",
    "CN1C=NC2=C1C(=O)N(C(=O)N2C)C",
    "C1CCC2CCCCC2C1",
    "N#Cc1ccc(cc1)C#N",
    "[NH4+].[Cl-]",
    "OC[C@H]1OC(O)[C@H](O)[C@@H](O)[C@@H]1O",
    "F/C=C/F",
    "c1ccc2[nH]ccc2c1",
    "CCN(CC)CC",
    "O=S(=O)(O)O",
    "C1CC1C1CC1",
    "[13CH3]C(=O)[O-]",
    "c1ccncc1",
    "CC(C)(C)c1ccc(O)cc1",
    "C#CC=CC=O",
];

// 20 pairs; the hand count of exact matches is 10 and of valid predictions 16.
// A Kekulé ring does not match its aromatic spelling: graphs are compared as written.
pub const EM_FIXTURE: [(&str, &str); 20] = [
    ("OCC", "CCO"),
    ("CCO", "CCO"),
    ("C1=CC=CC=C1", "c1ccccc1"),
    ("c1ccccc1O", "Oc1ccccc1"),
    ("CC(=O)O", "OC(C)=O"),
    ("N#CC", "CC#N"),
    ("C(Cl)(Cl)(Cl)Cl", "ClC(Cl)(Cl)Cl"),
    ("[NH4+]", "[NH4+]"),
    ("c1ccncc1", "n1ccccc1"),
    ("CCCO", "CC(C)O"),
    ("CCN", "CCO"),
    ("c1ccccc1", "c1ccncc1"),
    ("CC(=O)OC", "COC(C)=O"),
    ("C1CCCCC1", "C1CC1.C1CC1"),
    ("CC=O", "CCO"),
    ("C1CC", "CCC"),
    ("C(C)(C)(C)(C)C", "CC(C)(C)C"),
    ("", "CCO"),
    ("not a molecule", "CCO"),
    ("OC=O", "O=CO"),
];
