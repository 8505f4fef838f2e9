"""Regenerates the committed test fixtures under fixtures/.

Needs rdkit. Output is deterministic for a given rdkit version.

    python3 tools/make_fixtures.py
"""
import os
import random

from rdkit import Chem, DataStructs, RDConfig, RDLogger
from rdkit.Chem import AllChem, Descriptors, rdMolDescriptors

RDLogger.DisableLog("rdApp.*")

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "fixtures")
NCI = os.path.join(RDConfig.RDDataDir, "NCI", "first_5K.smi")
ORGANIC = {"C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "B"}

GROUPS = [
    ("[CX3](=O)[OX2H1]", "carboxylic acid", "a monocarboxylic acid"),
    ("[CX3](=O)[OX2][#6]", "ester", "a carboxylic ester"),
    ("[CX3](=O)[NX3]", "amide", "a carboxamide"),
    ("[NX3;H2][CX4]", "primary amine", "a primary amino compound"),
    ("[OX2H][CX4]", "alcohol", "a primary alcohol"),
    ("[OX2H]c", "phenol", "a member of phenols"),
    ("[CX3H1](=O)[#6]", "aldehyde", "an aldehyde"),
    ("[#6][CX3](=O)[#6]", "ketone", "a ketone"),
    ("[N+](=O)[O-]", "nitro group", "a C-nitro compound"),
    ("[F,Cl,Br,I]", "halogen", "an organohalogen compound"),
    ("[SX2H]", "thiol", "a thiol"),
    ("S(=O)(=O)[OX2H]", "sulfonic acid", "a sulfonic acid"),
    ("[OD2]([#6])[#6]", "ether", "an ether"),
    ("n", "aromatic nitrogen", "a nitrogen heterocycle"),
    ("C=C", "alkene", "an olefinic compound"),
]
ROLES = [
    "a metabolite", "an antibacterial agent", "a plant metabolite", "a solvent",
    "an antineoplastic agent", "a flavouring agent", "a human xenobiotic metabolite",
    "an enzyme inhibitor", "a fungicide", "a herbicide", "an antioxidant", "a dye",
]
PATTERNS = [(Chem.MolFromSmarts(s), name, cls) for s, name, cls in GROUPS]


def nci_molecules():
    with open(NCI) as fh:
        for line in fh:
            smi = line.split()[0]
            mol = Chem.MolFromSmiles(smi)
            if mol is not None:
                yield mol


def article(noun):
    return ("an " if noun[0] in "aeiou" else "a ") + noun


def caption(mol, rng):
    hits = [(name, cls) for patt, name, cls in PATTERNS if mol.HasSubstructMatch(patt)]
    rings = rdMolDescriptors.CalcNumRings(mol)
    arom = rdMolDescriptors.CalcNumAromaticRings(mol)
    formula = rdMolDescriptors.CalcMolFormula(mol)
    if hits:
        first = hits[0][1]
    elif arom:
        first = "an aromatic compound"
    else:
        first = "an organic compound"
    parts = ["The molecule is %s" % first]
    if len(hits) > 1:
        parts[0] += " that also carries %s" % " and ".join(article(n) for n, _ in hits[1:3])
    parts[0] += "."
    if rings:
        parts.append("It contains %d ring%s, %d of them aromatic." % (rings, "" if rings == 1 else "s", arom))
    else:
        parts.append("It is an acyclic compound.")
    parts.append("Its molecular formula is %s and its mass is %.1f." % (formula, Descriptors.MolWt(mol)))
    parts.append("It has a role as %s." % rng.choice(ROLES))
    if any(n == "carboxylic acid" for n, _ in hits):
        parts.append("It is a conjugate acid of a carboxylate anion.")
    return " ".join(parts)


def fingerprint(mol):
    return AllChem.GetMorganFingerprintAsBitVect(mol, 2, nBits=2048)


def analog(mol, rng):
    """One-atom edit: append a methyl to a carbon with an implicit hydrogen."""
    rw = Chem.RWMol(mol)
    sites = [a.GetIdx() for a in mol.GetAtoms() if a.GetSymbol() == "C" and a.GetTotalNumHs() > 0]
    if not sites:
        return None
    site = rng.choice(sites)
    new = rw.AddAtom(Chem.Atom(6))
    rw.AddBond(site, new, Chem.BondType.SINGLE)
    try:
        out = rw.GetMol()
        Chem.SanitizeMol(out)
    except Exception:
        return None
    return out


def main():
    os.makedirs(ROOT, exist_ok=True)
    rng = random.Random(20240501)
    mols = list(nci_molecules())

    corpus = [Chem.MolToSmiles(m) for m in mols[:3301]]
    with open(os.path.join(ROOT, "smiles_corpus.txt"), "w") as fh:
        fh.write("\n".join(corpus) + "\n")

    pool = [
        m for m in mols[3301:]
        if 6 <= m.GetNumHeavyAtoms() <= 30
        and all(a.GetSymbol() in ORGANIC for a in m.GetAtoms())
        and len(Chem.GetMolFrags(m)) == 1
    ]
    rng.shuffle(pool)
    train = pool[:250]
    novel = pool[250:260]
    train_fps = [fingerprint(m) for m in train]

    near = []
    for i in rng.sample(range(len(train)), len(train)):
        if len(near) == 40:
            break
        a = analog(train[i], rng)
        if a is None:
            continue
        sims = DataStructs.BulkDiceSimilarity(fingerprint(a), train_fps)
        order = sorted(range(len(sims)), key=lambda k: -sims[k])
        if order[0] == i and sims[i] - sims[order[1]] >= 0.15 and sims[i] < 1.0:
            near.append((a, i))

    rows_train = []
    for k, m in enumerate(train):
        rows_train.append(("%d" % (1000 + k), Chem.MolToSmiles(m), caption(m, rng)))
    rows_test, pairs = [], []
    for k, (m, parent) in enumerate(near):
        cid = "%d" % (5000 + k)
        rows_test.append((cid, Chem.MolToSmiles(m), caption(m, rng)))
        pairs.append((cid, rows_train[parent][0]))
    for k, m in enumerate(novel):
        rows_test.append(("%d" % (5100 + k), Chem.MolToSmiles(m), caption(m, rng)))

    for name, rows in (("chebi_train.tsv", rows_train), ("chebi_test.tsv", rows_test)):
        with open(os.path.join(ROOT, name), "w") as fh:
            fh.write("CID\tSMILES\tdescription\n")
            for r in rows:
                fh.write("\t".join(r) + "\n")
    with open(os.path.join(ROOT, "near_duplicates.tsv"), "w") as fh:
        fh.write("test_cid\ttrain_cid\n")
        for a, b in pairs:
            fh.write("%s\t%s\n" % (a, b))
    print(len(corpus), len(rows_train), len(rows_test), len(pairs))


if __name__ == "__main__":
    main()
