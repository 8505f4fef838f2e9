"""Independent metric worksheet for the committed fixture pairs.

Writes fixtures/metric_worksheet.json. Every number is computed here from the
textbook definitions with plain Python, without the Rust code.

Hand check for caption pair 1 (words, lowercased):
  pred = the molecule is a primary alcohol            (6 tokens)
  ref  = the molecule is an alcohol                   (5 tokens)
  unigram overlap: the, molecule, is, alcohol = 4
  R1: P = 4/6, R = 4/5, F = 2*(2/3)*(4/5)/(2/3+4/5) = 0.727272...
  bigrams pred: the-molecule molecule-is is-a a-primary primary-alcohol
  bigrams ref : the-molecule molecule-is is-an an-alcohol
  overlap 2 -> P = 2/5, R = 2/4, F = 0.444444...
  LCS = the molecule is alcohol = 4 -> same as R1, 0.727272...
"""
import json
import math
import os
from collections import Counter

CAPTIONS = [
    ("The molecule is a primary alcohol", "The molecule is an alcohol"),
    ("It is a conjugate acid of an acetate", "It is a conjugate base of acetic acid"),
    ("The molecule is a ketone.", "The molecule is a ketone."),
    ("benzene ring with a hydroxy group", "A phenol is a benzene ring carrying a hydroxy group"),
    ("", "The molecule is an amide"),
]
SMILES = [
    ("CCO", "OCC"),
    ("CC(=O)O", "CC(=O)OC"),
    ("c1ccccc1", "c1ccccc1"),
    ("CCN(CC)CC", "CCNCC"),
    ("C1CC1", "C=CC"),
]
EPS = 1e-9


def words(s):
    return s.lower().split()


def chars(s):
    return list(s)


def ngrams(toks, n):
    return Counter(tuple(toks[i:i + n]) for i in range(len(toks) - n + 1))


def bleu(pairs, max_n, unit):
    matches = [0] * max_n
    totals = [0] * max_n
    c_len = r_len = 0
    for p, r in pairs:
        pt, rt = unit(p), unit(r)
        c_len += len(pt)
        r_len += len(rt)
        for n in range(1, max_n + 1):
            pc, rc = ngrams(pt, n), ngrams(rt, n)
            totals[n - 1] += sum(pc.values())
            matches[n - 1] += sum(min(c, rc[g]) for g, c in pc.items())
    if c_len == 0:
        return 0.0
    logs = 0.0
    for m, t in zip(matches, totals):
        prec = m / t if m > 0 else EPS / max(t, 1)
        logs += math.log(prec)
    bp = 1.0 if c_len > r_len else math.exp(1 - r_len / c_len)
    return bp * math.exp(logs / max_n)


def f1(overlap, c_total, r_total, equal):
    if c_total == 0 and r_total == 0:
        return 1.0 if equal else 0.0
    if overlap == 0:
        return 0.0
    p, r = overlap / c_total, overlap / r_total
    return 2 * p * r / (p + r)


def lcs(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a)):
        for j in range(len(b)):
            table[i + 1][j + 1] = table[i][j] + 1 if a[i] == b[j] else max(table[i][j + 1], table[i + 1][j])
    return table[len(a)][len(b)]


def rouge(pairs, unit):
    sums = [0.0, 0.0, 0.0]
    for p, r in pairs:
        pt, rt = unit(p), unit(r)
        eq = pt == rt
        for k, n in enumerate((1, 2)):
            pc, rc = ngrams(pt, n), ngrams(rt, n)
            ov = sum(min(c, rc[g]) for g, c in pc.items())
            sums[k] += f1(ov, sum(pc.values()), sum(rc.values()), eq)
        sums[2] += f1(lcs(pt, rt), len(pt), len(rt), eq)
    return [s / len(pairs) for s in sums]


def edit(a, b):
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def block(pairs, unit):
    r1, r2, rl = rouge(pairs, unit)
    return {
        "pairs": [list(p) for p in pairs],
        "bleu2": bleu(pairs, 2, unit),
        "bleu4": bleu(pairs, 4, unit),
        "rouge1": r1,
        "rouge2": r2,
        "rougeL": rl,
        "levenshtein": sum(edit(p, r) for p, r in pairs) / len(pairs),
    }


def main():
    assert edit("kitten", "sitting") == 3
    out = {
        "captions": block(CAPTIONS, words),
        "smiles": block(SMILES, chars),
    }
    path = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "fixtures", "metric_worksheet.json")
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2)
        fh.write("\n")
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
