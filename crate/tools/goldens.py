#!/usr/bin/env python3
"""Independent reference computations for values frozen in the Rust tests.

Everything here is implemented directly from the metric/model definitions,
separately from the Rust code, so the two implementations cross-check each
other. Run from the repository root:

    python3 tools/goldens.py

Outputs:
  * crates/core/tests/fixtures/golden_vocab_30.txt  (vocabulary golden file)
  * a JSON dump on stdout with every other frozen value
"""

import json
import math
import os
from collections import Counter

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIXTURES = os.path.join(ROOT, "crates", "core", "tests", "fixtures")

RESERVED = ["<pad>", "<unk>", "<sos>", "<eos>", "<concat>"]
PUNCT = set(".!?,;")


# ---------------------------------------------------------------------------
# tokenization / corpus parsing
# ---------------------------------------------------------------------------

def tokenize(text):
    toks = []
    for piece in text.split():
        tail = []
        while len(piece) > 1 and piece[-1] in PUNCT:
            tail.append(piece[-1])
            piece = piece[:-1]
        toks.append(piece)
        toks.extend(reversed(tail))
    return toks


def parse_convai2(path):
    dialogues = []
    cur = None
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line:
                continue
            num, rest = line.split(" ", 1)
            if int(num) == 1:
                cur = {"personas": [], "turns": []}
                dialogues.append(cur)
            if rest.startswith("your persona: "):
                cur["personas"].append(rest[len("your persona: "):])
            elif rest.startswith("partner's persona: "):
                pass
            else:
                fields = rest.split("\t")
                cur["turns"].append((fields[0], fields[1]))
    return dialogues


def scan_tokens(dialogues):
    """All tokens in file order: personas first, then turn pairs."""
    for d in dialogues:
        for p in d["personas"]:
            yield from tokenize(p)
        for u, r in d["turns"]:
            yield from tokenize(u)
            yield from tokenize(r)


def build_vocab(dialogues, max_size):
    counts = {}
    order = {}
    for i, tok in enumerate(scan_tokens(dialogues)):
        counts[tok] = counts.get(tok, 0) + 1
        order.setdefault(tok, i)
    ranked = sorted(counts, key=lambda t: (-counts[t], order[t]))
    return RESERVED + ranked[:max_size]


# ---------------------------------------------------------------------------
# tf-idf fact selection
# ---------------------------------------------------------------------------

def build_df(dialogues):
    docs = [tokenize(p) for d in dialogues for p in d["personas"]]
    df = Counter()
    for doc in docs:
        for tok in set(doc):
            df[tok] += 1
    return df, len(docs)


def idf(tok, df, n_docs):
    return math.log((n_docs + 1) / (df.get(tok, 0) + 1)) + 1.0


def tfidf_vec(tokens, df, n_docs):
    tf = Counter(tokens)
    return {t: c * idf(t, df, n_docs) for t, c in tf.items()}


def cosine(a, b):
    dot = sum(v * b.get(k, 0.0) for k, v in a.items())
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def select_fact(facts, reference, df, n_docs):
    ref_vec = tfidf_vec(reference, df, n_docs)
    best, best_sim = 0, -1.0
    for i, fact in enumerate(facts):
        sim = cosine(tfidf_vec(fact, df, n_docs), ref_vec)
        if sim > best_sim:
            best, best_sim = i, sim
    return best


def examples(dialogues):
    """(context tokens, fact token lists, response tokens) per reply."""
    out = []
    for d in dialogues:
        facts = [tokenize(p) for p in d["personas"]]
        for t, (u, r) in enumerate(d["turns"]):
            if t == 0:
                ctx = tokenize(u)
            else:
                ctx = tokenize(d["turns"][t - 1][1]) + ["<concat>"] + tokenize(u)
            out.append((ctx, facts, tokenize(r)))
    return out


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(cands, refs):
    log_sum = 0.0
    for n in range(1, 5):
        matched = total = 0
        for c, r in zip(cands, refs):
            cg, rg = ngrams(c, n), ngrams(r, n)
            matched += sum(min(v, rg.get(g, 0)) for g, v in cg.items())
            total += max(0, len(c) - n + 1)
        if total == 0 or matched == 0:
            return 0.0
        log_sum += math.log(matched / total)
    c_len = sum(len(c) for c in cands)
    r_len = sum(len(r) for r in refs)
    if c_len == 0:
        return 0.0
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return 100.0 * bp * math.exp(log_sum / 4.0)


def lcs_len(a, b):
    dp = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                dp[i][j] = dp[i - 1][j - 1] + 1
            else:
                dp[i][j] = max(dp[i - 1][j], dp[i][j - 1])
    return dp[-1][-1]


def rouge_l(cands, refs, beta=1.2):
    total = 0.0
    for c, r in zip(cands, refs):
        lcs = lcs_len(c, r)
        p = lcs / len(c) if c else 0.0
        rec = lcs / len(r) if r else 0.0
        denom = rec + beta * beta * p
        f = ((1 + beta * beta) * rec * p / denom) if denom > 0 else 0.0
        total += f
    return 100.0 * total / len(cands)


def cider(cands, refs):
    m = len(refs)
    score = 0.0
    for n in range(1, 5):
        df = Counter()
        for r in refs:
            for g in ngrams(r, n):
                df[g] += 1

        def vec(tokens):
            return {g: c * (math.log(m) - math.log(max(1.0, df[g])))
                    for g, c in ngrams(tokens, n).items()}

        for c, r in zip(cands, refs):
            score += cosine(vec(c), vec(r))
    return 10.0 * score / (4 * m)


def distinct_n(cands, n):
    seen, total = set(), 0
    for c in cands:
        for i in range(len(c) - n + 1):
            seen.add(tuple(c[i:i + n]))
            total += max(0, 1)
    return len(seen) / total if total else 0.0


# ---------------------------------------------------------------------------
# main
# ---------------------------------------------------------------------------

def main():
    train = parse_convai2(os.path.join(FIXTURES, "convai2_micro_train.txt"))

    vocab = build_vocab(train, 30)
    with open(os.path.join(FIXTURES, "golden_vocab_30.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(vocab) + "\n")

    df, n_docs = build_df(train)

    exs = examples(train)
    fact_sel = [
        [select_fact(facts, ctx, df, n_docs), select_fact(facts, resp, df, n_docs)]
        for ctx, facts, resp in exs
    ]

    three_fact = {
        "facts": ["i like to ski", "my favorite color is red", "i have two dogs"],
        "reference": "what is your favorite color ?",
    }
    three_fact["index"] = select_fact(
        [tokenize(f) for f in three_fact["facts"]],
        tokenize(three_fact["reference"]),
        df,
        n_docs,
    )

    cands = [
        "i like to ski in the winter .",
        "my favorite color is red .",
        "i have two dogs and a cat .",
        "hello from sunny florida !",
    ]
    refs = [
        "i love to ski in the cold winter .",
        "my favorite color is blue .",
        "i have two dogs .",
        "hello there from sunny florida !",
    ]
    ct = [tokenize(c) for c in cands]
    rt = [tokenize(r) for r in refs]

    out = {
        "n_persona_docs": n_docs,
        "idf_unseen": idf("zzz-not-in-any-fact", df, n_docs),
        "fact_selection": fact_sel,
        "three_fact_index": three_fact["index"],
        "bleu": corpus_bleu(ct, rt),
        "bleu_identity": corpus_bleu(rt, rt),
        "rouge_l": rouge_l(ct, rt),
        "rouge_hand": rouge_l([["a", "b", "c", "d"]], [["a", "c", "d"]]),
        "cider": cider(ct, rt),
        "cider_identity": cider(rt, rt),
        "distinct": {str(n): distinct_n(ct, n) for n in (1, 2, 3, 4)},
        "vocab_len": len(vocab),
    }
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
