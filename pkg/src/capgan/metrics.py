"""Classical n-gram caption metrics and diversity statistics.

All functions operate on plain token-id sequences (sentence bodies, without
the END marker). Canonical definitions are used: clipped modified precision
with a brevity penalty for BLEU, the LCS F-measure for ROUGE-L, and TF-IDF
n-gram cosines scaled by 10 for CIDEr. Each is pinned by an independent
brute-force oracle in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigError


def ngram_counts(tokens, n: int) -> dict:
    """Counts of order-n n-grams; total count is max(0, len - n + 1)."""
    tokens = tuple(tokens)
    out: dict = {}
    for i in range(len(tokens) - n + 1):
        key = tokens[i : i + n]
        out[key] = out.get(key, 0) + 1
    return out


def modified_precision(candidate, refs, n: int):
    """Clipped n-gram matches: (sum_w min(h_cand, max_ref h_ref), sum_w h_cand)."""
    cand_counts = ngram_counts(candidate, n)
    if not cand_counts:
        return 0, 0
    max_ref: dict = {}
    for ref in refs:
        for gram, cnt in ngram_counts(ref, n).items():
            if cnt > max_ref.get(gram, 0):
                max_ref[gram] = cnt
    clipped = sum(min(cnt, max_ref.get(gram, 0)) for gram, cnt in cand_counts.items())
    return clipped, sum(cand_counts.values())


def closest_ref_length(cand_len: int, refs) -> int:
    # Standard tie-break: prefer the shorter reference on equal distance.
    return min((abs(len(r) - cand_len), len(r)) for r in refs)[1]


def _bleu_from_stats(clipped, total, cand_len, ref_len, max_n):
    if cand_len == 0 or any(c == 0 for c in clipped):
        return 0.0
    log_prec = sum(math.log(c / t) for c, t in zip(clipped, total)) / max_n
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_prec)


def bleu_sentence(candidate, refs, max_n: int = 4) -> float:
    """Sentence BLEU, no smoothing: any zero n-gram precision gives score 0."""
    candidate = tuple(candidate)
    stats = [modified_precision(candidate, refs, n) for n in range(1, max_n + 1)]
    clipped = [s[0] for s in stats]
    total = [max(s[1], 1) for s in stats]
    ref_len = closest_ref_length(len(candidate), refs)
    return _bleu_from_stats(clipped, total, len(candidate), ref_len, max_n)


def bleu_corpus(candidates, refs_list, max_n: int = 4) -> float:
    """Micro-averaged BLEU: clipped/total counts are pooled before the ratio."""
    if len(candidates) != len(refs_list):
        raise ValueError("candidates and reference sets must align")
    clipped = [0] * max_n
    total = [0] * max_n
    cand_len = 0
    ref_len = 0
    for cand, refs in zip(candidates, refs_list):
        cand = tuple(cand)
        cand_len += len(cand)
        ref_len += closest_ref_length(len(cand), refs)
        for n in range(1, max_n + 1):
            c, t = modified_precision(cand, refs, n)
            clipped[n - 1] += c
            total[n - 1] += t
    return _bleu_from_stats(clipped, [max(t, 1) for t in total], cand_len, ref_len, max_n)


def lcs_length(a, b) -> int:
    a, b = tuple(a), tuple(b)
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, refs, beta: float = 1.2) -> float:
    """Best LCS F-measure over the references."""
    candidate = tuple(candidate)
    best = 0.0
    for ref in refs:
        ref = tuple(ref)
        lcs = lcs_length(candidate, ref)
        if lcs == 0 or not candidate or not ref:
            continue
        rec = lcs / len(ref)
        prec = lcs / len(candidate)
        f = (1 + beta * beta) * rec * prec / (rec + beta * beta * prec)
        best = max(best, f)
    return best


def cider(candidates: dict, refs: dict, max_n: int = 4, scale: float = 10.0):
    """TF-IDF n-gram cosine consensus.

    candidates maps image id -> token sequence; refs maps image id -> list of
    token sequences. IDF is log(#images / #images whose refs contain the
    n-gram). Returns (per-image scores dict, corpus mean).
    """
    ids = sorted(candidates)
    if sorted(refs) != ids:
        raise ValueError("candidates and refs must cover the same image ids")
    m = len(ids)
    if m < 2:
        raise ConfigError("cider needs >= 2 images for the IDF to be defined")

    doc_freq: dict = {}
    for img in ids:
        grams = set()
        for ref in refs[img]:
            for n in range(1, max_n + 1):
                grams.update(ngram_counts(ref, n))
        for gram in grams:
            doc_freq[gram] = doc_freq.get(gram, 0) + 1

    def tfidf_vec(tokens, n):
        return {
            gram: cnt * math.log(m / max(doc_freq.get(gram, 0), 1))
            for gram, cnt in ngram_counts(tokens, n).items()
        }

    def cosine(u, v):
        dot = sum(w * v[g] for g, w in u.items() if g in v)
        nu = math.sqrt(sum(w * w for w in u.values()))
        nv = math.sqrt(sum(w * w for w in v.values()))
        if nu == 0.0 or nv == 0.0:
            return 0.0
        return dot / (nu * nv)

    per_image = {}
    for img in ids:
        acc = 0.0
        for n in range(1, max_n + 1):
            cand_vec = tfidf_vec(candidates[img], n)
            sims = [cosine(cand_vec, tfidf_vec(ref, n)) for ref in refs[img]]
            acc += sum(sims) / len(sims)
        per_image[img] = scale * acc / max_n
    return per_image, sum(per_image.values()) / m


def distinct_n(sentences, n: int) -> float:
    """Distinct n-grams over total n-grams across the sentence set."""
    sentences = list(sentences)
    if not sentences:
        raise ValueError("distinct_n needs a non-empty sentence set")
    seen = set()
    total = 0
    for s in sentences:
        counts = ngram_counts(s, n)
        seen.update(counts)
        total += sum(counts.values())
    return len(seen) / total if total else 0.0


@dataclass
class MetricReport:
    """Per-system scores in the shape of the paper-style comparison table."""

    system: str
    bleu3: float
    bleu4: float
    rouge_l: float
    cider: float
    distinct1: float
    distinct2: float
    extra: dict = field(default_factory=dict)  # learned-evaluator means, etc.

    def to_dict(self) -> dict:
        out = {
            "system": self.system,
            "bleu3": self.bleu3,
            "bleu4": self.bleu4,
            "rouge_l": self.rouge_l,
            "cider": self.cider,
            "distinct1": self.distinct1,
            "distinct2": self.distinct2,
        }
        out.update(self.extra)
        return out
