"""Consensus caption metric: TF-IDF weighted n-gram cosine similarity.

Scores are averaged over n-gram orders 1..4 and scaled by 10, with document
frequencies computed over the reference corpus. Tokenization lowercases and
splits on whitespace/punctuation (no stemming).
"""

from __future__ import annotations

import math
import re
from collections import Counter, defaultdict
from typing import Mapping, Sequence

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def ngram_counts(tokens: Sequence[str], n_max: int = 4) -> Counter:
    counts: Counter = Counter()
    for n in range(1, n_max + 1):
        for i in range(len(tokens) - n + 1):
            counts[tuple(tokens[i : i + n])] += 1
    return counts


def _tfidf_vector(
    counts: Counter, doc_freq: Mapping[tuple, int], log_ref_count: float, n_max: int
) -> tuple[list[dict], list[float]]:
    vec: list[dict] = [defaultdict(float) for _ in range(n_max)]
    norm = [0.0] * n_max
    for ngram, tf in counts.items():
        idf = log_ref_count - math.log(max(1.0, doc_freq.get(ngram, 0)))
        n = len(ngram) - 1
        vec[n][ngram] = tf * idf
        norm[n] += vec[n][ngram] ** 2
    return vec, [math.sqrt(x) for x in norm]


def _similarity(vec_a, norm_a, vec_b, norm_b, n_max: int) -> list[float]:
    sims = [0.0] * n_max
    for n in range(n_max):
        if norm_a[n] == 0.0 or norm_b[n] == 0.0:
            continue
        dot = sum(w * vec_b[n].get(g, 0.0) for g, w in vec_a[n].items())
        sims[n] = dot / (norm_a[n] * norm_b[n])
    return sims


def cider(
    candidates: Mapping[str, str],
    references: Mapping[str, Sequence[str]],
    n_max: int = 4,
) -> tuple[dict[str, float], float]:
    """Score each candidate against its references; returns (per-id scores, corpus mean).

    ``references`` defines the corpus for document frequencies: an n-gram's
    frequency is the number of reference sets it appears in. Results are
    invariant to reference ordering and corpus iteration order.
    """
    if not references:
        raise ValueError("empty reference corpus")
    missing = set(candidates) - set(references)
    if missing:
        raise ValueError(f"candidates without references: {sorted(missing)[:5]}")

    ref_counts: dict[str, list[Counter]] = {
        rid: [ngram_counts(tokenize(r), n_max) for r in refs] for rid, refs in references.items()
    }
    for rid, counts in ref_counts.items():
        if not counts:
            raise ValueError(f"no reference texts for id {rid!r}")

    doc_freq: Counter = Counter()
    for counts in ref_counts.values():
        seen = set()
        for c in counts:
            seen.update(c.keys())
        for g in seen:
            doc_freq[g] += 1
    log_ref_count = math.log(float(len(references)))

    scores: dict[str, float] = {}
    for cid in sorted(candidates):
        cand_vec, cand_norm = _tfidf_vector(
            ngram_counts(tokenize(candidates[cid]), n_max), doc_freq, log_ref_count, n_max
        )
        acc = [0.0] * n_max
        for counts in ref_counts[cid]:
            ref_vec, ref_norm = _tfidf_vector(counts, doc_freq, log_ref_count, n_max)
            sims = _similarity(cand_vec, cand_norm, ref_vec, ref_norm, n_max)
            acc = [a + s for a, s in zip(acc, sims)]
        n_refs = len(ref_counts[cid])
        scores[cid] = 10.0 * sum(a / n_refs for a in acc) / n_max

    mean = sum(scores.values()) / len(scores) if scores else float("nan")
    return scores, mean
