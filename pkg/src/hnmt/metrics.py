"""Corpus-level BLEU, chrF and TER.

These are internal development metrics and are not meant to reproduce any
official scorer exactly. Conventions:

* BLEU: lowercased, tokens are word runs or single punctuation marks; the
  geometric mean runs over the n-gram orders for which the hypotheses
  contain at least one n-gram (so a 3-word hypothesis is scored on orders
  1-3); no smoothing.
* chrF: spaces are removed before extracting character n-grams; precision
  and recall are averaged over the orders present in hypothesis or reference.
* TER: word-level Levenshtein plus greedy block shifts (cost 1 each) that
  may cross plateaus; greedy, so an upper bound on the optimal-shift value.
"""

import math
import re
from collections import Counter
from dataclasses import dataclass, field

from .errors import ContractError

_METRIC_TOKEN = re.compile(r"\w+|[^\w\s]")


def metric_tokens(text, lowercase=True):
    if lowercase:
        text = text.lower()
    return _METRIC_TOKEN.findall(text)


@dataclass
class MetricReport:
    name: str
    score: float
    sentence_scores: list = field(default_factory=list)
    components: dict = field(default_factory=dict)


def _check(hyps, refs):
    if len(hyps) != len(refs):
        raise ContractError(f"{len(hyps)} hypotheses vs {len(refs)} references")


def _ngrams(seq, n):
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


# ---------------------------------------------------------------------------
# BLEU


def bleu_from_components(matches, totals, hyp_len, ref_len):
    orders = [n for n in range(len(totals)) if totals[n] > 0]
    if hyp_len == 0:
        return 1.0 if ref_len == 0 else 0.0
    if any(matches[n] == 0 for n in orders):
        return 0.0
    log_p = sum(math.log(matches[n] / totals[n]) for n in orders) / len(orders)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_p)


def _bleu_stats(hyp, ref, max_n):
    matches, totals = [0] * max_n, [0] * max_n
    for n in range(1, max_n + 1):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        matches[n - 1] = sum(min(c, r[g]) for g, c in h.items())
        totals[n - 1] = max(len(hyp) - n + 1, 0)
    return matches, totals


def bleu(hypotheses, references, lowercase=True, max_n=4):
    _check(hypotheses, references)
    M, Tt = [0] * max_n, [0] * max_n
    hl = rl = 0
    per = []
    for h, r in zip(hypotheses, references):
        ht, rt = metric_tokens(h, lowercase), metric_tokens(r, lowercase)
        m, t = _bleu_stats(ht, rt, max_n)
        per.append(bleu_from_components(m, t, len(ht), len(rt)))
        M = [a + b for a, b in zip(M, m)]
        Tt = [a + b for a, b in zip(Tt, t)]
        hl += len(ht)
        rl += len(rt)
    return MetricReport(
        "bleu",
        bleu_from_components(M, Tt, hl, rl),
        per,
        {"matches": M, "totals": Tt, "hyp_len": hl, "ref_len": rl},
    )


# ---------------------------------------------------------------------------
# chrF


def chrf_from_components(matches, hyp_counts, ref_counts, beta=3.0):
    orders = [n for n in range(len(matches)) if hyp_counts[n] > 0 or ref_counts[n] > 0]
    if not orders:
        return 1.0, 1.0, 1.0
    P = sum(matches[n] / hyp_counts[n] if hyp_counts[n] else 0.0 for n in orders) / len(orders)
    R = sum(matches[n] / ref_counts[n] if ref_counts[n] else 0.0 for n in orders) / len(orders)
    return f_beta(P, R, beta), P, R


def f_beta(P, R, beta=3.0):
    b2 = beta * beta
    if P == 0.0 and R == 0.0:
        return 0.0
    return (1 + b2) * P * R / (b2 * P + R)


def _chrf_stats(hyp, ref, max_n):
    hyp, ref = hyp.replace(" ", ""), ref.replace(" ", "")
    m, hc, rc = [0] * max_n, [0] * max_n, [0] * max_n
    for n in range(1, max_n + 1):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        m[n - 1] = sum(min(c, r[g]) for g, c in h.items())
        hc[n - 1] = sum(h.values())
        rc[n - 1] = sum(r.values())
    return m, hc, rc


def chrf3(hypotheses, references, max_n=6, beta=3.0):
    _check(hypotheses, references)
    M, H, R = [0] * max_n, [0] * max_n, [0] * max_n
    per = []
    for h, r in zip(hypotheses, references):
        m, hc, rc = _chrf_stats(h, r, max_n)
        per.append(chrf_from_components(m, hc, rc, beta)[0])
        M = [a + b for a, b in zip(M, m)]
        H = [a + b for a, b in zip(H, hc)]
        R = [a + b for a, b in zip(R, rc)]
    f, p, rec = chrf_from_components(M, H, R, beta)
    return MetricReport(
        "chrf3", f, per,
        {"matches": M, "hyp_counts": H, "ref_counts": R, "precision": p, "recall": rec, "beta": beta},
    )


# ---------------------------------------------------------------------------
# TER


def edit_distance(a, b):
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def apply_shift(words, start, length, dest):
    """Move ``words[start:start+length]`` so it begins at ``dest`` of the remainder."""
    block = words[start : start + length]
    rest = words[:start] + words[start + length :]
    return rest[:dest] + block + rest[dest:]


MAX_SHIFT_SPAN = 10


def _ref_phrases(ref):
    phrases = set()
    for i in range(len(ref)):
        for n in range(1, min(MAX_SHIFT_SPAN, len(ref) - i) + 1):
            phrases.add(tuple(ref[i : i + n]))
    return phrases


def ter_edits(hyp, ref):
    """Greedy TER on token lists; returns ``(edits, shifts)`` with shifts included in edits.

    Each round tries every block of the hypothesis that also occurs as a
    phrase of the reference, moved to every other position, and takes the
    shift giving the smallest edit distance (first in scan order on ties).
    A shift is taken as long as it does not raise the total (edit distance +
    shifts so far), which lets the search cross plateaus where two shifts are
    needed before the total drops. Already visited word orders are skipped,
    at most ``len(hyp)`` shifts are made, and the best total seen is returned.
    """
    cur = list(hyp)
    phrases = _ref_phrases(ref)
    dist = edit_distance(cur, ref)
    shifts = 0
    best_total = (dist, 0)
    seen = {tuple(cur)}
    while dist > 0 and shifts < len(hyp):
        best = None
        for start in range(len(cur)):
            for length in range(1, min(MAX_SHIFT_SPAN, len(cur) - start) + 1):
                if tuple(cur[start : start + length]) not in phrases:
                    break
                for dest in range(len(cur) - length + 1):
                    if dest == start:
                        continue
                    cand = apply_shift(cur, start, length, dest)
                    if tuple(cand) in seen:
                        continue
                    d = edit_distance(cand, ref)
                    if best is None or d < best[0]:
                        best = (d, cand)
        if best is None or best[0] + 1 > dist:
            break
        dist, cur = best
        shifts += 1
        seen.add(tuple(cur))
        if dist + shifts < sum(best_total):
            best_total = (dist, shifts)
    return sum(best_total), best_total[1]


def ter(hypotheses, references):
    _check(hypotheses, references)
    total_edits = total_ref = total_shifts = 0
    per, edits = [], []
    for i, (h, r) in enumerate(zip(hypotheses, references)):
        ht, rt = metric_tokens(h, lowercase=False), metric_tokens(r, lowercase=False)
        if not rt:
            raise ContractError(f"reference {i} is empty")
        e, s = ter_edits(ht, rt)
        per.append(e / len(rt))
        edits.append((e, s, len(rt)))
        total_edits += e
        total_shifts += s
        total_ref += len(rt)
    return MetricReport(
        "ter",
        total_edits / total_ref if total_ref else 0.0,
        per,
        {"edits": total_edits, "shifts": total_shifts, "ref_words": total_ref, "sentences": edits},
    )
