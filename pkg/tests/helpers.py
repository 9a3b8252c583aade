"""Independent oracles and small fixtures shared by the test modules."""

import math
import re

import numpy as np

from hnmt.model import HNMTModel, ModelConfig, build_vocabularies
from hnmt.vocab import BOS_ID, EOS_ID, PAD_ID

# acceptance verdict lines, echoed in the terminal summary
RESULTS = []

TINY = dict(word_embed_dim=6, char_embed_dim=4, encoder_state_dim=5, decoder_state_dim=7, attention_dim=4)


# -- models ---------------------------------------------------------------------


def toy_pairs():
    return [
        (["a", "b", "c"], ["x", "y", "z"]),
        (["b", "a"], ["y", "x"]),
        (["c"], ["z"]),
        (["a", "a", "b"], ["x", "x", "y"]),
    ]


def tiny_model(seed=0, pairs=None, **overrides):
    pairs = pairs or toy_pairs()
    opts = dict(TINY, decoder_level="word")
    opts.update(overrides)
    cfg = ModelConfig(**opts)
    vocabs = build_vocabularies(pairs, cfg)
    return HNMTModel.from_vocabularies(cfg, vocabs, seed=seed)


# -- decoding -------------------------------------------------------------------


class ToyScorer:
    """Deterministic random scorer: next-symbol distribution and attention
    depend on the step index and the previous symbol only."""

    banned = (PAD_ID, BOS_ID)
    eos_id = EOS_ID

    def __init__(self, seed, vocab_size=7, src_len=3, max_steps=8, peaked=2.0):
        rng = np.random.default_rng(seed)
        self.vocab_size = vocab_size
        self.src_len = src_len
        logits = rng.normal(0.0, peaked, size=(max_steps, vocab_size, vocab_size))
        self.table = np.exp(logits) / np.exp(logits).sum(-1, keepdims=True)
        a = rng.normal(0.0, 1.5, size=(max_steps, vocab_size, src_len))
        self.att = np.exp(a) / np.exp(a).sum(-1, keepdims=True)

    def start(self, source):
        return np.zeros(1, dtype=np.int64)

    def step(self, state, prev_ids):
        prev = np.asarray(prev_ids)
        t = np.broadcast_to(state, prev.shape)
        return self.table[t, prev], t + 1, self.att[t, prev]

    def select(self, state, rows):
        return np.asarray(state)[np.asarray(rows)]

    def render(self, ids):
        return " ".join(f"s{i}" for i in ids)


class OneHotScorer(ToyScorer):
    """Always predicts ``symbol`` with probability 1 (EOS from step ``stop``)."""

    def __init__(self, symbol, vocab_size=6, stop=1):
        self.vocab_size = vocab_size
        self.symbol = symbol
        self.stop = stop
        self.src_len = 1

    def step(self, state, prev_ids):
        k = len(prev_ids)
        t = int(np.max(state)) if np.size(state) else 0
        p = np.zeros((k, self.vocab_size))
        p[:, EOS_ID if t >= self.stop else self.symbol] = 1.0
        return p, np.full(k, t + 1), np.ones((k, 1))


# -- metrics --------------------------------------------------------------------


def _shift(words, start, length, dest):
    block = words[start : start + length]
    rest = words[:start] + words[start + length :]
    return rest[:dest] + block + rest[dest:]


def levenshtein(a, b):
    d = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        d[i][0] = i
    for j in range(len(b) + 1):
        d[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return d[-1][-1]


def exhaustive_ter_edits(hyp, ref):
    """Minimum over any sequence of block shifts of (#shifts + Levenshtein).

    Breadth-first over word orders; a depth need not be explored once it
    cannot beat the best total found.
    """
    start = tuple(hyp)
    best = levenshtein(hyp, ref)
    seen = {start}
    frontier = [start]
    depth = 0
    while frontier and depth + 1 < best:
        depth += 1
        nxt = []
        for w in frontier:
            n = len(w)
            for s in range(n):
                for length in range(1, n - s + 1):
                    for dest in range(n - length + 1):
                        if dest == s:
                            continue
                        c = tuple(_shift(list(w), s, length, dest))
                        if c in seen:
                            continue
                        seen.add(c)
                        nxt.append(c)
                        best = min(best, depth + levenshtein(list(c), ref))
        frontier = nxt
    return best


def oracle_tokens(text):
    return re.findall(r"\w+|[^\w\s]", text.lower())


def oracle_bleu(hyps, refs, max_n=4):
    """Corpus BLEU by explicit n-gram enumeration (lists, no Counters)."""
    matches = [0] * max_n
    totals = [0] * max_n
    hl = rl = 0
    for h, r in zip(hyps, refs):
        ht, rt = oracle_tokens(h), oracle_tokens(r)
        hl += len(ht)
        rl += len(rt)
        for n in range(1, max_n + 1):
            hg = [tuple(ht[i : i + n]) for i in range(len(ht) - n + 1)]
            rg = [tuple(rt[i : i + n]) for i in range(len(rt) - n + 1)]
            totals[n - 1] += len(hg)
            for g in set(hg):
                matches[n - 1] += min(hg.count(g), rg.count(g))
    orders = [n for n in range(max_n) if totals[n] > 0]
    if hl == 0:
        return 1.0 if rl == 0 else 0.0
    if any(matches[n] == 0 for n in orders):
        return 0.0
    logp = sum(math.log(matches[n] / totals[n]) for n in orders) / len(orders)
    bp = 1.0 if hl > rl else math.exp(1 - rl / hl)
    return bp * math.exp(logp)


# -- numerics -------------------------------------------------------------------


def np_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def np_lstm_step(x, h, c, W, U, b):
    n = h.shape[-1]
    z = x @ W + h @ U + b
    i, f, g, o = (z[..., k * n : (k + 1) * n] for k in range(4))
    c2 = np_sigmoid(f) * c + np_sigmoid(i) * np.tanh(g)
    return np_sigmoid(o) * np.tanh(c2), c2
