"""Beam search, ensembling, n-best lists and forward/backward reranking.

Anything with the *scorer* interface can be decoded:

* ``start(source)`` -> decoder state for one hypothesis
* ``step(state, prev_ids)`` -> ``(probs (K, V), state, attention (K, S))``
* ``select(state, rows)`` -> state restricted/reordered to ``rows``
* ``vocab_size``, ``eos_id``, ``banned`` (ids never emitted), ``render(ids)``

``max_len`` counts content symbols; at step ``max_len`` only EOS may be
emitted, so every returned hypothesis is terminated. The length used by the
length penalty counts emitted symbols including EOS.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import average_parameters
from .errors import ContractError, ParameterError, ParseError
from .model import EncodedSource
from .vocab import BOS_ID, EOS_ID, PAD_ID

COVERAGE_FLOOR = 1e-12
EXHAUSTIVE_CAP = 10**6


@dataclass
class Hypothesis:
    ids: tuple = ()
    logprob: float = 0.0
    attention: list = field(default_factory=list)
    state: object = None
    finished: bool = False
    surface: str = None
    score: float = None

    def __len__(self):
        return len(self.ids) + (1 if self.finished else 0)


@dataclass
class PenaltyConfig:
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        for k in ("alpha", "beta", "gamma"):
            if getattr(self, k) < 0:
                raise ParameterError(f"penalty {k} must be >= 0")


def length_penalty(n, alpha):
    return ((5.0 + n) ** alpha) / (6.0 ** alpha)


def apply_penalties(h, cfg=None):
    """Final score of a finished hypothesis.

    ``logP / lp(|h|) + beta * sum_j log min(cov_j, 1) - gamma * sum_j max(cov_j - 1, 0)``
    where ``cov_j`` is the total attention source position ``j`` received.
    """
    cfg = cfg or PenaltyConfig()
    score = h.logprob
    if cfg.alpha:
        score /= length_penalty(len(h), cfg.alpha)
    if (cfg.beta or cfg.gamma) and len(h.attention):
        cov = np.sum(np.asarray(h.attention, dtype=np.float64), axis=0)
        if cfg.beta:
            score += cfg.beta * float(np.sum(np.log(np.maximum(np.minimum(cov, 1.0), COVERAGE_FLOOR))))
        if cfg.gamma:
            score -= cfg.gamma * float(np.sum(np.maximum(cov - 1.0, 0.0)))
    return score


# ---------------------------------------------------------------------------
# scorers


class ModelScorer:
    """Adapts an :class:`HNMTModel` to the scorer interface."""

    banned = (PAD_ID, BOS_ID)
    eos_id = EOS_ID

    def __init__(self, model):
        self.model = model
        self.vocab = model.trg_vocab
        self.vocab_size = len(model.trg_vocab)

    def start(self, source):
        enc = self.model.encode([list(source)])
        return {"enc": enc, "rec": self.model.decoder.initial_state(enc), "cache": {}}

    def _expanded(self, state, k):
        enc = state["enc"]
        if k == 1:
            return enc
        hit = state["cache"].get(k)
        if hit is None:
            rep = lambda a: np.repeat(a, k, axis=0)
            hit = EncodedSource(
                annotations=T.Tensor(rep(enc.annotations.data)),
                projected=T.Tensor(rep(enc.projected.data)),
                mask=rep(enc.mask),
                final_backward=T.Tensor(rep(enc.final_backward.data)),
                lengths=enc.lengths * k,
            )
            state["cache"] = {k: hit}
        return hit

    def step(self, state, prev_ids):
        prev_ids = np.asarray(prev_ids, dtype=np.int64)
        enc = self._expanded(state, len(prev_ids))
        probs, rec, w = self.model.step_distribution(enc, state["rec"], prev_ids)
        return probs, {"enc": state["enc"], "rec": rec, "cache": state["cache"]}, w

    def select(self, state, rows):
        rows = np.asarray(rows, dtype=np.int64)
        rec = tuple(T.Tensor(t.data[rows]) for t in state["rec"])
        return {"enc": state["enc"], "rec": rec, "cache": state["cache"]}

    def render(self, ids):
        return self.model.render(list(ids))


def combine_distributions(dists):
    """Arithmetic mean of probability distributions (probability space)."""
    dists = [np.asarray(d) for d in dists]
    if not dists:
        raise ContractError("no distributions to combine")
    if len(dists) == 1:
        return dists[0]
    shape = dists[0].shape
    for d in dists[1:]:
        if d.shape != shape:
            raise ContractError(f"distribution shapes differ: {d.shape} vs {shape}")
    acc = np.zeros(shape, dtype=np.float64)
    for d in dists:
        acc += d
    return acc / len(dists)


class Ensemble:
    """Proper ensemble: members' next-symbol distributions are averaged."""

    def __init__(self, members):
        members = list(members)
        if not members:
            raise ContractError("an ensemble needs at least one member")
        first = members[0]
        for m in members[1:]:
            va, vb = getattr(first, "vocab", None), getattr(m, "vocab", None)
            if m.vocab_size != first.vocab_size or (va is not None and vb is not None and va != vb):
                raise ContractError("ensemble members have different target vocabularies")
            if m.eos_id != first.eos_id:
                raise ContractError("ensemble members disagree on the EOS id")
        self.members = members
        self.vocab_size = first.vocab_size
        self.eos_id = first.eos_id
        self.banned = tuple(sorted(set().union(*(set(m.banned) for m in members))))
        self.vocab = getattr(first, "vocab", None)

    def start(self, source):
        return [m.start(source) for m in self.members]

    def step(self, state, prev_ids):
        outs = [m.step(s, prev_ids) for m, s in zip(self.members, state)]
        probs = combine_distributions([o[0] for o in outs])
        att = combine_distributions([o[2] for o in outs])
        return probs, [o[1] for o in outs], att

    def select(self, state, rows):
        return [m.select(s, rows) for m, s in zip(self.members, state)]

    def render(self, ids):
        return self.members[0].render(ids)


@dataclass
class EnsembleSpec:
    """Groups of savepoints: average within a group, ensemble across groups."""

    groups: list

    def __post_init__(self):
        if not self.groups or any(len(g) == 0 for g in self.groups):
            raise ContractError("an ensemble spec needs >= 1 nonempty group")

    def models(self):
        return [average_parameters(g).to_model() for g in self.groups]

    def build(self):
        models = self.models()
        trg = models[0].trg_vocab
        for m in models[1:]:
            if m.trg_vocab != trg:
                raise ContractError("ensemble groups have different target vocabularies")
        scorers = [ModelScorer(m) for m in models]
        return scorers[0] if len(scorers) == 1 else Ensemble(scorers)


def as_scorer(obj):
    if isinstance(obj, EnsembleSpec):
        return obj.build()
    if hasattr(obj, "step_distribution"):
        return ModelScorer(obj)
    if isinstance(obj, (list, tuple)):
        return Ensemble(as_scorer(o) for o in obj)
    return obj


def ensemble_predict(members, source, prefix=()):
    """Next-symbol distribution after ``prefix`` given ``source``.

    ``members`` may be an :class:`EnsembleSpec`, a scorer, or a list of
    models/scorers (each one group). The result is the mean of the groups'
    distributions.
    """
    scorer = as_scorer(members)
    state = scorer.start(source)
    prev = BOS_ID
    probs = None
    for sym in list(prefix) + [None]:
        probs, state, _ = scorer.step(state, [prev])
        prev = sym
    return np.asarray(probs[0], dtype=np.float64)


# ---------------------------------------------------------------------------
# search


def _log(probs):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(probs, dtype=np.float64))


def _allowed(scorer, t, max_len):
    allow = np.ones(scorer.vocab_size, dtype=bool)
    allow[list(scorer.banned)] = False
    if t >= max_len:
        allow[:] = False
        allow[scorer.eos_id] = True
    return allow


def _default_max_len(source):
    return 2 * len(source) + 10


def beam_candidates(scorer, source, beam_size=10, max_len=None):
    """All finished hypotheses left in the beam when search ends.

    Expansion keeps the ``beam_size`` best candidates by raw log-probability;
    finished hypotheses compete for the same slots.
    """
    if beam_size < 1:
        raise ParameterError("beam_size must be >= 1")
    scorer = as_scorer(scorer)
    max_len = _default_max_len(source) if max_len is None else max_len
    if max_len < 0:
        raise ParameterError("max_len must be >= 0")
    state = scorer.start(source)
    live = [Hypothesis(state=None)]
    prev = [BOS_ID]
    finished = []
    for t in range(max_len + 1):
        if not live:
            break
        probs, state, att = scorer.step(state, prev)
        logp = _log(probs)
        logp[:, ~_allowed(scorer, t, max_len)] = -np.inf
        cands = [(h.logprob, h.ids, -1, -1, h) for h in finished]
        for k, h in enumerate(live):
            row = logp[k]
            for v in np.flatnonzero(np.isfinite(row)):
                cands.append((h.logprob + row[v], h.ids + (int(v),), k, int(v), None))
        cands.sort(key=lambda c: (-c[0], c[1]))
        cands = cands[:beam_size]
        parents = live
        finished, live, rows, prev = [], [], [], []
        for lp, ids, k, v, old in cands:
            if old is not None:
                finished.append(old)
                continue
            attention = parents[k].attention + [att[k]]
            if v == scorer.eos_id:
                finished.append(Hypothesis(ids[:-1], lp, attention, None, True))
            else:
                live.append(Hypothesis(ids, lp, attention))
                rows.append(k)
                prev.append(v)
        if live:
            state = scorer.select(state, rows)
    return finished


def _rank(hyps, scorer, penalties, n_best):
    for h in hyps:
        h.score = apply_penalties(h, penalties)
        if h.surface is None:
            h.surface = scorer.render(h.ids)
    ranked = sorted(hyps, key=lambda h: (-h.score, h.ids))
    seen, out = set(), []
    for h in ranked:
        if h.surface in seen:
            continue
        seen.add(h.surface)
        out.append(h)
        if n_best is not None and len(out) >= n_best:
            break
    return out


@dataclass
class NBestList:
    sentence_id: int
    hypotheses: list

    def __len__(self):
        return len(self.hypotheses)

    def __iter__(self):
        return iter(self.hypotheses)

    @property
    def best(self):
        return self.hypotheses[0] if self.hypotheses else None


def beam_search(scorer, source, beam_size=10, max_len=None, penalties=None, n_best=None,
                sentence_id=0):
    """Decode one sentence; returns an :class:`NBestList` ranked by final score.

    Hypotheses with the same surface string collapse to the best-scoring one
    before truncation to ``n_best`` (default ``beam_size``).
    """
    scorer = as_scorer(scorer)
    found = beam_candidates(scorer, source, beam_size, max_len)
    return NBestList(sentence_id, _rank(found, scorer, penalties, n_best or beam_size))


def translate(scorer, sources, beam_size=10, max_len=None, penalties=None):
    scorer = as_scorer(scorer)
    out = []
    for src in sources:
        best = beam_search(scorer, src, beam_size, max_len, penalties, n_best=1).best
        out.append(best.surface if best else "")
    return out


def exhaustive_search(scorer, source, max_len, penalties=None, return_all=False):
    """Score every terminated sequence of at most ``max_len`` content symbols.

    Returns the penalty-scored argmax (ties toward the smaller id sequence),
    or every scored hypothesis when ``return_all`` is set.
    """
    scorer = as_scorer(scorer)
    if max_len < 0:
        raise ParameterError("max_len must be >= 0")
    if scorer.vocab_size ** max_len > EXHAUSTIVE_CAP:
        raise ParameterError(
            f"search space {scorer.vocab_size}^{max_len} exceeds {EXHAUSTIVE_CAP}"
        )
    state = scorer.start(source)
    level = [Hypothesis()]
    prev = [BOS_ID]
    done = []
    for t in range(max_len + 1):
        if not level:
            break
        probs, state, att = scorer.step(state, prev)
        logp = _log(probs)
        allow = _allowed(scorer, t, max_len)
        nxt, rows, prev = [], [], []
        for k, h in enumerate(level):
            attention = h.attention + [att[k]]
            done.append(Hypothesis(h.ids, h.logprob + logp[k, scorer.eos_id], attention, None, True))
            for v in np.flatnonzero(allow):
                if v == scorer.eos_id:
                    continue
                nxt.append(Hypothesis(h.ids + (int(v),), h.logprob + logp[k, v], attention))
                rows.append(k)
                prev.append(int(v))
        level = nxt
        if level:
            state = scorer.select(state, rows)
    for h in done:
        h.score = apply_penalties(h, penalties)
        h.surface = scorer.render(h.ids)
    if return_all:
        return done
    return min(done, key=lambda h: (-h.score, h.ids))


# ---------------------------------------------------------------------------
# penalty tuning


def _metric_value(metric, hyps, refs):
    v = metric(hyps, refs)
    return float(getattr(v, "score", v))


def penalty_grid_search(scorer, sources, references, metric, alphas=(0.0,), betas=(0.0,),
                        gammas=(0.0,), beam_size=10, max_len=None):
    """Scan alpha (outermost), beta, gamma; return ``(best PenaltyConfig, table)``.

    The beam is penalty-independent, so each sentence is searched once and
    only the final ranking is redone per grid point. Ties go to the first
    configuration in scan order. ``table`` lists ``(config, metric value)``.
    """
    if not sources:
        raise ParameterError("empty development set")
    if len(sources) != len(references):
        raise ContractError("sources and references differ in length")
    if not alphas or not betas or not gammas:
        raise ParameterError("penalty grids must be nonempty")
    scorer = as_scorer(scorer)
    found = [beam_candidates(scorer, s, beam_size, max_len) for s in sources]
    table, best = [], None
    for a, b, g in itertools.product(alphas, betas, gammas):
        cfg = PenaltyConfig(a, b, g)
        hyps = []
        for cands in found:
            top = _rank([Hypothesis(h.ids, h.logprob, h.attention, None, True, h.surface) for h in cands],
                        scorer, cfg, 1)
            hyps.append(top[0].surface if top else "")
        value = _metric_value(metric, hyps, references)
        table.append((cfg, value))
        if best is None or value > best[1]:
            best = (cfg, value)
    return best[0], table


# ---------------------------------------------------------------------------
# forward/backward reranking


@dataclass
class RerankResult:
    surface: str
    provenance: str          # "both", "forward" or "backward"
    logprob: float


def fb_rerank(forward, backward):
    """Pick one translation from a forward and a backward n-best list.

    A surface string present in both lists wins; among those the highest
    forward + backward log-probability is chosen (ties: smallest string).
    Without overlap the single most likely hypothesis of either list is
    returned (ties: forward).
    """
    fwd = {}
    for h in forward:
        if h.surface not in fwd or h.logprob > fwd[h.surface]:
            fwd[h.surface] = h.logprob
    bwd = {}
    for h in backward:
        if h.surface not in bwd or h.logprob > bwd[h.surface]:
            bwd[h.surface] = h.logprob
    if not fwd and not bwd:
        raise ContractError("both n-best lists are empty")
    common = [(fwd[s] + bwd[s], s) for s in fwd if s in bwd]
    if common:
        best = min(common, key=lambda c: (-c[0], c[1]))
        return RerankResult(best[1], "both", best[0])
    f = min(fwd.items(), key=lambda kv: (-kv[1], kv[0])) if fwd else None
    b = min(bwd.items(), key=lambda kv: (-kv[1], kv[0])) if bwd else None
    if b is None or (f is not None and f[1] >= b[1]):
        return RerankResult(f[0], "forward", f[1])
    return RerankResult(b[0], "backward", b[1])


def rerank_corpus(forward_lists, backward_lists):
    """Rerank sentence by sentence; returns ``(results, provenance counts)``."""
    forward_lists, backward_lists = list(forward_lists), list(backward_lists)
    if len(forward_lists) != len(backward_lists):
        raise ContractError("forward and backward n-best files cover different sentence counts")
    results = [fb_rerank(f, b) for f, b in zip(forward_lists, backward_lists)]
    counts = {"forward": 0, "backward": 0, "both": 0}
    for r in results:
        counts[r.provenance] += 1
    return results, counts


# ---------------------------------------------------------------------------
# n-best files


def write_nbest(lists, path):
    """Write ``id ||| surface ||| logprob`` lines (log-probability with 6 decimals)."""
    if isinstance(lists, NBestList):
        lists = [lists]
    with open(path, "w", encoding="utf-8") as f:
        for nb in lists:
            for h in nb.hypotheses:
                if "|||" in h.surface or "\n" in h.surface:
                    raise ContractError(f"surface of sentence {nb.sentence_id} cannot be written: {h.surface!r}")
                f.write(f"{nb.sentence_id} ||| {h.surface} ||| {h.logprob:.6f}\n")


def read_nbest(path):
    """Parse an n-best file into a list of :class:`NBestList`, in file order."""
    lists = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            line = line.rstrip("\n")
            parts = line.split(" ||| ")
            if len(parts) != 3:
                raise ParseError(f"{path}:{n}: expected 'id ||| surface ||| logprob', got {line!r}")
            try:
                sid, lp = int(parts[0]), float(parts[2])
            except ValueError as e:
                raise ParseError(f"{path}:{n}: {e}") from e
            if not math.isfinite(lp) and lp != -math.inf:
                raise ParseError(f"{path}:{n}: bad log-probability {parts[2]!r}")
            if not lists or lists[-1].sentence_id != sid:
                if any(nb.sentence_id == sid for nb in lists):
                    raise ParseError(f"{path}:{n}: entries for sentence {sid} are not contiguous")
                lists.append(NBestList(sid, []))
            lists[-1].hypotheses.append(Hypothesis(logprob=lp, finished=True, surface=parts[1], score=lp))
    return lists
