"""Minibatch Adam training with periodic savepoints."""

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .checkpoint import Savepoint
from .errors import IngestionError, ParameterError, TrainingError
from .layers import AdamState, adam_step
from .metrics import bleu, chrf3

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    steps: int = 1000
    savepoint_interval: int = 5000
    lr: float = 1e-3
    clip_norm: float = 5.0
    seed: int = 0
    max_time: float = None        # seconds; checked between steps
    bucket_factor: int = 20       # batches per length-sorted bucket
    score_heldout: bool = True    # decode heldout for BLEU/chrF3 (cross-entropy is always computed)
    decode_max_len: int = None
    model_id: str = "model"
    log_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.steps < 0 or self.savepoint_interval < 1:
            raise ParameterError("batch_size and savepoint_interval must be >= 1, steps >= 0")


def read_parallel(source_path, target_path):
    """Line-aligned UTF-8 corpora -> list of (source line, target line)."""
    def lines(path):
        with open(path, "rb") as f:
            raw = f.read()
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as e:
            line = raw[: e.start].count(b"\n") + 1
            raise IngestionError(f"{path}:{line}: invalid UTF-8 at byte {e.start}") from e
        out = text.split("\n")
        if out and out[-1] == "":
            out.pop()
        return out

    src, trg = lines(source_path), lines(target_path)
    if len(src) != len(trg):
        n = min(len(src), len(trg)) + 1
        longer = source_path if len(src) > len(trg) else target_path
        raise IngestionError(
            f"corpora are misaligned: {source_path} has {len(src)} lines, {target_path} has "
            f"{len(trg)}; line {n} of {longer} has no counterpart"
        )
    return list(zip(src, trg))


def check_pairs(corpus):
    for n, (s, t) in enumerate(corpus, 1):
        if not s or not t:
            raise IngestionError(f"pair {n}: empty {'source' if not s else 'target'} side")


def batches(corpus, batch_size, rng, bucket_factor=20):
    """Endless stream of length-bucketed minibatches (lists of pairs)."""
    n = len(corpus)
    while True:
        order = rng.permutation(n)
        chunk = batch_size * bucket_factor
        epoch = []
        for i in range(0, n, chunk):
            part = sorted(order[i : i + chunk], key=lambda j: len(corpus[j][0]))
            epoch.extend(part[k : k + batch_size] for k in range(0, len(part), batch_size))
        for b in rng.permutation(len(epoch)):
            yield [corpus[j] for j in epoch[b]]


def clip_gradients(params, max_norm):
    total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for p in params:
            p.grad *= scale
    return total


def heldout_cross_entropy(model, pairs, batch_size=64):
    """Mean per-token NLL (nats) over a heldout set, EOS included."""
    total, count = 0.0, 0
    for i in range(0, len(pairs), batch_size):
        for lp in model.token_logprobs(pairs[i : i + batch_size]):
            total -= float(lp.sum())
            count += len(lp)
    return total / max(count, 1)


def evaluate(model, heldout, decode=True, max_len=None, batch_size=64):
    scores = {"cross_entropy": heldout_cross_entropy(model, heldout, batch_size)}
    if decode:
        hyps, refs = [], []
        for i in range(0, len(heldout), batch_size):
            chunk = heldout[i : i + batch_size]
            for ids, (_, t) in zip(model.greedy([s for s, _ in chunk], max_len), chunk):
                hyps.append(model.render(ids))
                refs.append(model.trg_vocab.surface(list(t)))
        scores["bleu"] = bleu(hyps, refs).score
        scores["chrf3"] = chrf3(hyps, refs).score
    return scores


def train(model, corpus, config=None, heldout=None, adam=None):
    """Train in place and return the savepoints taken.

    ``corpus`` holds (source tokens, target symbols) pairs. A savepoint of the
    initial parameters is always recorded at step 0, then one every
    ``savepoint_interval`` steps, and a final one if the last step is off
    schedule.
    """
    cfg = config or TrainConfig()
    corpus = list(corpus)
    if not corpus:
        raise IngestionError("empty training corpus")
    check_pairs(corpus)
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    adam = adam or AdamState.init(params, lr=cfg.lr)
    heldout = list(heldout or [])

    def snapshot(step):
        scores = evaluate(model, heldout, cfg.score_heldout, cfg.decode_max_len) if heldout else {}
        return Savepoint.of(model, step=step, scores=scores, model_id=cfg.model_id)

    savepoints = [snapshot(0)]
    stream = batches(corpus, cfg.batch_size, rng, cfg.bucket_factor)
    start = time.monotonic()
    step = 0
    while step < cfg.steps:
        if cfg.max_time is not None and time.monotonic() - start > cfg.max_time:
            log.info("time budget reached after %d steps", step)
            break
        batch = next(stream)
        model.zero_grad()
        with T.Tape() as tape:
            loss = model.compute_loss(batch, rng)
            value = loss.item()
            if not math.isfinite(value):
                lengths = [(len(s), len(t)) for s, t in batch]
                raise TrainingError(
                    f"non-finite loss {value} at step {step + 1}; batch lengths {lengths}"
                )
            tape.backward(loss)
        norm = clip_gradients(params, cfg.clip_norm)
        if not math.isfinite(norm):
            raise TrainingError(f"non-finite gradient norm at step {step + 1}")
        adam_step(adam, params)
        step += 1
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("step %d loss %.4f grad-norm %.3f", step, value, norm)
        if step % cfg.savepoint_interval == 0:
            savepoints.append(snapshot(step))
    if savepoints[-1].step != step:
        savepoints.append(snapshot(step))
    return savepoints
