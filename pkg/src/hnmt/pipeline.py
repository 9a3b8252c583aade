"""Corpus-level orchestration: data mixing, backtranslation, pre-translation, run configs."""

import json
import logging
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError, ContractError, IngestionError, ParameterError
from .segmentation import (
    bpe_apply,
    detokenize,
    detruecase,
    expand_contractions,
    normalize,
    retokenize_hyphens,
    tokenize,
    truecase_apply,
)

log = logging.getLogger(__name__)

REGIMES = ("None", "Only", "Balanced", "All")
PT_MARKER = "▁PT"


# ---------------------------------------------------------------------------
# data mixing


@dataclass
class DataMix:
    regime: str
    parallel: list
    synthetic: list = None

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ParameterError(f"unknown data regime {self.regime!r}; expected one of {REGIMES}")
        if self.regime != "None" and self.synthetic is None:
            raise ParameterError(f"regime {self.regime} needs a synthetic corpus")


def mix(data, seed=0):
    """Assemble the training corpus for a regime (deterministic given ``seed``).

    ``Balanced`` draws as many synthetic pairs as there are parallel ones,
    uniformly without replacement, and appends them after the parallel data.
    """
    parallel = list(data.parallel)
    synthetic = list(data.synthetic or [])
    if data.regime == "None":
        return parallel
    if data.regime == "Only":
        return synthetic
    if data.regime == "All":
        return parallel + synthetic
    if len(synthetic) < len(parallel):
        log.warning("only %d synthetic pairs for %d parallel ones; using all of them",
                    len(synthetic), len(parallel))
        return parallel + synthetic
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(len(synthetic), size=len(parallel), replace=False))
    return parallel + [synthetic[i] for i in pick]


# ---------------------------------------------------------------------------
# backtranslation


@dataclass
class Backtranslation:
    pairs: list            # (synthetic source, original target)
    skipped: list          # input line indices (0-based) that failed
    provenance: dict

    def write(self, source_path, target_path):
        with open(source_path, "w", encoding="utf-8") as fs, open(target_path, "w", encoding="utf-8") as ft:
            for s, t in self.pairs:
                fs.write(s + "\n")
                ft.write(t + "\n")
        with open(source_path + ".provenance.json", "w", encoding="utf-8") as f:
            json.dump(self.provenance, f, indent=2, ensure_ascii=False)


def backtranslate(translate_line, lines, label="reverse-model"):
    """Translate monolingual target-side lines with a reverse system.

    ``translate_line`` maps one target-language line to a source-language
    line. Lines on which it raises (or returns an empty string for a
    nonempty input) are skipped and their indices logged.
    """
    pairs, skipped = [], []
    lines = list(lines)
    for i, line in enumerate(lines):
        try:
            out = translate_line(line)
            if not isinstance(out, str) or (line.strip() and not out.strip()):
                raise ValueError("empty translation")
        except Exception as e:  # any failure of the reverse system skips one line
            log.warning("backtranslation failed on line %d: %s", i + 1, e)
            skipped.append(i)
            continue
        pairs.append((out, line))
    provenance = {
        "synthetic": True,
        "system": label,
        "input_lines": len(lines),
        "output_lines": len(pairs),
        "skipped_lines": [i + 1 for i in skipped],
    }
    log.info("backtranslated %d of %d lines", len(pairs), len(lines))
    return Backtranslation(pairs, skipped, provenance)


# ---------------------------------------------------------------------------
# pre-translation


def pretranslate_concat(source, pretranslation, marker=PT_MARKER):
    """Append a marked pre-translation to a token sequence."""
    source, pretranslation = list(source), list(pretranslation)
    if not source or not pretranslation:
        raise ContractError("source and pre-translation must both be nonempty")
    for tok in source + pretranslation:
        if tok.endswith(marker):
            raise IngestionError(f"token {tok!r} already ends with the marker {marker!r}")
    return source + [tok + marker for tok in pretranslation]


def strip_pretranslation(tokens, marker=PT_MARKER):
    """Split an extended sequence back into ``(source, pretranslation)``."""
    source = [t for t in tokens if not t.endswith(marker)]
    pre = [t[: -len(marker)] for t in tokens if t.endswith(marker)]
    return source, pre


# ---------------------------------------------------------------------------
# text pipeline


def preprocess_line(line, truecaser=None, bpe=None, contractions=False):
    tokens = tokenize(normalize(line))
    if contractions:
        tokens = expand_contractions(tokens)
    if truecaser is not None:
        tokens = truecase_apply(truecaser, tokens)
    if bpe is not None:
        tokens = bpe_apply(bpe, tokens)
    return " ".join(tokens)


def postprocess_line(line, hyphen_scorer=None, truecased=True):
    """Detokenize (optionally repairing hyphen spacing) and restore casing."""
    tokens = line.split()
    if truecased:
        tokens = detruecase(tokens)
    text = detokenize(tokens)
    if hyphen_scorer is not None:
        text = retokenize_hyphens(text, hyphen_scorer)
    return text


def model_sentence_scorer(model, source_tokens, bpe=None):
    """Score candidate target sentences with a model, for hyphen repair."""
    def score(sentence):
        vocab = model.trg_vocab
        if vocab.level == "char":
            symbols = list(sentence)
        elif vocab.level == "bpe" and bpe is not None:
            symbols = bpe_apply(bpe, sentence.split())
        else:
            symbols = sentence.split()
        return model.score(list(source_tokens), symbols)
    return score


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    train_source: str = ""
    train_target: str = ""
    dev_source: str = ""
    dev_target: str = ""
    output_dir: str = "run"
    model_id: str = "model"
    word_embed_dim: int = 256
    char_embed_dim: int = 64
    encoder_state_dim: int = 512
    decoder_state_dim: int = 1024
    attention_dim: int = 256
    decoder_level: str = "bpe"
    direction: str = "forward"
    layernorm: bool = False
    keep_prob: float = 1.0
    context_gates: bool = False
    src_vocab_size: int = 0
    trg_vocab_size: int = 0
    batch_size: int = 32
    steps: int = 1000
    savepoint_interval: int = 5000
    lr: float = 1e-3
    clip_norm: float = 5.0
    max_time: float = 0.0
    score_heldout: bool = True
    beam: int = 10
    max_len: int = 0
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    seed: int = -1

    MODEL_KEYS = ("word_embed_dim", "char_embed_dim", "encoder_state_dim", "decoder_state_dim",
                  "attention_dim", "decoder_level", "direction", "layernorm", "keep_prob",
                  "context_gates")

    def update(self, items, origin="<override>"):
        types = {f.name: f.type for f in fields(self)}
        for key, raw, where in items:
            if key not in types:
                raise ConfigError(f"{origin}{where}: unknown key {key!r}")
            setattr(self, key, _coerce(types[key], raw, f"{origin}{where}: {key}"))
        return self

    def model_config(self):
        from .model import ModelConfig
        return ModelConfig(**{k: getattr(self, k) for k in self.MODEL_KEYS})

    def resolved_seed(self):
        return resolve_seed(self.seed if self.seed >= 0 else None)

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    def write(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_text())


def _coerce(kind, raw, where):
    kind = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind == "bool":
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return str(raw)
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from e


def parse_config_lines(lines, origin="<config>"):
    items = []
    for n, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{origin}:{n}: expected 'key = value', got {line.strip()!r}")
        key, value = (s.strip() for s in text.split("=", 1))
        items.append((key, value, f":{n}"))
    return items


def load_config(path=None, overrides=()):
    """Defaults, then ``path`` ("key = value" lines), then ``key=value`` overrides."""
    cfg = RunConfig()
    if path:
        with open(path, encoding="utf-8") as f:
            cfg.update(parse_config_lines(f, path), "")
    items = []
    for o in overrides:
        if "=" not in o:
            raise ConfigError(f"override {o!r} is not key=value")
        k, v = o.split("=", 1)
        items.append((k.strip(), v.strip(), ""))
    return cfg.update(items, "override")


def resolve_seed(explicit=None):
    """Explicit seed, else ``$HNMT_SEED``, else 0."""
    if explicit is not None:
        return int(explicit)
    env = os.environ.get("HNMT_SEED")
    if env:
        try:
            return int(env)
        except ValueError as e:
            raise ConfigError(f"HNMT_SEED must be an integer, got {env!r}") from e
    return 0
