"""Frequency-based truecasing of sentence-initial words."""

from collections import Counter, defaultdict
from dataclasses import dataclass, field

from ..errors import ParseError


def _is_word(tok):
    return any(ch.isalpha() for ch in tok)


def _first_word(tokens):
    for i, tok in enumerate(tokens):
        if _is_word(tok):
            return i
    return None


@dataclass
class TruecaseModel:
    counts: dict = field(default_factory=dict)

    def best(self, token):
        casings = self.counts.get(token.lower())
        if not casings:
            return None
        return min(casings, key=lambda c: (-casings[c], c))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for low in sorted(self.counts):
                for casing, n in sorted(self.counts[low].items()):
                    f.write(f"{low} {n} {casing}\n")

    @classmethod
    def load(cls, path):
        counts = defaultdict(Counter)
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                parts = line.split()
                if len(parts) != 3 or not parts[1].isdigit():
                    raise ParseError(f"{path}:{lineno}: expected 'token count casing'")
                counts[parts[0]][parts[2]] += int(parts[1])
        return cls(dict(counts))


def truecase_train(corpus):
    """Count surface casings, skipping sentence-initial positions.

    Words seen only sentence-initially fall back to those occurrences.
    """
    inner, initial = defaultdict(Counter), defaultdict(Counter)
    for tokens in corpus:
        start = _first_word(tokens)
        for i, tok in enumerate(tokens):
            if not _is_word(tok):
                continue
            (initial if i == start else inner)[tok.lower()][tok] += 1
    counts = dict(inner)
    for low, c in initial.items():
        counts.setdefault(low, c)
    return TruecaseModel(counts)


def truecase_apply(model, tokens):
    tokens = list(tokens)
    i = _first_word(tokens)
    if i is not None:
        best = model.best(tokens[i])
        if best is not None:
            tokens[i] = best
    return tokens


def detruecase(tokens):
    tokens = list(tokens)
    i = _first_word(tokens)
    if i is not None:
        tok = tokens[i]
        tokens[i] = tok[:1].upper() + tok[1:]
    return tokens
