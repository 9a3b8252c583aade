"""Byte-pair encoding: greedy merge learning and ordered merge replay.

Words are split into characters with an end-of-word marker ``</w>`` fused to
the last character. In the emitted segmentation every non-final piece carries
the continuation marker ``@@``. Literal ``&`` and ``@`` are escaped as
``&amp;`` / ``&#64;`` before segmentation, so no piece can end in ``@@`` by
accident and :func:`bpe_join` always inverts :func:`bpe_apply`.

Pair ties are broken toward the lexicographically smallest ``(left, right)``.
"""

import heapq
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from ..errors import ParameterError, ParseError

END = "</w>"
MARKER = "@@"
HEADER = "#version: hnmt-bpe 1"
DEFAULT_VOCAB_SIZE = 20000


def escape(word):
    return word.replace("&", "&amp;").replace("@", "&#64;")


def unescape(word):
    return word.replace("&#64;", "@").replace("&amp;", "&")


def _symbols(word):
    chars = list(escape(word))
    chars[-1] += END
    return tuple(chars)


@dataclass
class BpeModel:
    merges: list
    vocab_size: int = None
    alphabet_size: int = 0
    _ranks: dict = field(default=None, repr=False, compare=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def ranks(self):
        if self._ranks is None:
            self._ranks = {tuple(p): i for i, p in enumerate(self.merges)}
        return self._ranks

    @property
    def symbol_vocabulary_size(self):
        return self.alphabet_size + len(self.merges)

    def segment(self, word):
        """Return the pieces of one word (without continuation markers)."""
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        syms = list(_symbols(word))
        ranks = self.ranks
        while len(syms) > 1:
            best, best_rank = None, None
            for pair in zip(syms, syms[1:]):
                r = ranks.get(pair)
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = pair, r
            if best is None:
                break
            merged, i = [], 0
            while i < len(syms):
                if i + 1 < len(syms) and (syms[i], syms[i + 1]) == best:
                    merged.append(syms[i] + syms[i + 1])
                    i += 2
                else:
                    merged.append(syms[i])
                    i += 1
            syms = merged
        syms[-1] = syms[-1][: -len(END)]
        pieces = tuple(syms)
        self._cache[word] = pieces
        return pieces

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(HEADER + "\n")
            for left, right in self.merges:
                f.write(f"{left} {right}\n")

    @classmethod
    def load(cls, path):
        merges = []
        with open(path, encoding="utf-8") as f:
            first = f.readline().rstrip("\n")
            if first != HEADER:
                raise ParseError(f"{path}:1: expected header {HEADER!r}, got {first!r}")
            for n, line in enumerate(f, start=2):
                parts = line.rstrip("\n").split(" ")
                if len(parts) != 2 or not all(parts):
                    raise ParseError(f"{path}:{n}: expected 'left right', got {line.rstrip()!r}")
                merges.append(tuple(parts))
        if len(set(merges)) != len(merges):
            raise ParseError(f"{path}: duplicate merge pairs")
        return cls(merges)


def _pairs(word):
    return zip(word, word[1:])


def bpe_learn(corpus, num_merges=None, vocab_size=None, min_frequency=2):
    """Learn merges from a tokenized corpus (iterable of token lists or lines).

    Stops after ``num_merges`` merges, once the symbol vocabulary (initial
    alphabet plus merges) reaches ``vocab_size``, or when no pair occurs at
    least ``min_frequency`` times. With neither limit given, ``vocab_size``
    defaults to 20000.
    """
    if num_merges is not None and num_merges < 0:
        raise ParameterError("num_merges must be >= 0")
    if num_merges is None and vocab_size is None:
        vocab_size = DEFAULT_VOCAB_SIZE
    freqs = Counter()
    for line in corpus:
        tokens = line.split() if isinstance(line, str) else line
        freqs.update(tokens)
    if not freqs:
        raise ParameterError("cannot learn BPE from an empty corpus")

    words = [list(_symbols(w)) for w in freqs]
    counts = [freqs[w] for w in freqs]
    alphabet = {s for w in words for s in w}

    stats = Counter()
    where = defaultdict(set)
    for i, w in enumerate(words):
        for p in _pairs(w):
            stats[p] += counts[i]
            where[p].add(i)
    heap = [(-c, p) for p, c in stats.items()]
    heapq.heapify(heap)

    merges = []
    while heap:
        if num_merges is not None and len(merges) >= num_merges:
            break
        if vocab_size is not None and len(alphabet) + len(merges) >= vocab_size:
            break
        neg, pair = heapq.heappop(heap)
        if stats.get(pair, 0) != -neg:
            continue
        if -neg < min_frequency:
            break
        merges.append(pair)
        new_sym = pair[0] + pair[1]
        changed = defaultdict(int)
        for i in sorted(where.pop(pair, ())):
            w = words[i]
            for p in _pairs(w):
                changed[p] -= counts[i]
            merged, j = [], 0
            while j < len(w):
                if j + 1 < len(w) and w[j] == pair[0] and w[j + 1] == pair[1]:
                    merged.append(new_sym)
                    j += 2
                else:
                    merged.append(w[j])
                    j += 1
            words[i] = merged
            for p in _pairs(merged):
                changed[p] += counts[i]
                where[p].add(i)
        for p, delta in changed.items():
            if delta == 0:
                continue
            c = stats[p] + delta
            if c > 0:
                stats[p] = c
                heapq.heappush(heap, (-c, p))
            else:
                stats.pop(p, None)
        stats.pop(pair, None)
    return BpeModel(merges, vocab_size=vocab_size, alphabet_size=len(alphabet))


def bpe_apply(model, tokens):
    """Segment each token, marking non-final pieces with ``@@``."""
    out = []
    for tok in tokens:
        pieces = model.segment(tok)
        out.extend(p + MARKER for p in pieces[:-1])
        out.append(pieces[-1])
    return out


def bpe_join(subwords):
    """Undo :func:`bpe_apply`; a dangling continuation is closed at the end."""
    out, buf = [], ""
    for s in subwords:
        if s.endswith(MARKER):
            buf += s[: -len(MARKER)]
        else:
            out.append(unescape(buf + s))
            buf = ""
    if buf:
        out.append(unescape(buf))
    return out
