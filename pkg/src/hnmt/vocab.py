"""Token/id maps with reserved specials."""

from collections import Counter

from .errors import ContractError, ParameterError

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
SPECIALS = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = range(4)

LEVELS = ("char", "word", "bpe")


class Vocabulary:
    """Dense ids from 0; the four specials always occupy ids 0-3."""

    def __init__(self, tokens=(), level="word"):
        if level not in LEVELS:
            raise ParameterError(f"unknown vocabulary level {level!r}")
        self.level = level
        self.tokens = list(SPECIALS)
        self._index = {t: i for i, t in enumerate(self.tokens)}
        for t in tokens:
            if t in self._index:
                if t in SPECIALS:
                    continue
                raise ContractError(f"duplicate vocabulary entry {t!r}")
            self._index[t] = len(self.tokens)
            self.tokens.append(t)

    @classmethod
    def build(cls, sequences, level="word", max_size=None, min_count=1):
        """Most frequent symbols first; ties broken by symbol order."""
        counts = Counter()
        for seq in sequences:
            counts.update(seq)
        for s in SPECIALS:
            counts.pop(s, None)
        ranked = sorted((t for t, c in counts.items() if c >= min_count),
                        key=lambda t: (-counts[t], t))
        if max_size is not None:
            ranked = ranked[:max(0, max_size - len(SPECIALS))]
        return cls(ranked, level)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    def __eq__(self, other):
        return (isinstance(other, Vocabulary) and self.level == other.level
                and self.tokens == other.tokens)

    def index(self, token):
        return self._index.get(token, UNK_ID)

    def token(self, i):
        return self.tokens[i]

    def encode(self, symbols):
        return [self._index.get(s, UNK_ID) for s in symbols]

    def decode(self, ids):
        """Map ids back to symbols, dropping PAD/BOS/EOS."""
        return [self.tokens[i] for i in ids if i not in (PAD_ID, BOS_ID, EOS_ID)]

    def split(self, text):
        """Break a line into this vocabulary's symbols."""
        if self.level == "char":
            return list(text)
        return text.split()

    def surface(self, symbols):
        """Render symbols as text (BPE continuations rejoined)."""
        if self.level == "char":
            return "".join(symbols)
        if self.level == "bpe":
            from .segmentation.bpe import bpe_join
            symbols = bpe_join(symbols)
        return " ".join(symbols)

    def to_dict(self):
        return {"level": self.level, "tokens": self.tokens[len(SPECIALS):]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["tokens"], d["level"])
