"""Expansion of English verb contractions.

``can't`` expands to ``can not`` (two tokens, matching the rest of the
table) and ``'d`` to ``would``. ``'s`` is left alone: it is ambiguous
between *is*, *has* and the possessive.
"""

from .tokenize import CLITICS, tokenize

DEFAULT_TABLE = {
    ("ca", "n't"): ("can", "not"),
    ("wo", "n't"): ("will", "not"),
    ("sha", "n't"): ("shall", "not"),
    ("let", "'s"): ("let", "us"),
    ("n't",): ("not",),
    ("'m",): ("am",),
    ("'re",): ("are",),
    ("'ll",): ("will",),
    ("'ve",): ("have",),
    ("'d",): ("would",),
}


def _match_case(template, word):
    letters = [ch for ch in template if ch.isalpha()]
    if letters and all(ch.isupper() for ch in letters) and (len(letters) > 1 or len(template) == 1):
        return word.upper()
    if template[:1].isupper():
        return word[:1].upper() + word[1:]
    return word


def _split_clitics(tokens):
    out = []
    for tok in tokens:
        if "'" in tok and len(tok) > 1:
            parts = tokenize(tok)
            if any(p.lower() in CLITICS for p in parts):
                out.extend(parts)
                continue
        out.append(tok)
    return out


def expand_contractions(tokens, table=None):
    """Replace contracted forms left to right, longest match first."""
    table = DEFAULT_TABLE if table is None else table
    longest = max((len(k) for k in table), default=0)
    tokens = _split_clitics(tokens)
    out, i = [], 0
    while i < len(tokens):
        for n in range(min(longest, len(tokens) - i), 0, -1):
            key = tuple(t.lower() for t in tokens[i:i + n])
            if key in table:
                src = tokens[i:i + n]
                exp = table[key]
                out.extend(
                    _match_case(src[min(k, n - 1)], w) for k, w in enumerate(exp)
                )
                i += n
                break
        else:
            out.append(tokens[i])
            i += 1
    return out
