"""Rule-based tokenizer and detokenizer.

Punctuation is split from words, English clitics are split Moses-style
(``wouldn't`` -> ``would n't``), and numbers keep their internal separators.
Hyphens always become free-standing tokens, so the detokenizer emits them
with a space on each side; :mod:`hnmt.segmentation.hyphen` repairs this.
"""

import re

_TOKEN = re.compile(
    r"\w+(?=n't\b)|n't\b|'(?:s|m|re|ll|ve|d)\b|\d+(?:[.,:]\d+)+|\w+|\.\.\.|[^\w\s]",
    re.IGNORECASE,
)

CLITICS = {"n't", "'s", "'m", "'re", "'ll", "'ve", "'d"}
_ATTACH_LEFT = {".", ",", "!", "?", ";", ":", "%", ")", "]", "}", "..."}
_ATTACH_RIGHT = {"(", "[", "{"}
_QUOTES = {'"', "'"}


def tokenize(text):
    if not text:
        return []
    return _TOKEN.findall(text)


def detokenize(tokens):
    out = []
    glue_next = False
    open_quote = {q: False for q in _QUOTES}
    for tok in tokens:
        attach = glue_next or not out
        glue_next = False
        if tok in _ATTACH_LEFT or tok.lower() in CLITICS:
            attach = True
        elif tok in _ATTACH_RIGHT:
            glue_next = True
        elif tok in _QUOTES:
            if open_quote[tok]:
                attach = True
            else:
                glue_next = True
            open_quote[tok] = not open_quote[tok]
        if not attach:
            out.append(" ")
        out.append(tok)
    return "".join(out)
