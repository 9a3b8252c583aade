"""Unicode and punctuation normalisation."""

import re
import unicodedata

from ..errors import IngestionError

_QUOTES = dict.fromkeys("‘’‚‛′´`", "'")
_QUOTES.update(dict.fromkeys("“”„‟«»″", '"'))
_DASHES = dict.fromkeys("‐‑‒–—―−﹘﹣－", "-")
_SPACES = dict.fromkeys(
    "\u00a0\u1680\u2000\u2001\u2002\u2003\u2004\u2005\u2006\u2007\u2008"
    "\u2009\u200a\u202f\u205f\u3000\t",
    " ",
)
_DROPPED = dict.fromkeys("\u200b\u00ad\ufeff", "")

_TABLE = str.maketrans({
    **_QUOTES, **_DASHES, **_SPACES, **_DROPPED,
    "…": "...",
    # reserved for the pre-translation marker suffix
    "▁": "_",
})

_WS = re.compile(r"\s+")


def _once(text):
    text = unicodedata.normalize("NFC", text)
    text = text.translate(_TABLE)
    text = "".join(" " if unicodedata.category(ch) == "Cc" else ch for ch in text)
    return _WS.sub(" ", text).strip()


def normalize(text):
    """Canonicalise quotes, dashes and spaces; ``bytes`` are decoded as strict UTF-8.

    Idempotent: the rewrite is iterated to a fixed point.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as e:
            raise IngestionError(f"invalid UTF-8 at byte offset {e.start}") from e
    for _ in range(8):
        out = _once(text)
        if out == text:
            break
        text = out
    return text
