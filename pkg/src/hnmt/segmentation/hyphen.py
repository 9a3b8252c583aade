"""Hyphen retokenization by rescoring the four spacing variants."""

import itertools
import logging
import math
import re

from ..errors import ParameterError

log = logging.getLogger(__name__)

VARIANTS = (" - ", "- ", " -", "-")
DEFAULT_CAP = 6

_UNIT = re.compile(r" ?- ?")


def hyphen_units(sentence):
    """Spans of the hyphens whose spacing can vary.

    A unit is a single ``-`` with at most one adjacent space on each side and
    a non-space, non-hyphen character beyond it on both sides.
    """
    units = []
    for m in _UNIT.finditer(sentence):
        s, e = m.span()
        if s == 0 or e == len(sentence):
            continue
        before, after = sentence[s - 1], sentence[e]
        if before.isspace() or after.isspace() or before == "-" or after == "-":
            continue
        units.append((s, e))
    return units


def hyphen_variants(sentence, cap=DEFAULT_CAP, positions=None):
    """All spacing combinations, first unit varying slowest.

    ``positions`` restricts which units vary (others keep their spacing).
    More than ``cap`` varying units is refused.
    """
    units = hyphen_units(sentence)
    if positions is None:
        positions = range(len(units))
    positions = sorted(set(positions))
    if not positions:
        return [sentence]
    if len(positions) > cap:
        raise ParameterError(
            f"{len(positions)} hyphens exceed the combinatorial cap of {cap}"
        )
    out = []
    for combo in itertools.product(VARIANTS, repeat=len(positions)):
        choice = dict(zip(positions, combo))
        pieces, last = [], 0
        for k, (s, e) in enumerate(units):
            pieces.append(sentence[last:s])
            pieces.append(choice.get(k, sentence[s:e]))
            last = e
        pieces.append(sentence[last:])
        out.append("".join(pieces))
    return out


def hyphen_retokenize(variants, scorer, original=None):
    """Pick the highest-scoring variant; ties go to the first one.

    Variants on which ``scorer`` raises are skipped. If every variant fails,
    ``original`` (default: the first variant) is returned with a warning.
    """
    if not variants:
        raise ParameterError("no variants to choose from")
    best, best_score = None, -math.inf
    for v in variants:
        try:
            score = float(scorer(v))
        except Exception as e:  # scorer is user supplied
            log.debug("scorer failed on %r: %s", v, e)
            continue
        if best is None or score > best_score:
            best, best_score = v, score
    if best is None:
        fallback = variants[0] if original is None else original
        log.warning("hyphen scorer failed on all %d variants; keeping %r", len(variants), fallback)
        return fallback
    return best


def retokenize_hyphens(sentence, scorer, cap=DEFAULT_CAP):
    """Retokenize every hyphen of a detokenized sentence.

    Up to ``cap`` hyphens are scored jointly; beyond that each hyphen is
    decided on its own, left to right.
    """
    n = len(hyphen_units(sentence))
    if n == 0:
        return sentence
    if n <= cap:
        return hyphen_retokenize(hyphen_variants(sentence, cap), scorer, sentence)
    for k in range(n):
        sentence = hyphen_retokenize(hyphen_variants(sentence, cap, [k]), scorer, sentence)
    return sentence
