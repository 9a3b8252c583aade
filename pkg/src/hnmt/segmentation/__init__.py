"""Text pre- and postprocessing."""

from .bpe import BpeModel, bpe_apply, bpe_join, bpe_learn
from .contractions import DEFAULT_TABLE, expand_contractions
from .hyphen import hyphen_retokenize, hyphen_variants, retokenize_hyphens
from .normalize import normalize
from .tokenize import detokenize, tokenize
from .truecase import TruecaseModel, detruecase, truecase_apply, truecase_train

__all__ = [
    "BpeModel", "bpe_apply", "bpe_join", "bpe_learn",
    "DEFAULT_TABLE", "expand_contractions",
    "hyphen_retokenize", "hyphen_variants", "retokenize_hyphens",
    "normalize", "detokenize", "tokenize",
    "TruecaseModel", "detruecase", "truecase_apply", "truecase_train",
]
