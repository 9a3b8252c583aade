"""Hybrid character/word attentional neural machine translation on numpy."""

from .checkpoint import (
    Savepoint,
    average_parameters,
    load_checkpoint,
    save_checkpoint,
    select_best_savepoint,
)
from .decoding import (
    Ensemble,
    EnsembleSpec,
    Hypothesis,
    ModelScorer,
    NBestList,
    PenaltyConfig,
    apply_penalties,
    beam_search,
    ensemble_predict,
    exhaustive_search,
    fb_rerank,
    penalty_grid_search,
    read_nbest,
    write_nbest,
)
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DimensionError,
    HNMTError,
    IngestionError,
    ParameterError,
    ParseError,
    PipelineError,
    TrainingError,
)
from .metrics import bleu, chrf3, ter
from .model import HNMTModel, ModelConfig, build_vocabularies, compute_loss, encode_source
from .training import TrainConfig, train
from .vocab import Vocabulary

__version__ = "0.1.0"
