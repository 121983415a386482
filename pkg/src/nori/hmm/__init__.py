from .decode import (
    Alignment,
    DecodingGraph,
    forward_log_likelihood,
    viterbi_decode,
    viterbi_log_likelihood,
)
from .model import (
    SILENCE_LABEL,
    ConditionModels,
    DiagGmm,
    WordHmm,
    gmm_log_pdf,
    load_condition_models,
    save_condition_models,
)
from .train import TrainConfig, kfold_split, train_condition_models, utterance_units

__all__ = [
    "Alignment",
    "DecodingGraph",
    "forward_log_likelihood",
    "viterbi_decode",
    "viterbi_log_likelihood",
    "SILENCE_LABEL",
    "ConditionModels",
    "DiagGmm",
    "WordHmm",
    "gmm_log_pdf",
    "load_condition_models",
    "save_condition_models",
    "TrainConfig",
    "kfold_split",
    "train_condition_models",
    "utterance_units",
]
