from .confidence import (
    DEFAULT_DISPERSION_N,
    SlotScoreList,
    dispersion,
    entropy,
    loglik_ratio,
    normalized_likelihood_difference,
    score_all_models,
    time_alignment_difference,
)
from .extract import (
    CSV_HEADER,
    MeasureConfig,
    MeasureRecord,
    extract_measures,
    read_measures,
    read_score_lists,
    write_measures,
    write_score_lists,
)
from .snr_estimate import (
    BlindSnrSplitter,
    SnrConfig,
    estimate_snr,
    istft,
    stft,
    wiener_gains,
)
from .stoi import stoi

__all__ = [
    "DEFAULT_DISPERSION_N",
    "SlotScoreList",
    "dispersion",
    "entropy",
    "loglik_ratio",
    "normalized_likelihood_difference",
    "score_all_models",
    "time_alignment_difference",
    "CSV_HEADER",
    "MeasureConfig",
    "MeasureRecord",
    "extract_measures",
    "read_measures",
    "read_score_lists",
    "write_measures",
    "write_score_lists",
    "BlindSnrSplitter",
    "SnrConfig",
    "estimate_snr",
    "istft",
    "stft",
    "wiener_gains",
    "stoi",
]
