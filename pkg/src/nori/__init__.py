"""Non-intrusive word-level speech intelligibility prediction.

ASR-confidence measures (dispersion, entropy, likelihood ratio, alignment
and likelihood differences) plus a blindly estimated SNR are mapped by a
small neural network to predicted keyword recognition, evaluated end to end
on a synthetic matrix-sentence corpus with simulated listeners.
"""

from .corpus import (
    GrammarSpec,
    NoiseProfile,
    SynthConfig,
    Waveform,
    compute_ltas,
    default_grammar,
    gen_noise,
    mix_at_snr,
    synth_sentence,
    synth_word_waveform,
    toy_grammar,
)
from .evaluation import (
    MacroPoint,
    PsychometricCurve,
    accuracy,
    fishers_exact,
    fit_psychometric,
    kendall_tau,
    macro_average,
    ncc,
    rmse,
)
from .features import Audiogram, FeatureConfig, FeatureSequence, extract_features
from .hmm import (
    Alignment,
    ConditionModels,
    DiagGmm,
    TrainConfig,
    WordHmm,
    forward_log_likelihood,
    gmm_log_pdf,
    kfold_split,
    train_condition_models,
    viterbi_decode,
)
from .listener import ListenerProfile, make_cohort, simulate_response
from .mapping import CvPlan, MlpClassifier, MlpRegressor, run_cv
from .measures import (
    MeasureConfig,
    MeasureRecord,
    SnrConfig,
    dispersion,
    entropy,
    estimate_snr,
    extract_measures,
    loglik_ratio,
    normalized_likelihood_difference,
    score_all_models,
    stoi,
    time_alignment_difference,
)
from .pipeline import Pipeline, RunConfig, run_pipeline

__version__ = "0.1.0"
