from .audio import DEFAULT_SAMPLE_RATE, Waveform, read_wav, write_wav
from .grammar import GrammarSpec, SlotSpec, default_grammar, toy_grammar
from .manifest import UtteranceRecord, load_manifest, save_manifest
from .mixing import MixResult, mix_at_snr
from .noise import (
    LtasConfig,
    NoiseProfile,
    compute_ltas,
    gen_noise,
    load_ltas,
    save_ltas,
)
from .synth import SynthConfig, synth_sentence, synth_word_waveform

__all__ = [
    "DEFAULT_SAMPLE_RATE",
    "Waveform",
    "read_wav",
    "write_wav",
    "GrammarSpec",
    "SlotSpec",
    "default_grammar",
    "toy_grammar",
    "UtteranceRecord",
    "load_manifest",
    "save_manifest",
    "MixResult",
    "mix_at_snr",
    "LtasConfig",
    "NoiseProfile",
    "compute_ltas",
    "gen_noise",
    "load_ltas",
    "save_ltas",
    "SynthConfig",
    "synth_sentence",
    "synth_word_waveform",
]
