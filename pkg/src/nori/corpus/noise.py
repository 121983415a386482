"""Noise synthesis: white, speech-shaped (LTAS-matched) and babble."""

import json
from dataclasses import dataclass, field

import numpy as np

from ..validation import rng_for
from .audio import DEFAULT_SAMPLE_RATE, Waveform
from .grammar import default_grammar
from .synth import SynthConfig, synth_sentence

NOISE_TYPES = ("white", "ssn", "babble")


@dataclass(frozen=True)
class LtasConfig:
    fft_size: int = 1024
    hop: int = 512


@dataclass
class NoiseProfile:
    type: str
    sample_rate: int = DEFAULT_SAMPLE_RATE
    ltas: np.ndarray | None = None     # magnitude per rfft bin, ssn only
    fft_size: int = 1024
    babble_talkers: int = 8
    grammar: object = None             # lexicon used to synthesize babble
    seed: int = 0
    synth_config: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if self.type not in NOISE_TYPES:
            raise ValueError(f"unknown noise type {self.type!r}, expected one of {NOISE_TYPES}")
        if self.type == "ssn":
            if self.ltas is None:
                raise ValueError("ssn profile requires an LTAS")
            self.ltas = np.asarray(self.ltas, dtype=np.float64)
            if len(self.ltas) != self.fft_size // 2 + 1:
                raise ValueError(
                    f"LTAS length {len(self.ltas)} does not match fft_size {self.fft_size}"
                )
            if np.any(self.ltas <= 0):
                raise ValueError("LTAS must be strictly positive")


def compute_ltas(waves, config: LtasConfig | None = None) -> np.ndarray:
    """Average magnitude spectrum over all frames of all signals."""
    config = config or LtasConfig()
    if not waves:
        raise ValueError("compute_ltas: empty corpus")
    win = np.hanning(config.fft_size)
    acc = np.zeros(config.fft_size // 2 + 1)
    n_frames = 0
    for wav in waves:
        x = wav.samples
        for start in range(0, len(x) - config.fft_size + 1, config.hop):
            acc += np.abs(np.fft.rfft(x[start:start + config.fft_size] * win))
            n_frames += 1
    if n_frames == 0:
        raise ValueError("compute_ltas: signals shorter than one analysis frame")
    return acc / n_frames


def save_ltas(path, profile: NoiseProfile):
    payload = {
        "fft_size": profile.fft_size,
        "sample_rate": profile.sample_rate,
        "magnitudes": [float(v) for v in profile.ltas],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_ltas(path) -> NoiseProfile:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return NoiseProfile(
        type="ssn",
        sample_rate=int(payload["sample_rate"]),
        ltas=np.asarray(payload["magnitudes"], dtype=np.float64),
        fft_size=int(payload["fft_size"]),
    )


def _gen_white(length, rng):
    return rng.standard_normal(length) * 0.1


def _gen_ssn(profile, length, rng, config=None):
    """White Gaussian noise spectrally shaped so its measured LTAS matches the target."""
    config = config or LtasConfig(fft_size=profile.fft_size)
    white = rng.standard_normal(length)
    spectrum = np.fft.rfft(white)
    bin_freqs = np.fft.rfftfreq(length, 1.0 / profile.sample_rate)
    ltas_freqs = np.fft.rfftfreq(profile.fft_size, 1.0 / profile.sample_rate)
    gains = np.interp(bin_freqs, ltas_freqs, profile.ltas)
    shaped = np.fft.irfft(spectrum * gains, length)
    # calibrate so the frame-averaged magnitude spectrum of the output sits on
    # the target: a complex STFT bin of unit white noise has E|X| = sqrt(pi/4 * sum(w^2))
    win = np.hanning(config.fft_size)
    calib = np.sqrt(np.pi / 4.0 * np.sum(win**2))
    return shaped / calib


def _gen_babble(profile, length, rng):
    grammar = profile.grammar or default_grammar()
    cfg = profile.synth_config
    sr = cfg.sample_rate
    gap = int(0.1 * sr)
    acc = np.zeros(length)
    for talker in range(profile.babble_talkers):
        talker_rng = rng_for("babble-talker", profile.seed, rng.integers(2**32), talker)
        cursor = -int(talker_rng.integers(0, sr))  # stagger stream onsets
        sentence_idx = 0
        while cursor < length:
            words = [s.words[talker_rng.integers(len(s.words))] for s in grammar.slots]
            wav, _ = synth_sentence(
                grammar, words, f"babble-{talker}", (profile.seed, talker, sentence_idx), cfg
            )
            lo = max(cursor, 0)
            hi = min(cursor + len(wav), length)
            if hi > lo:
                acc[lo:hi] += wav.samples[lo - cursor:hi - cursor]
            cursor += len(wav) + gap
            sentence_idx += 1
    rms = np.sqrt(np.mean(acc**2))
    if rms > 0:
        acc *= 0.1 / rms
    return acc


def gen_noise(profile: NoiseProfile, length, seed) -> Waveform:
    """Generate noise; identical (profile, length, seed) gives identical samples."""
    if length <= 0:
        raise ValueError(f"noise length must be positive, got {length}")
    rng = rng_for("noise", profile.type, profile.seed, seed)
    if profile.type == "white":
        samples = _gen_white(length, rng)
    elif profile.type == "ssn":
        samples = _gen_ssn(profile, length, rng)
    else:
        samples = _gen_babble(profile, length, rng)
    return Waveform(samples=samples, sample_rate=profile.sample_rate)
