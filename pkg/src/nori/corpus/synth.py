"""Parametric word and sentence synthesis for the matrix-sentence lexicon.

Every word is rendered as a sequence of phoneme units, each a harmonic
complex whose resonance targets are drawn deterministically from the word
identity, so different words stay acoustically discriminable while the same
(word, speaker, seed) triple always reproduces bit-identical audio.
"""

from dataclasses import dataclass

import numpy as np

from ..validation import rng_for
from .audio import DEFAULT_SAMPLE_RATE, Waveform


@dataclass(frozen=True)
class SynthConfig:
    sample_rate: int = DEFAULT_SAMPLE_RATE
    phoneme_ms: float = 90.0
    gap_ms: float = 40.0
    jitter_frac: float = 0.05  # per-phoneme duration jitter, <= 0.10
    rms_target: float = 0.08
    edge_ramp_ms: float = 10.0
    max_harmonic_hz: float = 5500.0

    def __post_init__(self):
        if not (0.0 <= self.jitter_frac <= 0.10):
            raise ValueError(f"jitter_frac must be in [0, 0.10], got {self.jitter_frac}")


def _speaker_voice(speaker_id):
    rng = rng_for("speaker-voice", speaker_id)
    f0 = 95.0 + 60.0 * rng.random()
    formant_scale = 0.95 + 0.10 * rng.random()
    return f0, formant_scale


def _phoneme_targets(word_id, n_phonemes):
    """Per-phoneme resonance frequencies, bandwidths and levels for a word."""
    rng = rng_for("word-timbre", word_id, n_phonemes)
    targets = []
    for _ in range(n_phonemes):
        f1 = 280.0 + 480.0 * rng.random()
        f2 = 900.0 + 1500.0 * rng.random()
        f3 = 2500.0 + 1000.0 * rng.random()
        bws = 80.0 + 60.0 * rng.random(3)
        gains_db = rng.uniform(-3.0, 3.0, 3)
        level_db = rng.uniform(-3.0, 3.0)
        targets.append((np.array([f1, f2, f3]), bws, gains_db, level_db))
    return targets


def _phoneme_durations(word_id, speaker_id, seed, n_phonemes, config):
    base = config.phoneme_ms / 1000.0 * config.sample_rate
    rng = rng_for("duration-jitter", word_id, speaker_id, seed)
    jitter = rng.uniform(-1.0, 1.0, n_phonemes) * config.jitter_frac
    return np.maximum(1, np.rint(base * (1.0 + jitter)).astype(int))


def _harmonic_amplitudes(freqs, targets, formant_scale):
    """Spectral envelope at the harmonic frequencies: resonance bumps + tilt."""
    centers, bws, gains_db, level_db = targets
    env_db = np.full(len(freqs), -30.0)
    for fc, bw, g in zip(centers * formant_scale, bws, gains_db):
        bump = (18.0 + g) * np.exp(-0.5 * ((freqs - fc) / (2.5 * bw)) ** 2)
        env_db = np.maximum(env_db, -30.0 + bump)
    # gentle high-frequency roll-off, -6 dB/octave above 500 Hz
    tilt_db = -6.0 * np.log2(np.maximum(freqs, 500.0) / 500.0)
    return 10.0 ** ((env_db + tilt_db + level_db) / 20.0)


def synth_word_waveform(grammar, word_id, speaker_id, seed, config=None) -> Waveform:
    """Render one vocabulary word; deterministic given (word_id, speaker_id, seed)."""
    config = config or SynthConfig()
    n_phonemes = grammar.phoneme_count(word_id)  # raises KeyError for unknown ids
    f0, formant_scale = _speaker_voice(speaker_id)
    targets = _phoneme_targets(word_id, n_phonemes)
    durations = _phoneme_durations(word_id, speaker_id, seed, n_phonemes, config)

    sr = config.sample_rate
    total = int(durations.sum())
    t = np.arange(total) / sr
    n_harm = max(1, int(config.max_harmonic_hz / f0))
    harm_freqs = f0 * np.arange(1, n_harm + 1)

    # piecewise-constant per-phoneme envelope with short crossfades
    amp = np.zeros((n_harm, total))
    ramp = max(1, int(config.edge_ramp_ms / 1000.0 * sr))
    start = 0
    for dur, tgt in zip(durations, targets):
        seg_amp = _harmonic_amplitudes(harm_freqs, tgt, formant_scale)
        window = np.ones(dur)
        edge = min(ramp, dur // 2)
        if edge > 0:
            fade = 0.5 * (1.0 - np.cos(np.pi * np.arange(edge) / edge))
            window[:edge] = fade
            window[dur - edge:] = fade[::-1]
        amp[:, start:start + dur] = seg_amp[:, None] * window[None, :]
        start += dur

    phases = rng_for("speaker-phase", speaker_id).uniform(0.0, 2.0 * np.pi, n_harm)
    wave_out = np.einsum(
        "ht,ht->t", amp, np.sin(2.0 * np.pi * harm_freqs[:, None] * t[None, :] + phases[:, None])
    )

    rms = np.sqrt(np.mean(wave_out**2))
    if rms > 0:
        wave_out *= config.rms_target / rms
    return Waveform(samples=wave_out, sample_rate=sr)


def synth_sentence(grammar, word_choices, speaker_id, seed, config=None):
    """Concatenate one word per slot with fixed inter-word gaps.

    Returns (Waveform, alignment) where alignment is a list of
    (word_id, start_sample, end_sample) half-open spans.
    """
    config = config or SynthConfig()
    grammar.validate_sentence(word_choices)
    gap = int(round(config.gap_ms / 1000.0 * config.sample_rate))

    pieces, alignment = [], []
    cursor = 0
    for slot_idx, word in enumerate(word_choices):
        wav = synth_word_waveform(grammar, word, speaker_id, (seed, slot_idx), config)
        alignment.append((word, cursor, cursor + len(wav)))
        pieces.append(wav.samples)
        cursor += len(wav)
        if slot_idx < len(word_choices) - 1:
            pieces.append(np.zeros(gap))
            cursor += gap

    return Waveform(samples=np.concatenate(pieces), sample_rate=config.sample_rate), alignment
