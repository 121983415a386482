"""Exact-SNR mixing of speech and noise."""

from dataclasses import dataclass

import numpy as np

from .audio import Waveform


@dataclass
class MixResult:
    wave: Waveform
    noise_gain: float
    scale: float        # global rescale applied to keep |sample| <= 1, else 1.0
    speech_start: int   # sample span holding the speech extent
    speech_end: int


def mix_at_snr(speech: Waveform, noise: Waveform, snr_db, lead_pad=0, trail_pad=0) -> MixResult:
    """Add noise to speech so the SNR over the speech extent is exactly snr_db.

    Powers are measured over the speech extent only; optional lead/trail
    padding extends the output with noise-only context. Requires
    len(noise) >= lead_pad + len(speech) + trail_pad.
    """
    if not np.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite, got {snr_db}")
    if speech.sample_rate != noise.sample_rate:
        raise ValueError("speech and noise sample rates differ")
    total = lead_pad + len(speech) + trail_pad
    if len(noise) < total:
        raise ValueError(f"noise too short: {len(noise)} < {total} samples required")

    noise_extent = noise.samples[lead_pad:lead_pad + len(speech)]
    p_speech = float(np.mean(speech.samples**2))
    p_noise = float(np.mean(noise_extent**2))
    if p_speech <= 0.0:
        raise ValueError("zero-power speech")
    if p_noise <= 0.0:
        raise ValueError("zero-power noise")

    gain = float(np.sqrt(p_speech / (p_noise * 10.0 ** (snr_db / 10.0))))
    mixed = gain * noise.samples[:total].copy()
    mixed[lead_pad:lead_pad + len(speech)] += speech.samples

    peak = float(np.max(np.abs(mixed))) if total else 0.0
    scale = 1.0
    if peak > 1.0:
        scale = 1.0 / peak
        mixed *= scale

    return MixResult(
        wave=Waveform(samples=mixed, sample_rate=speech.sample_rate),
        noise_gain=gain,
        scale=scale,
        speech_start=lead_pad,
        speech_end=lead_pad + len(speech),
    )
