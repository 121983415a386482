"""Short-time objective intelligibility: band-envelope correlation measure.

Standard recipe: resample to 10 kHz, drop silent frames, 15 one-third-octave
bands starting at 150 Hz, 384 ms analysis segments, normalization with SDR
clipping at -15 dB, correlation averaged over bands and segments.
"""

from dataclasses import dataclass

import numpy as np
from scipy.signal import resample_poly

from ..validation import check_same_length

FS_STOI = 10000
FRAME_LEN = 256
HOP = 128
FFT_SIZE = 512
N_BANDS = 15
LOWEST_CF_HZ = 150.0
SEG_FRAMES = 30           # 384 ms at 10 kHz with 128-sample hop
DYN_RANGE_DB = 40.0
SDR_CLIP_DB = -15.0


@dataclass(frozen=True)
class StoiConfig:
    sample_rate: int = 25000


def _resample_to_10k(x, sample_rate):
    if sample_rate == FS_STOI:
        return np.asarray(x, dtype=np.float64)
    from math import gcd
    g = gcd(FS_STOI, int(sample_rate))
    return resample_poly(np.asarray(x, dtype=np.float64), FS_STOI // g, sample_rate // g)


def _frame(x, frame_len=FRAME_LEN, hop=HOP):
    n = (len(x) - frame_len) // hop + 1
    if n < 1:
        return np.empty((0, frame_len))
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def remove_silent_frames(clean, degraded, dyn_range_db=DYN_RANGE_DB):
    """Drop frames more than dyn_range_db below the loudest clean frame.

    Both signals are re-synthesized by overlap-adding the kept windowed
    frames, keeping them sample-aligned.
    """
    win = np.hanning(FRAME_LEN + 2)[1:-1]
    frames_c = _frame(clean) * win
    frames_d = _frame(degraded) * win
    if frames_c.shape[0] == 0:
        raise ValueError("too-short input")
    energy_db = 20.0 * np.log10(np.linalg.norm(frames_c, axis=1) + 1e-12)
    keep = energy_db > energy_db.max() - dyn_range_db
    frames_c, frames_d = frames_c[keep], frames_d[keep]
    n = frames_c.shape[0]
    out_len = (n - 1) * HOP + FRAME_LEN if n else 0
    out_c = np.zeros(out_len)
    out_d = np.zeros(out_len)
    for i in range(n):
        out_c[i * HOP:i * HOP + FRAME_LEN] += frames_c[i]
        out_d[i * HOP:i * HOP + FRAME_LEN] += frames_d[i]
    return out_c, out_d


def third_octave_matrix(sample_rate=FS_STOI, fft_size=FFT_SIZE, n_bands=N_BANDS,
                        lowest_cf=LOWEST_CF_HZ):
    """Boolean (bands, bins) membership matrix of one-third-octave bands."""
    freqs = np.fft.rfftfreq(fft_size, 1.0 / sample_rate)
    centers = lowest_cf * 2.0 ** (np.arange(n_bands) / 3.0)
    lo = centers / 2.0 ** (1.0 / 6.0)
    hi = centers * 2.0 ** (1.0 / 6.0)
    return (freqs[None, :] >= lo[:, None]) & (freqs[None, :] < hi[:, None]), centers


def _band_envelopes(x):
    frames = _frame(x) * np.hanning(FRAME_LEN + 2)[1:-1]
    spec = np.fft.rfft(frames, FFT_SIZE, axis=1)
    bands, _ = third_octave_matrix()
    return np.sqrt((np.abs(spec) ** 2) @ bands.T)  # (T, bands)


def stoi(clean_wave, degraded_wave) -> float:
    """Intelligibility score of degraded speech against its clean reference."""
    if clean_wave.sample_rate != degraded_wave.sample_rate:
        raise ValueError("sample rates differ")
    check_same_length(clean_wave.samples, degraded_wave.samples, "stoi inputs")
    x = _resample_to_10k(clean_wave.samples, clean_wave.sample_rate)
    y = _resample_to_10k(degraded_wave.samples, degraded_wave.sample_rate)
    x, y = remove_silent_frames(x, y)

    env_x = _band_envelopes(x)  # (T, B)
    env_y = _band_envelopes(y)
    t_len = env_x.shape[0]
    if t_len < SEG_FRAMES:
        raise ValueError(
            f"too-short input: {t_len} active frames < {SEG_FRAMES} required"
        )

    clip_gain = 1.0 + 10.0 ** (-SDR_CLIP_DB / 20.0)  # distortion bounded at the SDR floor
    scores = []
    for m in range(SEG_FRAMES, t_len + 1):
        seg_x = env_x[m - SEG_FRAMES:m]  # (N, B)
        seg_y = env_y[m - SEG_FRAMES:m]
        norm_x = np.linalg.norm(seg_x, axis=0)
        norm_y = np.linalg.norm(seg_y, axis=0)
        alpha = np.where(norm_y > 0, norm_x / np.maximum(norm_y, 1e-12), 0.0)
        y_norm = np.minimum(seg_y * alpha[None, :], seg_x * clip_gain)
        xc = seg_x - seg_x.mean(axis=0, keepdims=True)
        yc = y_norm - y_norm.mean(axis=0, keepdims=True)
        denom = np.linalg.norm(xc, axis=0) * np.linalg.norm(yc, axis=0)
        corr = np.where(denom > 0, np.sum(xc * yc, axis=0) / np.maximum(denom, 1e-20), 0.0)
        scores.append(corr)
    return float(np.mean(scores))
