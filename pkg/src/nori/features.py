"""MFCC front end: 13 cepstra + deltas + delta-deltas, 39 columns per frame.

The log-Mel stage can optionally be floored by an audiogram to model raised
hearing thresholds before the cepstral transform.
"""

import struct
from dataclasses import dataclass

import numpy as np
from scipy.fftpack import dct

from .validation import as_float_array

AUDIOGRAM_FREQS_HZ = (250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0)


@dataclass(frozen=True)
class FeatureConfig:
    frame_ms: float = 25.0
    shift_ms: float = 10.0
    n_mels: int = 26
    fft_size: int = 1024
    n_ceps: int = 13
    delta_window: int = 2
    log_floor_db: float = 80.0       # floor relative to per-utterance max band power
    abs_floor: float = 1e-12
    presentation_level_db: float = 65.0  # dB SPL assigned to full-scale power

    def __post_init__(self):
        if self.frame_ms <= self.shift_ms:
            raise ValueError("frame length must exceed frame shift")
        if self.n_ceps > self.n_mels:
            raise ValueError("cepstral count must not exceed Mel filter count")

    def frame_len(self, sample_rate):
        return int(round(self.frame_ms / 1000.0 * sample_rate))

    def shift(self, sample_rate):
        return int(round(self.shift_ms / 1000.0 * sample_rate))


@dataclass(frozen=True)
class Audiogram:
    """Hearing thresholds in dB HL at 0.25, 0.5, 1, 2, 4, 8 kHz."""

    thresholds_db_hl: tuple

    def __post_init__(self):
        if len(self.thresholds_db_hl) != len(AUDIOGRAM_FREQS_HZ):
            raise ValueError(f"expected {len(AUDIOGRAM_FREQS_HZ)} thresholds")
        for t in self.thresholds_db_hl:
            if not -10.0 <= t <= 120.0:
                raise ValueError(f"threshold {t} dB HL outside [-10, 120]")

    def mean_2_4_khz(self):
        return 0.5 * (self.thresholds_db_hl[3] + self.thresholds_db_hl[4])

    def interpolate(self, freqs_hz):
        """Thresholds at arbitrary frequencies, log-linear in frequency.

        Held flat below 250 Hz and above 8 kHz.
        """
        freqs_hz = np.maximum(np.asarray(freqs_hz, dtype=np.float64), 1.0)
        return np.interp(
            np.log2(freqs_hz),
            np.log2(np.asarray(AUDIOGRAM_FREQS_HZ)),
            np.asarray(self.thresholds_db_hl, dtype=np.float64),
        )


@dataclass
class FeatureSequence:
    frames: np.ndarray       # T x 39, columns: 13 statics, 13 deltas, 13 delta-deltas
    frame_shift_s: float
    utterance_id: str = ""

    def __post_init__(self):
        self.frames = as_float_array(self.frames, "features", ndim=2)
        if self.frames.shape[0] < 1:
            raise ValueError("feature sequence must have at least one frame")

    def __len__(self):
        return self.frames.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: FeatureConfig, sample_rate):
    """Triangular filters over rfft bins; returns (filters, center_freqs_hz)."""
    n_bins = config.fft_size // 2 + 1
    mel_points = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), config.n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bin_freqs = np.arange(n_bins) * sample_rate / config.fft_size
    fbank = np.zeros((config.n_mels, n_bins))
    for b in range(config.n_mels):
        lo, mid, hi = hz_points[b], hz_points[b + 1], hz_points[b + 2]
        up = (bin_freqs - lo) / (mid - lo)
        down = (hi - bin_freqs) / (hi - mid)
        fbank[b] = np.maximum(0.0, np.minimum(up, down))
    return fbank, hz_points[1:-1]


def frame_signal(samples, frame_len, shift):
    n = (len(samples) - frame_len) // shift + 1
    if n < 1:
        raise ValueError(f"signal shorter than one frame ({len(samples)} < {frame_len})")
    idx = np.arange(frame_len)[None, :] + shift * np.arange(n)[:, None]
    return samples[idx]


def log_mel_spectrogram(wave, config: FeatureConfig | None = None):
    """T x B matrix of floored natural-log Mel band powers."""
    config = config or FeatureConfig()
    samples = wave.samples
    sr = wave.sample_rate
    frames = frame_signal(samples, config.frame_len(sr), config.shift(sr))
    windowed = frames * np.hamming(config.frame_len(sr))[None, :]
    power = np.abs(np.fft.rfft(windowed, config.fft_size, axis=1)) ** 2
    fbank, _ = mel_filterbank(config, sr)
    energies = power @ fbank.T
    floor = max(energies.max() * 10.0 ** (-config.log_floor_db / 10.0), config.abs_floor)
    return np.log(np.maximum(energies, floor))


def audiogram_logmel_floor(audiogram: Audiogram, config: FeatureConfig, sample_rate):
    """Per-band log-Mel floor for the audiogram at the presentation level.

    Full-scale power (1.0) is taken to sit at the presentation level in dB SPL
    and dB HL maps 1:1 onto dB SPL, so a threshold of H dB HL floors band
    power at 10**((H - level)/10) relative to full scale.
    """
    _, centers = mel_filterbank(config, sample_rate)
    thresholds = audiogram.interpolate(centers)
    return (thresholds - config.presentation_level_db) / 10.0 * np.log(10.0)


def apply_audiogram_threshold(logmel, audiogram: Audiogram, config: FeatureConfig,
                              sample_rate):
    """Elementwise max of the log-Mel matrix and the audiogram floor."""
    logmel = as_float_array(logmel, "logmel", ndim=2)
    floor = audiogram_logmel_floor(audiogram, config, sample_rate)
    if logmel.shape[1] != len(floor):
        raise ValueError(
            f"band count mismatch: logmel has {logmel.shape[1]}, filterbank has {len(floor)}"
        )
    return np.maximum(logmel, floor[None, :])


def _delta(x, window):
    """Regression deltas over +-window frames with replicated edge padding."""
    denom = 2.0 * sum(n * n for n in range(1, window + 1))
    padded = np.concatenate([x[:1].repeat(window, axis=0), x, x[-1:].repeat(window, axis=0)])
    out = np.zeros_like(x)
    for n in range(1, window + 1):
        out += n * (padded[window + n:window + n + len(x)] - padded[window - n:window - n + len(x)])
    return out / denom


def extract_features(wave, config: FeatureConfig | None = None,
                     audiogram: Audiogram | None = None,
                     utterance_id="") -> FeatureSequence:
    """MFCC + deltas; optionally threshold-adapts the log-Mel stage first."""
    config = config or FeatureConfig()
    logmel = log_mel_spectrogram(wave, config)
    if audiogram is not None:
        logmel = apply_audiogram_threshold(logmel, audiogram, config, wave.sample_rate)
    ceps = dct(logmel, type=2, axis=1, norm="ortho")[:, :config.n_ceps]
    d1 = _delta(ceps, config.delta_window)
    d2 = _delta(d1, config.delta_window)
    return FeatureSequence(
        frames=np.hstack([ceps, d1, d2]),
        frame_shift_s=config.shift_ms / 1000.0,
        utterance_id=utterance_id,
    )


def frames_for_span(start_sample, end_sample, n_frames, config: FeatureConfig, sample_rate):
    """Frame range whose centers fall inside a half-open sample span."""
    frame_len = config.frame_len(sample_rate)
    shift = config.shift(sample_rate)
    half = frame_len / 2.0
    t0 = int(np.ceil((start_sample - half) / shift))
    t1 = int(np.ceil((end_sample - half) / shift))
    t0 = max(0, min(t0, n_frames))
    t1 = max(t0, min(t1, n_frames))
    return t0, t1


_DUMP_MAGIC = b"NFEA"
_DUMP_VERSION = 1


def dump_features(path, seq: FeatureSequence):
    """Binary dump: little-endian header {magic, version, T, dim, shift_ms} + f32 rows."""
    t, dim = seq.frames.shape
    with open(path, "wb") as fh:
        fh.write(_DUMP_MAGIC)
        fh.write(struct.pack("<III f", _DUMP_VERSION, t, dim, seq.frame_shift_s * 1000.0))
        fh.write(seq.frames.astype("<f4").tobytes())


def load_features(path, utterance_id="") -> FeatureSequence:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _DUMP_MAGIC:
            raise ValueError(f"{path}: not a feature dump")
        version, t, dim, shift_ms = struct.unpack("<III f", fh.read(16))
        if version != _DUMP_VERSION:
            raise ValueError(f"{path}: unsupported feature dump version {version}")
        data = np.frombuffer(fh.read(4 * t * dim), dtype="<f4").astype(np.float64)
    return FeatureSequence(
        frames=data.reshape(t, dim),
        frame_shift_s=shift_ms / 1000.0,
        utterance_id=utterance_id,
    )
