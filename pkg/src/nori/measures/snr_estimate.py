"""Blind SNR estimation: minima-controlled noise tracking + Wiener split.

The noisy signal is decomposed into speech and noise estimates with a
decision-directed Wiener filter driven by a tracked noise PSD; the SNR is
the energy ratio of the two reconstructions. Tracker variants: 'mcra'
(default, single smoothing pass), 'imcra' (second masked smoothing pass for
the speech-absence prior) and 'min_stats' (no presence weighting).
"""

from dataclasses import dataclass

import numpy as np

from ..validation import check_waveform

TRACKERS = ("mcra", "imcra", "min_stats")


@dataclass(frozen=True)
class SnrConfig:
    fft_size: int = 512
    hop: int = 128                # 5 ms: inter-word gaps must span several frames
    tracker: str = "mcra"
    warm_passes: int = 2          # utterance-level context: rerun with carried state
    alpha_s: float = 0.6          # smoothed-spectrogram time constant
    alpha_d: float = 0.92         # noise recursive-averaging time constant
    freq_smooth_bins: int = 1
    min_subwin: int = 16          # frames per minimum-tracking sub-window
    min_buffers: int = 8          # sub-windows kept for the running minimum
    bmin: float = 3.5             # minimum-statistics bias, calibrated for alpha_s/hop defaults
    beta: float = 1.3             # recursive-average bias compensation
    gamma0: float = 4.6
    gamma1: float = 3.0
    zeta0: float = 2.2
    p_max: float = 1.0            # full freeze at clear-speech bins, no leakage creep
    fast_down_ratio: float = 0.2  # frame power below this fraction of the estimate
    fast_down_alpha: float = 0.5  # drops the noise estimate at this rate
    dd_alpha: float = 0.9
    xi_min_db: float = -25.0
    xi_max: float = 1e8
    g_min_db: float = -25.0
    noise_floor: float = 1e-12
    clip_db: float = 80.0

    def __post_init__(self):
        if self.tracker not in TRACKERS:
            raise ValueError(f"unknown tracker {self.tracker!r}, expected one of {TRACKERS}")


def stft(samples, fft_size, hop):
    """(T, K) complex spectra; zero-pads the tail to a whole frame."""
    win = np.hanning(fft_size + 1)[:-1]  # periodic Hann: exact COLA at 50% hop
    n_frames = max(1, int(np.ceil(max(len(samples) - fft_size, 0) / hop)) + 1)
    padded = np.zeros((n_frames - 1) * hop + fft_size)
    padded[:len(samples)] = samples
    idx = np.arange(fft_size)[None, :] + hop * np.arange(n_frames)[:, None]
    return np.fft.rfft(padded[idx] * win[None, :], axis=1)


def istft(spectra, fft_size, hop, length):
    """Overlap-add inverse of stft(); analysis window only, COLA-normalized.

    Edge samples whose window overlap is below 0.5 are zeroed: dividing by a
    near-zero window sum there amplifies cross-bin leakage instead of
    reconstructing signal.
    """
    win = np.hanning(fft_size + 1)[:-1]
    n_frames = spectra.shape[0]
    total = (n_frames - 1) * hop + fft_size
    out = np.zeros(total)
    norm = np.zeros(total)
    frames = np.fft.irfft(spectra, fft_size, axis=1)
    for t in range(n_frames):
        out[t * hop:t * hop + fft_size] += frames[t]
        norm[t * hop:t * hop + fft_size] += win
    out = np.where(norm >= 0.5, out / np.maximum(norm, 0.5), 0.0)
    return out[:length]


def _freq_smooth(power, w):
    if w <= 0:
        return power
    if w == 1:
        out = 0.5 * power
        out[1:] += 0.25 * power[:-1]
        out[:-1] += 0.25 * power[1:]
        out[0] += 0.25 * power[0]
        out[-1] += 0.25 * power[-1]
        return out
    kernel = np.hanning(2 * w + 3)[1:-1]
    kernel /= kernel.sum()
    pad = np.pad(power, w, mode="edge")
    return np.convolve(pad, kernel, mode="valid")


class _NoiseTracker:
    """Frame-by-frame noise PSD tracking with windowed minimum statistics."""

    def __init__(self, n_bins, first_power, config: SnrConfig):
        self.cfg = config
        smoothed = _freq_smooth(first_power, config.freq_smooth_bins)
        self.s = smoothed.copy()
        self.s_min = smoothed.copy()
        self.s_min_sw = smoothed.copy()
        self.store = np.full((config.min_buffers, n_bins), np.inf)
        self.s2 = smoothed.copy()       # imcra second pass
        self.s2_min = smoothed.copy()
        self.s2_min_sw = smoothed.copy()
        self.store2 = np.full((config.min_buffers, n_bins), np.inf)
        self.ov_lambda = first_power.copy()
        self.subwin_count = 0

    def _presence_prior(self, power):
        """A-priori speech-absence probability q per bin."""
        cfg = self.cfg
        if cfg.tracker == "imcra":
            ref_min = np.maximum(cfg.bmin * self.s2_min, cfg.noise_floor)
            zeta = self.s2 / ref_min
        else:
            ref_min = np.maximum(cfg.bmin * self.s_min, cfg.noise_floor)
            zeta = self.s / ref_min
        gamma_min = power / ref_min
        q = np.zeros_like(power)
        absent = (gamma_min <= 1.0) & (zeta < cfg.zeta0)
        q[absent] = 1.0
        partial = (gamma_min > 1.0) & (gamma_min < cfg.gamma1) & (zeta < cfg.zeta0)
        q[partial] = (cfg.gamma1 - gamma_min[partial]) / (cfg.gamma1 - 1.0)
        return q

    def update(self, power, gamma, xi):
        """Advance one frame; returns (noise_psd, speech_presence_prob)."""
        cfg = self.cfg
        smoothed = _freq_smooth(power, cfg.freq_smooth_bins)
        self.s = cfg.alpha_s * self.s + (1.0 - cfg.alpha_s) * smoothed
        self.s_min = np.minimum(self.s_min, self.s)
        self.s_min_sw = np.minimum(self.s_min_sw, self.s)

        if cfg.tracker == "imcra":
            # mask out frames flagged as speech before the second smoothing
            ref_min = np.maximum(cfg.bmin * self.s_min, cfg.noise_floor)
            absence = (power / ref_min < cfg.gamma0) & (self.s / ref_min < cfg.zeta0)
            masked = _freq_smooth(np.where(absence, power, 0.0), cfg.freq_smooth_bins)
            weight = _freq_smooth(absence.astype(float), cfg.freq_smooth_bins)
            masked = np.where(weight > 0, masked / np.maximum(weight, 1e-12), self.s2)
            self.s2 = cfg.alpha_s * self.s2 + (1.0 - cfg.alpha_s) * masked
            self.s2_min = np.minimum(self.s2_min, self.s2)
            self.s2_min_sw = np.minimum(self.s2_min_sw, self.s2)

        if cfg.tracker == "min_stats":
            p = np.zeros_like(power)
        else:
            q = self._presence_prior(power)
            nu = gamma * xi / (1.0 + xi)
            p = np.ones_like(power)
            soft = q < 1.0
            ratio = q[soft] / (1.0 - q[soft])
            p[soft] = 1.0 / (1.0 + ratio * (1.0 + xi[soft]) * np.exp(-np.minimum(nu[soft], 50.0)))
            p[q >= 1.0] = 0.0
            p = np.minimum(p, cfg.p_max)

        alpha_tilde = cfg.alpha_d + (1.0 - cfg.alpha_d) * p
        if power.sum() < cfg.fast_down_ratio * self.ov_lambda.sum():
            # whole frame clearly quieter than the estimate: track down fast
            alpha_tilde = np.minimum(alpha_tilde, cfg.fast_down_alpha)
        self.ov_lambda = alpha_tilde * self.ov_lambda + (1.0 - alpha_tilde) * power

        # windowed minimum tracking so old minima expire
        self.subwin_count += 1
        if self.subwin_count >= cfg.min_subwin:
            self.store = np.roll(self.store, -1, axis=0)
            self.store[-1] = self.s_min_sw
            self.s_min = self.store.min(axis=0)
            self.s_min_sw = self.s.copy()
            if cfg.tracker == "imcra":
                self.store2 = np.roll(self.store2, -1, axis=0)
                self.store2[-1] = self.s2_min_sw
                self.s2_min = self.store2.min(axis=0)
                self.s2_min_sw = self.s2.copy()
            self.subwin_count = 0

        if cfg.tracker == "min_stats":
            lambda_d = cfg.bmin * self.s_min
        else:
            lambda_d = np.minimum(cfg.beta * self.ov_lambda, cfg.bmin * np.maximum(self.s_min, cfg.noise_floor) * 4.0)
        return np.maximum(lambda_d, cfg.noise_floor), p


def wiener_gains(power, config: SnrConfig):
    """Per-frame Wiener gains from the tracked noise PSD, (T, K)."""
    t_len, n_bins = power.shape
    xi_min = 10.0 ** (config.xi_min_db / 10.0)
    g_min = 10.0 ** (config.g_min_db / 20.0)
    tracker = _NoiseTracker(n_bins, power[0], config)
    gains = np.ones((t_len, n_bins))
    lambda_d = np.maximum(power[0], config.noise_floor)
    for _ in range(max(1, config.warm_passes)):
        g_prev = np.ones(n_bins)
        gamma_prev = np.ones(n_bins)
        for t in range(t_len):
            gamma = power[t] / np.maximum(lambda_d, config.noise_floor)
            xi = config.dd_alpha * g_prev**2 * gamma_prev \
                + (1.0 - config.dd_alpha) * np.maximum(gamma - 1.0, 0.0)
            xi = np.clip(xi, xi_min, config.xi_max)
            lambda_d, _ = tracker.update(power[t], gamma, xi)
            g = np.maximum(xi / (1.0 + xi), g_min)
            gains[t] = g
            g_prev = g
            gamma_prev = gamma
    return gains


class BlindSnrSplitter:
    """Decomposes one waveform once; segment SNRs are then cheap sums.

    The tracker and Wiener gains always run over the whole waveform, so
    short keyword segments inherit utterance-level context.
    """

    def __init__(self, wave, config: SnrConfig | None = None):
        self.config = config or SnrConfig()
        samples = check_waveform(wave.samples, wave.sample_rate)
        if not np.any(samples != 0.0):
            raise ValueError("zero-energy input")
        spec = stft(samples, self.config.fft_size, self.config.hop)
        gains = wiener_gains(np.abs(spec) ** 2, self.config)
        self.n_samples = len(samples)
        self.speech_sq = istft(gains * spec, self.config.fft_size, self.config.hop,
                               self.n_samples) ** 2
        self.noise_sq = istft((1.0 - gains) * spec, self.config.fft_size, self.config.hop,
                              self.n_samples) ** 2

    def snr_db(self, segment=None) -> float:
        if segment is None:
            start, end = 0, self.n_samples
        else:
            start = max(0, int(segment[0]))
            end = min(self.n_samples, int(segment[1]))
            if end <= start:
                raise ValueError("empty segment")
        p_speech = float(np.sum(self.speech_sq[start:end]))
        p_noise = float(np.sum(self.noise_sq[start:end]))
        clip = self.config.clip_db
        if p_noise <= 0.0 or p_speech <= 0.0:
            return clip if p_noise <= 0.0 else -clip
        return float(np.clip(10.0 * np.log10(p_speech / p_noise), -clip, clip))


def estimate_snr(wave, segment=None, config: SnrConfig | None = None) -> float:
    """Blind SNR (dB) of a noisy waveform; the energy sums run over `segment`."""
    return BlindSnrSplitter(wave, config).snr_db(segment)
