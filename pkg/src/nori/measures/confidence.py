"""Decoder-confidence measures over per-slot word likelihood lists."""

import warnings
from dataclasses import dataclass

import numpy as np

from ..hmm.decode import forward_log_likelihood

DEFAULT_DISPERSION_N = 5
LLR_FLOOR_NATS = 50.0


@dataclass
class SlotScoreList:
    """Forward log-likelihoods of every word model for one slot segment."""

    slot: int
    entries: list                  # [(word_id, log_likelihood)], sorted descending
    n_frames: int

    def __post_init__(self):
        scores = [s for _, s in self.entries]
        if any(b > a for a, b in zip(scores, scores[1:])):
            raise ValueError("score entries must be sorted in descending order")

    @property
    def scores(self):
        return np.asarray([s for _, s in self.entries], dtype=np.float64)

    @property
    def words(self):
        return [w for w, _ in self.entries]


def score_all_models(frames, slot_models, slot_index=0, llr_floor=LLR_FLOOR_NATS):
    """One forward likelihood per slot word, sorted descending.

    slot_models maps word id -> WordHmm; the result is invariant to the
    mapping's iteration order. A model whose minimum path is longer than the
    segment has likelihood zero; such -inf scores are floored at
    (min finite - llr_floor) so downstream measures stay finite. If no model
    admits a path, all scores are set equal (maximal decoder uncertainty).
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if frames.shape[0] == 0:
        raise ValueError("empty segment")
    raw = {w: forward_log_likelihood(hmm, frames) for w, hmm in slot_models.items()}
    finite = [v for v in raw.values() if np.isfinite(v)]
    floor = (min(finite) - llr_floor) if finite else 0.0
    entries = sorted(
        ((w, v if np.isfinite(v) else floor) for w, v in raw.items()),
        key=lambda item: (-item[1], item[0]),
    )
    return SlotScoreList(slot=slot_index, entries=entries, n_frames=frames.shape[0])


def dispersion(scores: SlotScoreList, n=DEFAULT_DISPERSION_N) -> float:
    """Mean pairwise log-likelihood ratio among the n best hypotheses.

    n is clamped to the slot vocabulary size with a warning when larger.
    """
    if n < 2:
        raise ValueError(f"dispersion needs n >= 2, got {n}")
    top = scores.scores
    if n > len(top):
        warnings.warn(
            f"dispersion: n={n} exceeds vocabulary size {len(top)}; clamping",
            stacklevel=2,
        )
        n = len(top)
    if n < 2:
        raise ValueError("dispersion needs at least 2 hypotheses")
    top = top[:n]
    total = 0.0
    for k in range(n):
        for l in range(k + 1, n):
            total += top[k] - top[l]
    return 2.0 * total / (n * (n - 1))


def entropy(scores: SlotScoreList) -> float:
    """Shannon entropy (nats) of the posterior over all slot word models.

    Posteriors come from the log-likelihoods with uniform priors via
    log-sum-exp normalization.
    """
    logp = scores.scores
    if len(logp) == 0:
        raise ValueError("empty score list")
    top = logp.max()
    if not np.isfinite(top):
        raise ValueError("all model likelihoods are -inf")
    shifted = logp - top
    log_norm = np.log(np.sum(np.exp(shifted)))
    log_post = shifted - log_norm
    post = np.exp(log_post)
    active = post > 0.0
    return float(-np.sum(post[active] * log_post[active]))


def loglik_ratio(scores: SlotScoreList) -> float:
    """Log-likelihood margin between the two best models (dispersion at n=2)."""
    if len(scores.entries) < 2:
        raise ValueError("log-likelihood ratio needs at least 2 models")
    top = scores.scores
    return float(top[0] - top[1])


def time_alignment_difference(recognized_span, reference_span) -> float:
    """Normalized boundary deviation between recognized and reference spans.

    Spans are (start_frame, end_frame); the result is
    (|start diff| + |end diff|) / reference length.
    """
    rec_start, rec_end = recognized_span
    ref_start, ref_end = reference_span
    ref_len = ref_end - ref_start
    if ref_len <= 0:
        raise ValueError("zero-length reference span")
    return (abs(rec_start - ref_start) + abs(rec_end - ref_end)) / ref_len


def normalized_likelihood_difference(scores: SlotScoreList, true_word) -> float:
    """Per-frame likelihood margin of the true word over its best competitor."""
    lookup = dict(scores.entries)
    if true_word not in lookup:
        raise ValueError(f"true word {true_word!r} not among the scored models")
    others = [s for w, s in scores.entries if w != true_word]
    if not others:
        raise ValueError("need at least one competitor model")
    return float((lookup[true_word] - max(others)) / scores.n_frames)
