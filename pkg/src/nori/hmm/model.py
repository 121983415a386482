"""Left-to-right word HMMs with per-state diagonal-covariance GMMs."""

import json
from dataclasses import dataclass, field

import numpy as np

from ..validation import as_float_array

LOG_ZERO = -np.inf
SCHEMA_VERSION = 1
SILENCE_LABEL = "<sil>"


@dataclass
class DiagGmm:
    weights: np.ndarray    # (M,)
    means: np.ndarray      # (M, D)
    variances: np.ndarray  # (M, D)

    def __post_init__(self):
        self.weights = as_float_array(self.weights, "weights", ndim=1)
        self.means = as_float_array(self.means, "means", ndim=2)
        self.variances = as_float_array(self.variances, "variances", ndim=2)
        if self.means.shape != self.variances.shape:
            raise ValueError("means/variances shape mismatch")
        if len(self.weights) != self.means.shape[0]:
            raise ValueError("weight count does not match component count")
        if np.any(self.variances <= 0):
            raise ValueError("variances must be positive")
        total = self.weights.sum()
        if not np.isclose(total, 1.0, atol=1e-8):
            raise ValueError(f"mixture weights sum to {total}, expected 1")

    @property
    def dim(self):
        return self.means.shape[1]

    def log_pdf_frames(self, frames):
        """Per-frame log density, (T,) for frames of shape (T, D)."""
        frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
        if frames.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: {frames.shape[1]} vs {self.dim}")
        gconst = np.sum(np.log(2.0 * np.pi * self.variances), axis=1)  # (M,)
        diff = frames[:, None, :] - self.means[None, :, :]
        mahal = np.sum(diff * diff / self.variances[None, :, :], axis=2)  # (T, M)
        comp = -0.5 * (mahal + gconst[None, :]) + np.log(self.weights)[None, :]
        top = comp.max(axis=1)
        return top + np.log(np.sum(np.exp(comp - top[:, None]), axis=1))

    def component_log_pdfs(self, frames):
        """(T, M) per-component log densities including log weights."""
        frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
        gconst = np.sum(np.log(2.0 * np.pi * self.variances), axis=1)
        diff = frames[:, None, :] - self.means[None, :, :]
        mahal = np.sum(diff * diff / self.variances[None, :, :], axis=2)
        return -0.5 * (mahal + gconst[None, :]) + np.log(self.weights)[None, :]


def gmm_log_pdf(gmm: DiagGmm, x):
    """Log density of a single observation vector under the mixture."""
    return float(gmm.log_pdf_frames(np.asarray(x, dtype=np.float64)[None, :])[0])


class EmissionStack:
    """Batched GMM log densities for many states via two matrix products.

    log N(x; mu, sigma) expands to const - 0.5 * x^2 . (1/sigma^2)
    + x . (mu/sigma^2), so emissions for all (state, component) pairs reduce
    to (T, D) @ (D, N*M) GEMMs instead of a broadcast over (T, N, M, D).
    """

    def __init__(self, means, variances, logw):
        self.n_states, self.n_mix, dim = means.shape
        inv = 1.0 / variances
        gconst = np.sum(np.log(2.0 * np.pi * variances), axis=2)
        self.const = logw - 0.5 * (gconst + np.sum(means**2 * inv, axis=2))  # (N, M)
        self.lin = (means * inv).reshape(self.n_states * self.n_mix, dim).T   # (D, N*M)
        self.quad = (0.5 * inv).reshape(self.n_states * self.n_mix, dim).T    # (D, N*M)

    @classmethod
    def from_states(cls, states):
        means = np.stack([g.means for g in states])
        variances = np.stack([g.variances for g in states])
        logw = np.stack([np.log(g.weights) for g in states])
        return cls(means, variances, logw)

    def component_log_pdfs(self, frames):
        """(T, N, M) per-component log densities including log weights."""
        frames = np.asarray(frames, dtype=np.float64)
        t_len = frames.shape[0]
        comp = frames @ self.lin - (frames**2) @ self.quad
        return comp.reshape(t_len, self.n_states, self.n_mix) + self.const[None]

    def log_pdfs(self, frames, with_components=False):
        comp = self.component_log_pdfs(frames)
        top = comp.max(axis=2)
        logb = top + np.log(np.sum(np.exp(comp - top[:, :, None]), axis=2))
        if with_components:
            return logb, comp
        return logb


@dataclass
class WordHmm:
    word: str
    states: list               # S DiagGmm instances
    log_self: np.ndarray       # (S,) self-loop log probabilities
    log_next: np.ndarray       # (S,) advance log probs; last entry is the exit prob

    def __post_init__(self):
        self.log_self = as_float_array(self.log_self, "log_self", ndim=1)
        self.log_next = np.asarray(self.log_next, dtype=np.float64)
        if len(self.states) != len(self.log_self) or len(self.states) != len(self.log_next):
            raise ValueError("transition arrays do not match state count")
        rows = np.exp(self.log_self) + np.exp(self.log_next)
        if not np.allclose(rows, 1.0, atol=1e-6):
            raise ValueError("transition rows must sum to 1")

    @property
    def n_states(self):
        return len(self.states)

    def emission_stack(self) -> EmissionStack:
        if getattr(self, "_stack", None) is None:
            self._stack = EmissionStack.from_states(self.states)
        return self._stack

    def frame_log_likelihoods(self, frames):
        """(T, S) matrix of per-state log output densities."""
        return self.emission_stack().log_pdfs(np.atleast_2d(np.asarray(frames, dtype=np.float64)))


@dataclass
class ConditionModels:
    """All word models (plus optional silence model) for one noise condition."""

    condition: str
    words: dict                      # word id -> WordHmm
    silence: WordHmm | None = None
    meta: dict = field(default_factory=dict)

    def require(self, vocabulary):
        missing = [w for w in vocabulary if w not in self.words]
        if missing:
            raise ValueError(f"condition {self.condition}: missing models for {missing}")


def _hmm_to_json(hmm: WordHmm):
    return {
        "id": hmm.word,
        "S": hmm.n_states,
        "log_trans": [[float(a), float(b)] for a, b in zip(hmm.log_self, hmm.log_next)],
        "states": [
            {
                "weights": [float(w) for w in g.weights],
                "means": [[float(v) for v in row] for row in g.means],
                "vars": [[float(v) for v in row] for row in g.variances],
            }
            for g in hmm.states
        ],
    }


def _hmm_from_json(payload):
    states = [
        DiagGmm(
            weights=np.asarray(s["weights"]),
            means=np.asarray(s["means"]),
            variances=np.asarray(s["vars"]),
        )
        for s in payload["states"]
    ]
    trans = np.asarray(payload["log_trans"], dtype=np.float64)
    return WordHmm(word=payload["id"], states=states, log_self=trans[:, 0], log_next=trans[:, 1])


def save_condition_models(path, models: ConditionModels):
    payload = {
        "schema_version": SCHEMA_VERSION,
        "condition": models.condition,
        "words": [_hmm_to_json(models.words[w]) for w in sorted(models.words)],
        "silence": _hmm_to_json(models.silence) if models.silence else None,
        "meta": models.meta,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_condition_models(path) -> ConditionModels:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported model schema version {version!r}")
    words = {entry["id"]: _hmm_from_json(entry) for entry in payload["words"]}
    silence = _hmm_from_json(payload["silence"]) if payload.get("silence") else None
    return ConditionModels(
        condition=payload["condition"], words=words, silence=silence,
        meta=payload.get("meta", {}),
    )
