"""Small input-validation helpers shared across the package."""

import hashlib

import numpy as np


def as_float_array(x, name="array", ndim=None):
    """Convert to a float64 ndarray and require all values finite."""
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name}: expected {ndim}-dimensional input, got {arr.ndim}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains NaN or Inf")
    return arr


def check_waveform(samples, sample_rate, name="waveform"):
    samples = as_float_array(samples, name, ndim=1)
    if sample_rate <= 0:
        raise ValueError(f"{name}: sample_rate must be positive, got {sample_rate}")
    return samples


def check_same_length(x, y, name="inputs"):
    if len(x) != len(y):
        raise ValueError(f"{name}: length mismatch ({len(x)} vs {len(y)})")


def stable_seed(*parts):
    """Derive a 64-bit seed from string/number parts, stable across runs.

    Python's built-in hash() is salted per process, so seeds for anything
    that must reproduce (synthesis, splits, simulated responses) go through
    this instead.
    """
    text = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(*parts):
    """Deterministic numpy Generator keyed by content, not call order."""
    return np.random.default_rng(stable_seed(*parts))
