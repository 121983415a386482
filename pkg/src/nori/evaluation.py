"""Evaluation kernels: accuracy, correlation, rank agreement, significance,
macroscopic averaging and psychometric fitting."""

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .validation import as_float_array, check_same_length, rng_for


def accuracy(predictions, labels) -> float:
    """Percentage of predictions matching the labels."""
    check_same_length(predictions, labels, "accuracy inputs")
    if len(labels) == 0:
        raise ValueError("accuracy of empty input")
    matches = sum(1 for p, l in zip(predictions, labels) if bool(p) == bool(l))
    return 100.0 * matches / len(labels)


def ncc(x, y) -> float:
    """Pearson product-moment correlation coefficient."""
    x = as_float_array(x, "x", ndim=1)
    y = as_float_array(y, "y", ndim=1)
    check_same_length(x, y, "ncc inputs")
    if len(x) < 2:
        raise ValueError("ncc needs at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sqrt(np.sum(dx * dx)))
    sy = float(np.sqrt(np.sum(dy * dy)))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("ncc undefined for zero-variance input")
    return float(np.sum(dx * dy) / (sx * sy))


def rmse(x, y) -> float:
    x = as_float_array(x, "x", ndim=1)
    y = as_float_array(y, "y", ndim=1)
    check_same_length(x, y, "rmse inputs")
    if len(x) == 0:
        raise ValueError("rmse of empty input")
    return float(np.sqrt(np.mean((x - y) ** 2)))


def kendall_tau(x, y) -> float:
    """Tie-corrected rank correlation (tau-b)."""
    x = as_float_array(x, "x", ndim=1)
    y = as_float_array(y, "y", ndim=1)
    check_same_length(x, y, "kendall_tau inputs")
    n = len(x)
    if n < 2:
        raise ValueError("kendall_tau needs at least 2 points")
    concordant = discordant = 0
    for i in range(n):
        sx = np.sign(x[i + 1:] - x[i])
        sy = np.sign(y[i + 1:] - y[i])
        prod = sx * sy
        concordant += int(np.sum(prod > 0))
        discordant += int(np.sum(prod < 0))
    n0 = n * (n - 1) // 2
    _, counts_x = np.unique(x, return_counts=True)
    _, counts_y = np.unique(y, return_counts=True)
    n1 = int(np.sum(counts_x * (counts_x - 1) // 2))
    n2 = int(np.sum(counts_y * (counts_y - 1) // 2))
    denom = math.sqrt((n0 - n1) * (n0 - n2))
    if denom == 0.0:
        raise ValueError("kendall_tau undefined for all-tied input")
    return (concordant - discordant) / denom


def fishers_exact(a, b, c, d) -> float:
    """Two-sided Fisher exact p for the 2x2 table [[a, b], [c, d]].

    Sums hypergeometric probabilities of all tables with the observed
    margins whose probability does not exceed the observed one. Evaluated
    through log-gamma so large tables stay cheap.
    """
    for v in (a, b, c, d):
        if v < 0 or int(v) != v:
            raise ValueError("table entries must be non-negative integers")
    a, b, c, d = int(a), int(b), int(c), int(d)
    row1, row2 = a + b, c + d
    col1, col2 = a + c, b + d
    if min(row1, row2, col1, col2) == 0:
        raise ValueError("zero margin in contingency table")
    n = row1 + row2

    def log_comb(m, k):
        return math.lgamma(m + 1) - math.lgamma(k + 1) - math.lgamma(m - k + 1)

    log_denom = log_comb(n, col1)
    ks = np.arange(max(0, col1 - row2), min(row1, col1) + 1)
    log_p = np.array([
        log_comb(row1, k) + log_comb(row2, col1 - k) - log_denom for k in ks
    ])
    log_p_obs = log_comb(row1, a) + log_comb(row2, c) - log_denom
    keep = log_p <= log_p_obs + 1e-9
    return float(min(np.exp(log_p[keep]).sum(), 1.0))


@dataclass
class MacroPoint:
    """Group-of-files averages: one point of the macroscopic evaluation."""

    group_id: str
    condition: str
    snr_db: float
    measures: dict            # measure name -> mean over the group's keywords
    wcs: float                # pooled fraction of correctly recognized keywords
    n_keywords: int = 0

    def __post_init__(self):
        if not 0.0 <= self.wcs <= 1.0:
            raise ValueError(f"wcs {self.wcs} outside [0, 1]")


def macro_average(measure_records, labels_by_key, group_size=10, seed=0,
                  condition="", snr_db=0.0, measure_names=None):
    """Average measures and word-correct scores over random groups of files.

    measure_records are the per-keyword MeasureRecords of one
    (condition, snr) cell; labels_by_key maps (utt_id, slot) to a list of
    booleans (one per listener). A trailing group smaller than group_size is
    dropped.
    """
    by_utt = defaultdict(list)
    for rec in measure_records:
        by_utt[rec.utt_id].append(rec)
    utt_ids = sorted(by_utt)
    if len(utt_ids) < group_size:
        raise ValueError(f"fewer than {group_size} files for macroscopic grouping")
    order = rng_for("macro-groups", seed, condition, snr_db).permutation(len(utt_ids))
    if measure_names is None:
        measure_names = ["D", "H", "L", "TAD", "NLD", "SNRhat", "STOI"]

    points = []
    n_groups = len(utt_ids) // group_size
    for gi in range(n_groups):
        members = [utt_ids[i] for i in order[gi * group_size:(gi + 1) * group_size]]
        recs = [r for u in members for r in by_utt[u]]
        vectors = np.stack([r.vector(measure_names) for r in recs])
        outcomes = []
        for r in recs:
            outcomes.extend(labels_by_key[(r.utt_id, r.slot)])
        points.append(MacroPoint(
            group_id=f"{condition}_{snr_db:g}_{gi}",
            condition=condition,
            snr_db=snr_db,
            measures=dict(zip(measure_names, vectors.mean(axis=0))),
            wcs=float(np.mean(outcomes)),
            n_keywords=len(recs),
        ))
    return points


@dataclass
class PsychometricCurve:
    srt_db: float
    slope: float
    residual: float

    def __post_init__(self):
        if self.slope <= 0:
            raise ValueError("psychometric slope must be positive")


def logistic_curve(snr, srt, slope):
    return 1.0 / (1.0 + np.exp(-slope * (np.asarray(snr, dtype=np.float64) - srt)))


def fit_psychometric(points) -> PsychometricCurve:
    """Least-squares logistic fit; the midpoint is the SRT.

    Needs at least 4 distinct SNRs and WCS values straddling 0.5.
    """
    snr = as_float_array([p[0] for p in points], "snr", ndim=1)
    wcs = as_float_array([p[1] for p in points], "wcs", ndim=1)
    if len(np.unique(snr)) < 4:
        raise ValueError("fit_psychometric needs at least 4 distinct SNRs")
    if not (wcs.min() < 0.5 < wcs.max()):
        raise ValueError("SRT out of range: WCS values do not straddle 0.5")

    # initial midpoint from the empirical 0.5 crossing
    order = np.argsort(snr)
    s_sorted, w_sorted = snr[order], wcs[order]
    srt0 = float(s_sorted[np.argmin(np.abs(w_sorted - 0.5))])
    for i in range(len(s_sorted) - 1):
        lo, hi = w_sorted[i], w_sorted[i + 1]
        if (lo - 0.5) * (hi - 0.5) <= 0 and lo != hi:
            srt0 = float(s_sorted[i] + (0.5 - lo) * (s_sorted[i + 1] - s_sorted[i]) / (hi - lo))
            break

    def residuals(theta):
        return logistic_curve(snr, theta[0], theta[1]) - wcs

    span = max(s_sorted[-1] - s_sorted[0], 1.0)
    result = least_squares(
        residuals, x0=[srt0, 1.0],
        bounds=([s_sorted[0] - 2 * span, 1e-3], [s_sorted[-1] + 2 * span, 50.0]),
        xtol=1e-12, ftol=1e-12, gtol=1e-12,
    )
    if not result.success or not np.all(np.isfinite(result.x)):
        raise ValueError("degenerate psychometric fit")
    srt, slope = float(result.x[0]), float(result.x[1])
    return PsychometricCurve(srt_db=srt, slope=slope,
                             residual=float(np.sqrt(np.mean(result.fun**2))))
