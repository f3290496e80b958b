"""Tracking-quality and fairness metrics.

Two tracking metrics are used side by side: NRMSE (root-mean-square
error over the reference mean) for a single-number comparison, and a
regulation-market style composite score built from correlation, delay,
and precision sub-scores evaluated on five-minute windows.  The score
convention: each sub-score is clamped to [0, 1], the composite is
their mean, and 0.75 is the usual market qualification bar.

Fairness asks whether a tagged group of houses (say, the ones backed
by real hardware) tracks noticeably better or worse than the rest.
The check is exchangeability: scale a 20-house group's power up to
fleet size, measure its variance around the reference, and compare the
tagged group against random virtual groups of the same size.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NormalizationError


def nrmse(reference: np.ndarray, achieved: np.ndarray) -> float:
    """RMS tracking error normalized by the reference mean."""
    reference = np.asarray(reference, dtype=float)
    achieved = np.asarray(achieved, dtype=float)
    if reference.shape != achieved.shape:
        raise ValueError("reference and achieved must have equal length")
    norm = np.mean(reference)
    if norm == 0.0:
        raise NormalizationError("reference has zero mean; NRMSE undefined")
    err = achieved - reference
    return float(np.sqrt(np.mean(err * err)) / abs(norm))


@dataclass(frozen=True)
class PjmScore:
    """Composite score plus its averaged sub-scores."""
    score: float
    correlation: float
    delay: float
    precision: float
    n_windows: int


def _window_correlation(ref_w, achieved, i0, max_lag):
    """Best correlation of the response against the reference window,
    searching response lags 0..max_lag samples forward.  Returns
    (best_r clamped to [0,1], best_lag)."""
    w = len(ref_w)
    best_r, best_k = -np.inf, 0
    ref_c = ref_w - ref_w.mean()
    ref_sd = np.sqrt(np.sum(ref_c * ref_c))
    for k in range(max_lag + 1):
        seg = achieved[i0 + k:i0 + k + w]
        if len(seg) < max(2, w // 2):
            break
        if len(seg) < w:
            rc = ref_w[:len(seg)] - ref_w[:len(seg)].mean()
            rsd = np.sqrt(np.sum(rc * rc))
        else:
            rc, rsd = ref_c, ref_sd
        sc = seg - seg.mean()
        ssd = np.sqrt(np.sum(sc * sc))
        if rsd == 0.0 or ssd == 0.0:
            # degenerate flat window: credit only an exact match
            r = 1.0 if np.array_equal(ref_w[:len(seg)], seg) else 0.0
        else:
            r = float(np.dot(rc, sc) / (rsd * ssd))
        # ties (within float noise) keep the earliest lag, so an exactly
        # periodic reference does not hand its delay credit to a
        # spurious late alignment
        if r > best_r + 1e-12:
            best_r, best_k = r, k
    return max(0.0, min(1.0, best_r)), best_k


def pjm_score(reference: np.ndarray, achieved: np.ndarray,
              sample_period: float, window_s: float = 300.0,
              delta_max_s: float = 300.0) -> PjmScore:
    """Regulation-style composite tracking score.

    The series is cut into non-overlapping windows.  Per window:
    correlation is the best Pearson r between the reference window and
    the response shifted forward by a lag delta in [0, delta_max];
    delay is 1 - delta*/delta_max for the best lag; precision is
    1 - mean|error| / mean(reference).  Sub-scores clamp to [0, 1] and
    average across windows; the score is the mean of the three.
    """
    reference = np.asarray(reference, dtype=float)
    achieved = np.asarray(achieved, dtype=float)
    if reference.shape != achieved.shape:
        raise ValueError("reference and achieved must have equal length")
    w = int(round(window_s / sample_period))
    max_lag = int(round(delta_max_s / sample_period))
    if len(reference) < w:
        raise ValueError("series shorter than one scoring window")
    corrs, delays, precisions = [], [], []
    for i0 in range(0, len(reference) - w + 1, w):
        ref_w = reference[i0:i0 + w]
        ach_w = achieved[i0:i0 + w]
        r, k = _window_correlation(ref_w, achieved, i0, max_lag)
        corrs.append(r)
        delays.append(1.0 - (k * sample_period) / delta_max_s)
        mean_ref = np.mean(ref_w)
        if mean_ref == 0.0:
            raise NormalizationError(
                "zero-mean reference window; precision undefined")
        prec = 1.0 - np.mean(np.abs(ach_w - ref_w)) / abs(mean_ref)
        precisions.append(max(0.0, min(1.0, prec)))
    c = float(np.mean(corrs))
    d = float(np.mean(delays))
    p = float(np.mean(precisions))
    return PjmScore(score=(c + d + p) / 3.0, correlation=c, delay=d,
                    precision=p, n_windows=len(corrs))


@dataclass(frozen=True)
class FairnessReport:
    remote_variance: float
    virtual_variances: np.ndarray
    in_range: bool


def group_tracking_variance(power_matrix: np.ndarray, reference: np.ndarray,
                            member_idx: np.ndarray, n_total: int) -> float:
    """Variance over time of a group's fleet-scaled power around the
    reference.  ``power_matrix`` is (T, n_houses) per-house power."""
    scale = n_total / len(member_idx)
    group = power_matrix[:, member_idx].sum(axis=1) * scale
    dev = group - reference
    return float(np.var(dev))


def fairness_variance(power_matrix: np.ndarray, reference: np.ndarray,
                      remote_idx: np.ndarray, group_size: int = 20,
                      n_groups: int = 25, seed: int = 0) -> FairnessReport:
    """Compare the tagged group's tracking variance against random
    virtual groups drawn (without replacement) from the untagged rest."""
    power_matrix = np.asarray(power_matrix, dtype=float)
    reference = np.asarray(reference, dtype=float)
    remote_idx = np.asarray(remote_idx, dtype=int)
    n_total = power_matrix.shape[1]
    if len(remote_idx) != group_size:
        raise ValueError(
            f"tagged group has {len(remote_idx)} houses, expected "
            f"{group_size}")
    remote_var = group_tracking_variance(power_matrix, reference,
                                         remote_idx, n_total)
    others = np.setdiff1d(np.arange(n_total), remote_idx)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    virtual = np.empty(n_groups)
    for g in range(n_groups):
        pick = rng.choice(others, size=group_size, replace=False)
        virtual[g] = group_tracking_variance(power_matrix, reference,
                                             pick, n_total)
    in_range = bool(virtual.min() <= remote_var <= virtual.max())
    return FairnessReport(remote_variance=remote_var,
                          virtual_variances=virtual, in_range=in_range)


def switching_rates(on_matrix: np.ndarray, sample_period: float
                    ) -> np.ndarray:
    """Per-house compressor state changes per hour from an on/off
    telemetry matrix (T, n_houses)."""
    on_matrix = np.asarray(on_matrix)
    if on_matrix.shape[0] < 2:
        raise ValueError("need at least two telemetry frames")
    flips = np.sum(np.abs(np.diff(on_matrix.astype(np.int8), axis=0)),
                   axis=0)
    hours = (on_matrix.shape[0] - 1) * sample_period / 3600.0
    return flips / hours
