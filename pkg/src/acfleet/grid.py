"""Distribution-transformer loading bookkeeping.

Houses are partitioned across pole-top transformers (a few houses
each).  Ratings are auto-sized so the uncontrolled fleet peaks at a
0.9 p.u. coincident loading, which leaves regulation-induced power
swings free to push individual transformers past 1 p.u.  The model
tracks, per transformer, the worst consecutive overload run, the peak
loading, and how often two or more of its houses start their
compressors in the same control frame (stacked inrush is what actually
trips protection, not the steady draw).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import AccountingError


@dataclass(frozen=True)
class TransformerSpec:
    transformer_id: str
    rating_w: float
    assigned_houses: tuple

    def __post_init__(self):
        if len(self.assigned_houses) == 0:
            raise ValueError("transformer needs at least one house")


def assign_houses(house_ids, n_transformers: int, seed: int = 0,
                  sizes: str = "uniform") -> list[TransformerSpec]:
    """Deterministically partition houses across transformers.

    ``sizes="uniform"`` shuffles the ids with the seed and deals them
    round-robin, so group sizes differ by at most one.  Ratings are
    left unsized (NaN) until ``GridModel.size_ratings`` has seen an
    uncontrolled window.
    """
    if sizes != "uniform":
        raise ValueError(f"unknown size distribution {sizes!r}")
    ids = list(house_ids)
    if n_transformers < 1 or n_transformers > len(ids):
        raise ValueError("need 1 <= n_transformers <= n_houses")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    order = rng.permutation(len(ids))
    width = max(3, len(str(n_transformers - 1)))
    groups: list[list] = [[] for _ in range(n_transformers)]
    for k, j in enumerate(order):
        groups[k % n_transformers].append(ids[j])
    return [TransformerSpec(transformer_id=f"t{i:0{width}d}",
                            rating_w=float("nan"),
                            assigned_houses=tuple(g))
            for i, g in enumerate(groups)]


@dataclass(frozen=True)
class OverloadReport:
    transformer_id: str
    rating_w: float
    peak_loading_pu: float
    overload_sample_count: int
    max_consecutive_overload_s: float
    simultaneous_inrush_events: int


class GridModel:
    """Accumulates loading statistics frame by frame."""

    def __init__(self, specs: list[TransformerSpec]):
        self.specs = list(specs)
        self._house_to_tr: dict = {}
        for i, spec in enumerate(self.specs):
            for hid in spec.assigned_houses:
                if hid in self._house_to_tr:
                    raise AccountingError(
                        f"house {hid!r} assigned to two transformers")
                self._house_to_tr[hid] = i
        self.ratings = np.array([s.rating_w for s in self.specs])
        n = len(self.specs)
        self.peak_loading = np.zeros(n)
        self.overload_samples = np.zeros(n, dtype=int)
        self.max_overload_run = np.zeros(n)
        self.inrush_events = np.zeros(n, dtype=int)
        self._current_run = np.zeros(n)
        self._tr_index_cache: dict = {}

    def _tr_index(self, house_ids) -> np.ndarray:
        key = tuple(house_ids)
        cached = self._tr_index_cache.get(key)
        if cached is not None:
            return cached
        try:
            idx = np.array([self._house_to_tr[h] for h in key],
                           dtype=np.intp)
        except KeyError as exc:
            raise AccountingError(
                f"house {exc.args[0]!r} not assigned to any transformer"
            ) from None
        if len(key) != len(self._house_to_tr):
            raise AccountingError(
                f"frame carries {len(key)} houses, grid expects "
                f"{len(self._house_to_tr)}")
        self._tr_index_cache = {key: idx}
        return idx

    def size_ratings(self, house_ids, power_matrix: np.ndarray,
                     headroom: float = 0.9) -> None:
        """Set ratings so each transformer's observed uncontrolled peak
        sits at ``headroom`` p.u.  ``power_matrix`` is (T, n_houses) in
        the order of ``house_ids``."""
        if not 0.0 < headroom <= 1.0:
            raise ValueError("headroom must be in (0, 1]")
        idx = self._tr_index(house_ids)
        power_matrix = np.asarray(power_matrix, dtype=float)
        n_tr = len(self.specs)
        per_tr = np.zeros((power_matrix.shape[0], n_tr))
        for t in range(power_matrix.shape[0]):
            per_tr[t] = np.bincount(idx, weights=power_matrix[t],
                                    minlength=n_tr)
        peaks = per_tr.max(axis=0)
        if np.any(peaks <= 0.0):
            raise AccountingError(
                "a transformer saw zero peak power over the sizing window")
        self.ratings = peaks / headroom
        self.specs = [replace(s, rating_w=float(r))
                      for s, r in zip(self.specs, self.ratings)]

    def update_loading(self, house_ids, power_w: np.ndarray,
                       went_on: np.ndarray, dt: float) -> np.ndarray:
        """Fold one telemetry frame in.  Returns per-transformer loading
        in p.u. for the frame."""
        if np.any(~np.isfinite(self.ratings)):
            raise AccountingError("ratings are unsized; call size_ratings "
                                  "over an uncontrolled window first")
        idx = self._tr_index(house_ids)
        n_tr = len(self.specs)
        tr_power = np.bincount(idx, weights=np.asarray(power_w, dtype=float),
                               minlength=n_tr)
        loading = tr_power / self.ratings
        np.maximum(self.peak_loading, loading, out=self.peak_loading)
        over = loading > 1.0
        self.overload_samples += over
        self._current_run = np.where(over, self._current_run + dt, 0.0)
        np.maximum(self.max_overload_run, self._current_run,
                   out=self.max_overload_run)
        starts = np.bincount(idx, weights=np.asarray(went_on, dtype=float),
                             minlength=n_tr)
        self.inrush_events += starts >= 2
        return loading

    def report(self) -> list[OverloadReport]:
        return [OverloadReport(
            transformer_id=s.transformer_id,
            rating_w=float(self.ratings[i]),
            peak_loading_pu=float(self.peak_loading[i]),
            overload_sample_count=int(self.overload_samples[i]),
            max_consecutive_overload_s=float(self.max_overload_run[i]),
            simultaneous_inrush_events=int(self.inrush_events[i]))
            for i, s in enumerate(self.specs)]

    def summary(self) -> dict:
        """Fleet-level worst-case figures for result tables."""
        return {
            "max_consecutive_overload_s": float(self.max_overload_run.max()),
            "peak_loading_pu": float(self.peak_loading.max()),
            "simultaneous_inrush_events": int(self.inrush_events.sum()),
        }
