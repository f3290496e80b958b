"""Reference power signals: square waves and RegD-style traces.

Traces are normalized to [-1, 1] and scaled onto the fleet's baseline
power, reference = baseline * (1 + amplitude * value), matching how a
regulation signal modulates an aggregation around its uncontrolled
draw.  Real market data is not redistributable, so a seeded synthetic
generator with the same character (2 s updates, band-limited, zero
mean) ships instead, along with an ingestion path for genuine traces.
"""
from __future__ import annotations

import csv
import importlib.resources
from dataclasses import dataclass

import numpy as np

from .errors import IngestionError, InsufficientDataError

TRACE_HEADER = ("time_s", "value")


@dataclass(frozen=True)
class ReferenceSignal:
    """Uniformly sampled power reference (W), zero-order held."""
    samples: np.ndarray
    sample_period: float
    baseline_power: float
    amplitude_fraction: float

    def __post_init__(self):
        if self.sample_period <= 0.0:
            raise ValueError("sample_period must be > 0")
        if len(self.samples) == 0:
            raise ValueError("signal needs at least one sample")

    @property
    def duration(self) -> float:
        return len(self.samples) * self.sample_period

    def value_at(self, t: float) -> float:
        """Reference at time ``t`` (s from signal start), held constant
        across each sample period and clamped at the ends."""
        i = int(t // self.sample_period)
        i = min(max(i, 0), len(self.samples) - 1)
        return float(self.samples[i])


def square_wave(baseline: float, amplitude_fraction: float, period: float,
                duration: float, sample_period: float = 2.0
                ) -> ReferenceSignal:
    """Square reference alternating baseline*(1 +/- amplitude), high first."""
    if period <= 0.0:
        raise ValueError("period must be > 0")
    n = int(round(duration / sample_period))
    t = np.arange(n) * sample_period
    high = (t % period) < 0.5 * period
    samples = baseline * (1.0 + amplitude_fraction * np.where(high, 1.0,
                                                              -1.0))
    return ReferenceSignal(samples=samples, sample_period=sample_period,
                           baseline_power=baseline,
                           amplitude_fraction=amplitude_fraction)


def _parse_trace(lines) -> tuple[np.ndarray, np.ndarray]:
    reader = csv.reader(lines)
    times: list[float] = []
    values: list[float] = []
    for line_no, row in enumerate(reader, start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if line_no == 1:
            if tuple(c.strip() for c in row) != TRACE_HEADER:
                raise IngestionError(
                    f"expected header {','.join(TRACE_HEADER)!r}", line_no)
            continue
        if len(row) != 2:
            raise IngestionError(f"expected 2 columns, got {len(row)}",
                                 line_no)
        try:
            t = float(row[0])
            v = float(row[1])
        except ValueError as exc:
            raise IngestionError(str(exc), line_no) from None
        if not (np.isfinite(t) and np.isfinite(v)):
            raise IngestionError("non-finite entry", line_no)
        if times and t <= times[-1]:
            raise IngestionError(
                f"timestamps must increase (got {t} after {times[-1]})",
                line_no)
        if not -1.0 <= v <= 1.0:
            raise IngestionError(f"value {v} outside [-1, 1]", line_no)
        times.append(t)
        values.append(v)
    if len(times) < 2:
        raise IngestionError("trace needs at least two samples")
    return np.asarray(times), np.asarray(values)


def load_trace(path, baseline: float, amplitude_fraction: float,
               sample_period: float = 2.0) -> ReferenceSignal:
    """Read a normalized two-column trace and scale it onto the baseline.

    The file is CSV with header ``time_s,value``, values in [-1, 1],
    strictly increasing timestamps.  The trace is resampled onto the
    control grid by linear interpolation (which cannot overshoot the
    source extremes).
    """
    with open(path, newline="") as fh:
        times, values = _parse_trace(fh)
    return _scale(times, values, baseline, amplitude_fraction, sample_period)


def _scale(times, values, baseline, amplitude_fraction, sample_period):
    t0, t1 = times[0], times[-1]
    grid = np.arange(t0, t1 + 0.5 * sample_period, sample_period)
    v = np.interp(grid, times, values)
    samples = baseline * (1.0 + amplitude_fraction * v)
    return ReferenceSignal(samples=samples, sample_period=sample_period,
                           baseline_power=baseline,
                           amplitude_fraction=amplitude_fraction)


def synthetic_regd(duration: float, sample_period: float = 2.0,
                   seed: int = 0,
                   band: tuple[float, float] = (1.0 / 600.0, 1.0 / 20.0)
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Generate a RegD-like normalized trace (times, values).

    Band-limited Gaussian noise shaped in the frequency domain: flat
    between the band edges, zero DC (the signal is energy-neutral, like
    the fast regulation product it stands in for), then peak-normalized
    to [-1, 1].  Deterministic per seed.
    """
    n = int(round(duration / sample_period))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    spectrum = rng.normal(size=n // 2 + 1) \
        + 1j * rng.normal(size=n // 2 + 1)
    freqs = np.fft.rfftfreq(n, d=sample_period)
    mask = (freqs >= band[0]) & (freqs <= band[1])
    spectrum[~mask] = 0.0
    spectrum[0] = 0.0
    x = np.fft.irfft(spectrum, n=n)
    x = x / np.max(np.abs(x))
    t = np.arange(n) * sample_period
    return t, x


def write_trace(path, times: np.ndarray, values: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for t, v in zip(times, values):
            w.writerow([f"{t:.1f}", f"{v:.8f}"])


def bundled_regd_trace(baseline: float, amplitude_fraction: float,
                       sample_period: float = 2.0) -> ReferenceSignal:
    """The packaged synthetic RegD-like trace scaled onto a baseline."""
    ref = importlib.resources.files("acfleet.data") / "regd_like.csv"
    with ref.open(newline="") as fh:
        times, values = _parse_trace(fh)
    return _scale(times, values, baseline, amplitude_fraction, sample_period)


def baseline_power(aggregate_power: np.ndarray, sample_period: float,
                   natural_period: float, min_periods: float = 3.0) -> float:
    """Uncontrolled time-average aggregate power over a telemetry window.

    The window must span at least ``min_periods`` mean natural cycle
    periods or the average is dominated by cycle phase.
    """
    span = len(aggregate_power) * sample_period
    if span < min_periods * natural_period:
        raise InsufficientDataError(
            f"baseline window {span:.0f} s shorter than {min_periods:g} "
            f"natural periods ({min_periods * natural_period:.0f} s)")
    return float(np.mean(aggregate_power))
