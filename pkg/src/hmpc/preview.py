"""Demand scenarios: paired accurate/approximate series with windowed previews."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


def _as_series(name, values):
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name}: expected a (steps, h) series, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class DemandScenario:
    """Actual and approximate demand series on the fine time grid.

    ``actual`` is what the plant experiences and what short-range previews
    draw from; ``approximate`` is the long-range forecast handed to the
    scheduling layer.  Windows past the end of a series hold the last value,
    so every preview request is total.
    """

    actual: np.ndarray
    approximate: np.ndarray
    duration_steps: int

    def __post_init__(self):
        actual = _as_series("actual", self.actual)
        approx = _as_series("approximate", self.approximate)
        if actual.shape[1] != approx.shape[1]:
            raise ValueError(
                f"demand dimension mismatch: actual {actual.shape[1]}, "
                f"approximate {approx.shape[1]}"
            )
        if self.duration_steps < 1:
            raise ValueError("duration_steps must be >= 1")
        if min(actual.shape[0], approx.shape[0]) < self.duration_steps:
            raise ValueError(
             f"series shorter than duration_steps={self.duration_steps}: "
                f"actual {actual.shape[0]}, approximate {approx.shape[0]}"
            )
        actual.setflags(write=False)
        approx.setflags(write=False)
        object.__setattr__(self, "actual", actual)
        object.__setattr__(self, "approximate", approx)

    @property
    def n_demands(self):
        return self.actual.shape[1]

    def demand_at(self, k):
        """Actual demand applied to the plant at fine step k (hold-last)."""
        idx = min(int(k), self.actual.shape[0] - 1)
        return self.actual[idx]

    def accurate_preview(self, k, length):
        """actual[k .. k+length-1], holding the final value past the end."""
        return _window(self.actual, int(k), int(length), stride=1)

    def approximate_preview(self, k_s, length, nu):
        """Approximate series sampled every nu fine steps from k_s*nu."""
        if nu < 1:
            raise ValueError(f"nu must be >= 1, got {nu}")
        return _window(self.approximate, int(k_s) * int(nu), int(length), stride=int(nu))

    @classmethod
    def from_csv(cls, actual_path, approximate_path, duration_steps):
        """Load both fidelities from two-column (step, value) CSV files."""
        return cls(
            actual=_read_series_csv(actual_path),
            approximate=_read_series_csv(approximate_path),
            duration_steps=duration_steps,
        )


def _window(series, start, length, stride):
    if start < 0:
        raise ValueError(f"window start must be >= 0, got {start}")
    if length < 0:
        raise ValueError(f"window length must be >= 0, got {length}")
    last = series.shape[0] - 1
    idx = np.minimum(start + stride * np.arange(length), last)
    return series[idx].copy()


def _read_series_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for record in csv.reader(fh):
            if not record or record[0].strip().lower() == "step":
                continue
            rows.append((int(record[0]), float(record[1])))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    rows.sort(key=lambda r: r[0])
    steps = [r[0] for r in rows]
    if steps != list(range(steps[0], steps[0] + len(steps))):
        raise ValueError(f"{path}: steps must be consecutive integers")
    return np.array([[r[1]] for r in rows])
