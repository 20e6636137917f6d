"""Point and interval scores, plus Gaussian KDE for feature distributions."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np


class DegenerateTargetError(ValueError):
    pass


def _pair(a, b, what="inputs"):
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.size == 0 or a.shape != b.shape:
        raise ValueError(f"{what} must be non-empty and of equal length "
                         f"(got {a.size} and {b.size})")
    return a, b


def _bounds(intervals):
    """Accept a sequence of objects with ``lower``/``upper`` or an (N, 2) array."""
    if isinstance(intervals, np.ndarray):
        arr = np.asarray(intervals, dtype=float).reshape(-1, 2)
        return arr[:, 0], arr[:, 1]
    lo = np.array([iv.lower for iv in intervals], dtype=float)
    hi = np.array([iv.upper for iv in intervals], dtype=float)
    return lo, hi


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def target_range(truth) -> float:
    truth = np.asarray(truth, dtype=float)
    return float(truth.max() - truth.min())


def naw(intervals, truth) -> float:
    """Mean interval width divided by the range of the true targets."""
    lo, hi = _bounds(intervals)
    _, truth = _pair(lo, truth, "intervals and truths")
    R = target_range(truth)
    if R <= 0:
        raise DegenerateTargetError("true targets have zero range")
    return float(np.sum(hi - lo) / (R * len(truth)))


def coverage(intervals, truth) -> float:
    """Fraction of truths inside the closed interval ``[lower, upper]``."""
    lo, hi = _bounds(intervals)
    _, truth = _pair(lo, truth, "intervals and truths")
    return float(np.mean((truth >= lo) & (truth <= hi)))


def cwc(naw_val: float, coverage_val: float, alpha: float) -> float:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return float(naw_val * math.exp((1.0 - coverage_val) / alpha))


@dataclass
class MetricsReport:
    rmse: float
    naw: float
    coverage: float
    cwc: float
    n: int
    alpha: float
    target_range: float
    mode: str = "per-engine"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        d = asdict(self)
        keys = list(d)
        return ",".join(keys) + "\n" + ",".join(str(d[k]) for k in keys) + "\n"


def evaluate(point, lower, upper, truth, alpha: float, mode: str = "per-engine") -> MetricsReport:
    point, truth = _pair(point, truth, "predictions and truths")
    bounds = np.column_stack([lower, upper])
    if bounds.shape[0] != truth.size:
        raise ValueError("interval count does not match truth count")
    nv = naw(bounds, truth)
    cv = coverage(bounds, truth)
    return MetricsReport(rmse(point, truth), nv, cv, cwc(nv, cv, alpha), int(truth.size),
                         float(alpha), target_range(truth), mode)


# ---------------------------------------------------------------------------
# KDE
# ---------------------------------------------------------------------------

def silverman_bandwidth(samples) -> float:
    """``0.9 * min(std, IQR/1.34) * n^(-1/5)``."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size < 2:
        raise ValueError("automatic bandwidth needs at least two samples")
    sd = x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    if spread <= 0:
        spread = sd  # IQR collapses for heavily tied samples
    if not spread > 0:
        raise ValueError("samples have zero spread; pass an explicit bandwidth")
    return float(0.9 * spread * x.size ** (-0.2))


@dataclass(frozen=True, eq=False)
class KDEstimate:
    samples: np.ndarray
    bandwidth: float

    def __call__(self, grid) -> np.ndarray:
        grid = np.asarray(grid, dtype=float)
        u = (grid.reshape(-1, 1) - self.samples[None, :]) / self.bandwidth
        dens = np.exp(-0.5 * u * u).sum(axis=1) / (self.samples.size * self.bandwidth * math.sqrt(2 * math.pi))
        return dens.reshape(grid.shape)

    def grid(self, n: int = 512, pad: float = 4.0) -> np.ndarray:
        return np.linspace(self.samples.min() - pad * self.bandwidth,
                           self.samples.max() + pad * self.bandwidth, n)


def kde(samples, bandwidth: float | None = None) -> KDEstimate:
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValueError("no samples")
    bw = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if bw <= 0:
        raise ValueError("bandwidth must be positive")
    return KDEstimate(x, bw)


def write_kde_csv(path, curves):
    """``curves`` maps ``(sensor_id, split)`` to a :class:`KDEstimate`."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sensor_id", "split", "x", "density"])
        for (sid, split), est in curves.items():
            g = est.grid()
            for x, d in zip(g, est(g)):
                w.writerow([sid, split, repr(float(x)), repr(float(d))])
