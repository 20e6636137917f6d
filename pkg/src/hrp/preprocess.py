"""Sensor selection, RUL capping, z-scoring, smoothing and windowing.

The steps run in a fixed order: select -> normalize -> smooth -> window.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .dataio import CMAPSS_CONSTANT_SENSORS, N_SENSORS, DatasetBundle, Trajectory

log = logging.getLogger(__name__)

DEFAULT_SENSORS = tuple(s for s in range(1, N_SENSORS + 1) if s not in CMAPSS_CONSTANT_SENSORS)

WINDOW_LENGTHS = {"FD001": 25, "FD002": 20, "FD003": 30, "FD004": 15}


class ConfigError(ValueError):
    pass


class DegenerateChannelError(ValueError):
    def __init__(self, sensor_id):
        super().__init__(f"sensor {sensor_id} has zero variance over the fitting pool")
        self.sensor_id = sensor_id


@dataclass(frozen=True)
class PreprocessConfig:
    selected_sensors: tuple = DEFAULT_SENSORS
    rul_cap: int = 125
    smoothing_s: float = 3.0
    window_length: int = 25
    stride: int = 1
    norm_fit: str = "train"  # "train" or "pooled" (train + test records)

    def __post_init__(self):
        sel = tuple(int(s) for s in self.selected_sensors)
        object.__setattr__(self, "selected_sensors", sel)
        if len(set(sel)) != len(sel):
            raise ConfigError("selected sensors must be distinct")
        if not sel or min(sel) < 1 or max(sel) > N_SENSORS:
            raise ConfigError(f"selected sensors must lie in 1..{N_SENSORS}")
        if self.rul_cap < 1 or self.window_length < 1 or self.stride < 1:
            raise ConfigError("rul_cap, window_length and stride must be positive")
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError(f"smoothing_s={self.smoothing_s} gives beta outside (0, 1]")
        if self.norm_fit not in ("train", "pooled"):
            raise ConfigError("norm_fit must be 'train' or 'pooled'")

    @property
    def beta(self) -> float:
        return 2.0 / (1.0 + self.smoothing_s)


@dataclass(frozen=True)
class NormalizationStats:
    sensor_ids: tuple
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"sensor_ids": list(self.sensor_ids),
                "mean": [float(v) for v in self.mean],
                "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["sensor_ids"]), np.array(d["mean"], dtype=float),
                   np.array(d["std"], dtype=float))


@dataclass
class WindowSet:
    """Stacked windows ``(count, L, F)`` with labels and provenance."""

    windows: np.ndarray
    labels: np.ndarray
    unit_ids: np.ndarray
    end_cycles: np.ndarray
    padded: np.ndarray
    sensor_ids: tuple
    warnings: list = field(default_factory=list)

    def __len__(self):
        return self.windows.shape[0]

    @property
    def window_length(self) -> int:
        return self.windows.shape[1]

    @property
    def n_features(self) -> int:
        return self.windows.shape[2]

    @classmethod
    def empty(cls, window_length, sensor_ids):
        return cls(np.zeros((0, window_length, len(sensor_ids))), np.zeros(0),
                   np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                   np.zeros(0, dtype=bool), tuple(sensor_ids))

    @classmethod
    def concat(cls, parts, window_length, sensor_ids):
        parts = [p for p in parts if len(p)]
        if not parts:
            out = cls.empty(window_length, sensor_ids)
        else:
            out = cls(np.concatenate([p.windows for p in parts]),
                      np.concatenate([p.labels for p in parts]),
                      np.concatenate([p.unit_ids for p in parts]),
                      np.concatenate([p.end_cycles for p in parts]),
                      np.concatenate([p.padded for p in parts]),
                      tuple(sensor_ids))
        return out

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.windows[idx], self.labels[idx], self.unit_ids[idx],
                         self.end_cycles[idx], self.padded[idx], self.sensor_ids)

    def last_per_unit(self) -> "WindowSet":
        """The final window of every unit, ordered by unit id."""
        idx = []
        for u in np.unique(self.unit_ids):
            rows = np.flatnonzero(self.unit_ids == u)
            idx.append(rows[np.argmax(self.end_cycles[rows])])
        return self.subset(np.array(idx, dtype=np.int64))

    def to_csv(self, path):
        """One row per window: provenance, label, then L*F values row-major."""
        L, F = self.window_length, self.n_features
        header = ["unit_id", "end_cycle", "padded", "label"]
        header += [f"t{t}_s{s}" for t in range(L) for s in self.sensor_ids]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            flat = self.windows.reshape(len(self), L * F)
            for k in range(len(self)):
                w.writerow([int(self.unit_ids[k]), int(self.end_cycles[k]), int(self.padded[k]),
                            repr(float(self.labels[k]))] + [repr(float(v)) for v in flat[k]])

    @classmethod
    def from_csv(cls, path) -> "WindowSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        cols = header[4:]
        sensor_ids, seen = [], set()
        for name in cols:
            sid = int(name.split("_s")[1])
            if sid in seen:
                break
            seen.add(sid)
            sensor_ids.append(sid)
        F = len(sensor_ids)
        L = len(cols) // F
        if not body:
            return cls.empty(L, sensor_ids)
        arr = np.array(body, dtype=float)
        return cls(arr[:, 4:].reshape(len(body), L, F), arr[:, 3],
                   arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64),
                   arr[:, 2].astype(bool), tuple(sensor_ids))


# ---------------------------------------------------------------------------
# Individual steps
# ---------------------------------------------------------------------------

def select_sensors(traj: Trajectory, cfg: PreprocessConfig) -> Trajectory:
    cols = []
    for sid in cfg.selected_sensors:
        if sid not in traj.sensor_ids:
            raise ConfigError(f"sensor {sid} not present in unit {traj.unit_id}")
        cols.append(traj.sensor_ids.index(sid))
    return traj.with_sensors(traj.sensors[:, cols], cfg.selected_sensors)


def cap_rul(total_life: int, cycle: int, cap: int) -> int:
    if not 1 <= cycle <= total_life:
        raise ValueError(f"cycle {cycle} outside 1..{total_life}")
    return min(total_life - cycle, cap)


def fit_normalization(trajectories) -> NormalizationStats:
    """Population mean/std per channel over all records pooled."""
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("no trajectories to fit normalization on")
    ids = trajectories[0].sensor_ids
    pool = np.concatenate([t.sensors for t in trajectories])
    mean = pool.mean(axis=0)
    std = pool.std(axis=0)
    for k, sid in enumerate(ids):
        # float rounding can leave a constant column with std ~ 1e-15 * |mean|
        if std[k] <= 1e-12 * max(1.0, abs(mean[k])):
            raise DegenerateChannelError(sid)
    return NormalizationStats(tuple(ids), mean, std)


def apply_normalization(traj: Trajectory, stats: NormalizationStats) -> Trajectory:
    cols = []
    for sid in traj.sensor_ids:
        if sid not in stats.sensor_ids:
            raise ConfigError(f"no normalization statistics for sensor {sid}")
        cols.append(stats.sensor_ids.index(sid))
    return traj.with_sensors((traj.sensors - stats.mean[cols]) / stats.std[cols])


def invert_normalization(traj: Trajectory, stats: NormalizationStats) -> Trajectory:
    cols = [stats.sensor_ids.index(s) for s in traj.sensor_ids]
    return traj.with_sensors(traj.sensors * stats.std[cols] + stats.mean[cols])


def exponential_smooth(series, beta: float) -> np.ndarray:
    """``s[0] = x[0]``, ``s[t] = beta*x[t] + (1-beta)*s[t-1]`` along axis 0."""
    if not 0.0 < beta <= 1.0:
        raise ConfigError(f"beta={beta} outside (0, 1]")
    x = np.asarray(series, dtype=float)
    if x.shape[0] == 0:
        return x.copy()
    zi = ((1.0 - beta) * x[0])[None, ...] if x.ndim > 1 else np.array([(1.0 - beta) * x[0]])
    y, _ = lfilter([beta], [1.0, beta - 1.0], x, axis=0, zi=zi)
    return y


def smooth_trajectory(traj: Trajectory, beta: float) -> Trajectory:
    return traj.with_sensors(exponential_smooth(traj.sensors, beta))


def slide_windows(traj: Trajectory, cfg: PreprocessConfig, total_life: int | None = None,
                  pad_short: bool = False) -> WindowSet:
    """Cut one processed trajectory into windows labelled by capped RUL.

    ``total_life`` defaults to the last observed cycle (run-to-failure data);
    for truncated test units pass ``last_cycle + true_rul``. Trajectories
    shorter than the window produce nothing unless ``pad_short`` is set, in
    which case the first record is repeated on the left to fill one window.
    """
    L, T = cfg.window_length, len(traj)
    life = traj.last_cycle if total_life is None else int(total_life)
    data = traj.sensors
    padded = False
    if T < L:
        if not pad_short:
            msg = f"unit {traj.unit_id}: length {T} < window length {L}, no windows"
            log.warning(msg)
            out = WindowSet.empty(L, traj.sensor_ids)
            out.warnings.append(msg)
            return out
        data = np.concatenate([np.repeat(data[:1], L - T, axis=0), data])
        padded = True
    ends = np.arange(L - 1, data.shape[0], cfg.stride)
    idx = ends[:, None] - np.arange(L - 1, -1, -1)[None, :]
    windows = data[idx]
    end_cycles = traj.cycles[ends - (data.shape[0] - T)]
    labels = np.array([cap_rul(life, int(c), cfg.rul_cap) for c in end_cycles], dtype=float)
    return WindowSet(windows, labels, np.full(len(ends), traj.unit_id, dtype=np.int64),
                     end_cycles.astype(np.int64), np.full(len(ends), padded), traj.sensor_ids)


# ---------------------------------------------------------------------------
# Whole pipeline
# ---------------------------------------------------------------------------

@dataclass
class Prepared:
    train: WindowSet
    test: WindowSet
    stats: NormalizationStats
    train_processed: list
    test_processed: list


def process_trajectories(trajectories, cfg: PreprocessConfig, stats: NormalizationStats) -> list:
    return [smooth_trajectory(apply_normalization(select_sensors(t, cfg), stats), cfg.beta)
            for t in trajectories]


def prepare(bundle: DatasetBundle, cfg: PreprocessConfig,
            stats: NormalizationStats | None = None) -> Prepared:
    """Run every step on a bundle; returns train/test windows and stats.

    When ``stats`` is given (e.g. loaded from a checkpoint) it is reused
    instead of being refit.
    """
    if stats is None:
        pool = [select_sensors(t, cfg) for t in bundle.train]
        if cfg.norm_fit == "pooled":
            pool += [select_sensors(t, cfg) for t in bundle.test]
        stats = fit_normalization(pool)
    train_p = process_trajectories(bundle.train, cfg, stats)
    test_p = process_trajectories(bundle.test, cfg, stats)
    train_parts = [slide_windows(t, cfg) for t in train_p]
    train_ws = WindowSet.concat(train_parts, cfg.window_length, cfg.selected_sensors)
    for part in train_parts:
        train_ws.warnings.extend(part.warnings)
    test_parts = [slide_windows(t, cfg, total_life=t.last_cycle + int(r), pad_short=True)
                  for t, r in zip(test_p, bundle.test_rul)]
    test_ws = WindowSet.concat(test_parts, cfg.window_length, cfg.selected_sensors)
    return Prepared(train_ws, test_ws, stats, train_p, test_p)
