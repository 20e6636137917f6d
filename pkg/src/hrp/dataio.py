"""C-MAPSS text I/O and a seeded synthetic run-to-failure generator."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

N_SETTINGS = 3
N_SENSORS = 21
N_COLUMNS = 2 + N_SETTINGS + N_SENSORS

# Channels that stay flat in the public FD001/FD003 data (1-based).
CMAPSS_CONSTANT_SENSORS = (1, 5, 6, 10, 16, 18, 19)


class ParseError(ValueError):
    """A line of an input file could not be parsed."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class StructureError(ValueError):
    """Parsed records do not form valid trajectories."""


class RawRecord(NamedTuple):
    unit_id: int
    cycle: int
    op_settings: tuple
    sensors: tuple


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One engine's time series, stored column-wise.

    ``sensors`` has one column per entry of ``sensor_ids`` (1-based ids), so
    reduced or transformed trajectories keep track of which channels remain.
    """

    unit_id: int
    cycles: np.ndarray
    settings: np.ndarray
    sensors: np.ndarray
    sensor_ids: tuple = tuple(range(1, N_SENSORS + 1))

    def __post_init__(self):
        if self.sensors.ndim != 2 or self.sensors.shape[0] != len(self.cycles):
            raise StructureError(f"unit {self.unit_id}: sensor matrix shape mismatch")
        if self.sensors.shape[1] != len(self.sensor_ids):
            raise StructureError(f"unit {self.unit_id}: {self.sensors.shape[1]} columns "
                                 f"but {len(self.sensor_ids)} sensor ids")

    def __len__(self):
        return len(self.cycles)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (self.unit_id == other.unit_id
                and self.sensor_ids == other.sensor_ids
                and np.array_equal(self.cycles, other.cycles)
                and np.array_equal(self.settings, other.settings)
                and np.array_equal(self.sensors, other.sensors))

    @property
    def last_cycle(self) -> int:
        return int(self.cycles[-1])

    @property
    def records(self) -> Iterator[RawRecord]:
        for k in range(len(self)):
            yield RawRecord(self.unit_id, int(self.cycles[k]),
                            tuple(self.settings[k]), tuple(self.sensors[k]))

    def with_sensors(self, sensors: np.ndarray, sensor_ids=None) -> "Trajectory":
        return Trajectory(self.unit_id, self.cycles, self.settings, sensors,
                          self.sensor_ids if sensor_ids is None else tuple(sensor_ids))


@dataclass(frozen=True)
class DatasetBundle:
    train: list
    test: list
    test_rul: list

    def __post_init__(self):
        if len(self.test_rul) != len(self.test):
            raise StructureError(f"{len(self.test)} test trajectories but "
                                 f"{len(self.test_rul)} RUL labels")


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for :func:`generate_synthetic`.

    ``noise_scale`` is either a scalar or one value per sensor.
    ``constant_sensors`` defaults to the C-MAPSS flat channels when
    ``n_sensors == 21`` and to sensor 1 otherwise; ``drift_sensors`` defaults to
    every non-constant sensor. Sensors that are neither constant nor drifting
    carry noise only.
    """

    n_engines: int = 20
    n_sensors: int = N_SENSORS
    life_range: tuple = (140, 260)
    degradation_onset_fraction: float = 0.4
    noise_scale: object = 0.05
    seed: int = 0
    n_test_engines: int | None = None
    constant_sensors: tuple | None = None
    drift_sensors: tuple | None = None
    drift_kind: str = "mixed"  # mixed | linear | exponential

    def __post_init__(self):
        lo, hi = self.life_range
        if self.n_engines < 1 or self.n_sensors < 1:
            raise ValueError("n_engines and n_sensors must be positive")
        if not 2 <= lo <= hi:
            raise ValueError(f"invalid life_range {self.life_range}")
        if not 0.0 < self.degradation_onset_fraction < 1.0:
            raise ValueError("degradation_onset_fraction must lie in (0, 1)")
        if np.any(np.asarray(self.noise_scale, dtype=float) < 0):
            raise ValueError("noise_scale must be non-negative")
        if self.drift_kind not in ("mixed", "linear", "exponential"):
            raise ValueError(f"unknown drift_kind {self.drift_kind!r}")

    def noise_vector(self) -> np.ndarray:
        noise = np.broadcast_to(np.asarray(self.noise_scale, dtype=float), (self.n_sensors,))
        return noise.copy()

    def constant_set(self) -> tuple:
        if self.constant_sensors is not None:
            return tuple(self.constant_sensors)
        if self.n_sensors == N_SENSORS:
            return CMAPSS_CONSTANT_SENSORS
        return (1,)

    def drift_set(self) -> tuple:
        if self.drift_sensors is not None:
            return tuple(self.drift_sensors)
        const = set(self.constant_set())
        return tuple(s for s in range(1, self.n_sensors + 1) if s not in const)


# ---------------------------------------------------------------------------
# Parsing and formatting
# ---------------------------------------------------------------------------

def _lines(text) -> Iterable[str]:
    if isinstance(text, str):
        return io.StringIO(text)
    return text


def parse_cmapss(text) -> list:
    """Parse whitespace-delimited C-MAPSS rows into trajectories.

    ``text`` may be a string or any iterable of lines (an open file works).
    Rows are grouped by unit id; within a unit, cycles must run 1, 2, ..., T.
    """
    rows: dict[int, list] = {}
    order: list[int] = []
    for lineno, line in enumerate(_lines(text), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != N_COLUMNS:
            raise ParseError(lineno, f"expected {N_COLUMNS} fields, got {len(tokens)}")
        try:
            values = [float(tok) for tok in tokens]
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
        if not all(np.isfinite(values)):
            raise ParseError(lineno, "non-finite value")
        unit, cycle = values[0], values[1]
        if unit != int(unit) or cycle != int(cycle) or unit < 1 or cycle < 1:
            raise ParseError(lineno, "unit id and cycle must be positive integers")
        unit = int(unit)
        if unit not in rows:
            rows[unit] = []
            order.append(unit)
        rows[unit].append(values)

    out = []
    for unit in sorted(order):
        arr = np.array(rows[unit], dtype=float)
        arr = arr[np.argsort(arr[:, 1], kind="stable")]
        cycles = arr[:, 1].astype(np.int64)
        if not np.array_equal(cycles, np.arange(1, len(cycles) + 1)):
            raise StructureError(f"unit {unit}: cycles are not consecutive from 1")
        out.append(Trajectory(unit, cycles, arr[:, 2:2 + N_SETTINGS].copy(),
                              arr[:, 2 + N_SETTINGS:].copy()))
    return out


def parse_rul_labels(text) -> list:
    """Parse one non-negative integer per line."""
    labels = []
    for lineno, line in enumerate(_lines(text), start=1):
        tok = line.strip()
        if not tok:
            continue
        try:
            value = int(tok)
        except ValueError:
            raise ParseError(lineno, f"not an integer: {tok!r}") from None
        if value < 0:
            raise ParseError(lineno, f"negative RUL {value}")
        labels.append(value)
    return labels


def _fmt(x: float) -> str:
    return repr(float(x))


def format_cmapss(trajectories: Sequence[Trajectory]) -> str:
    """Serialize full-width (21-sensor) trajectories back to C-MAPSS text."""
    buf = io.StringIO()
    for traj in trajectories:
        if traj.sensors.shape[1] != N_SENSORS:
            raise StructureError("only 21-sensor trajectories can be written as C-MAPSS text")
        for k in range(len(traj)):
            fields = [str(traj.unit_id), str(int(traj.cycles[k]))]
            fields += [_fmt(v) for v in traj.settings[k]]
            fields += [_fmt(v) for v in traj.sensors[k]]
            buf.write(" ".join(fields))
            buf.write("\n")
    return buf.getvalue()


def format_rul_labels(labels: Sequence[int]) -> str:
    return "".join(f"{int(v)}\n" for v in labels)


def load_cmapss_dir(directory, name: str) -> DatasetBundle:
    """Read ``train_<name>.txt``, ``test_<name>.txt`` and ``RUL_<name>.txt``."""
    from pathlib import Path

    d = Path(directory)
    with open(d / f"train_{name}.txt") as fh:
        train = parse_cmapss(fh)
    with open(d / f"test_{name}.txt") as fh:
        test = parse_cmapss(fh)
    with open(d / f"RUL_{name}.txt") as fh:
        rul = parse_rul_labels(fh)
    return DatasetBundle(train, test, rul)


def write_cmapss_dir(bundle: DatasetBundle, directory, name: str) -> list:
    from pathlib import Path

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = [d / f"train_{name}.txt", d / f"test_{name}.txt", d / f"RUL_{name}.txt"]
    paths[0].write_text(format_cmapss(bundle.train))
    paths[1].write_text(format_cmapss(bundle.test))
    paths[2].write_text(format_rul_labels(bundle.test_rul))
    return paths


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SensorProfile:
    """Noise-free shape of one synthetic channel.

    Before onset the channel sits at ``baseline``; after onset it moves by
    ``amplitude * shape(u)`` where ``u`` runs from 0 at onset to 1 at failure
    and ``shape`` is ``u`` (linear) or ``expm1(rate*u)/expm1(rate)``.
    """

    sensor_id: int
    baseline: float
    amplitude: float
    kind: str = "flat"  # flat | linear | exponential
    rate: float = 0.0


def onset_cycle(total_life: int, fraction: float) -> int:
    return int(np.floor(fraction * total_life))


def drift_shape(cycles: np.ndarray, total_life: int, onset: int, kind: str, rate: float) -> np.ndarray:
    u = np.clip((cycles - onset) / float(total_life - onset), 0.0, 1.0)
    if kind == "linear":
        return u
    if kind == "exponential":
        return np.expm1(rate * u) / np.expm1(rate)
    return np.zeros_like(u)


def sensor_profiles(spec: SyntheticSpec) -> list:
    """Per-sensor baselines and drift parameters drawn from ``spec.seed``."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    const = set(spec.constant_set())
    drift = set(spec.drift_set())
    profiles = []
    for sid in range(1, spec.n_sensors + 1):
        baseline = float(rng.uniform(1.0, 100.0))
        amp = float(rng.uniform(0.5, 2.0) * rng.choice([-1.0, 1.0]))
        rate = float(rng.uniform(1.0, 4.0))
        if sid in const or sid not in drift:
            profiles.append(SensorProfile(sid, baseline, 0.0))
        else:
            kind = spec.drift_kind
            if kind == "mixed":
                kind = "linear" if sid % 2 else "exponential"
            profiles.append(SensorProfile(sid, baseline, amp, kind, rate))
    return profiles


def _engine(unit_id: int, total_life: int, spec: SyntheticSpec, profiles, noise, rng) -> Trajectory:
    cycles = np.arange(1, total_life + 1, dtype=np.int64)
    onset = onset_cycle(total_life, spec.degradation_onset_fraction)
    const = set(spec.constant_set())
    sensors = np.empty((total_life, spec.n_sensors))
    eps = rng.standard_normal((total_life, spec.n_sensors))
    for k, prof in enumerate(profiles):
        col = prof.baseline + prof.amplitude * drift_shape(cycles, total_life, onset, prof.kind, prof.rate)
        if prof.sensor_id not in const:
            col = col + noise[k] * eps[:, k]
        sensors[:, k] = col
    settings = 1e-3 * rng.standard_normal((total_life, N_SETTINGS))
    return Trajectory(unit_id, cycles, settings, sensors, tuple(range(1, spec.n_sensors + 1)))


def generate_synthetic(spec: SyntheticSpec) -> DatasetBundle:
    """Deterministic synthetic bundle; equal specs give bitwise-equal output.

    Test engines are independent run-to-failure engines truncated at a random
    cycle; the recorded RUL is the number of cycles cut off.
    """
    profiles = sensor_profiles(spec)
    noise = spec.noise_vector()
    rng = np.random.Generator(np.random.PCG64([spec.seed, 1]))
    lo, hi = spec.life_range
    n_test = spec.n_engines if spec.n_test_engines is None else spec.n_test_engines

    train = []
    for u in range(1, spec.n_engines + 1):
        life = int(rng.integers(lo, hi, endpoint=True))
        train.append(_engine(u, life, spec, profiles, noise, rng))

    test, rul = [], []
    for u in range(1, n_test + 1):
        life = int(rng.integers(lo, hi, endpoint=True))
        full = _engine(u, life, spec, profiles, noise, rng)
        keep = int(rng.integers(max(1, life // 4), life - 1, endpoint=True))
        test.append(Trajectory(u, full.cycles[:keep].copy(), full.settings[:keep].copy(),
                               full.sensors[:keep].copy(), full.sensor_ids))
        rul.append(life - keep)
    return DatasetBundle(train, test, rul)
