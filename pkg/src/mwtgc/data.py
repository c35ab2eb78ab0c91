"""Speed series I/O, day-aligned splits, normalisation, windowing, synthetic data."""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import InputError
from .graph import Connection, RoadNetwork, RoadSegment
from .numerics import make_rng

log = logging.getLogger(__name__)

STEP = pd.Timedelta(minutes=5)
STEPS_PER_DAY = 288


@dataclass
class SpeedSeries:
    """N x T speeds (km/h) on a regular 5-minute grid."""

    values: np.ndarray
    timestamps: pd.DatetimeIndex
    names: tuple
    imputed: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.names = tuple(self.names)
        if self.values.shape != (len(self.names), len(self.timestamps)):
            raise InputError(f"speed matrix shape {self.values.shape} does not match "
                             f"{len(self.names)} segments x {len(self.timestamps)} timestamps")

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def t(self):
        return self.values.shape[1]


def load_speeds(path, network):
    """Read ``timestamp,<seg_id>...`` CSV and align its columns to ``network``.

    Missing cells and missing 5-minute rows are filled by per-segment linear
    interpolation (nearest value at the ends); the fill count is reported.
    """
    frame = pd.read_csv(path, dtype={"timestamp": str}, float_precision="round_trip")
    if frame.columns[0] != "timestamp":
        raise InputError(f"{path}: first column must be 'timestamp', got {frame.columns[0]!r}")
    cols = [str(c).strip() for c in frame.columns[1:]]
    known = set(network.names)
    unknown = [c for c in cols if c not in known]
    missing = [n for n in network.names if n not in set(cols)]
    if unknown or missing:
        parts = []
        if unknown:
            parts.append(f"unknown segment columns {unknown}")
        if missing:
            parts.append(f"segments without a column {missing}")
        raise InputError(f"{path}: " + "; ".join(parts), offenders=unknown + missing)
    frame.columns = ["timestamp"] + cols
    stamps = pd.to_datetime(frame["timestamp"])
    if stamps.duplicated().any():
        raise InputError(f"{path}: duplicate timestamps", offenders=list(stamps[stamps.duplicated()].astype(str)))
    frame = frame.drop(columns="timestamp").set_index(stamps).sort_index()
    frame = frame.apply(pd.to_numeric, errors="coerce")
    grid = pd.date_range(frame.index[0], frame.index[-1], freq=STEP)
    off_grid = frame.index.difference(grid)
    if len(off_grid):
        raise InputError(f"{path}: timestamps off the 5-minute grid", offenders=list(off_grid.astype(str)))
    frame = frame.reindex(grid)
    holes = int(frame.isna().sum().sum())
    if holes:
        all_empty = [c for c in cols if frame[c].isna().all()]
        if all_empty:
            raise InputError(f"{path}: no observations for segments {all_empty}", offenders=all_empty)
        frame = frame.interpolate(method="linear", limit_direction="both")
        log.info("imputed %d missing speed cells", holes)
    values = frame[list(network.names)].to_numpy(dtype=np.float64).T
    if (values < 0).any():
        raise InputError(f"{path}: negative speeds present")
    return SpeedSeries(values, grid, network.names, imputed=holes)


def save_speeds(series, path):
    frame = pd.DataFrame(series.values.T, columns=list(series.names))
    frame.insert(0, "timestamp", series.timestamps.strftime("%Y-%m-%dT%H:%M:%S"))
    frame.to_csv(path, index=False, lineterminator="\n")


# --------------------------------------------------------------------------
# splits and windows


@dataclass(frozen=True)
class SplitSpec:
    train_days: int = 21
    val_days: int = 2
    test_days: int = 7
    steps_per_day: int = STEPS_PER_DAY

    def __post_init__(self):
        if min(self.train_days, self.val_days, self.test_days) < 1 or self.steps_per_day < 1:
            raise ValueError("split lengths must be positive")

    def bounds(self, t):
        """Half-open ``(start, stop)`` step ranges for train/val/test."""
        d = self.steps_per_day
        a = self.train_days * d
        b = a + self.val_days * d
        c = b + self.test_days * d
        if c > t:
            raise InputError(f"series has {t} steps but the split needs {c} "
                             f"({self.train_days}+{self.val_days}+{self.test_days} days)")
        return {"train": (0, a), "val": (a, b), "test": (b, c)}


@dataclass
class Normalizer:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError("normalizer std must be positive")

    @classmethod
    def fit(cls, values):
        values = np.asarray(values, dtype=np.float64)
        return cls(float(values.mean()), float(values.std()))

    def forward(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


@dataclass
class Windows:
    """Stride-1 windows over one split; ``starts`` are absolute step indices.

    ``data`` is the full (T, N) series (normalised); a window starting at
    ``s`` uses steps ``s..s+h-1`` as input and ``s+h..s+h+T_p-1`` as target.
    """

    data: np.ndarray
    starts: np.ndarray
    h: int
    horizon: int
    span: tuple = field(default=(0, 0))

    def __len__(self):
        return len(self.starts)

    def inputs(self, idx=None):
        s = self.starts if idx is None else self.starts[idx]
        return self.data[s[:, None] + np.arange(self.h)]

    def targets(self, idx=None):
        s = self.starts if idx is None else self.starts[idx]
        return self.data[s[:, None] + self.h + np.arange(self.horizon)]


def window_count(t, h, horizon):
    return max(0, t - (h + horizon) + 1)


def window_dataset(series, h, horizon, split, normalizer=None):
    """Return ``({"train", "val", "test"} -> Windows, normalizer)``.

    The normaliser is fitted on the training span unless one is given.
    """
    if h < 1 or horizon < 1:
        raise ValueError("h and horizon must be >= 1")
    spans = split.bounds(series.t)
    if normalizer is None:
        a, b = spans["train"]
        normalizer = Normalizer.fit(series.values[:, a:b])
    data = normalizer.forward(series.values.T)
    out = {}
    need = h + horizon
    for name, (a, b) in spans.items():
        if b - a < need:
            raise InputError(f"{name} split has {b - a} steps; at least h + T_p = {need} are required")
        out[name] = Windows(data, np.arange(a, b - need + 1), h, horizon, (a, b))
    return out, normalizer


# --------------------------------------------------------------------------
# synthetic networks and speeds


@dataclass(frozen=True)
class SynthSpec:
    n_segments: int = 30
    days: int = 30
    topology: str = "grid"
    spacing_m: float = 500.0
    speed_limits: tuple = (40.0, 60.0, 80.0)
    diffusion: float = 0.3
    relaxation: float = 0.1
    amplitude: float = 0.4
    noise_std: float = 0.02
    persistence: float = 0.98
    seed: int = 42
    start: str = "2018-04-01T00:00:00"

    def __post_init__(self):
        if self.n_segments < 2 or self.days < 1:
            raise ValueError("need at least 2 segments and 1 day")
        if self.topology not in ("grid", "ring"):
            raise ValueError("topology must be 'grid' or 'ring'")
        if not (0 <= self.diffusion <= 1 and 0 <= self.relaxation <= 1 and 0 <= self.persistence < 1):
            raise ValueError("diffusion, relaxation in [0, 1]; persistence in [0, 1)")
        if self.amplitude < 0 or self.noise_std < 0 or self.amplitude >= 0.95:
            raise ValueError("amplitude in [0, 0.95) and noise_std >= 0 required")


def _grid_network(spec, rng):
    # smallest near-square lattice with enough two-way street segments
    rows = 2
    while True:
        cols = rows + 1
        if 2 * (rows * (cols - 1) + cols * (rows - 1)) >= spec.n_segments:
            break
        rows += 1
    streets = []  # (u, v, line id)
    for r in range(rows):
        for c in range(cols - 1):
            streets.append(((r, c), (r, c + 1), ("h", r)))
    for c in range(cols):
        for r in range(rows - 1):
            streets.append(((r, c), (r + 1, c), ("v", c)))
    lines = sorted({s[2] for s in streets})
    limit_of = {ln: float(rng.choice(spec.speed_limits)) for ln in lines}
    directed = []
    for u, v, ln in streets:
        directed.append((u, v, ln))
        directed.append((v, u, ln))
    directed = directed[:spec.n_segments]
    segments = []
    for i, (u, v, ln) in enumerate(directed):
        (y0, x0), (y1, x1) = u, v
        dx, dy = (x1 - x0) * spec.spacing_m, (y1 - y0) * spec.spacing_m
        mid = ((x0 + x1) / 2 * spec.spacing_m, (y0 + y1) / 2 * spec.spacing_m)
        segments.append(RoadSegment(i, limit_of[ln], mid, math.atan2(dy, dx), spec.spacing_m))
    starts_at = {}
    for i, (u, v, _) in enumerate(directed):
        starts_at.setdefault(u, []).append(i)
    connections = []
    for i, (u, v, _) in enumerate(directed):
        for j in starts_at.get(v, []):
            connections.append(Connection(i, j, directed[j][1] == u))
    return RoadNetwork(segments, connections)


def _ring_network(spec, rng):
    n = spec.n_segments
    radius = n * spec.spacing_m / (2 * math.pi)
    block = max(1, n // 5)
    limits = [float(rng.choice(spec.speed_limits)) for _ in range(math.ceil(n / block))]
    segments = []
    for i in range(n):
        a0, a1 = 2 * math.pi * i / n, 2 * math.pi * (i + 1) / n
        p0 = np.array([math.cos(a0), math.sin(a0)]) * radius
        p1 = np.array([math.cos(a1), math.sin(a1)]) * radius
        mid = (p0 + p1) / 2
        d = p1 - p0
        segments.append(RoadSegment(i, limits[i // block], (mid[0], mid[1]),
                                    math.atan2(d[1], d[0]), float(np.hypot(*d))))
    connections = [Connection(i, (i + 1) % n) for i in range(n)]
    return RoadNetwork(segments, connections)


def simulate_speeds(mix, free_flow, sensitivity, shocks, spec):
    """Integrate the speed dynamics for ``len(shocks)`` steps; returns (N, steps).

    ``mix`` is the row-normalised neighbour matrix and ``shocks`` the
    standard-normal incident innovations, one row per step.
    """
    has_nbr = (mix.sum(axis=1) > 0).astype(np.float64)
    n = free_flow.size
    r = np.ones(n)
    incident = np.zeros(n)
    out = np.empty((n, len(shocks)))
    for step in range(len(shocks)):
        phase = 2 * math.pi * (step % STEPS_PER_DAY) / STEPS_PER_DAY
        profile = 0.5 * (1.0 - math.cos(phase))
        target = 1.0 - spec.amplitude * profile * sensitivity - incident
        r = r + spec.relaxation * (target - r) + spec.diffusion * has_nbr * (mix @ r - r)
        r = np.clip(r, 0.05, 1.0)
        incident = spec.persistence * incident + spec.noise_std * shocks[step]
        out[:, step] = free_flow * r
    return out


def generate_synthetic(spec=SynthSpec()):
    """Build a network and speeds that relax toward a demand-driven target.

    Each step the free-flow fraction ``r`` of every segment moves toward
    ``1 - amplitude * profile(t) * sensitivity - incident`` and diffuses
    toward the mean of its graph neighbours; incidents are a seeded AR(1)
    process. Speeds are ``free_flow * clip(r, 0.05, 1)``.
    """
    rng = make_rng(spec.seed)
    net_rng, dyn_rng = rng.spawn(2)
    network = _grid_network(spec, net_rng) if spec.topology == "grid" else _ring_network(spec, net_rng)
    n = network.n
    free_flow = network.speed_limits()

    nbr = np.zeros((n, n))
    for c in network.connections:
        if not c.is_u_turn:
            nbr[c.from_id, c.to_id] = nbr[c.to_id, c.from_id] = 1.0
    deg = nbr.sum(axis=1)
    mix = np.divide(nbr, deg[:, None], out=np.zeros_like(nbr), where=deg[:, None] > 0)

    sensitivity = dyn_rng.uniform(0.5, 1.0, n)
    burn_in = STEPS_PER_DAY
    total = spec.days * STEPS_PER_DAY
    shocks = dyn_rng.standard_normal((burn_in + total, n))
    out = simulate_speeds(mix, free_flow, sensitivity, shocks, spec)[:, burn_in:]
    stamps = pd.date_range(pd.Timestamp(spec.start), periods=total, freq=STEP)
    return network, SpeedSeries(out, stamps, network.names)
