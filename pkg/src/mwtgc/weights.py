"""Weighted adjacency matrices (six kinds, two flow directions, k ranks)."""
import enum
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import adjacency_ranks


class WeightKind(enum.Enum):
    PLAIN = "plain"
    DISTANCE = "distance"
    SPEED_LIMIT_RATIO = "speed_limit_ratio"
    SPEED_LIMIT_CATEGORY = "speed_limit_category"
    SPEED_LIMIT_CHANGE = "speed_limit_change"
    ANGLE = "angle"

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("-", "_")
        aliases = {"slr": "speed_limit_ratio", "sl_r": "speed_limit_ratio", "ratio": "speed_limit_ratio",
                   "slc": "speed_limit_category", "sl_cat": "speed_limit_category",
                   "category": "speed_limit_category", "slch": "speed_limit_change",
                   "sl_ch": "speed_limit_change", "change": "speed_limit_change", "dist": "distance"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown weight kind {text!r}; choose from {[k.value for k in cls]}") from None


KIND_ORDER = list(WeightKind)
DIRECTIONS = ("outflow", "inflow")


def sort_kinds(kinds):
    return sorted(set(kinds), key=KIND_ORDER.index)


@dataclass(frozen=True)
class WeightConfig:
    sigma: float = 1000.0
    angle_floor: float = 1e-6
    category_norm: float = None  # None -> max speed limit in the network
    angle_convention: str = "interior"  # interior: theta0 = pi - dtheta; direct: theta0 = dtheta

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0 < self.angle_floor <= 0.01:
            raise ValueError("angle_floor must lie in (0, 0.01]")
        if self.angle_convention not in ("interior", "direct"):
            raise ValueError("angle_convention must be 'interior' or 'direct'")

    def resolve_norm(self, network):
        top = float(network.speed_limits().max()) if network.n else 1.0
        norm = top if self.category_norm is None else float(self.category_norm)
        if norm < top:
            raise ValueError(f"category_norm {norm} is below the maximum speed limit {top}")
        return norm


# --------------------------------------------------------------------------
# raw weights on the outflow pattern (flow i -> j for entry (i, j))


def _on_pattern(adj_out, fn):
    coo = adj_out.tocoo()
    vals = fn(coo.row, coo.col).astype(np.float64)
    return sp.csr_matrix((vals, (coo.row, coo.col)), shape=adj_out.shape)


def _orient(adj, direction, fn):
    # inflow(i, j) is the flow j -> i, i.e. the transpose of the outflow weight
    out = _on_pattern(adj.outflow, fn)
    return out if direction == "outflow" else out.T.tocsr()


def weight_plain(adj, direction="outflow"):
    mat = adj.outflow if direction == "outflow" else adj.inflow
    return sp.csr_matrix(mat, dtype=np.float64)


def weight_distance(network, adj, direction="outflow", config=WeightConfig()):
    mid = network.midpoints()

    def fn(i, j):
        d2 = ((mid[i] - mid[j]) ** 2).sum(axis=1)
        return np.exp(-d2 / config.sigma ** 2)

    return _orient(adj, direction, fn)


def weight_speed_limit_ratio(network, adj, direction="outflow"):
    lim = network.speed_limits()
    return _orient(adj, direction, lambda i, j: lim[j] / lim[i])


def weight_speed_limit_category(network, adj, direction="outflow", config=WeightConfig()):
    lim = network.speed_limits()
    norm = config.resolve_norm(network)
    return _orient(adj, direction, lambda i, j: lim[j] / norm)


def weight_speed_limit_change(network, adj, direction="outflow"):
    lim = network.speed_limits()
    return _orient(adj, direction, lambda i, j: (lim[i] != lim[j]).astype(np.float64))


def heading_difference(h_i, h_j):
    """Smallest absolute difference between two headings, in [0, pi]."""
    d = np.abs(np.mod(np.asarray(h_j) - np.asarray(h_i), 2.0 * math.pi))
    return np.minimum(d, 2.0 * math.pi - d)


def angle_weight_value(delta, config=WeightConfig()):
    """Weight for a heading difference ``delta`` in [0, pi]."""
    theta0 = math.pi - delta if config.angle_convention == "interior" else delta
    return np.exp(-1.0 / np.maximum(np.abs(math.pi - theta0), config.angle_floor))


def weight_angle(network, adj, direction="outflow", config=WeightConfig()):
    head = network.headings()
    return _orient(adj, direction,
                   lambda i, j: angle_weight_value(heading_difference(head[i], head[j]), config))


def clip_with_identity(raw):
    """Add the identity and clamp every entry to [0, 1]."""
    n = raw.shape[0]
    if sp.issparse(raw):
        out = (sp.csr_matrix(raw, dtype=np.float64) + sp.identity(n, format="csr")).tocsr()
        out.sort_indices()
        out.data = np.clip(out.data, 0.0, 1.0)
        return out
    raw = np.asarray(raw, dtype=np.float64)
    return np.clip(raw + np.eye(n), 0.0, 1.0)


def raw_weight(kind, network, adj, direction, config=WeightConfig()):
    if kind is WeightKind.PLAIN:
        return weight_plain(adj, direction)
    if kind is WeightKind.DISTANCE:
        return weight_distance(network, adj, direction, config)
    if kind is WeightKind.SPEED_LIMIT_RATIO:
        return weight_speed_limit_ratio(network, adj, direction)
    if kind is WeightKind.SPEED_LIMIT_CATEGORY:
        return weight_speed_limit_category(network, adj, direction, config)
    if kind is WeightKind.SPEED_LIMIT_CHANGE:
        return weight_speed_limit_change(network, adj, direction)
    if kind is WeightKind.ANGLE:
        return weight_angle(network, adj, direction, config)
    raise ValueError(f"unsupported weight kind {kind!r}")


@dataclass
class WeightedAdjacencySet:
    """Clipped matrices keyed by ``(kind, direction, rank)``.

    ``keys`` lists the entries in concatenation order: rank ascending, kind
    in declaration order, outflow before inflow.
    """

    entries: dict
    max_rank: int
    kinds: list
    config: WeightConfig

    @property
    def keys(self):
        return [(kind, d, r) for r in range(1, self.max_rank + 1) for kind in self.kinds for d in DIRECTIONS]

    @property
    def c(self):
        return 2 * len(self.kinds)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, key):
        kind, direction, rank = key
        return self.entries[(WeightKind.parse(kind), direction, rank)]


def build_weight_set(network, max_rank, kinds, config=WeightConfig()):
    kinds = sort_kinds(WeightKind.parse(k) if not isinstance(k, WeightKind) else k for k in kinds)
    if not kinds:
        raise ValueError("at least one weight kind is required")
    if int(max_rank) != max_rank or max_rank < 1:
        raise ValueError(f"max_rank must be a positive integer, got {max_rank!r}")
    config.resolve_norm(network)
    ranks = adjacency_ranks(network, int(max_rank))
    entries = {}
    for r in range(1, int(max_rank) + 1):
        for kind in kinds:
            for d in DIRECTIONS:
                entries[(kind, d, r)] = clip_with_identity(raw_weight(kind, network, ranks[r], d, config))
    return WeightedAdjacencySet(entries=entries, max_rank=int(max_rank), kinds=kinds, config=config)


def matrix_filename(kind, direction, rank):
    return f"weight_{kind.value}_{direction}_k{rank}.csv"
