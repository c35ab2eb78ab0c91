"""Directed road network and its inflow/outflow adjacency matrices."""
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import InputError

SEGMENTS_HEADER = ["id", "speed_limit_kmh", "mid_x_m", "mid_y_m", "heading_rad", "length_m"]
CONNECTIONS_HEADER = ["from_id", "to_id", "is_u_turn"]
DENSE_LIMIT = 2048


@dataclass(frozen=True)
class RoadSegment:
    id: int
    speed_limit: float
    midpoint: tuple
    heading: float
    length: float = 1.0

    def __post_init__(self):
        if not self.speed_limit > 0:
            raise InputError(f"segment {self.id}: speed limit must be positive, got {self.speed_limit}",
                             offenders=[self.id])
        if not self.length > 0:
            raise InputError(f"segment {self.id}: length must be positive, got {self.length}",
                             offenders=[self.id])
        object.__setattr__(self, "heading", float(self.heading) % (2.0 * math.pi))
        object.__setattr__(self, "midpoint", (float(self.midpoint[0]), float(self.midpoint[1])))


@dataclass(frozen=True)
class Connection:
    from_id: int
    to_id: int
    is_u_turn: bool = False

    def __post_init__(self):
        if self.from_id == self.to_id:
            raise InputError(f"connection {self.from_id}->{self.to_id} is a self-loop",
                             offenders=[(self.from_id, self.to_id)])


@dataclass(frozen=True)
class RoadNetwork:
    """Segments (nodes) and directed connections.

    ``names`` keeps the original string identifiers; segment ``i`` is
    ``names[i]``. Ids must be 0..N-1 in order.
    """

    segments: tuple
    connections: tuple
    names: tuple = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "connections", tuple(self.connections))
        n = len(self.segments)
        if self.names is None:
            object.__setattr__(self, "names", tuple(str(i) for i in range(n)))
        else:
            object.__setattr__(self, "names", tuple(str(s) for s in self.names))
        if len(self.names) != n or len(set(self.names)) != n:
            raise InputError("segment names must be unique and one per segment")
        for i, seg in enumerate(self.segments):
            if seg.id != i:
                raise InputError(f"segment ids must be contiguous 0..N-1; position {i} has id {seg.id}",
                                 offenders=[seg.id])
        seen = set()
        for conn in self.connections:
            bad = [x for x in (conn.from_id, conn.to_id) if not 0 <= x < n]
            if bad:
                raise InputError(f"connection {conn.from_id}->{conn.to_id} references unknown segment(s) {bad}",
                                 offenders=[(conn.from_id, conn.to_id)])
            key = (conn.from_id, conn.to_id)
            if key in seen:
                raise InputError(f"duplicate connection {key[0]}->{key[1]}", offenders=[key])
            seen.add(key)

    @property
    def n(self):
        return len(self.segments)

    def speed_limits(self):
        return np.array([s.speed_limit for s in self.segments], dtype=np.float64)

    def midpoints(self):
        return np.array([s.midpoint for s in self.segments], dtype=np.float64).reshape(-1, 2)

    def headings(self):
        return np.array([s.heading for s in self.segments], dtype=np.float64)

    def index_of(self, name):
        try:
            return self.names.index(str(name))
        except ValueError:
            raise InputError(f"unknown segment id {name!r}", offenders=[name]) from None


@dataclass(frozen=True)
class AdjacencyPair:
    """Integer inflow/outflow matrices (CSR) at a given rank."""

    inflow: sp.csr_matrix
    outflow: sp.csr_matrix
    rank: int = 1

    @property
    def n(self):
        return self.outflow.shape[0]

    def dense(self):
        if self.n > DENSE_LIMIT:
            raise InputError(f"dense conversion limited to N <= {DENSE_LIMIT}, got {self.n}")
        return self.inflow.toarray(), self.outflow.toarray()


def build_adjacency(network):
    n = network.n
    pairs = [(c.from_id, c.to_id) for c in network.connections if not c.is_u_turn]
    for i, j in pairs:
        if not (0 <= i < n and 0 <= j < n):
            raise InputError(f"connection {i}->{j} references a missing segment", offenders=[(i, j)])
    rows = np.array([p[0] for p in pairs], dtype=np.int64)
    cols = np.array([p[1] for p in pairs], dtype=np.int64)
    out = sp.csr_matrix((np.ones(len(pairs), dtype=np.int64), (rows, cols)), shape=(n, n))
    out.sum_duplicates()
    out.sort_indices()
    return AdjacencyPair(inflow=out.T.tocsr(), outflow=out, rank=1)


def rank_k_adjacency(adj, k):
    """Matrix power: entry (i, j) counts directed paths of exactly k edges."""
    if int(k) != k or k < 1:
        raise ValueError(f"rank must be a positive integer, got {k!r}")
    if adj.rank != 1:
        raise ValueError("rank_k_adjacency expects a rank-1 adjacency pair")
    out = adj.outflow.copy()
    for _ in range(int(k) - 1):
        out = out @ adj.outflow
    out = out.tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    return AdjacencyPair(inflow=out.T.tocsr(), outflow=out, rank=int(k))


def adjacency_ranks(network, max_rank):
    base = build_adjacency(network)
    return {k: rank_k_adjacency(base, k) for k in range(1, max_rank + 1)}


# --------------------------------------------------------------------------
# topology files


def _id_sort_key(s):
    return (0, int(s), "") if s.isdigit() else (1, 0, s)


def _read_csv(path, header):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != header:
            raise InputError(f"{path}: expected header {','.join(header)}, got {reader.fieldnames}")
        return list(reader)


def load_topology(directory):
    """Read ``segments.csv`` and ``connections.csv`` from ``directory``."""
    directory = Path(directory)
    seg_rows = _read_csv(directory / "segments.csv", SEGMENTS_HEADER)
    conn_rows = _read_csv(directory / "connections.csv", CONNECTIONS_HEADER)

    names = sorted((r["id"].strip() for r in seg_rows), key=_id_sort_key)
    if len(set(names)) != len(names):
        dups = sorted({x for x in names if names.count(x) > 1})
        raise InputError(f"duplicate segment ids: {dups}", offenders=dups)
    index = {name: i for i, name in enumerate(names)}
    by_name = {r["id"].strip(): r for r in seg_rows}
    segments = []
    for name in names:
        r = by_name[name]
        try:
            segments.append(RoadSegment(
                id=index[name],
                speed_limit=float(r["speed_limit_kmh"]),
                midpoint=(float(r["mid_x_m"]), float(r["mid_y_m"])),
                heading=float(r["heading_rad"]),
                length=float(r["length_m"]),
            ))
        except ValueError as exc:
            if isinstance(exc, InputError):
                raise InputError(f"segment {name!r}: {exc}", offenders=[name]) from None
            raise InputError(f"segment {name!r}: malformed numeric field ({exc})", offenders=[name]) from None

    connections = []
    for r in conn_rows:
        a, b = r["from_id"].strip(), r["to_id"].strip()
        missing = [x for x in (a, b) if x not in index]
        if missing:
            raise InputError(f"connection {a}->{b} references unknown segment(s) {missing}",
                             offenders=[(a, b)])
        flag = r["is_u_turn"].strip()
        if flag not in ("0", "1"):
            raise InputError(f"connection {a}->{b}: is_u_turn must be 0 or 1, got {flag!r}",
                             offenders=[(a, b)])
        connections.append(Connection(index[a], index[b], flag == "1"))
    return RoadNetwork(segments, connections, names)


def save_topology(network, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "segments.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SEGMENTS_HEADER)
        for name, s in zip(network.names, network.segments):
            w.writerow([name, repr(s.speed_limit), repr(s.midpoint[0]), repr(s.midpoint[1]),
                        repr(s.heading), repr(s.length)])
    with open(directory / "connections.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONNECTIONS_HEADER)
        for c in network.connections:
            w.writerow([network.names[c.from_id], network.names[c.to_id], int(c.is_u_turn)])


def write_triplets(mat, path, names=None):
    """Write a sparse matrix as ``row,col,value`` CSV (row-major order)."""
    coo = sp.csr_matrix(mat)
    coo.sort_indices()
    coo = coo.tocoo()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "value"])
        for r, c, v in zip(coo.row, coo.col, coo.data):
            rr = names[r] if names is not None else int(r)
            cc = names[c] if names is not None else int(c)
            w.writerow([rr, cc, repr(v.item()) if isinstance(v, np.floating) else int(v)])
