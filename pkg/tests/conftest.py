import math

import numpy as np
import pytest

from mwtgc.graph import Connection, RoadNetwork, RoadSegment


def make_network(n, edges, limits=None, mids=None, headings=None, u_turns=()):
    limits = limits or [60.0] * n
    mids = mids or [(i * 100.0, 0.0) for i in range(n)]
    headings = headings or [0.0] * n
    segs = [RoadSegment(i, limits[i], mids[i], headings[i]) for i in range(n)]
    conns = [Connection(a, b) for a, b in edges] + [Connection(a, b, True) for a, b in u_turns]
    return RoadNetwork(segs, conns)


def count_paths(edges, n, k):
    """Brute-force count of length-k walks between every ordered pair."""
    succ = {i: [] for i in range(n)}
    for a, b in edges:
        succ[a].append(b)
    out = np.zeros((n, n), dtype=np.int64)

    def walk(start, node, depth):
        if depth == k:
            out[start, node] += 1
            return
        for nxt in succ[node]:
            walk(start, nxt, depth + 1)

    for s in range(n):
        walk(s, s, 0)
    return out


@pytest.fixture
def chain():
    return make_network(3, [(0, 1), (1, 2)])


@pytest.fixture
def diamond():
    return make_network(4, [(0, 1), (0, 2), (1, 3), (2, 3)])


@pytest.fixture
def two_limit_pair():
    # 0 (60 km/h, heading east) -> 1 (80 km/h, heading north), 1000 m apart
    return make_network(2, [(0, 1)], limits=[60.0, 80.0], mids=[(0.0, 0.0), (1000.0, 0.0)],
                        headings=[0.0, math.pi / 2])
