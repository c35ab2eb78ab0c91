import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mwtgc.errors import InputError
from mwtgc.graph import (Connection, RoadNetwork, RoadSegment, build_adjacency, load_topology,
                         rank_k_adjacency, save_topology)

from conftest import count_paths, make_network


def test_chain_rank1(chain):
    adj = build_adjacency(chain)
    expected = np.zeros((3, 3), dtype=int)
    expected[0, 1] = expected[1, 2] = 1
    inflow, outflow = adj.dense()
    assert np.array_equal(outflow, expected)
    assert np.array_equal(inflow, expected.T)


def test_u_turn_adds_no_edge():
    plain = make_network(2, [(0, 1)])
    with_u = make_network(2, [(0, 1)], u_turns=[(1, 0)])
    for k in (1, 2, 3):
        a = rank_k_adjacency(build_adjacency(plain), k).dense()
        b = rank_k_adjacency(build_adjacency(with_u), k).dense()
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_empty_connections():
    inflow, outflow = build_adjacency(make_network(3, [])).dense()
    assert not inflow.any() and not outflow.any() and outflow.shape == (3, 3)


def test_chain_rank2(chain):
    out = rank_k_adjacency(build_adjacency(chain), 2).dense()[1]
    expected = np.zeros((3, 3), dtype=int)
    expected[0, 2] = 1
    assert np.array_equal(out, expected)


def test_diamond_rank2_counts_two_paths(diamond):
    out = rank_k_adjacency(build_adjacency(diamond), 2).dense()[1]
    assert out[0, 3] == 2
    assert out.sum() == 2


def test_rank1_is_identity_op(diamond):
    adj = build_adjacency(diamond)
    again = rank_k_adjacency(adj, 1)
    assert (again.outflow != adj.outflow).nnz == 0


def test_rank_zero_rejected(chain):
    with pytest.raises(ValueError):
        rank_k_adjacency(build_adjacency(chain), 0)


def test_cycles_keep_self_loops():
    net = make_network(2, [(0, 1), (1, 0)])
    out = rank_k_adjacency(build_adjacency(net), 2).dense()[1]
    assert out[0, 0] == 1 and out[1, 1] == 1


def test_dangling_reference_names_connection():
    segs = [RoadSegment(0, 60.0, (0, 0), 0.0)]
    with pytest.raises(InputError) as err:
        RoadNetwork(segs, [Connection(0, 5)])
    assert "0->5" in str(err.value)


def test_duplicate_connection_rejected():
    segs = [RoadSegment(i, 60.0, (0, 0), 0.0) for i in range(2)]
    with pytest.raises(InputError):
        RoadNetwork(segs, [Connection(0, 1), Connection(0, 1)])


def test_segment_validation():
    with pytest.raises(InputError):
        RoadSegment(0, 0.0, (0, 0), 0.0)
    assert RoadSegment(0, 50.0, (0, 0), 2 * math.pi + 0.5).heading == pytest.approx(0.5)


@st.composite
def random_graph(draw):
    n = draw(st.integers(1, 12))
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    edges = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=min(len(pairs), 30))) if pairs else []
    return n, edges


@settings(max_examples=60, deadline=None)
@given(random_graph())
def test_rank_k_matches_path_enumeration(graph):
    n, edges = graph
    adj = build_adjacency(make_network(n, edges))
    for k in (1, 2, 3):
        inflow, outflow = rank_k_adjacency(adj, k).dense()
        assert np.array_equal(outflow, count_paths(edges, n, k))
        assert np.array_equal(inflow, outflow.T)


def test_topology_round_trip(tmp_path):
    segs = [RoadSegment(0, 60.0, (1.5, -2.25), 0.1, 120.0),
            RoadSegment(1, 80.0, (1000.0 / 3, 7.0), 3.0, 99.5),
            RoadSegment(2, 40.0, (0.0, 0.0), 6.0, 10.0)]
    net = RoadNetwork(segs, [Connection(0, 1), Connection(1, 2, True), Connection(2, 0)],
                      names=["a-7", "b", "c"])
    save_topology(net, tmp_path)
    back = load_topology(tmp_path)
    assert back == net
    save_topology(back, tmp_path / "again")
    for f in ("segments.csv", "connections.csv"):
        assert (tmp_path / f).read_bytes() == (tmp_path / "again" / f).read_bytes()


def test_string_ids_sorted_deterministically(tmp_path):
    (tmp_path / "segments.csv").write_text(
        "id,speed_limit_kmh,mid_x_m,mid_y_m,heading_rad,length_m\n"
        "z,60,0,0,0,1\n10,60,0,0,0,1\n2,60,0,0,0,1\n")
    (tmp_path / "connections.csv").write_text("from_id,to_id,is_u_turn\nz,2,0\n")
    net = load_topology(tmp_path)
    assert net.names == ("2", "10", "z")
    assert net.connections[0] == Connection(2, 0, False)


def test_unknown_reference_in_file(tmp_path):
    (tmp_path / "segments.csv").write_text(
        "id,speed_limit_kmh,mid_x_m,mid_y_m,heading_rad,length_m\na,60,0,0,0,1\n")
    (tmp_path / "connections.csv").write_text("from_id,to_id,is_u_turn\na,ghost,0\n")
    with pytest.raises(InputError) as err:
        load_topology(tmp_path)
    assert "ghost" in str(err.value)
