import pytest
from hypothesis import given, strategies as st

from colltrace.errors import ConfigError, TopologyError
from colltrace.topology import (CommGroup, FlowId, NicId, build_layout, flow_nics, flows_between,
                                ring_order, ring_predecessor, ring_successor)


@pytest.fixture
def topo32():
    return build_layout(8, 2, 2, 8, 2)


def test_32_rank_layout_shape(topo32):
    assert topo32.world_size == 32
    assert len(topo32.nodes) == 4
    assert len(topo32.groups_of_kind("TP")) == 4
    assert len(topo32.groups_of_kind("PP")) == 16
    assert len(topo32.groups_of_kind("DP")) == 16


def test_tp_groups_stay_on_one_node(topo32):
    for g in topo32.groups_of_kind("TP"):
        assert len({topo32.node_of(r) for r in g.members}) == 1


def test_known_groups(topo32):
    assert topo32.group_of(0, "TP").members == tuple(range(8))
    assert topo32.group_of(3, "PP").members == (3, 11)
    assert topo32.group_of(3, "DP").members == (3, 19)
    assert topo32.group_of(27, "DP").members == (11, 27)
    assert topo32.coords(27) == (1, 1, 3)
    assert topo32.coords_to_rank(1, 1, 3) == 27


def test_every_rank_in_exactly_one_group_per_kind(topo32):
    for kind in ("TP", "PP", "DP"):
        seen = [r for g in topo32.groups_of_kind(kind) for r in g.members]
        assert sorted(seen) == list(range(32))


def test_rank_to_nic(topo32):
    assert topo32.rank_to_nic(9, 0) == NicId(1, 0)
    assert topo32.rank_to_nic(9, 5) == NicId(1, 1)


@pytest.mark.parametrize("args", [
    (0, 1, 1, 1, 1), (3, 1, 1, 2, 1), (16, 1, 1, 8, 1), (8, 2, 2, 8, 0), (2, 2, 2, 3, 1),
])
def test_invalid_layouts(args):
    with pytest.raises(ConfigError):
        build_layout(*args)


def test_single_rank_world():
    topo = build_layout(1, 1, 1, 1, 1)
    assert topo.world_size == 1
    with pytest.raises(TopologyError):
        ring_order(topo.group_of(0, "TP"))


def test_ring_order_and_neighbours():
    g = CommGroup(0, "DP", (4, 9, 2))
    assert ring_order(g) == [(4, 9), (9, 2), (2, 4)]
    assert ring_successor(g, 2) == 4
    assert ring_predecessor(g, 4) == 2


def test_flows(topo32):
    assert flows_between(0, 8, topo32) == [FlowId(0, 8, 0), FlowId(0, 8, 1)]
    assert flow_nics(FlowId(0, 8, 1), topo32) == (NicId(0, 1), NicId(1, 1))
    with pytest.raises(TopologyError):
        flows_between(5, 5, topo32)
    with pytest.raises(TopologyError):
        flows_between(0, 99, topo32)


@given(tp=st.sampled_from([1, 2, 4]), pp=st.integers(1, 3), dp=st.integers(1, 3), ch=st.integers(1, 4))
def test_layout_partition_property(tp, pp, dp, ch):
    topo = build_layout(tp, pp, dp, tp, ch)
    for r in range(topo.world_size):
        d, p, t = topo.coords(r)
        assert topo.coords_to_rank(d, p, t) == r
        for g in topo.groups_containing(r):
            assert r in g
