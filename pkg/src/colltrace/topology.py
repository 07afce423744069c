"""Cluster layout: ranks, nodes, NICs and the DP/PP/TP communication groups.

Rank indices decompose as ``rank = dp_i * (pp * tp) + pp_i * tp + tp_i`` so
that tensor-parallel peers are consecutive and stay inside one node.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Tuple

from .errors import ConfigError, TopologyError

GROUP_KINDS = ("TP", "PP", "DP")


class NicId(NamedTuple):
    node: int
    index: int


class FlowId(NamedTuple):
    src: int
    dst: int
    channel: int


@dataclass(frozen=True)
class CommGroup:
    comm_id: int
    kind: str
    members: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, rank: int) -> bool:
        return rank in self.members


@dataclass(frozen=True)
class Node:
    node_id: int
    ranks: Tuple[int, ...]
    nics: Tuple[NicId, ...]


@dataclass(frozen=True)
class Topology:
    tp: int
    pp: int
    dp: int
    ranks_per_node: int
    channels_per_pair: int
    nodes: Tuple[Node, ...]
    groups: Tuple[CommGroup, ...]
    _by_rank: Dict[Tuple[int, str], CommGroup] = field(repr=False, compare=False, default_factory=dict)

    @property
    def world_size(self) -> int:
        return self.tp * self.pp * self.dp

    @property
    def nics_per_node(self) -> int:
        return len(self.nodes[0].nics)

    def node_of(self, rank: int) -> int:
        self._check_rank(rank)
        return rank // self.ranks_per_node

    def coords(self, rank: int) -> Tuple[int, int, int]:
        """Return ``(dp_i, pp_i, tp_i)`` for a rank."""
        self._check_rank(rank)
        dp_i, rest = divmod(rank, self.pp * self.tp)
        pp_i, tp_i = divmod(rest, self.tp)
        return dp_i, pp_i, tp_i

    def coords_to_rank(self, dp_i: int, pp_i: int, tp_i: int) -> int:
        return dp_i * (self.pp * self.tp) + pp_i * self.tp + tp_i

    def stage_of(self, rank: int) -> int:
        return self.coords(rank)[1]

    def group_of(self, rank: int, kind: str) -> CommGroup:
        self._check_rank(rank)
        return self._by_rank[(rank, kind)]

    def group(self, comm_id: int) -> CommGroup:
        return self.groups[comm_id]

    def groups_of_kind(self, kind: str) -> List[CommGroup]:
        return [g for g in self.groups if g.kind == kind]

    def groups_containing(self, rank: int) -> List[CommGroup]:
        self._check_rank(rank)
        return [self._by_rank[(rank, k)] for k in GROUP_KINDS if (rank, k) in self._by_rank]

    def rank_to_nic(self, rank: int, channel: int) -> NicId:
        node = self.node_of(rank)
        return NicId(node, channel % self.nics_per_node)

    def same_node(self, a: int, b: int) -> bool:
        return self.node_of(a) == self.node_of(b)

    def ranks_on_node(self, node: int) -> Tuple[int, ...]:
        return self.nodes[node].ranks

    def _check_rank(self, rank: int) -> None:
        if not 0 <= rank < self.world_size:
            raise TopologyError(f"rank {rank} outside [0, {self.world_size})")


def build_layout(
    tp: int,
    pp: int,
    dp: int,
    ranks_per_node: int,
    channels_per_pair: int,
    nics_per_node: int = 4,
) -> Topology:
    for name, value in (("tp", tp), ("pp", pp), ("dp", dp), ("ranks_per_node", ranks_per_node),
                        ("channels_per_pair", channels_per_pair), ("nics_per_node", nics_per_node)):
        if not isinstance(value, int) or value < 1:
            raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    world = tp * pp * dp
    if world % ranks_per_node:
        raise ConfigError(f"world size {world} is not divisible by ranks_per_node={ranks_per_node}")
    if tp > ranks_per_node:
        raise ConfigError(f"tp={tp} exceeds ranks_per_node={ranks_per_node}; TP must stay intra-node")

    nodes = tuple(
        Node(
            node_id=n,
            ranks=tuple(range(n * ranks_per_node, (n + 1) * ranks_per_node)),
            nics=tuple(NicId(n, i) for i in range(nics_per_node)),
        )
        for n in range(world // ranks_per_node)
    )

    def rank(dp_i: int, pp_i: int, tp_i: int) -> int:
        return dp_i * (pp * tp) + pp_i * tp + tp_i

    groups: List[CommGroup] = []
    for d in range(dp):
        for p in range(pp):
            groups.append(CommGroup(len(groups), "TP", tuple(rank(d, p, t) for t in range(tp))))
    for d in range(dp):
        for t in range(tp):
            groups.append(CommGroup(len(groups), "PP", tuple(rank(d, p, t) for p in range(pp))))
    for p in range(pp):
        for t in range(tp):
            groups.append(CommGroup(len(groups), "DP", tuple(rank(d, p, t) for d in range(dp))))

    by_rank = {}
    for g in groups:
        for r in g.members:
            by_rank[(r, g.kind)] = g
    return Topology(tp, pp, dp, ranks_per_node, channels_per_pair, nodes, tuple(groups), by_rank)


def from_groups(world_size: int, ranks_per_node: int, groups: List[Tuple[str, Tuple[int, ...]]],
                channels_per_pair: int = 1, nics_per_node: int = 1) -> Topology:
    """Hand-built layout with explicit groups, for small what-if cases.

    Ranks need not belong to a group of every kind, but at most one of each.
    """
    if world_size < 1 or world_size % ranks_per_node:
        raise ConfigError("world_size must be a positive multiple of ranks_per_node")
    nodes = tuple(
        Node(n, tuple(range(n * ranks_per_node, (n + 1) * ranks_per_node)),
             tuple(NicId(n, i) for i in range(nics_per_node)))
        for n in range(world_size // ranks_per_node)
    )
    built = []
    by_rank = {}
    for kind, members in groups:
        if kind not in GROUP_KINDS:
            raise ConfigError(f"unknown group kind {kind!r}")
        g = CommGroup(len(built), kind, tuple(members))
        for r in g.members:
            if not 0 <= r < world_size:
                raise ConfigError(f"group member {r} outside the world")
            if (r, kind) in by_rank:
                raise ConfigError(f"rank {r} is in two {kind} groups")
            by_rank[(r, kind)] = g
        built.append(g)
    return Topology(world_size, 1, 1, ranks_per_node, channels_per_pair, nodes, tuple(built), by_rank)


def ring_order(group: CommGroup) -> List[Tuple[int, int]]:
    """Directed ring edges ``members[i] -> members[i+1]`` including the wrap-around."""
    n = len(group.members)
    if n < 2:
        raise TopologyError(f"group {group.comm_id} has {n} member(s); a ring needs at least 2")
    return [(group.members[i], group.members[(i + 1) % n]) for i in range(n)]


def ring_successor(group: CommGroup, rank: int) -> int:
    i = group.members.index(rank)
    return group.members[(i + 1) % len(group.members)]


def ring_predecessor(group: CommGroup, rank: int) -> int:
    i = group.members.index(rank)
    return group.members[(i - 1) % len(group.members)]


def flows_between(a: int, b: int, topo: Topology) -> List[FlowId]:
    if a == b:
        raise TopologyError(f"no flow from rank {a} to itself")
    topo._check_rank(a)
    topo._check_rank(b)
    return [FlowId(a, b, c) for c in range(topo.channels_per_pair)]


def flow_nics(flow: FlowId, topo: Topology) -> Tuple[NicId, NicId]:
    """NIC used by a flow at its source and destination endpoints."""
    return topo.rank_to_nic(flow.src, flow.channel), topo.rank_to_nic(flow.dst, flow.channel)
