"""First-Voronoi-neighbor graph on the periodic square and same-group
cluster counting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from crowdobs import _backend
from crowdobs.errors import GeometryError


@dataclass(frozen=True)
class VoronoiAdjacency:
    """Symmetric neighbor graph of one frame.

    ``edges`` holds each unordered pair once as ``(i, j)`` with ``i < j``,
    sorted lexicographically.
    """

    n_agents: int
    edges: np.ndarray

    @property
    def neighbor_lists(self) -> list[list[int]]:
        out = [[] for _ in range(self.n_agents)]
        for i, j in self.edges:
            out[int(i)].append(int(j))
            out[int(j)].append(int(i))
        return [sorted(nb) for nb in out]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def __eq__(self, other):
        if not isinstance(other, VoronoiAdjacency):
            return NotImplemented
        return self.n_agents == other.n_agents and np.array_equal(self.edges, other.edges)

    def __hash__(self):
        return hash((self.n_agents, self.edges.tobytes()))


def voronoi_adjacency(positions, domain_edge: float, backend=None) -> VoronoiAdjacency:
    """Pairs of agents whose periodic Voronoi cells share a boundary segment.

    Parameters
    ----------
    positions : array_like, shape (n, 2)
        Positions wrapped into ``[0, domain_edge)``.
    domain_edge : float
        Edge of the periodic square.
    backend : module, optional
        Kernel module; defaults to the one selected at import.

    Raises
    ------
    GeometryError
        Fewer than two agents, or coincident agents.
    """
    core = backend or _backend.core
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise GeometryError("positions must have shape (n, 2)")
    if len(pos) < 2:
        raise GeometryError("need at least two agents")
    if ((pos < 0) | (pos >= domain_edge)).any():
        raise GeometryError("positions must lie in [0, L)")
    edges = core.voronoi_edges(pos, float(domain_edge))
    return VoronoiAdjacency(len(pos), np.asarray(edges, dtype=np.int64).reshape(-1, 2))


class UnionFind:
    """Disjoint sets over ``0..n-1`` with path halving and union by size."""

    def __init__(self, n):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, a):
        parent = self.parent
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True


def cluster_count(adjacency: VoronoiAdjacency, labels, group) -> int:
    """Connected components among agents of ``group``.

    Two members are in one cluster when a chain of same-group Voronoi
    neighbors links them; an isolated member counts as its own cluster.
    Returns 0 for an empty group.
    """
    labels = np.asarray(labels)
    if len(labels) != adjacency.n_agents:
        raise ValueError("labels length does not match adjacency")
    members = np.flatnonzero(labels == group)
    if len(members) == 0:
        return 0
    uf = UnionFind(adjacency.n_agents)
    components = len(members)
    for i, j in adjacency.edges:
        if labels[i] == group and labels[j] == group and uf.union(int(i), int(j)):
            components -= 1
    return components
