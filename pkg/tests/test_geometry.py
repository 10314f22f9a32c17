import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from crowdobs.dynamics import SimParams, init_configuration
from crowdobs.errors import GeometryError
from crowdobs.geometry import UnionFind, VoronoiAdjacency, cluster_count, voronoi_adjacency

OFFSETS = np.array([(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1)], dtype=float)


def brute_force_adjacency(pos, L, samples=4000, tol=1e-9):
    """Pairs whose periodic cells share a segment, by sampling bisectors.

    For each pair and each image of the partner, points along the
    perpendicular bisector are tested for having exactly those two
    generators as nearest (minimum image), with a strict margin to all
    others.
    """
    n = len(pos)
    edges = set()
    t = np.linspace(-1.5 * L, 1.5 * L, samples)
    for i in range(n):
        for j in range(n):
            if j == i:
                continue
            for off in OFFSETS:
                q = pos[j] + off * L
                mid = 0.5 * (pos[i] + q)
                d = q - pos[i]
                if d @ d < 1e-18:
                    continue
                perp = np.array([-d[1], d[0]]) / np.hypot(*d)
                pts = mid + t[:, None] * perp
                dist = pts[:, None, :] - pos[None, :, :]
                dist -= L * np.floor(dist / L + 0.5)
                r = np.hypot(dist[..., 0], dist[..., 1])
                ri = r[:, i]
                own = np.abs(np.hypot(*(pts - q).T) - ri) < 1e-9 * L
                others = np.delete(r, [i, j], axis=1)
                margin = others.min(axis=1) - ri if n > 2 else np.full(len(pts), np.inf)
                rj = r[:, j]
                ok = own & (np.abs(rj - ri) < 1e-9 * L) & (margin > tol)
                if ok.sum() >= 2:
                    edges.add((min(i, j), max(i, j)))
    return edges


def _random_config(rng, n=8, L=10.0, min_sep=0.05):
    while True:
        pos = rng.random((n, 2)) * L
        d = pos[None] - pos[:, None]
        d -= L * np.floor(d / L + 0.5)
        r = np.hypot(d[..., 0], d[..., 1]) + np.eye(n) * L
        if r.min() > min_sep:
            return pos


def test_two_agents_are_neighbors(backend):
    adj = voronoi_adjacency([[1.0, 1.0], [7.0, 3.0]], 10.0, backend)
    assert adj.neighbor_lists == [[1], [0]]


def test_matches_brute_force_small(backend):
    rng = np.random.default_rng(2024)
    for _ in range(10):
        pos = _random_config(rng)
        adj = voronoi_adjacency(pos, 10.0, backend)
        assert {tuple(e) for e in adj.edges.tolist()} == brute_force_adjacency(pos, 10.0)


def test_symmetric_no_self_loops(backend):
    rng = np.random.default_rng(3)
    pos = rng.random((30, 2)) * 12.0
    adj = voronoi_adjacency(pos, 12.0, backend)
    lists = adj.neighbor_lists
    for i, nb in enumerate(lists):
        assert i not in nb
        for j in nb:
            assert i in lists[j]


@pytest.mark.parametrize("seed", range(5))
def test_edge_count_3n(seed, backend):
    L, pos, _, _ = init_configuration(SimParams(seed=seed, density=0.3722), backend)
    assert voronoi_adjacency(pos, L, backend).n_edges == 3 * 42


def test_backends_agree():
    from crowdobs import _backend

    names = _backend.available()
    if len(names) < 2:
        pytest.skip("compiled extension not built")
    rng = np.random.default_rng(77)
    for _ in range(100):
        n = int(rng.integers(2, 60))
        pos = rng.random((n, 2)) * 15.0
        a, b = (voronoi_adjacency(pos, 15.0, _backend.get(k)) for k in names)
        assert a == b


def test_translation_invariance(backend):
    rng = np.random.default_rng(5)
    L = 14.0
    pos = rng.random((25, 2)) * L
    base = voronoi_adjacency(pos, L, backend)
    for shift in ([3.3, 0.0], [0.0, 7.1], [13.2, 9.9]):
        moved = (pos + shift) % L
        moved[moved >= L] = 0.0
        assert voronoi_adjacency(moved, L, backend) == base


@pytest.mark.parametrize("bad", [
    [[1.0, 1.0]],
    [[1.0, 1.0], [1.0, 1.0], [5.0, 5.0]],
    [[-0.1, 1.0], [3.0, 3.0]],
    [[1.0, 10.0], [3.0, 3.0]],
])
def test_invalid_input_raises(bad, backend):
    with pytest.raises(GeometryError):
        voronoi_adjacency(bad, 10.0, backend)


def test_collinear_generators_still_tessellate(backend):
    # a line of agents is a valid configuration on the torus
    pos = np.array([[x, 5.0] for x in (1.0, 3.5, 6.0, 8.5)])
    adj = voronoi_adjacency(pos, 10.0, backend)
    assert adj.neighbor_lists == [[1, 3], [0, 2], [1, 3], [0, 2]]


# -- clusters --------------------------------------------------------------------


def _lattice(nrows=6, ncols=7, spacing=2.4, jitter=0.02, seed=0):
    rng = np.random.default_rng(seed)
    rows, cols = np.divmod(np.arange(nrows * ncols), ncols)
    dy = spacing * np.sqrt(3) / 2
    pos = np.stack([(cols + 0.5 * (rows % 2)) * spacing, rows * dy], axis=1)
    pos += rng.uniform(-jitter, jitter, pos.shape)
    L = (ncols * spacing, nrows * dy)
    return pos, rows, L


def test_two_lane_fixture(backend):
    pos, rows, (Lx, Ly) = _lattice()
    # square domain: rescale y so the strips tile the same periodic square
    pos[:, 1] *= Lx / Ly
    labels = np.where((rows == 1) | (rows == 4), 2, 1)
    adj = voronoi_adjacency(pos % Lx, Lx, backend)
    assert cluster_count(adj, labels, 2) == 2
    assert cluster_count(adj, labels, 1) == 2
    assert cluster_count(adj, labels, 2) == _oracle(adj, labels, 2)


def test_single_minority_agent(backend):
    L, pos, _, labels = init_configuration(SimParams(number_ratio=1 / 42, seed=3), backend)
    adj = voronoi_adjacency(pos, L, backend)
    assert cluster_count(adj, labels, 2) == 1
    assert cluster_count(adj, np.ones(42, dtype=int), 1) == 1
    assert cluster_count(adj, labels, 3) == 0


def test_cluster_count_label_length_checked():
    adj = VoronoiAdjacency(3, np.array([[0, 1]]))
    with pytest.raises(ValueError):
        cluster_count(adj, [1, 1], 1)


def _oracle(adj, labels, group):
    labels = np.asarray(labels)
    members = np.flatnonzero(labels == group)
    if len(members) == 0:
        return 0
    keep = [(i, j) for i, j in adj.edges if labels[i] == group and labels[j] == group]
    index = {m: k for k, m in enumerate(members)}
    rows = [index[i] for i, _ in keep]
    cols = [index[j] for _, j in keep]
    graph = coo_matrix((np.ones(len(keep)), (rows, cols)), shape=(len(members), len(members)))
    return connected_components(graph, directed=False)[0]


def _random_graph(rng, n):
    p = rng.uniform(0.02, 0.4)
    iu = np.triu_indices(n, 1)
    mask = rng.random(len(iu[0])) < p
    edges = np.stack([iu[0][mask], iu[1][mask]], axis=1).astype(np.int64)
    return VoronoiAdjacency(n, edges.reshape(-1, 2))


def test_cluster_count_matches_csgraph():
    rng = np.random.default_rng(11)
    for _ in range(50):
        n = int(rng.integers(1, 60))
        adj = _random_graph(rng, n)
        labels = rng.integers(1, 3, n)
        for g in (1, 2):
            assert cluster_count(adj, labels, g) == _oracle(adj, labels, g)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**32 - 1))
def test_adding_edge_never_increases_clusters(n, seed):
    rng = np.random.default_rng(seed)
    adj = _random_graph(rng, n)
    labels = rng.integers(1, 3, n)
    i, j = sorted(rng.choice(n, 2, replace=False))
    bigger = VoronoiAdjacency(n, np.vstack([adj.edges, [[i, j]]]))
    for g in (1, 2):
        c = cluster_count(adj, labels, g)
        assert cluster_count(bigger, labels, g) <= c
        assert c <= (labels == g).sum()


def test_union_find():
    uf = UnionFind(5)
    assert uf.union(0, 1) and uf.union(3, 4)
    assert not uf.union(1, 0)
    assert uf.find(0) == uf.find(1) != uf.find(3)
