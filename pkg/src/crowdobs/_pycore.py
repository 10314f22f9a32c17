"""Pure numpy/scipy implementation of the kernels in ``_core.pyx``.

Used when the extension is not built, or when ``CROWDOBS_BACKEND=python``.
Voronoi adjacency here goes through a Delaunay triangulation of the 3x3
periodic tiling (widened for very sparse configurations), which makes it an independent route from the compiled
half-plane clipping.
"""

import numpy as np
from scipy.spatial import Delaunay

from crowdobs.errors import GeometryError, IntegrationError, OverlapError

BACKEND = "python"

#: largest accepted h * omega for the stiffest interacting pair
STABILITY = 0.5

#: widest image tiling tried before giving up, as a ring count
MAX_RINGS = 3


def _tiles(rings):
    """Image offsets with the canonical cell first."""
    span = range(-rings, rings + 1)
    rest = [(a, b) for a in span for b in span if (a, b) != (0, 0)]
    return np.array([(0, 0)] + rest, dtype=np.float64)


def _min_image(d, L):
    return d - L * np.floor(d / L + 0.5)


def _wrap(x, L):
    x = x - L * np.floor(x / L)
    x[x >= L] = 0.0
    return x


def _pairs(pos, L):
    # disp[i, j] = minimum-image vector from i to j
    disp = _min_image(pos[None, :, :] - pos[:, None, :], L)
    dist = np.sqrt(disp[..., 0] ** 2 + disp[..., 1] ** 2)
    return disp, dist


def _forces_from(disp, dist, gamma, two_r, cutoff):
    n = dist.shape[0]
    inside = dist < cutoff
    np.fill_diagonal(inside, False)
    gap = dist - two_r
    bad = inside & (gap <= 0.0)
    if bad.any():
        i, j = np.argwhere(np.triu(bad))[0]
        return None, (int(i), int(j), float(dist[i, j]))
    mag = np.zeros((n, n))
    mag[inside] = gamma / gap[inside] ** 3 / dist[inside]
    forces = -(mag[..., None] * disp).sum(axis=1)
    return forces, None


def net_forces(pos, L, gamma, radius, cutoff):
    """Net interaction force on every agent, shape (n, 2)."""
    pos = np.asarray(pos, dtype=np.float64)
    if len(pos) == 0:
        return np.zeros((0, 2))
    disp, dist = _pairs(pos, L)
    forces, bad = _forces_from(disp, dist, gamma, 2.0 * radius, cutoff)
    if bad is not None:
        i, j, d = bad
        raise OverlapError(f"agents {i} and {j} overlap at distance {d!r}", i, j, d)
    return forces


def _min_gap4(dist, upper, two_r, cutoff):
    close = upper & (dist < cutoff)
    if not close.any():
        return np.inf
    return float(((dist[close] - two_r) ** 4).min())


def _coefficients(scheme, h, tau):
    if scheme == 0:
        c1 = np.exp(-h / tau)
        return c1, -tau * np.expm1(-h / tau)
    c1 = 1.0 - h / tau
    return c1, h * c1


def advance(pos, vel, v0x, n_steps, dt, tau, mass, gamma, radius, cutoff, L,
            guard, max_halvings, scheme):
    """Advance ``n_steps`` steps in place; see ``_core.advance``."""
    n = len(pos)
    if n == 0 or n_steps <= 0:
        return 0
    two_r = 2.0 * radius
    ticks_total = 1 << max_halvings
    upper = np.triu(np.ones((n, n), dtype=bool), 1)
    v0 = np.zeros((n, 2))
    v0[:, 0] = v0x
    disp, dist = _pairs(pos, L)
    forces, bad = _forces_from(disp, dist, gamma, two_r, cutoff)
    if bad is not None:
        i, j, d = bad
        raise OverlapError(f"agents {i} and {j} overlap at distance {d!r}", i, j, d)
    stiff = 6.0 * gamma / (mass * STABILITY**2)
    min_gap4 = _min_gap4(dist, upper, two_r, cutoff)
    rejected = 0
    for _ in range(n_steps):
        p = 0
        while p < ticks_total:
            size = ticks_total if p == 0 else p & -p
            while True:
                h = dt * size / ticks_total
                if min_gap4 < stiff * h * h and size > 1:
                    rejected += 1
                    size >>= 1
                    continue
                c1, c2 = _coefficients(scheme, h, tau)
                target = v0 + tau * forces / mass
                new_vel = target + (vel - target) * c1
                new_pos = _wrap(pos + target * h + (vel - target) * c2, L)
                ndisp, ndist = _pairs(new_pos, L)
                nforces, bad = _forces_from(ndisp, ndist, gamma, two_r, cutoff)
                if bad is None:
                    gap_new = ndist - two_r
                    gap_old = dist - two_r
                    close = upper & (ndist < cutoff)
                    viol = close & (
                        ((gap_new < guard) & (gap_new < gap_old))
                        | ((dist < cutoff) & (gap_new < 0.5 * gap_old))
                        | (gap_new**4 < stiff * h * h)
                    )
                    if viol.any():
                        i, j = np.argwhere(viol)[0]
                        bad = (int(i), int(j), float(ndist[i, j]))
                if bad is None:
                    pos[...] = new_pos
                    vel[...] = new_vel
                    forces, dist = nforces, ndist
                    min_gap4 = _min_gap4(dist, upper, two_r, cutoff)
                    p += size
                    break
                rejected += 1
                if size == 1:
                    i, j, d = bad
                    raise IntegrationError(
                        f"overlap guard violated after {max_halvings} halvings: "
                        f"agents {i} and {j} at distance {d!r}", i, j, d)
                size >>= 1
    return rejected


def _circumcircles(pts, simplices):
    a = pts[simplices[:, 0]]
    b = pts[simplices[:, 1]] - a
    c = pts[simplices[:, 2]] - a
    den = 2.0 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    b2 = (b ** 2).sum(axis=1)
    c2 = (c ** 2).sum(axis=1)
    ux = (c[:, 1] * b2 - b[:, 1] * c2) / den
    uy = (b[:, 0] * c2 - c[:, 0] * b2) / den
    centre = a + np.stack([ux, uy], axis=1)
    return centre, np.hypot(ux, uy)


def voronoi_edges(pos, L):
    """Unique first-neighbor pairs (i < j) via Delaunay on the periodic tiling."""
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    n = len(pos)
    if n < 2:
        raise GeometryError("need at least two generators")
    disp, dist = _pairs(pos, L)
    np.fill_diagonal(dist, np.inf)
    if (dist < 1e-9 * L).any():
        raise GeometryError("coincident generators")
    for rings in range(1, MAX_RINGS + 1):
        pts = (pos[None, :, :] + L * _tiles(rings)[:, None, :]).reshape(-1, 2)
        try:
            tri = Delaunay(pts)
        except Exception as exc:  # scipy raises QhullError
            raise GeometryError(f"triangulation failed: {exc}") from exc
        simp = tri.simplices
        centre, radius = _circumcircles(pts, simp)
        touches = (simp < n).any(axis=1)
        lo = centre[touches] - radius[touches, None]
        hi = centre[touches] + radius[touches, None]
        # every triangle at a canonical vertex must be certified by the tiling
        if not ((lo < -rings * L).any() or (hi > (rings + 1) * L).any()):
            break
    else:
        raise GeometryError("image tiling too small for this configuration")

    # Each interior Delaunay edge separates two triangles; the dual Voronoi
    # edge joins their circumcentres.
    a = np.concatenate([simp[:, 0], simp[:, 1], simp[:, 2]])
    b = np.concatenate([simp[:, 1], simp[:, 2], simp[:, 0]])
    owner = np.tile(np.arange(len(simp)), 3)
    lo_v = np.minimum(a, b)
    hi_v = np.maximum(a, b)
    key = lo_v * len(pts) + hi_v
    order = np.argsort(key, kind="stable")
    key, lo_v, hi_v, owner = key[order], lo_v[order], hi_v[order], owner[order]
    twin = np.flatnonzero(key[1:] == key[:-1])
    e_lo, e_hi = lo_v[twin], hi_v[twin]
    length = np.hypot(*(centre[owner[twin]] - centre[owner[twin + 1]]).T)
    keep = (e_lo < n) & (length > 1e-9 * L)
    i = e_lo[keep]
    j = e_hi[keep] % n
    ii = np.minimum(i, j)
    jj = np.maximum(i, j)
    ok = ii != jj
    edges = np.unique(np.stack([ii[ok], jj[ok]], axis=1), axis=0)
    return edges.astype(np.int64).reshape(-1, 2)


def phi_bar_frame(pos, vel, edges, L, epsilon):
    """Neighborhood parameter (before scaling by mu) for one frame."""
    pos = np.asarray(pos, dtype=np.float64)
    vel = np.asarray(vel, dtype=np.float64)
    n = len(pos)
    out = np.zeros(n)
    if n == 0 or len(edges) == 0:
        return out
    edges = np.asarray(edges)
    focal = np.concatenate([edges[:, 0], edges[:, 1]])
    other = np.concatenate([edges[:, 1], edges[:, 0]])
    d = _min_image(pos[focal] - pos[other], L)
    r2 = (d ** 2).sum(axis=1)
    e = d / np.sqrt(r2)[:, None]
    proj = (vel[other] * e).sum(axis=1)
    np.add.at(out, focal, np.exp(-r2 / epsilon ** 2) * proj * e[:, 0])
    return out


def phi_bar_series(positions, velocities, L, epsilon):
    """Neighborhood parameter for every frame, shape (n_frames, n_agents)."""
    T, n = positions.shape[:2]
    out = np.zeros((T, n))
    if n < 2:
        return out
    for t in range(T):
        edges = voronoi_edges(positions[t], L)
        out[t] = phi_bar_frame(positions[t], velocities[t], edges, L, epsilon)
    return out
