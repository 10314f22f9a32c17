# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: pair forces, guarded integration, periodic Voronoi
adjacency and the per-frame neighborhood parameter.

Every function here has a drop-in twin in ``_pycore`` with the same
signature and semantics. Results agree to rounding, not bit-for-bit.
"""

import numpy as np

from libc.math cimport sqrt, floor, exp, expm1
from libc.stdlib cimport malloc, free, calloc
from libc.string cimport memset

from crowdobs.errors import GeometryError, IntegrationError, OverlapError

BACKEND = "compiled"

DEF MAXV = 256

#: largest accepted h * omega for the stiffest interacting pair
STABILITY = 0.5

cdef inline double _min_image(double d, double L) nogil:
    return d - L * floor(d / L + 0.5)


cdef inline double _wrap(double x, double L) nogil:
    x = x - L * floor(x / L)
    if x >= L:
        x = 0.0
    return x


cdef int _forces(const double* pos, Py_ssize_t n, double L, double gamma,
                 double two_r, double cutoff, double* out, double* dist,
                 Py_ssize_t* bad_i, Py_ssize_t* bad_j, double* bad_d) noexcept nogil:
    # dist (n*n, upper triangle used) receives pair distances when not NULL.
    cdef Py_ssize_t i, j
    cdef double dx, dy, d2, d, gap, mag, fx, fy
    cdef double cut2 = cutoff * cutoff
    for i in range(2 * n):
        out[i] = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            dx = _min_image(pos[2 * j] - pos[2 * i], L)
            dy = _min_image(pos[2 * j + 1] - pos[2 * i + 1], L)
            d2 = dx * dx + dy * dy
            d = sqrt(d2)
            if dist != NULL:
                dist[i * n + j] = d
            if d2 < cut2:
                gap = d - two_r
                if gap <= 0.0:
                    bad_i[0] = i
                    bad_j[0] = j
                    bad_d[0] = d
                    return 1
                mag = gamma / (gap * gap * gap) / d
                fx = -mag * dx
                fy = -mag * dy
                out[2 * i] += fx
                out[2 * i + 1] += fy
                out[2 * j] -= fx
                out[2 * j + 1] -= fy
    return 0


def net_forces(double[:, ::1] pos, double L, double gamma, double radius, double cutoff):
    """Net interaction force on every agent, shape (n, 2)."""
    cdef Py_ssize_t n = pos.shape[0]
    out = np.zeros((n, 2), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t bi = -1, bj = -1
    cdef double bd = 0.0
    if n == 0:
        return out
    if _forces(&pos[0, 0], n, L, gamma, 2.0 * radius, cutoff, &o[0, 0], NULL,
               &bi, &bj, &bd):
        raise OverlapError(
            f"agents {bi} and {bj} overlap at distance {bd!r}", bi, bj, bd)
    return out


cdef double _min_gap4(const double* dist, Py_ssize_t n, double two_r,
                      double cutoff) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double g, g4, best = 1e300
    for i in range(n):
        for j in range(i + 1, n):
            if dist[i * n + j] < cutoff:
                g = dist[i * n + j] - two_r
                g4 = g * g * g * g
                if g4 < best:
                    best = g4
    return best


cdef inline void _coefficients(int scheme, double h, double tau,
                               double* c1, double* c2) noexcept nogil:
    if scheme == 0:
        c1[0] = exp(-h / tau)
        c2[0] = -tau * expm1(-h / tau)
    else:
        c1[0] = 1.0 - h / tau
        c2[0] = h * c1[0]


def advance(double[:, ::1] pos, double[:, ::1] vel, double[::1] v0x,
            long n_steps, double dt, double tau, double mass, double gamma,
            double radius, double cutoff, double L, double guard,
            int max_halvings, int scheme):
    """Advance ``n_steps`` steps of size ``dt`` in place.

    ``scheme`` 0 integrates the relaxation term exactly over each step with
    the interaction force frozen; 1 is semi-implicit Euler. A trial step is
    rejected when a closing pair gap drops below ``guard`` or below half its
    previous value, or when ``h`` exceeds ``STABILITY / omega`` for the
    stiffest interacting pair (before or after the step); the step is then split in two recursively, at most
    ``max_halvings`` deep. Returns the number of rejected trials.
    """
    cdef Py_ssize_t n = pos.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double two_r = 2.0 * radius
    cdef long ticks_total = 1L << max_halvings
    cdef long p, size
    cdef long rejected = 0
    cdef double h, c1, c2, vtx, vty, gap_new, gap_old, d_old, d_new
    cdef double worst_d, min_gap4
    # a pair with gap g oscillates at omega**2 = 6 gamma / (m g**4); keep h * omega <= STABILITY
    cdef double stiff = 6.0 * gamma / (mass * STABILITY * STABILITY)
    cdef Py_ssize_t bi = -1, bj = -1, wi, wj
    cdef double bd = 0.0
    cdef int bad
    cdef double* F
    cdef double* Fn
    cdef double* P
    cdef double* V
    cdef double* D
    cdef double* Dn
    cdef double* tmp
    if n == 0 or n_steps <= 0:
        return 0
    F = <double*> malloc(2 * n * sizeof(double))
    Fn = <double*> malloc(2 * n * sizeof(double))
    P = <double*> malloc(2 * n * sizeof(double))
    V = <double*> malloc(2 * n * sizeof(double))
    D = <double*> calloc(n * n, sizeof(double))
    Dn = <double*> calloc(n * n, sizeof(double))
    if F == NULL or Fn == NULL or P == NULL or V == NULL or D == NULL or Dn == NULL:
        free(F); free(Fn); free(P); free(V); free(D); free(Dn)
        raise MemoryError()
    try:
        if _forces(&pos[0, 0], n, L, gamma, two_r, cutoff, F, D, &bi, &bj, &bd):
            raise OverlapError(
                f"agents {bi} and {bj} overlap at distance {bd!r}", bi, bj, bd)
        min_gap4 = _min_gap4(D, n, two_r, cutoff)
        for k in range(n_steps):
            p = 0
            while p < ticks_total:
                if p == 0:
                    size = ticks_total
                else:
                    size = p & (-p)
                while True:
                    h = dt * (<double> size) / (<double> ticks_total)
                    if min_gap4 < stiff * h * h and size > 1:
                        rejected += 1
                        size >>= 1
                        continue
                    _coefficients(scheme, h, tau, &c1, &c2)
                    for i in range(n):
                        vtx = v0x[i] + tau * F[2 * i] / mass
                        vty = tau * F[2 * i + 1] / mass
                        V[2 * i] = vtx + (vel[i, 0] - vtx) * c1
                        V[2 * i + 1] = vty + (vel[i, 1] - vty) * c1
                        P[2 * i] = _wrap(pos[i, 0] + vtx * h + (vel[i, 0] - vtx) * c2, L)
                        P[2 * i + 1] = _wrap(pos[i, 1] + vty * h + (vel[i, 1] - vty) * c2, L)
                    bad = _forces(P, n, L, gamma, two_r, cutoff, Fn, Dn, &bi, &bj, &bd)
                    worst_d = bd
                    wi = bi
                    wj = bj
                    if not bad:
                        for i in range(n):
                            for j in range(i + 1, n):
                                d_new = Dn[i * n + j]
                                if d_new >= cutoff:
                                    continue
                                gap_new = d_new - two_r
                                d_old = D[i * n + j]
                                gap_old = d_old - two_r
                                if (gap_new < guard and gap_new < gap_old) or (
                                        d_old < cutoff and gap_new < 0.5 * gap_old) or (
                                        gap_new * gap_new * gap_new * gap_new < stiff * h * h):
                                    bad = 1
                                    wi = i
                                    wj = j
                                    worst_d = d_new
                                    break
                            if bad:
                                break
                    if not bad:
                        for i in range(n):
                            pos[i, 0] = P[2 * i]
                            pos[i, 1] = P[2 * i + 1]
                            vel[i, 0] = V[2 * i]
                            vel[i, 1] = V[2 * i + 1]
                        tmp = F; F = Fn; Fn = tmp
                        tmp = D; D = Dn; Dn = tmp
                        min_gap4 = _min_gap4(D, n, two_r, cutoff)
                        p += size
                        break
                    rejected += 1
                    if size == 1:
                        raise IntegrationError(
                            f"overlap guard violated after {max_halvings} halvings: "
                            f"agents {wi} and {wj} at distance {worst_d!r}",
                            wi, wj, worst_d)
                    size >>= 1
    finally:
        free(F); free(Fn); free(P); free(V); free(D); free(Dn)
    return rejected


cdef int _clip(double* px, double* py, int* lab, int nv, double dx, double dy,
               int label, double* qx, double* qy, int* qlab) noexcept nogil:
    # Keep the part of the polygon closer to the origin than to (dx, dy).
    # Returns the new vertex count (written back into px/py/lab), or -1 on
    # buffer overflow. Edge k runs from vertex k to vertex k+1.
    cdef double half = 0.5 * (dx * dx + dy * dy)
    cdef int k, kn, m = 0
    cdef double sa, sb, t
    cdef int any_out = 0
    for k in range(nv):
        if px[k] * dx + py[k] * dy - half > 0.0:
            any_out = 1
            break
    if not any_out:
        return nv
    for k in range(nv):
        kn = k + 1
        if kn == nv:
            kn = 0
        sa = px[k] * dx + py[k] * dy - half
        sb = px[kn] * dx + py[kn] * dy - half
        if sa <= 0.0:
            if m >= MAXV:
                return -1
            qx[m] = px[k]; qy[m] = py[k]; qlab[m] = lab[k]; m += 1
            if sb > 0.0:
                t = sa / (sa - sb)
                if m >= MAXV:
                    return -1
                qx[m] = px[k] + t * (px[kn] - px[k])
                qy[m] = py[k] + t * (py[kn] - py[k])
                qlab[m] = label
                m += 1
        elif sb <= 0.0:
            t = sa / (sa - sb)
            if m >= MAXV:
                return -1
            qx[m] = px[k] + t * (px[kn] - px[k])
            qy[m] = py[k] + t * (py[kn] - py[k])
            qlab[m] = lab[k]
            m += 1
    for k in range(m):
        px[k] = qx[k]; py[k] = qy[k]; lab[k] = qlab[k]
    return m


cdef int _adjacency(const double* pos, Py_ssize_t n, double L,
                    unsigned char* adj, double* cx, double* cy, int* cl) noexcept nogil:
    # adj is n*n, zeroed here. cx/cy/cl hold 9n candidate images.
    # Returns 0, 1 for coincident generators, 2 for polygon overflow.
    cdef double px[MAXV]
    cdef double py[MAXV]
    cdef int lab[MAXV]
    cdef double qx[MAXV]
    cdef double qy[MAXV]
    cdef int qlab[MAXV]
    cdef Py_ssize_t i, j, c, nc
    cdef int nv, k, kn, a, b
    cdef double dx, dy, d2, r2, rmax2, ex, ey
    cdef double half_l = 0.5 * L
    cdef double tol2 = (1e-9 * L) * (1e-9 * L)
    memset(adj, 0, n * n)
    for i in range(n):
        nc = 0
        for j in range(n):
            dx = _min_image(pos[2 * j] - pos[2 * i], L)
            dy = _min_image(pos[2 * j + 1] - pos[2 * i + 1], L)
            if j != i and dx * dx + dy * dy < tol2:
                return 1
            for a in range(-1, 2):
                for b in range(-1, 2):
                    if j == i:
                        # own images: the starting square encodes the ones that matter
                        continue
                    cx[nc] = dx + a * L
                    cy[nc] = dy + b * L
                    cl[nc] = <int> j
                    nc += 1
        px[0] = -half_l; py[0] = -half_l; lab[0] = -1
        px[1] = half_l; py[1] = -half_l; lab[1] = -1
        px[2] = half_l; py[2] = half_l; lab[2] = -1
        px[3] = -half_l; py[3] = half_l; lab[3] = -1
        nv = 4
        rmax2 = 0.5 * L * L
        for c in range(nc):
            d2 = cx[c] * cx[c] + cy[c] * cy[c]
            if d2 >= 4.0 * rmax2:
                continue
            nv = _clip(px, py, lab, nv, cx[c], cy[c], cl[c], qx, qy, qlab)
            if nv < 0:
                return 2
            rmax2 = 0.0
            for k in range(nv):
                r2 = px[k] * px[k] + py[k] * py[k]
                if r2 > rmax2:
                    rmax2 = r2
        for k in range(nv):
            if lab[k] < 0:
                continue
            kn = k + 1
            if kn == nv:
                kn = 0
            ex = px[kn] - px[k]
            ey = py[kn] - py[k]
            if ex * ex + ey * ey > tol2:
                j = lab[k]
                adj[i * n + j] = 1
                adj[j * n + i] = 1
    return 0


cdef _raise_geometry(int code):
    if code == 1:
        raise GeometryError("coincident generators")
    raise GeometryError("Voronoi cell polygon overflow")


def voronoi_edges(double[:, ::1] pos, double L):
    """Unique first-neighbor pairs (i < j) of the periodic Voronoi tessellation.

    Each cell is built by clipping the square of side ``L`` centred on the
    generator with the bisectors of the nine nearest images of every other
    generator. Edges shorter than ``1e-9 * L`` are dropped.
    """
    cdef Py_ssize_t n = pos.shape[0]
    cdef Py_ssize_t i, j, m = 0
    if n < 2:
        raise GeometryError("need at least two generators")
    cdef unsigned char* adj = <unsigned char*> malloc(n * n)
    cdef double* cx = <double*> malloc(9 * n * sizeof(double))
    cdef double* cy = <double*> malloc(9 * n * sizeof(double))
    cdef int* cl = <int*> malloc(9 * n * sizeof(int))
    cdef int code
    try:
        code = _adjacency(&pos[0, 0], n, L, adj, cx, cy, cl)
        if code:
            _raise_geometry(code)
        for i in range(n):
            for j in range(i + 1, n):
                if adj[i * n + j]:
                    m += 1
        edges = np.empty((m, 2), dtype=np.int64)
        m = 0
        for i in range(n):
            for j in range(i + 1, n):
                if adj[i * n + j]:
                    edges[m, 0] = i
                    edges[m, 1] = j
                    m += 1
    finally:
        free(adj); free(cx); free(cy); free(cl)
    return edges


cdef void _phi_frame(const double* pos, const double* vel, Py_ssize_t n,
                     double L, double inv_eps2, const unsigned char* adj,
                     double* out) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double dx, dy, r2, r, ex, ey, proj, acc
    for i in range(n):
        acc = 0.0
        for j in range(n):
            if not adj[i * n + j]:
                continue
            # unit vector from j toward i, minimum image
            dx = _min_image(pos[2 * i] - pos[2 * j], L)
            dy = _min_image(pos[2 * i + 1] - pos[2 * j + 1], L)
            r2 = dx * dx + dy * dy
            r = sqrt(r2)
            ex = dx / r
            ey = dy / r
            proj = vel[2 * j] * ex + vel[2 * j + 1] * ey
            acc += exp(-r2 * inv_eps2) * proj * ex
        out[i] = acc


def phi_bar_frame(double[:, ::1] pos, double[:, ::1] vel, long[:, ::1] edges,
                  double L, double epsilon):
    """Neighborhood parameter (before scaling by mu) for one frame."""
    cdef Py_ssize_t n = pos.shape[0]
    cdef Py_ssize_t e
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] o = out
    if n == 0:
        return out
    cdef unsigned char* adj = <unsigned char*> calloc(n * n, 1)
    try:
        for e in range(edges.shape[0]):
            adj[edges[e, 0] * n + edges[e, 1]] = 1
            adj[edges[e, 1] * n + edges[e, 0]] = 1
        _phi_frame(&pos[0, 0], &vel[0, 0], n, L, 1.0 / (epsilon * epsilon), adj, &o[0])
    finally:
        free(adj)
    return out


def phi_bar_series(double[:, :, ::1] positions, double[:, :, ::1] velocities,
                   double L, double epsilon):
    """Neighborhood parameter for every frame, with fresh adjacency per frame.

    Returns an array of shape (n_frames, n_agents).
    """
    cdef Py_ssize_t T = positions.shape[0]
    cdef Py_ssize_t n = positions.shape[1]
    cdef Py_ssize_t t
    cdef int code = 0
    out = np.zeros((T, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    if T == 0 or n < 2:
        return out
    cdef unsigned char* adj = <unsigned char*> malloc(n * n)
    cdef double* cx = <double*> malloc(9 * n * sizeof(double))
    cdef double* cy = <double*> malloc(9 * n * sizeof(double))
    cdef int* cl = <int*> malloc(9 * n * sizeof(int))
    cdef double inv_eps2 = 1.0 / (epsilon * epsilon)
    try:
        with nogil:
            for t in range(T):
                code = _adjacency(&positions[t, 0, 0], n, L, adj, cx, cy, cl)
                if code:
                    break
                _phi_frame(&positions[t, 0, 0], &velocities[t, 0, 0], n, L,
                           inv_eps2, adj, &o[t, 0])
        if code:
            _raise_geometry(code)
    finally:
        free(adj); free(cx); free(cy); free(cl)
    return out
