"""Bi-disperse crowd on a periodic square: parameters, forces, integration
and trajectory I/O.

Agents are hard-cored disks of radius ``R`` relaxing toward ``+s0 e_x``
(group 1) or ``-s0 e_x`` (group 2) on a time scale ``tau`` and repelling
each other with ``gamma / (d - 2R)**3`` inside the cutoff.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from crowdobs import _backend
from crowdobs.errors import (
    ConfigurationError,
    InitializationError,
    IntegrationError,
    OverlapError,
)

GROUP1 = 1
GROUP2 = 2

#: area fraction of hexagonal close packing, the hard upper bound on density
MAX_PACKING = math.pi / (2.0 * math.sqrt(3.0))

#: below this packing fraction random sequential placement is used
RSA_DENSITY_LIMIT = 0.45
#: extra surface gap (in radii) demanded by random placement
RSA_CLEARANCE = 0.1
#: lattice jitter as a fraction of the free gap between sites
LATTICE_JITTER = 0.25

_SCHEMES = {"exponential": 0, "euler": 1}


@dataclass(frozen=True)
class SimParams:
    """Physical and numerical parameters of one run."""

    n_agents: int = 42
    number_ratio: float = 1.0 / 3.0
    density: float = 0.57706
    intrinsic_speed: float = 0.75
    mass: float = 1.0
    relax_time: float = 0.2
    force_strength: float = 0.2
    radius: float = 1.0
    cutoff: float = 3.0
    dt: float = 0.01
    sample_interval: float = 0.1
    n_samples: int = 1000
    seed: int = 0
    integrator: str = "exponential"
    guard: float = 1e-3  # in units of radius
    max_halvings: int = 12
    relax_steps: int = 100

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_agents < 1:
            raise ConfigurationError("n_agents must be at least 1")
        if not 0.0 <= self.number_ratio <= 0.5:
            raise ConfigurationError("number_ratio must lie in [0, 1/2]")
        if not 0.0 < self.density < MAX_PACKING:
            raise ConfigurationError(
                f"density {self.density} outside (0, {MAX_PACKING:.4f})"
            )
        if self.dt <= 0 or self.sample_interval <= 0:
            raise ConfigurationError("dt and sample_interval must be positive")
        ratio = self.sample_interval / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            raise ConfigurationError("sample_interval must be an integer multiple of dt")
        if self.cutoff <= 2.0 * self.radius:
            raise ConfigurationError("cutoff must exceed 2 * radius")
        if min(self.mass, self.relax_time, self.radius) <= 0 or self.force_strength < 0:
            raise ConfigurationError("mass, relax_time, radius must be positive")
        if self.n_samples < 1:
            raise ConfigurationError("n_samples must be at least 1")
        if self.integrator not in _SCHEMES:
            raise ConfigurationError(f"unknown integrator {self.integrator!r}")
        if not 0 <= self.max_halvings <= 40:
            raise ConfigurationError("max_halvings must lie in [0, 40]")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")

    @property
    def n_group2(self) -> int:
        # round half up; the default grid always gives an integer product
        return int(math.floor(self.number_ratio * self.n_agents + 0.5 + 1e-9))

    @property
    def steps_per_sample(self) -> int:
        return int(round(self.sample_interval / self.dt))

    @property
    def domain_edge(self) -> float:
        return domain_edge(self.n_agents, self.density, self.radius)

    def replace(self, **changes) -> "SimParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SimParams":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"unknown parameter(s): {sorted(unknown)}")
        return cls(**data)


def domain_edge(n_agents: int, density: float, radius: float = 1.0, *,
                strict: bool = True) -> float:
    """Edge of the square domain holding ``n_agents`` disks at area fraction
    ``density``.

    With ``strict`` (the default) densities at or above hexagonal close
    packing are rejected; otherwise only non-positive values are.
    """
    upper = MAX_PACKING if strict else math.inf
    if not 0.0 < density < upper:
        raise ConfigurationError(f"density {density} outside (0, {upper:.4f})")
    if n_agents < 1 or radius <= 0:
        raise ConfigurationError("need n_agents >= 1 and radius > 0")
    return radius * math.sqrt(n_agents * math.pi / density)


def pair_force(displacement, params: SimParams) -> np.ndarray:
    """Force on agent i from agent j, where ``displacement`` points from i to j.

    Zero at or beyond the cutoff; raises ``OverlapError`` at contact.
    """
    d = np.asarray(displacement, dtype=np.float64)
    dist = float(math.hypot(d[0], d[1]))
    if dist >= params.cutoff:
        return np.zeros(2)
    gap = dist - 2.0 * params.radius
    if gap <= 0.0:
        raise OverlapError(f"pair at distance {dist!r} overlaps", distance=dist)
    return -params.force_strength / gap**3 * d / dist


def net_forces(positions, params: SimParams, L: float | None = None, backend=None):
    """Sum of pair forces on each agent, minimum-image, shape (n, 2)."""
    core = backend or _backend.core
    L = params.domain_edge if L is None else L
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    return core.net_forces(pos, L, params.force_strength, params.radius, params.cutoff)


def desired_vx(labels, speed: float) -> np.ndarray:
    labels = np.asarray(labels)
    return np.where(labels == GROUP1, speed, -speed).astype(np.float64)


def _advance(pos, vel, v0x, n_steps, params, L, backend):
    core = backend or _backend.core
    return core.advance(
        pos,
        vel,
        np.ascontiguousarray(v0x, dtype=np.float64),
        int(n_steps),
        params.dt,
        params.relax_time,
        params.mass,
        params.force_strength,
        params.radius,
        params.cutoff,
        L,
        params.guard * params.radius,
        params.max_halvings,
        _SCHEMES[params.integrator],
    )


def _min_pair_distance(pos, L):
    if len(pos) < 2:
        return math.inf
    d = pos[None, :, :] - pos[:, None, :]
    d -= L * np.floor(d / L + 0.5)
    dist = np.sqrt((d**2).sum(axis=-1))
    np.fill_diagonal(dist, np.inf)
    return float(dist.min())


def _lattice_sites(n, L, radius):
    # Triangular-ish lattice with an even row count so the row offset wraps.
    best = None
    for nr in range(2, 2 * n + 2, 2):
        nc = -(-n // nr)
        dx, dy = L / nc, L / nr
        spacing = min(dx, math.hypot(dx / 2.0, dy), 2 * dy)
        if nc == 1:
            spacing = min(spacing, L)
        if best is None or spacing > best[0]:
            best = (spacing, nr, nc)
    spacing, nr, nc = best
    if spacing <= 2.0 * radius:
        raise InitializationError(f"no lattice with spacing > 2R fits (best {spacing:.4f})")
    dx, dy = L / nc, L / nr
    rows, cols = np.divmod(np.arange(nr * nc), nc)
    x = (cols + 0.5 * (rows % 2)) * dx
    y = rows * dy
    return np.stack([x, y], axis=1), spacing


def _random_sequential(n, L, radius, rng, max_attempts):
    pos = np.empty((n, 2))
    placed = 0
    attempts = 0
    min_d2 = (2.0 * radius) ** 2
    while placed < n:
        if attempts >= max_attempts:
            return None
        attempts += 1
        cand = rng.random(2) * L
        if placed:
            d = pos[:placed] - cand
            d -= L * np.floor(d / L + 0.5)
            if ((d**2).sum(axis=1) < min_d2).any():
                continue
        pos[placed] = cand
        placed += 1
    return pos


def init_configuration(params: SimParams, backend=None):
    """Random non-overlapping start with zero velocities.

    Returns ``(L, positions, velocities, labels)``. Exactly
    ``params.n_group2`` agents, chosen uniformly, carry label 2.
    """
    rng = np.random.default_rng(params.seed)
    n = params.n_agents
    L = params.domain_edge
    labels = np.full(n, GROUP1, dtype=np.int64)
    labels[rng.permutation(n)[: params.n_group2]] = GROUP2

    pos = None
    if params.density < RSA_DENSITY_LIMIT:
        pos = _random_sequential(
            n, L, params.radius * (1.0 + RSA_CLEARANCE / 2.0), rng, 2000 * n
        )
    if pos is None:
        sites, spacing = _lattice_sites(n, L, params.radius)
        chosen = sites[rng.permutation(len(sites))[:n]]
        jitter = LATTICE_JITTER * (spacing - 2.0 * params.radius)
        ang = rng.random(n) * 2.0 * math.pi
        rad = jitter * np.sqrt(rng.random(n))
        shift = rng.random(2) * L
        pos = chosen + np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1) + shift
        pos = pos - L * np.floor(pos / L)
        pos[pos >= L] = 0.0
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    vel = np.zeros((n, 2))
    try:
        _advance(pos, vel, np.zeros(n), params.relax_steps, params, L, backend)
    except IntegrationError as exc:
        raise InitializationError(f"relaxation failed: {exc}") from exc
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    if _min_pair_distance(pos, L) < 2.0 * params.radius:
        raise InitializationError("initial configuration overlaps")
    return L, pos, np.zeros((n, 2)), labels


def step(positions, velocities, labels, params: SimParams, L=None, backend=None):
    """One guarded integration step of size ``params.dt``; returns new arrays."""
    L = params.domain_edge if L is None else L
    pos = np.array(positions, dtype=np.float64, order="C")
    vel = np.array(velocities, dtype=np.float64, order="C")
    _advance(pos, vel, desired_vx(labels, params.intrinsic_speed), 1, params, L, backend)
    return pos, vel


@dataclass
class Trajectory:
    """Recorded frames of one run plus ground-truth labels."""

    params: SimParams
    domain_edge: float
    labels: np.ndarray
    times: np.ndarray
    positions: np.ndarray  # (n_samples, n_agents, 2)
    velocities: np.ndarray  # (n_samples, n_agents, 2)
    rejected_steps: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return len(self.times)

    @property
    def n_agents(self) -> int:
        return len(self.labels)

    def same_as(self, other: "Trajectory") -> bool:
        return (
            self.params == other.params
            and self.domain_edge == other.domain_edge
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.velocities, other.velocities)
        )


def integrate(pos, vel, labels, params: SimParams, L: float, backend=None):
    """Record ``params.n_samples`` frames starting from the given state."""
    n = len(labels)
    T = params.n_samples
    pos = np.array(pos, dtype=np.float64, order="C")
    vel = np.array(vel, dtype=np.float64, order="C")
    positions = np.empty((T, n, 2))
    velocities = np.empty((T, n, 2))
    v0x = desired_vx(labels, params.intrinsic_speed)
    rejected = 0
    for k in range(T):
        positions[k] = pos
        velocities[k] = vel
        if k == T - 1:
            break
        try:
            rejected += _advance(pos, vel, v0x, params.steps_per_sample, params, L, backend)
        except IntegrationError as exc:
            raise exc.with_frame(k + 1) from exc
    times = np.arange(T) * params.sample_interval
    return Trajectory(params, L, np.asarray(labels), times, positions, velocities, rejected)


def run_simulation(params: SimParams, backend=None) -> Trajectory:
    """Initialise from ``params.seed`` and record the trajectory."""
    L, pos, vel, labels = init_configuration(params, backend)
    return integrate(pos, vel, labels, params, L, backend)


def min_pair_distance(traj: Trajectory) -> float:
    """Smallest minimum-image distance over all frames and pairs."""
    return min(_min_pair_distance(f, traj.domain_edge) for f in traj.positions)


# -- file format ------------------------------------------------------------

CSV_HEADER = ["t", "agent_id", "group", "x", "y", "vx", "vy"]


def _fmt(x: float) -> str:
    return "%.17g" % x


def manifest_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def write_trajectory(traj: Trajectory, path) -> Path:
    """Write ``t,agent_id,group,x,y,vx,vy`` rows and a JSON sidecar."""
    from crowdobs import __version__

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        lines = []
        for k, t in enumerate(traj.times):
            ts = _fmt(t)
            for i in range(traj.n_agents):
                x, y = traj.positions[k, i]
                vx, vy = traj.velocities[k, i]
                lines.append(
                    f"{ts},{i},{int(traj.labels[i])},{_fmt(x)},{_fmt(y)},{_fmt(vx)},{_fmt(vy)}\n"
                )
        fh.writelines(lines)
    sidecar = {
        "params": traj.params.to_dict(),
        "seed": traj.params.seed,
        "domain_edge": _fmt(traj.domain_edge),
        "n_agents": traj.n_agents,
        "n_frames": traj.n_frames,
        "rejected_steps": traj.rejected_steps,
        "code_version": __version__,
        "backend": _backend.NAME,
    }
    manifest_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def read_trajectory(path) -> Trajectory:
    """Inverse of ``write_trajectory``; floats round-trip exactly."""
    path = Path(path)
    side = json.loads(manifest_path(path).read_text())
    params = SimParams.from_dict(side["params"])
    n = int(side["n_agents"])
    T = int(side["n_frames"])
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ConfigurationError(f"{path}: unexpected header {header}")
        rows = np.array([[float(v) for v in row] for row in reader])
    if rows.shape != (T * n, 7):
        raise ConfigurationError(f"{path}: expected {T * n} rows, found {len(rows)}")
    rows = rows.reshape(T, n, 7)
    return Trajectory(
        params=params,
        domain_edge=float(side["domain_edge"]),
        labels=rows[0, :, 2].astype(np.int64),
        times=rows[:, 0, 0].copy(),
        positions=np.ascontiguousarray(rows[:, :, 3:5]),
        velocities=np.ascontiguousarray(rows[:, :, 5:7]),
        rejected_steps=int(side.get("rejected_steps", 0)),
    )
