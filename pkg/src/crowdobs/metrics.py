"""Misclassification counts, drift, trapping diagnostics and histograms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from crowdobs.dynamics import GROUP1, GROUP2, SimParams, Trajectory
from crowdobs.observers import classify_agent_only, classify_neighborhood

OBSERVERS = ("agent_only", "neighborhood", "fitted")
GROUPS = (GROUP1, GROUP2)

#: bins and half-range (in units of s0) of the report histograms
HIST_BINS = 61
HIST_RANGE = 1.2


def misclassification_count(predicted, true) -> tuple[int, int]:
    """Disagreements between predicted and true labels, split by true group.

    Examples
    --------
    >>> misclassification_count([1, 1, 2, 1], [1, 2, 2, 2])
    (0, 2)
    """
    predicted = np.asarray(predicted)
    true = np.asarray(true)
    if predicted.shape != true.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {true.shape}")
    wrong = predicted != true
    return int((wrong & (true == GROUP1)).sum()), int((wrong & (true == GROUP2)).sum())


def misclassification_series(predicted, labels) -> np.ndarray:
    """Per-window counts, shape (W, 2), for predictions of shape (W, N)."""
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    if predicted.shape[-1] != labels.shape[-1]:
        raise ValueError("label count does not match predictions")
    wrong = predicted != labels
    return np.stack([(wrong & (labels == g)).sum(axis=-1) for g in GROUPS], axis=-1)


def mixture_velocity(s0: float, number_ratio: float) -> float:
    """Mean desired x-velocity of the whole crowd."""
    return s0 * (1.0 - 2.0 * number_ratio)


def drift_speed(traj: Trajectory, steady_window: tuple[int, int] | None = None) -> float:
    """Mean x-velocity over agents and the frames ``[start, stop)``.

    The default window is the second half of the trajectory.
    """
    T = traj.n_frames
    start, stop = steady_window if steady_window is not None else (T // 2, T)
    if not (0 <= start < stop <= T):
        raise ValueError(f"empty or out-of-range steady window ({start}, {stop}) for {T} frames")
    return float(traj.velocities[start:stop, :, 0].mean())


def group_drift(traj: Trajectory, group, steady_window=None) -> float:
    """Same as :func:`drift_speed` restricted to one group."""
    T = traj.n_frames
    start, stop = steady_window if steady_window is not None else (T // 2, T)
    if not (0 <= start < stop <= T):
        raise ValueError("empty or out-of-range steady window")
    members = np.asarray(traj.labels) == group
    if not members.any():
        raise ValueError(f"group {group} has no members")
    return float(traj.velocities[start:stop, members, 0].mean())


def trapped_mask(velocities, forces, labels, params: SimParams) -> np.ndarray:
    """Agents whose drive cannot overcome the opposing neighbor force.

    For a Group-2 agent (desired direction -x) the test is
    ``(m / tau) * (v . e_-x - s0) < F . e_x``; Group 1 uses the mirror image
    ``(m / tau) * (v . e_x - s0) < F . e_-x``.
    """
    v = np.asarray(velocities, dtype=np.float64)
    f = np.asarray(forces, dtype=np.float64)
    labels = np.asarray(labels)
    sign = np.where(labels == GROUP1, 1.0, -1.0)  # desired direction along x
    lhs = params.mass / params.relax_time * (sign * v[:, 0] - params.intrinsic_speed)
    rhs = -sign * f[:, 0]
    return lhs < rhs


def trapped_fraction(velocities, forces, labels, params: SimParams, group) -> float:
    """Fraction of ``group`` satisfying the trapping inequality; 0 if empty."""
    labels = np.asarray(labels)
    members = labels == group
    if not members.any():
        return 0.0
    return float(trapped_mask(velocities, forces, labels, params)[members].mean())


def histogram_edges(s0: float, bins: int = HIST_BINS, half_range: float = HIST_RANGE):
    return np.linspace(-half_range * s0, half_range * s0, bins + 1)


def velocity_histogram(traj: Trajectory, group, bins=HIST_BINS, value_range=None) -> tuple:
    """Normalised histogram of v_x over all frames and the group's agents.

    Parameters
    ----------
    bins : int or array_like
        Bin count or explicit edges.
    value_range : (float, float), optional
        Defaults to ``±1.2 s0``. Samples outside are clipped into the end
        bins so the mass always sums to one.

    Returns
    -------
    density, edges : ndarray
    """
    members = np.asarray(traj.labels) == group
    if not members.any():
        raise ValueError(f"group {group} has no members")
    vx = traj.velocities[:, members, 0].ravel()
    if np.ndim(bins) == 0:
        if int(bins) < 1:
            raise ValueError("bins must be >= 1")
        if value_range is None:
            s = traj.params.intrinsic_speed or 1.0
            value_range = (-HIST_RANGE * s, HIST_RANGE * s)
        edges = np.linspace(value_range[0], value_range[1], int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=np.float64)
    counts, _ = np.histogram(np.clip(vx, edges[0], edges[-1]), bins=edges)
    return counts / counts.sum(), edges


def flip_counts(v_w, phi_bar_w, labels, mu: float) -> tuple[int, int]:
    """Predictions changed by the neighborhood term, split by outcome.

    A flip happens exactly where ``sign(v_w)`` and ``sign(v_w - mu * phi)``
    disagree. Returns ``(correct_flips, incorrect_flips)`` so that
    ``errors_neighborhood = errors_agent_only - correct + incorrect``.
    """
    labels = np.broadcast_to(np.asarray(labels), np.shape(v_w))
    a = classify_agent_only(v_w)
    b = classify_neighborhood(v_w, phi_bar_w, mu)
    flipped = a != b
    return int((flipped & (b == labels)).sum()), int((flipped & (a == labels)).sum())


# -- aggregation ----------------------------------------------------------------


@dataclass
class RunResult:
    """Metrics of one simulation run."""

    run_index: int
    run_seed: int
    n_m: dict  # (observer, group) -> mean count per window
    c_in_initial: dict  # group -> clusters at the first frame
    c_in_final: dict  # group -> clusters at the last frame
    drift_speed: float
    n_windows: int


def _mean_se(values) -> tuple[float, float]:
    x = np.asarray(values, dtype=np.float64)
    if len(x) == 0:
        return math.nan, math.nan
    if len(x) == 1:
        return float(x[0]), math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


@dataclass
class SweepRecord:
    """Per-run results at one grid point and their aggregates."""

    density: float
    number_ratio: float
    intrinsic_speed: float
    params: dict
    runs: list
    mu: float
    mu_fit: float | None = None
    n_faults: int = 0
    hist_edges: np.ndarray | None = None
    histograms: dict = field(default_factory=dict)  # group -> mean density over runs

    @property
    def key(self) -> tuple:
        return (self.density, self.number_ratio, self.intrinsic_speed)

    @property
    def n_runs(self) -> int:
        return len(self.runs)

    @property
    def n_windows(self) -> int:
        return sum(r.n_windows for r in self.runs)

    @property
    def observers(self) -> list[str]:
        present = {obs for r in self.runs for obs, _ in r.n_m}
        return [o for o in OBSERVERS if o in present]

    def values(self, name: str, observer: str | None = None, group=None) -> np.ndarray:
        """Per-run values of ``n_m``, ``total``, ``c_in_initial``, ``c_in_final`` or ``drift_speed``."""
        if name == "n_m":
            return np.array([r.n_m[(observer, group)] for r in self.runs])
        if name == "total":
            return np.array([sum(r.n_m[(observer, g)] for g in GROUPS) for r in self.runs])
        if name in ("c_in_initial", "c_in_final"):
            return np.array([getattr(r, name)[group] for r in self.runs], dtype=np.float64)
        if name == "drift_speed":
            return np.array([r.drift_speed for r in self.runs])
        raise KeyError(name)

    def mean_se(self, name: str, observer: str | None = None, group=None) -> tuple[float, float]:
        return _mean_se(self.values(name, observer, group))

    def n_m(self, observer: str, group) -> float:
        return self.mean_se("n_m", observer, group)[0]

    def paired_difference(self, name: str, a: str, b: str, group=None) -> tuple[float, float]:
        """Mean and standard error of the run-wise difference ``a - b`` between observers."""
        return _mean_se(self.values(name, a, group) - self.values(name, b, group))

    def to_dict(self) -> dict:
        """JSON-ready form; floats survive a ``json`` round trip exactly."""
        return {
            "rho": self.density,
            "Nr": self.number_ratio,
            "s0": self.intrinsic_speed,
            "params": dict(self.params),
            "mu": self.mu,
            "mu_fit": self.mu_fit,
            "n_faults": self.n_faults,
            "hist_edges": None if self.hist_edges is None else [float(e) for e in self.hist_edges],
            "histograms": {str(g): [float(x) for x in h] for g, h in sorted(self.histograms.items())},
            "runs": [
                {
                    "run_index": r.run_index,
                    "run_seed": r.run_seed,
                    "n_windows": r.n_windows,
                    "drift_speed": r.drift_speed,
                    "n_m": {f"{o}:{g}": v for (o, g), v in sorted(r.n_m.items())},
                    "c_in_initial": {str(g): v for g, v in sorted(r.c_in_initial.items())},
                    "c_in_final": {str(g): v for g, v in sorted(r.c_in_final.items())},
                }
                for r in self.runs
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepRecord":
        runs = []
        for r in d["runs"]:
            n_m = {}
            for k, v in r["n_m"].items():
                o, g = k.split(":")
                n_m[(o, int(g))] = float(v)
            runs.append(RunResult(
                int(r["run_index"]), int(r["run_seed"]), n_m,
                {int(g): float(v) for g, v in r["c_in_initial"].items()},
                {int(g): float(v) for g, v in r["c_in_final"].items()},
                float(r["drift_speed"]), int(r["n_windows"]),
            ))
        edges = d.get("hist_edges")
        return cls(
            float(d["rho"]), float(d["Nr"]), float(d["s0"]), dict(d["params"]), runs,
            float(d["mu"]), None if d.get("mu_fit") is None else float(d["mu_fit"]),
            int(d.get("n_faults", 0)),
            None if edges is None else np.asarray(edges, dtype=np.float64),
            {int(g): np.asarray(h, dtype=np.float64) for g, h in d.get("histograms", {}).items()},
        )

    def __eq__(self, other):
        if not isinstance(other, SweepRecord):
            return NotImplemented
        return self.to_dict() == other.to_dict()
