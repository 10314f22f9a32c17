"""Observers that label agents from movement alone.

The agent-only observer thresholds an agent's window-averaged x-velocity at
zero. The neighborhood observer shifts that threshold by ``mu`` times a
kernel-weighted sum of neighbor velocity components directed at the agent.
``mu`` comes from an order-one scaling argument (``mu_scale``) or from a
zero-intercept hinge-loss fit to labelled windows.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.optimize import minimize

from crowdobs import _backend
from crowdobs.dynamics import GROUP1, GROUP2, Trajectory
from crowdobs.errors import ConfigurationError, FitError


@dataclass(frozen=True)
class ObserverConfig:
    window: int = 50
    epsilon: float = 3.0
    mu: float | None = None  # None: use mu_scale(density, number_ratio, epsilon)
    neighbor_budget: int = 6

    def __post_init__(self):
        if self.window < 1:
            raise ConfigurationError("window must be at least 1")
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")
        if self.mu is not None and self.mu < 0:
            raise ConfigurationError("mu must be non-negative")
        if self.neighbor_budget < 1:
            raise ConfigurationError("neighbor_budget must be at least 1")

    def resolve_mu(self, density, number_ratio) -> float:
        if self.mu is not None:
            return float(self.mu)
        return mu_scale(density, number_ratio, self.epsilon, self.neighbor_budget)

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "epsilon": self.epsilon,
            "mu": self.mu,
            "neighbor_budget": self.neighbor_budget,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ObserverConfig":
        unknown = set(data) - {"window", "epsilon", "mu", "neighbor_budget"}
        if unknown:
            raise ConfigurationError(f"unknown observer field(s): {sorted(unknown)}")
        return cls(**data)


# -- windowing ----------------------------------------------------------------


def window_average(series, window_start: int, w: int):
    """Mean of ``w`` consecutive samples starting at ``window_start``."""
    series = np.asarray(series, dtype=np.float64)
    if w < 1 or window_start < 0 or window_start + w > len(series):
        raise IndexError(
            f"window [{window_start}, {window_start + w}) outside series of length {len(series)}"
        )
    return series[window_start : window_start + w].mean(axis=0)


def window_averages(series, w: int) -> np.ndarray:
    """All stride-1 window means along axis 0: shape (T - w + 1, ...)."""
    series = np.asarray(series, dtype=np.float64)
    if w < 1 or w > len(series):
        raise IndexError(f"window {w} does not fit a series of length {len(series)}")
    return sliding_window_view(series, w, axis=0).mean(axis=-1)


# -- decision rules -------------------------------------------------------------


def classify_agent_only(v_w):
    """Group 1 where the windowed x-velocity is >= 0, else group 2."""
    out = np.where(np.asarray(v_w) >= 0.0, GROUP1, GROUP2)
    return int(out) if out.ndim == 0 else out


def classify_neighborhood(v_w, phi_bar_w, mu: float):
    """Group 1 where ``v_w >= mu * phi_bar_w``, else group 2.

    With ``mu == 0`` this is exactly :func:`classify_agent_only`.
    """
    v = np.asarray(v_w, dtype=np.float64)
    out = np.where(v >= mu * np.asarray(phi_bar_w, dtype=np.float64), GROUP1, GROUP2)
    return int(out) if out.ndim == 0 else out


# -- neighborhood parameter -----------------------------------------------------


def gaussian_weight(r, epsilon: float = 3.0):
    return np.exp(-((np.asarray(r, dtype=np.float64) / epsilon) ** 2))


def cubic_weight(r):
    return np.asarray(r, dtype=np.float64) ** -3.0


def neighborhood_parameter(positions, velocities, adjacency, focal: int,
                           epsilon: float, domain_edge: float) -> float:
    """Unscaled neighborhood parameter of agent ``focal`` in one frame.

    Sum over Voronoi neighbors ``j`` of ``f(r) (v_j . e) e_x`` where ``e`` is
    the minimum-image unit vector from ``j`` toward the focal agent and
    ``f(r) = exp(-(r / epsilon)**2)``.
    """
    pos = np.asarray(positions, dtype=np.float64)
    vel = np.asarray(velocities, dtype=np.float64)
    L = domain_edge
    total = 0.0
    for j in adjacency.neighbor_lists[focal]:
        d = pos[focal] - pos[j]
        d = d - L * np.floor(d / L + 0.5)
        r = math.hypot(d[0], d[1])
        e = d / r
        total += math.exp(-((r / epsilon) ** 2)) * float(vel[j] @ e) * e[0]
    return total


def neighborhood_parameters(positions, velocities, adjacency, epsilon: float,
                            domain_edge: float, backend=None) -> np.ndarray:
    """Unscaled neighborhood parameter of every agent in one frame."""
    core = backend or _backend.core
    return core.phi_bar_frame(
        np.ascontiguousarray(positions, dtype=np.float64),
        np.ascontiguousarray(velocities, dtype=np.float64),
        np.ascontiguousarray(adjacency.edges, dtype=np.int64).reshape(-1, 2),
        float(domain_edge),
        float(epsilon),
    )


def phi_bar_series(traj: Trajectory, epsilon: float = 3.0, backend=None) -> np.ndarray:
    """Per-frame unscaled neighborhood parameter, shape (n_frames, n_agents).

    Adjacency is recomputed for every frame.
    """
    core = backend or _backend.core
    return core.phi_bar_series(
        np.ascontiguousarray(traj.positions),
        np.ascontiguousarray(traj.velocities),
        float(traj.domain_edge),
        float(epsilon),
    )


# -- scaling of mu ----------------------------------------------------------------


def sigma_s(number_ratio: float, l: int = 6) -> float:
    """Expected excess of majority over minority among ``l`` neighbors whose
    groups are drawn independently with minority probability ``number_ratio``."""
    if not 0.0 <= number_ratio <= 1.0:
        raise ConfigurationError("number_ratio must lie in [0, 1]")
    if l < 1:
        raise ConfigurationError("l must be at least 1")
    q = number_ratio
    return sum(
        math.comb(l, k) * q**k * (1.0 - q) ** (l - k) * abs(l - 2 * k) for k in range(l + 1)
    )


def mu_scale(density: float, number_ratio: float, epsilon: float = 3.0, l: int = 6) -> float:
    """``exp(1 / (density * epsilon**2)) / sigma_s(number_ratio, l)``."""
    if density <= 0:
        raise ConfigurationError("density must be positive")
    sig = sigma_s(number_ratio, l)
    if sig <= 0.0:
        raise ConfigurationError("sigma_s vanishes; mu is undefined")
    return math.exp(1.0 / (density * epsilon**2)) / sig


def relative_variation(weight, densities) -> float:
    """(max - min) / max of ``weight(1 / sqrt(rho))`` over ``densities``."""
    vals = np.asarray([float(weight(1.0 / math.sqrt(rho))) for rho in densities])
    return float((vals.max() - vals.min()) / vals.max())


# -- windowed features of a run ------------------------------------------------------


@dataclass
class WindowClassification:
    window_start: int
    predicted: np.ndarray
    v_w: np.ndarray
    phi_w: np.ndarray


@dataclass
class WindowFeatures:
    """Windowed velocity and neighborhood parameter for every window and agent."""

    window_starts: np.ndarray  # (W,)
    v_w: np.ndarray  # (W, N)
    phi_w: np.ndarray  # (W, N), unscaled
    labels: np.ndarray  # (N,)
    meta: dict = field(default_factory=dict)

    @property
    def n_windows(self) -> int:
        return len(self.window_starts)

    def predict(self, mu: float) -> np.ndarray:
        return classify_neighborhood(self.v_w, self.phi_w, mu)

    def predict_agent_only(self) -> np.ndarray:
        return classify_agent_only(self.v_w)

    def window(self, k: int, mu: float) -> WindowClassification:
        return WindowClassification(
            int(self.window_starts[k]),
            classify_neighborhood(self.v_w[k], self.phi_w[k], mu),
            self.v_w[k],
            self.phi_w[k],
        )

    def pooled(self):
        """Flattened ``(v_w, phi_w, true_label)`` over windows and agents."""
        W, N = self.v_w.shape
        return self.v_w.ravel(), self.phi_w.ravel(), np.tile(self.labels, W)


def observe(traj: Trajectory, config: ObserverConfig = ObserverConfig(),
            backend=None) -> WindowFeatures:
    """Window statistics of a trajectory for both observers."""
    phi = phi_bar_series(traj, config.epsilon, backend)
    vx = traj.velocities[:, :, 0]
    v_w = window_averages(vx, config.window)
    phi_w = window_averages(phi, config.window)
    return WindowFeatures(np.arange(len(v_w)), v_w, phi_w, np.asarray(traj.labels))


# -- data-driven boundary ------------------------------------------------------------


@dataclass(frozen=True)
class LinearFit:
    mu: float
    weights: tuple  # (w_phi, w_v) in original feature units
    training_error: float  # fraction of pooled samples misclassified
    objective: float
    n_samples: int

    def predict(self, v_w, phi_bar_w):
        return classify_neighborhood(v_w, phi_bar_w, self.mu)


def fit_linear_classifier(v_w, phi_bar_w, labels, regularization: float = 1e-3,
                          epochs: int = 10_000, seed: int = 0,
                          max_samples: int = 20_000) -> LinearFit:
    """Zero-intercept linear SVM in the (phi_bar, v) plane.

    Minimises ``regularization / 2 * |w|**2 + mean(hinge)`` by full-batch
    subgradient descent with step ``1 / sqrt(t)`` on RMS-scaled features,
    keeping the best iterate, then refines it with Nelder-Mead. Above ``max_samples`` a subsample drawn with
    ``seed`` is used for training; the reported error is on all samples.

    Returns the slope ``mu`` of the boundary ``v = mu * phi_bar``.
    """
    v = np.asarray(v_w, dtype=np.float64).ravel()
    phi = np.asarray(phi_bar_w, dtype=np.float64).ravel()
    lab = np.asarray(labels).ravel()
    if not (len(v) == len(phi) == len(lab)):
        raise FitError("feature and label lengths differ")
    if not ((lab == GROUP1).any() and (lab == GROUP2).any()):
        raise FitError("need samples from both groups")
    y = np.where(lab == GROUP1, 1.0, -1.0)

    rng = np.random.default_rng(seed)
    idx = np.arange(len(v))
    if len(idx) > max_samples:
        idx = np.sort(rng.choice(len(v), size=max_samples, replace=False))
    scale = np.array([np.sqrt(np.mean(phi**2)), np.sqrt(np.mean(v**2))])
    scale[scale == 0] = 1.0
    X = np.stack([phi[idx], v[idx]], axis=1) / scale
    yX = y[idx, None] * X

    def objective(w):
        return 0.5 * regularization * (w @ w) + np.maximum(0.0, 1.0 - yX @ w).mean()

    w = np.array([0.0, 1.0])
    best_w, best_obj = w.copy(), objective(w)
    for t in range(1, epochs + 1):
        active = (yX @ w) < 1.0
        grad = regularization * w - yX[active].sum(axis=0) / len(yX)
        w = w - grad / math.sqrt(t)
        obj = objective(w)
        if obj < best_obj:
            best_obj, best_w = obj, w.copy()

    # the subgradient phase stalls near kinks of the hinge; polish the convex
    # objective directly from the best iterate
    polished = minimize(objective, best_w, method="Nelder-Mead",
                        options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
    if polished.fun < best_obj:
        best_obj, best_w = float(polished.fun), polished.x

    w_phi, w_v = best_w / scale
    if w_v <= 0.0:
        raise FitError("fitted boundary does not separate groups by velocity")
    mu = -w_phi / w_v
    pred = classify_neighborhood(v, phi, mu)
    err = float(np.mean(pred != lab))
    return LinearFit(float(mu), (float(w_phi), float(w_v)), err, float(best_obj), len(idx))


# -- dump ----------------------------------------------------------------------------

CLASSIFICATION_HEADER = [
    "window_start",
    "agent_id",
    "true_group",
    "v_w",
    "phi_bar_w",
    "pred_agent_only",
    "pred_neighborhood",
]


def write_classification(features: WindowFeatures, mu: float, path) -> Path:
    """One row per (window, agent); ``pred_neighborhood`` uses ``mu``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    agent = features.predict_agent_only()
    neigh = features.predict(mu)
    W, N = features.v_w.shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CLASSIFICATION_HEADER)
        for k in range(W):
            start = int(features.window_starts[k])
            for i in range(N):
                writer.writerow([
                    start,
                    i,
                    int(features.labels[i]),
                    "%.17g" % features.v_w[k, i],
                    "%.17g" % features.phi_w[k, i],
                    int(agent[k, i]),
                    int(neigh[k, i]),
                ])
    return path
