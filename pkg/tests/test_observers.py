import math
from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdobs.dynamics import GROUP1, GROUP2, SimParams, run_simulation
from crowdobs.errors import ConfigurationError, FitError
from crowdobs.geometry import voronoi_adjacency
from crowdobs.observers import (
    CLASSIFICATION_HEADER,
    ObserverConfig,
    classify_agent_only,
    classify_neighborhood,
    cubic_weight,
    fit_linear_classifier,
    gaussian_weight,
    mu_scale,
    neighborhood_parameter,
    neighborhood_parameters,
    observe,
    phi_bar_series,
    relative_variation,
    sigma_s,
    window_average,
    window_averages,
    write_classification,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)

# exact enumeration with rationals, then mpmath for mu; frozen here
SIGMA_HALF = 1.875
SIGMA_SIXTH = 7849 / 1944  # 4.0375514403...
MU_058_HALF = 0.645947028236028
MU_058_ZERO = 0.201858446323759


# -- windows ---------------------------------------------------------------------


def test_window_average_examples():
    assert window_average(np.full(100, 2.5), 10, 50) == 2.5
    alt = np.array([1.0, -1.0] * 25)
    assert window_average(alt, 0, 50) == 0.0
    assert window_average(np.arange(1.0, 51.0), 0, 50) == 25.5


@pytest.mark.parametrize("start, w", [(-1, 5), (96, 5), (0, 0), (0, 101)])
def test_window_average_out_of_range(start, w):
    with pytest.raises(IndexError):
        window_average(np.zeros(100), start, w)


def test_window_averages_count_and_values():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1000, 3))
    out = window_averages(x, 50)
    assert out.shape == (951, 3)
    np.testing.assert_allclose(out[17], x[17:67].mean(axis=0), rtol=1e-12)


# -- classifiers -----------------------------------------------------------------


def test_agent_only_rule():
    assert classify_agent_only(0.0) == GROUP1
    assert classify_agent_only(-0.3) == GROUP2
    assert classify_agent_only(1e-9) == GROUP1


def test_neighborhood_rule():
    assert classify_neighborhood(0.1, 0.3, 1.0) == GROUP2
    assert classify_neighborhood(-0.2, 5.0, 0.0) == GROUP2
    assert classify_neighborhood(0.6, 1.0, 0.6) == GROUP1


@given(finite, finite)
def test_mu_zero_reduces_to_agent_only(v, phi):
    assert classify_neighborhood(v, phi, 0.0) == classify_agent_only(v)


@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=50), st.floats(0, 5))
def test_flip_wedge(pairs, mu):
    v, phi = np.array(pairs).T
    flipped = classify_agent_only(v) != classify_neighborhood(v, phi, mu)
    wedge = (v >= 0) != (v - mu * phi >= 0)
    np.testing.assert_array_equal(flipped, wedge)


# -- neighborhood parameter ------------------------------------------------------------


def _pair(v_j, offset=(-2.0, 0.0), L=20.0):
    pos = np.array([[10.0, 10.0], [10.0 + offset[0], 10.0 + offset[1]]])
    vel = np.array([[0.0, 0.0], v_j], dtype=float)
    return pos, vel, voronoi_adjacency(pos, L), L


def test_phi_neighbor_behind_moving_forward():
    pos, vel, adj, L = _pair([1.0, 0.0])
    assert neighborhood_parameter(pos, vel, adj, 0, 3.0, L) == pytest.approx(0.641180388429955, rel=1e-12)


def test_phi_neighbor_behind_moving_backward():
    pos, vel, adj, L = _pair([-1.0, 0.0])
    assert neighborhood_parameter(pos, vel, adj, 0, 3.0, L) == pytest.approx(-0.641180388429955, rel=1e-12)


def test_phi_perpendicular_motion_contributes_nothing():
    pos, vel, adj, L = _pair([0.0, 1.0])
    assert neighborhood_parameter(pos, vel, adj, 0, 3.0, L) == 0.0


def test_phi_uses_minimum_image():
    # neighbor 2 units behind across the periodic boundary
    L = 20.0
    pos = np.array([[1.0, 10.0], [19.0, 10.0]])
    vel = np.array([[0.0, 0.0], [1.0, 0.0]])
    adj = voronoi_adjacency(pos, L)
    assert neighborhood_parameter(pos, vel, adj, 0, 3.0, L) == pytest.approx(math.exp(-4 / 9), rel=1e-12)


def test_phi_isolated_agent_is_zero():
    from crowdobs.geometry import VoronoiAdjacency

    adj = VoronoiAdjacency(2, np.zeros((0, 2), dtype=np.int64))
    pos = np.array([[1.0, 1.0], [5.0, 5.0]])
    assert neighborhood_parameter(pos, np.ones((2, 2)), adj, 0, 3.0, 10.0) == 0.0


def test_phi_linear_in_velocities(backend):
    traj = run_simulation(SimParams(seed=2, n_samples=5))
    pos = traj.positions[-1]
    L = traj.domain_edge
    adj = voronoi_adjacency(pos, L, backend)
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(2, 42, 2))
    pa = neighborhood_parameters(pos, a, adj, 3.0, L, backend)
    pb = neighborhood_parameters(pos, b, adj, 3.0, L, backend)
    pab = neighborhood_parameters(pos, 2.0 * a - 0.5 * b, adj, 3.0, L, backend)
    np.testing.assert_allclose(pab, 2.0 * pa - 0.5 * pb, atol=1e-12)


def test_vectorised_phi_matches_scalar(backend):
    traj = run_simulation(SimParams(seed=6, n_samples=20, intrinsic_speed=1.0))
    pos, vel = traj.positions[-1], traj.velocities[-1]
    L = traj.domain_edge
    adj = voronoi_adjacency(pos, L, backend)
    vec = neighborhood_parameters(pos, vel, adj, 3.0, L, backend)
    ref = [neighborhood_parameter(pos, vel, adj, i, 3.0, L) for i in range(42)]
    np.testing.assert_allclose(vec, ref, rtol=1e-12, atol=1e-14)
    series = phi_bar_series(traj, 3.0, backend)
    np.testing.assert_allclose(series[-1], vec, rtol=1e-12, atol=1e-14)


# -- mu scaling --------------------------------------------------------------------


def _sigma_exact(nr, l=6):
    nr = Fraction(nr)
    return sum(comb(l, k) * nr**k * (1 - nr) ** (l - k) * abs(l - 2 * k) for k in range(l + 1))


def test_sigma_examples():
    assert sigma_s(0.0) == 6.0
    assert sigma_s(0.5) == pytest.approx(SIGMA_HALF, rel=1e-12)
    assert sigma_s(1 / 6) == pytest.approx(4.0376, abs=1e-3)
    assert sigma_s(1 / 6) == pytest.approx(SIGMA_SIXTH, rel=1e-12)


@pytest.mark.parametrize("nr", [Fraction(1, 42), Fraction(2, 7), Fraction(8, 21), Fraction(19, 42)])
def test_sigma_matches_rational_enumeration(nr):
    assert sigma_s(float(nr)) == pytest.approx(float(_sigma_exact(nr)), rel=1e-12)


@given(st.floats(0, 1))
def test_sigma_symmetric(nr):
    assert sigma_s(nr) == pytest.approx(sigma_s(1 - nr), rel=1e-9, abs=1e-12)


def test_sigma_decreasing_to_half():
    grid = np.linspace(0, 0.5, 101)
    vals = [sigma_s(x) for x in grid]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_mu_examples():
    assert mu_scale(0.58, 0.5, 3.0) == pytest.approx(MU_058_HALF, rel=1e-12)
    assert mu_scale(0.58, 0.5, 3.0) == pytest.approx(0.6459, abs=5e-5)
    assert mu_scale(0.58, 0.0, 3.0) == pytest.approx(MU_058_ZERO, rel=1e-12)
    assert mu_scale(0.58, 0.3, 1e9) == pytest.approx(1 / sigma_s(0.3), rel=1e-9)


def test_mu_monotone():
    rhos = np.linspace(0.2, 0.6, 30)
    assert all(mu_scale(a, 0.3) > mu_scale(b, 0.3) for a, b in zip(rhos, rhos[1:]))
    nrs = np.linspace(0, 0.5, 30)
    assert all(mu_scale(0.4, a) < mu_scale(0.4, b) for a, b in zip(nrs, nrs[1:]))


def test_mu_rejects_bad_density():
    with pytest.raises(ConfigurationError):
        mu_scale(0.0, 0.3)


def test_kernel_relative_variation():
    rhos = np.linspace(0.22, 0.58, 50)
    assert relative_variation(gaussian_weight, rhos) < relative_variation(cubic_weight, rhos)


# -- config -----------------------------------------------------------------------------


def test_observer_config():
    c = ObserverConfig()
    assert (c.window, c.epsilon, c.neighbor_budget) == (50, 3.0, 6)
    assert c.resolve_mu(0.58, 0.5) == pytest.approx(MU_058_HALF)
    assert ObserverConfig(mu=0.2).resolve_mu(0.58, 0.5) == 0.2
    assert ObserverConfig.from_dict(c.to_dict()) == c
    for bad in ({"window": 0}, {"epsilon": 0.0}, {"mu": -1.0}):
        with pytest.raises(ConfigurationError):
            ObserverConfig(**bad)
    with pytest.raises(ConfigurationError):
        ObserverConfig.from_dict({"eps": 3})


# -- fitted boundary -----------------------------------------------------------------


def test_fit_symmetric_toy():
    fit = fit_linear_classifier([1.0, -1.0], [0.0, 0.0], [GROUP1, GROUP2])
    assert fit.mu == pytest.approx(0.0, abs=1e-9)
    assert fit.training_error == 0.0


def test_fit_rotated_separable():
    rng = np.random.default_rng(4)
    phi = rng.uniform(-2, 2, 2000)
    v = rng.uniform(-2, 2, 2000)
    keep = np.abs(v - 0.5 * phi) > 0.05
    phi, v = phi[keep], v[keep]
    labels = np.where(v - 0.5 * phi >= 0, GROUP1, GROUP2)
    fit = fit_linear_classifier(v, phi, labels)
    assert fit.training_error == 0.0
    assert 0.45 <= fit.mu <= 0.55


def test_fit_deterministic_and_subsampled():
    rng = np.random.default_rng(8)
    v = rng.normal(size=30000)
    phi = rng.normal(size=30000)
    labels = np.where(v - 0.3 * phi + rng.normal(scale=0.3, size=30000) >= 0, GROUP1, GROUP2)
    a = fit_linear_classifier(v, phi, labels, seed=3, epochs=500)
    b = fit_linear_classifier(v, phi, labels, seed=3, epochs=500)
    assert a == b
    assert a.n_samples == 20000


def test_fit_reaches_hinge_minimum():
    # the returned weights should not be improvable along a dense angle scan
    rng = np.random.default_rng(12)
    v = rng.normal(size=3000)
    phi = rng.normal(size=3000)
    labels = np.where(v - 0.4 * phi + rng.normal(scale=0.5, size=3000) >= 0, GROUP1, GROUP2)
    fit = fit_linear_classifier(v, phi, labels)
    scale = np.array([np.sqrt(np.mean(phi**2)), np.sqrt(np.mean(v**2))])
    y = np.where(labels == GROUP1, 1.0, -1.0)
    yX = y[:, None] * np.stack([phi, v], axis=1) / scale

    def obj(w):
        return 0.5e-3 * (w @ w) + np.maximum(0.0, 1.0 - yX @ w).mean()

    best = min(obj(r * np.array([np.cos(t), np.sin(t)]))
               for t in np.linspace(0, np.pi, 721) for r in np.linspace(0.1, 10, 200))
    assert fit.objective <= best + 1e-6


def test_fit_beats_or_matches_analytic_on_toy():
    rng = np.random.default_rng(5)
    v = rng.normal(size=5000)
    phi = rng.normal(size=5000)
    labels = np.where(v - 0.8 * phi >= 0, GROUP1, GROUP2)
    fit = fit_linear_classifier(v, phi, labels)
    analytic = np.mean(classify_neighborhood(v, phi, 0.5) != labels)
    assert fit.training_error <= analytic


def test_fit_errors():
    with pytest.raises(FitError):
        fit_linear_classifier([1.0, 2.0], [0.0, 0.0], [GROUP1, GROUP1])
    with pytest.raises(FitError):
        fit_linear_classifier([1.0, 2.0], [0.0], [GROUP1, GROUP2])


# -- end to end ---------------------------------------------------------------------


def test_observe_and_dump(tmp_path, backend):
    traj = run_simulation(SimParams(seed=1, n_samples=80))
    feats = observe(traj, ObserverConfig(), backend)
    assert feats.v_w.shape == (31, 42) and feats.n_windows == 31
    np.testing.assert_allclose(feats.v_w[3], traj.velocities[3:53, :, 0].mean(axis=0), rtol=1e-12)
    mu = mu_scale(0.57706, 1 / 3)
    wc = feats.window(4, mu)
    assert wc.window_start == 4
    np.testing.assert_array_equal(wc.predicted, classify_neighborhood(wc.v_w, wc.phi_w, mu))
    path = write_classification(feats, mu, tmp_path / "c.csv")
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == CLASSIFICATION_HEADER
    assert len(lines) == 1 + 31 * 42
    first = lines[1].split(",")
    assert first[:3] == ["0", "0", str(int(traj.labels[0]))]
