import math

import numpy as np
import pytest
from scipy import stats

from gibbslab.dynamics import (
    circle_free_potential,
    constant_drift,
    markov_local_drift,
    quadratic_potential,
    simulate,
)
from gibbslab.errors import CoverageError, ValidationError
from gibbslab.estimates import MCParams, mean_estimate
from gibbslab.girsanov import (
    bridge_expectation,
    density,
    density_endpoint_ratio,
    free_bridge_paths,
    girsanov_weight,
    log_girsanov_weight,
    multi_bridge_bundle,
    psi,
)
from gibbslab.lattice import TWO_PI, Configuration, Neighborhood, Volume, interior
from gibbslab.rng import substream

QUAD = quadratic_potential()
CIRC = circle_free_potential()


def _exact_density_const_drift(c, beta, x, y, t):
    # [DERIVED] for b = c the interacting law is an OU process with shifted
    # mean mu_Q = x e^{-t} + beta c (1 - e^{-t}) and the free variance, so
    # f_t(x,y) = exp(-(y-mu_Q)^2/(2v) + (y-mu_P)^2/(2v)), v = (1-e^{-2t})/2
    rho = math.exp(-t)
    v = (1.0 - rho * rho) / 2.0
    mu_q = x * rho + beta * c * (1.0 - rho)
    mu_p = x * rho
    return math.exp(-((y - mu_q) ** 2) / (2 * v) + ((y - mu_p) ** 2) / (2 * v))


def test_psi_zero_outside_reach_and_for_free_drift():
    vol = Volume.box((0,), (2,))
    x0 = Configuration.constant(vol, 0.0)
    d = markov_local_drift(0.5, Neighborhood.range1d(1))
    path = simulate(d, QUAD, vol, x0, t=0.2, dt=0.02, seed=1, n_replicas=3)
    free = constant_drift(0.0)
    import dataclasses

    free = dataclasses.replace(free, beta=0.0)
    assert np.all(psi(free, (1,), (0.0, 0.2), path) == 0.0)


def test_psi_window_validation():
    vol = Volume.box((0,), (0,))
    x0 = Configuration.constant(vol, 0.0)
    d = constant_drift(0.5)
    path = simulate(d, QUAD, vol, x0, t=0.2, dt=0.02, seed=1)
    with pytest.raises(ValidationError):
        psi(d, (0,), (0.2, 0.1), path)
    with pytest.raises(CoverageError):
        psi(d, (0,), (0.0, 0.4), path)


def test_girsanov_identity_exact_on_grid():
    # exp(-sum_i psi_i) equals the Girsanov density to machine precision
    vol = Volume.box((0,), (4,))
    x0 = Configuration.constant(vol, 0.2)
    d = markov_local_drift(0.5, Neighborhood.range1d(1))
    path = simulate(d, QUAD, vol, x0, t=0.5, dt=0.01, seed=3, n_replicas=8)
    total = np.zeros(path.n_replicas)
    for s in interior(vol, d.nbhd).sorted_sites():
        total += psi(d, s, (0.0, 0.5), path)
    assert np.max(np.abs(np.exp(-total) - girsanov_weight(d, vol, path))) == 0.0


def test_expected_weight_is_one_under_free_law():
    # E_P[M] = 1 holds exactly in the Euler discretization, up to MC noise
    vol = Volume.box((0,), (0,))
    x0 = Configuration.constant(vol, 0.0)
    d = constant_drift(0.5)
    import dataclasses

    free = dataclasses.replace(d, beta=0.0)
    path = simulate(free, QUAD, vol, x0, t=1.0, dt=0.02, seed=5, n_replicas=20_000)
    est = mean_estimate(girsanov_weight(d, vol, path))
    assert abs(est.value - 1.0) < 4 * est.stderr


def test_ou_bridge_moments():
    # bridge of dx = dB - x dt from a to b over [0,1]; midpoint mean and
    # variance from Gaussian conditioning:
    # X_h | X_0=a, X_1=b with h=0.5: standard two-sided OU bridge formulas
    a, b, tau, dt = 0.3, 0.8, 1.0, 0.01
    rng = substream(11, "test-bridge")
    bundle = multi_bridge_bundle(QUAD, [(0,)], [{(0,): a}, {(0,): b}], 0.0, tau, dt, rng, 40_000)
    mid = bundle.values[:, 0, 50]
    v = lambda s: 0.5 * (1.0 - math.exp(-2.0 * s))
    e1, er = math.exp(-0.5), math.exp(-0.5)
    prec = 1.0 / v(0.5) + er * er / v(0.5)
    mean = (a * e1 / v(0.5) + b * er / v(0.5)) / prec
    assert np.mean(mid) == pytest.approx(mean, abs=4 * math.sqrt(1 / prec / 40_000))
    assert np.var(mid) == pytest.approx(1.0 / prec, rel=0.05)


def test_bridge_endpoints_pinned():
    rng = substream(2, "pin")
    layers = [{(0,): 0.1}, {(0,): -0.4}, {(0,): 0.9}]
    bundle = multi_bridge_bundle(QUAD, [(0,)], layers, 0.0, 0.5, 0.05, rng, 16)
    assert np.all(bundle.values[:, 0, 0] == 0.1)
    assert np.all(bundle.values[:, 0, 10] == -0.4)
    assert np.all(bundle.values[:, 0, 20] == 0.9)


def test_circle_bridge_hits_endpoint_mod_wrap():
    rng = substream(3, "circ")
    a, b = 0.3, 6.0
    bundle = multi_bridge_bundle(CIRC, [(0,)], [{(0,): a}, {(0,): b}], 0.0, 1.0, 0.02, rng, 64)
    end = bundle.values[:, 0, -1]
    assert np.allclose(np.mod(end - b, TWO_PI) * (TWO_PI - np.mod(end - b, TWO_PI)), 0.0, atol=1e-9)


def test_circle_bridge_winding_spread():
    # long bridges must use several winding classes
    rng = substream(4, "wind")
    bundle = multi_bridge_bundle(CIRC, [(0,)], [{(0,): 0.0}, {(0,): 0.0}], 0.0, 9.0, 0.05, rng, 2000)
    lifts = np.round((bundle.values[:, 0, -1]) / TWO_PI).astype(int)
    assert len(set(lifts.tolist())) >= 3


def test_bridge_expectation_free_midpoint():
    vol = Volume.box((0,), (0,))
    x = Configuration.constant(vol, 0.3)
    y = Configuration.constant(vol, 0.8)

    def F(bundle):
        return bundle.values[:, 0, bundle.values.shape[2] // 2]

    est = bridge_expectation(F, QUAD, vol, x, y, 1.0, MCParams(n_samples=20_000, dt=0.01), seed=7)
    v = lambda s: 0.5 * (1.0 - math.exp(-2.0 * s))
    er = math.exp(-0.5)
    prec = 1.0 / v(0.5) + er * er / v(0.5)
    mean = (0.3 * er / v(0.5) + 0.8 * er / v(0.5)) / prec
    assert abs(est.value - mean) < 4 * est.stderr


def test_density_matches_constant_drift_oracle():
    c, beta, x0, y0, t = 0.8, 1.0, 0.2, 0.5, 1.0
    vol = Volume.box((0,), (0,))
    x = Configuration.constant(vol, x0)
    y = Configuration.constant(vol, y0)
    d = constant_drift(c)
    est = density(d, QUAD, vol, x, y, t, MCParams(n_samples=20_000, dt=0.005), seed=13)
    exact = _exact_density_const_drift(c, beta, x0, y0, t)
    # small O(dt) discretization bias on top of the MC error
    assert abs(est.value - exact) < 4 * est.stderr + 0.01
    assert est.method == "bridge"


def test_density_routes_agree():
    c, x0, y0, t = 0.8, 0.2, 0.5, 1.0
    vol = Volume.box((0,), (0,))
    x = Configuration.constant(vol, x0)
    y = Configuration.constant(vol, y0)
    d = constant_drift(c)
    mc = MCParams(n_samples=20_000, dt=0.01)
    a = density(d, QUAD, vol, x, y, t, mc, seed=13)
    b = density_endpoint_ratio(d, QUAD, vol, x, y, t, mc, seed=13)
    assert a.agrees_with(b, n_sigma=4.0, atol=0.01)


def test_circle_density_against_winding_sum():
    # [DERIVED] for constant drift c on the circle the interacting endpoint
    # law is a wrapped Gaussian with mean x + beta c t and variance t, so
    # f_t(x,y) is the ratio of winding sums
    c, x0, y0, t = 1.0, 1.0, 1.8, 0.5
    num = sum(
        math.exp(-((y0 - x0 - c * t + TWO_PI * n) ** 2) / (2 * t)) for n in range(-20, 21)
    )
    den = sum(
        math.exp(-((y0 - x0 + TWO_PI * n) ** 2) / (2 * t)) for n in range(-20, 21)
    )
    exact = num / den
    vol = Volume.box((0,), (0,))
    x = Configuration.constant(vol, x0, "circle")
    y = Configuration.constant(vol, y0, "circle")
    d = constant_drift(c)
    est = density(d, CIRC, vol, x, y, t, MCParams(n_samples=20_000, dt=0.005), seed=21)
    assert abs(est.value - exact) < 4 * est.stderr + 0.02


def test_free_bridge_reweighted_fallback():
    # general potential goes through forward paths + terminal reweighting
    from gibbslab.dynamics import custom_potential

    pot = custom_potential(
        lambda x: np.asarray(x) ** 2 + 0.1 * np.asarray(x) ** 4,
        lambda x: 2.0 * np.asarray(x) + 0.4 * np.asarray(x) ** 3,
    )
    vol = Volume.box((0,), (0,))
    x = Configuration.constant(vol, 0.0)
    y = Configuration.constant(vol, 0.3)
    rng = substream(5, "fallback")
    bundle, logw = free_bridge_paths(pot, vol, x, y, 0.5, MCParams(n_samples=500, dt=0.01), rng)
    assert logw is not None and logw.shape == (500,)
    exact_bundle, none_w = free_bridge_paths(QUAD, vol, x, y, 0.5, MCParams(n_samples=16, dt=0.01), rng)
    assert none_w is None


def test_log_weight_additive_over_windows():
    vol = Volume.box((0,), (2,))
    x0 = Configuration.constant(vol, 0.1)
    d = markov_local_drift(0.5, Neighborhood.range1d(1))
    path = simulate(d, QUAD, vol, x0, t=0.4, dt=0.02, seed=9, n_replicas=6)
    whole = log_girsanov_weight(d, vol, path)
    split = log_girsanov_weight(d, vol, path, (0.0, 0.2)) + log_girsanov_weight(
        d, vol, path, (0.2, 0.4)
    )
    assert np.allclose(whole, split, atol=1e-12)
