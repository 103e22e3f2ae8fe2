import math

import numpy as np
import pytest
from scipy import stats

from gibbslab.dynamics import (
    PRE_HISTORY_TRUNCATED,
    DriftSpec,
    constant_drift,
    custom_potential,
    circle_free_potential,
    delayed_feedback_drift,
    free_kernel,
    kernel_sup_distance,
    markov_local_drift,
    memory_integral_drift,
    quadratic_potential,
    reference_quadrature,
    sample_reference,
    simulate,
    ultracontractivity_report,
)
from gibbslab.errors import (
    BoundViolationError,
    CoverageError,
    SetupError,
    ValidationError,
)
from gibbslab.lattice import TWO_PI, Configuration, Neighborhood, Volume
from gibbslab.rng import substream

QUAD = quadratic_potential()
CIRC = circle_free_potential()


def test_quadratic_kernel_closed_form_point():
    # [DERIVED] independent evaluation of the Gaussian transition density of
    # dx = dB - x dt relative to m = N(0, 1/2):
    # p_t(x,y) = N(y; x e^{-t}, (1-e^{-2t})/2) / N(y; 0, 1/2)
    x, y, t = 0.3, -0.7, 0.8
    rho = math.exp(-t)
    v = (1.0 - rho * rho) / 2.0
    num = math.exp(-((y - rho * x) ** 2) / (2 * v)) / math.sqrt(2 * math.pi * v)
    den = math.exp(-(y**2)) / math.sqrt(math.pi)
    assert free_kernel(QUAD, t, x, y) == pytest.approx(num / den, rel=1e-12)


def test_kernel_normalizes_against_reference():
    xs, w = reference_quadrature(QUAD, 2001)
    for x0 in (-1.0, 0.0, 1.5):
        mass = float(np.sum(free_kernel(QUAD, 0.7, x0, xs) * w))
        assert mass == pytest.approx(1.0, abs=1e-6)
    xs, w = reference_quadrature(CIRC, 1024)
    mass = float(np.sum(free_kernel(CIRC, 0.3, 1.0, xs) * w))
    assert mass == pytest.approx(1.0, abs=1e-8)


def test_circle_kernel_regimes_agree():
    # Fourier series (used for t >= 0.5) and wrapped Gaussian must match
    # where both converge well
    d = np.linspace(0.0, TWO_PI, 17)
    a = _circle_both(0.5, d)
    assert np.max(np.abs(a[0] - a[1])) < 1e-10


def _circle_both(t, d):
    from gibbslab.dynamics import _circle_heat_kernel

    fourier = np.ones_like(d)
    for k in range(1, 60):
        fourier = fourier + 2.0 * np.exp(-k * k * t / 2.0) * np.cos(k * d)
    wrapped = np.zeros_like(d)
    for nw in range(-12, 13):
        wrapped += np.exp(-((d + TWO_PI * nw) ** 2) / (2.0 * t))
    wrapped *= math.sqrt(TWO_PI / t)
    got = _circle_heat_kernel(t, d)
    assert np.max(np.abs(got - fourier)) < 1e-9
    return fourier, wrapped


def test_general_potential_kernel_matches_closed_form():
    # eigendecomposition route on U = x^2 vs the closed form
    gen = custom_potential(lambda x: np.asarray(x) ** 2, lambda x: 2.0 * np.asarray(x))
    xs = np.linspace(-1.0, 1.0, 7)
    exact = free_kernel(QUAD, 1.0, xs[:, None], xs[None, :])
    approx = free_kernel(gen, 1.0, xs[:, None], xs[None, :])
    assert np.max(np.abs(approx / exact - 1.0)) < 5e-3


def test_custom_potential_rejects_growth():
    with pytest.raises(SetupError):
        custom_potential(lambda x: -np.asarray(x), lambda x: -np.ones_like(np.asarray(x)))


def test_kernel_sup_distance_decays():
    d = [kernel_sup_distance(QUAD, T) for T in (1.0, 2.0, 3.0)]
    assert d[0] > d[1] > d[2] > 0


def test_sample_reference_quadratic_distribution():
    draws = sample_reference(QUAD, 20_000, seed=7)
    # m = N(0, 1/2)
    p = stats.kstest(draws, "norm", args=(0.0, math.sqrt(0.5))).pvalue
    assert p > 0.01


def test_sample_reference_circle_uniform():
    draws = sample_reference(CIRC, 20_000, seed=7)
    p = stats.kstest(draws / TWO_PI, "uniform").pvalue
    assert p > 0.01


def test_ultracontractivity_report_quadratic():
    rep = ultracontractivity_report(QUAD)
    assert rep["ultracontractive"] is True
    assert rep["warnings"] == []


def test_drift_bound_enforced():
    bad = DriftSpec(
        beta=1.0,
        nbhd=Neighborhood.range1d(0),
        memory=0.1,
        bound=0.5,
        evaluator=lambda site, t, wt, wv: np.ones_like(wv[site][..., -1]),
        label="too_big",
    )
    vol = Volume.box((0,), (0,))
    x0 = Configuration.constant(vol, 0.0)
    with pytest.raises(BoundViolationError):
        simulate(bad, QUAD, vol, x0, t=0.1, dt=0.05, seed=1)


def test_simulate_validates_inputs():
    vol = Volume.box((0,), (2,))
    x0 = Configuration.constant(Volume.box((0,), (1,)), 0.0)
    d = constant_drift(0.5)
    with pytest.raises(CoverageError):
        simulate(d, QUAD, vol, x0, t=0.1, dt=0.05, seed=1)
    x0 = Configuration.constant(vol, 0.0)
    with pytest.raises(ValidationError):
        simulate(d, QUAD, vol, x0, t=0.1, dt=0.2, seed=1)  # dt > memory
    with pytest.raises(ValidationError):
        simulate(d, QUAD, vol, x0, t=0.13, dt=0.05, seed=1)  # t not multiple


def test_simulate_free_ou_moments():
    # beta = 0: every site is an independent OU path from x0 = 1
    vol = Volume.box((0,), (0,))
    x0 = Configuration.constant(vol, 1.0)
    free = DriftSpec(
        beta=0.0,
        nbhd=Neighborhood.range1d(0),
        memory=0.1,
        bound=0.0,
        evaluator=lambda site, t, wt, wv: np.zeros_like(wv[site][..., -1]),
        label="free",
    )
    path = simulate(free, QUAD, vol, x0, t=1.0, dt=0.005, seed=11, n_replicas=4000)
    xt = path.values[:, 0, -1]
    mu, v = math.exp(-1.0), (1.0 - math.exp(-2.0)) / 2.0
    assert np.mean(xt) == pytest.approx(mu, abs=4 * math.sqrt(v / 4000) + 0.01)
    assert np.var(xt) == pytest.approx(v, rel=0.08)


def test_dbar_reconstructs_gaussian_increments():
    # compensated increments are the raw noise plus the interacting drift;
    # with beta = 0 they are exactly N(0, dt) and independent
    vol = Volume.box((0,), (1,))
    x0 = Configuration.constant(vol, 0.0)
    d = constant_drift(0.7)
    zero = DriftSpec(
        beta=0.0, nbhd=d.nbhd, memory=d.memory, bound=0.0,
        evaluator=d.evaluator, label="off",
    )
    path = simulate(zero, QUAD, vol, x0, t=0.5, dt=0.01, seed=3, n_replicas=50)
    incr = path.dbar.reshape(-1) / math.sqrt(0.01)
    assert stats.kstest(incr, "norm").pvalue > 0.01


def test_constant_drift_and_girsanov_shift():
    # interacting mean shifts by beta*c*(1 - e^{-t}) relative to the OU mean
    vol = Volume.box((0,), (0,))
    x0 = Configuration.constant(vol, 0.0)
    d = constant_drift(0.8)
    path = simulate(d, QUAD, vol, x0, t=1.0, dt=0.005, seed=5, n_replicas=4000)
    xt = path.values[:, 0, -1]
    target = 0.8 * (1.0 - math.exp(-1.0))
    assert np.mean(xt) == pytest.approx(target, abs=0.03)


def test_delayed_feedback_reads_left_edge():
    t0 = 0.2
    d = delayed_feedback_drift(alpha=1.0, t0=t0)
    vol = Volume.box((0,), (0,))
    x0 = Configuration.constant(vol, 2.0)
    path = simulate(d, QUAD, vol, x0, t=0.1, dt=0.05, seed=2, n_replicas=3)
    wt, wv = path.window(d, (0,), 0)
    # frozen pre-history: the left edge before time 0 is the initial value
    assert np.all(wv[(0,)][..., 0] == 2.0)
    val = d.evaluate((0,), 0.0, wt, wv)
    assert np.allclose(val, -1.0 * 2.0 / (1.0 + 4.0))


def test_truncated_pre_history_shrinks_window():
    d = DriftSpec(
        beta=1.0,
        nbhd=Neighborhood.range1d(0),
        memory=0.2,
        bound=1.0,
        evaluator=lambda site, t, wt, wv: np.zeros_like(wv[site][..., -1]),
        label="probe",
        pre_history=PRE_HISTORY_TRUNCATED,
    )
    vol = Volume.box((0,), (0,))
    x0 = Configuration.constant(vol, 0.0)
    path = simulate(d, QUAD, vol, x0, t=0.3, dt=0.05, seed=2)
    wt, wv = path.window(d, (0,), 1)  # window [t-0.2, t] at t=0.05 underruns
    assert wt[0] >= -1e-12
    assert wv[(0,)].shape[-1] == wt.size


def test_memory_integral_drift_on_frozen_path():
    # constant path x = 1.5, eps = 1 on [0, t0]: integral = f(1.5) * t0
    t0 = 0.2
    d = memory_integral_drift(
        f=lambda x: np.tanh(x), f_bound=1.0,
        eps=lambda s: np.ones_like(np.asarray(s, dtype=float)), eps_l1=t0, t0=t0,
    )
    vol = Volume.box((0,), (0,))
    x0 = Configuration.constant(vol, 1.5)
    path = simulate(d, QUAD, vol, x0, t=0.05, dt=0.05, seed=2)
    wt, wv = path.window(d, (0,), 0)
    val = d.evaluate((0,), 0.0, wt, wv)
    assert np.allclose(val, math.tanh(1.5) * t0)


def test_simulate_deterministic_replay():
    vol = Volume.box((0,), (2,))
    x0 = Configuration.constant(vol, 0.1)
    d = markov_local_drift(0.5, Neighborhood.range1d(1))
    a = simulate(d, QUAD, vol, x0, t=0.2, dt=0.02, seed=9, n_replicas=4)
    b = simulate(d, QUAD, vol, x0, t=0.2, dt=0.02, seed=9, n_replicas=4)
    assert np.array_equal(a.values, b.values)
    c = simulate(d, QUAD, vol, x0, t=0.2, dt=0.02, seed=10, n_replicas=4)
    assert not np.array_equal(a.values, c.values)


def test_substream_independence_and_determinism():
    a = substream(42, "x", 0).standard_normal(4)
    b = substream(42, "x", 0).standard_normal(4)
    c = substream(42, "x", 1).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
