import math

import numpy as np
import pytest

from gibbslab.clusters import SpaceCluster, SpaceTimeCluster, TimeCluster, TimeGrid
from gibbslab.dynamics import constant_drift, quadratic_potential
from gibbslab.errors import CoverageError, ValidationError
from gibbslab.estimates import Estimate, MCParams
from gibbslab.expansion import (
    InteractionTable,
    c2_hat,
    cluster_weight,
    grid_for_beta,
    interaction_terms,
    kp_check,
    kp_lambda_star,
    reconstruct_density,
    summability_report,
    volume_key,
    weight_table,
)
from gibbslab.lattice import Configuration, Neighborhood, Volume
from gibbslab.rng import substream

QUAD = quadratic_potential()
NB0 = Neighborhood.range1d(0)
NB1 = Neighborhood.range1d(1)


def _exact_density_const_drift(c, beta, x, y, t):
    rho = math.exp(-t)
    v = (1.0 - rho * rho) / 2.0
    return math.exp(
        -((y - x * rho - beta * c * (1.0 - rho)) ** 2) / (2 * v)
        + ((y - x * rho) ** 2) / (2 * v)
    )


def _drift(c, beta):
    import dataclasses

    return dataclasses.replace(constant_drift(c), beta=beta)


def test_volume_key_is_sorted():
    assert volume_key(Volume.from_sites({(2,), (0,)})) == ((0,), (2,))


def test_cluster_weight_validates_slice_length():
    grid = TimeGrid(0.05, 1)  # shorter than the drift memory
    G = SpaceTimeCluster((SpaceCluster(0, frozenset({(0,)})),), (), grid)
    vol = Volume.box((0,), (0,))
    x = Configuration.constant(vol, 0.0)
    with pytest.raises(ValidationError):
        cluster_weight(G, x, x, _drift(0.5, 1.0), QUAD, MCParams(n_samples=8, dt=0.05))


def test_cluster_weight_requires_endpoint_coverage():
    grid = TimeGrid(1.0, 1)
    G = SpaceTimeCluster((SpaceCluster(0, frozenset({(0,)})),), (), grid)
    empty = Configuration({(5,): 0.0})
    with pytest.raises(CoverageError):
        cluster_weight(G, empty, empty, _drift(0.5, 1.0), QUAD, MCParams(n_samples=8, dt=0.05))


def test_single_space_cluster_weight_is_density_minus_one():
    # one site, one slice: K(x, y) = f_T(x, y) - 1 with the exact
    # shifted-mean oracle for a constant drift
    c, beta, x0, y0, T = 0.7, 0.4, 0.2, -0.3, 1.0
    grid = TimeGrid(T, 1)
    G = SpaceTimeCluster((SpaceCluster(0, frozenset({(0,)})),), (), grid)
    vol = Volume.box((0,), (0,))
    x = Configuration.constant(vol, x0)
    y = Configuration.constant(vol, y0)
    est = cluster_weight(
        G, x, y, _drift(c, beta), QUAD, MCParams(n_samples=20_000, dt=0.01), seed=3
    )
    exact = _exact_density_const_drift(c, beta, x0, y0, T) - 1.0
    assert abs(est.value - exact) < 4 * est.stderr + 0.005


def test_time_cluster_weight_has_zero_mean():
    # the top layer of a time cluster is always a fresh stationary draw, so
    # E_m[p_T(., Z) - 1] = 0 makes the weight exactly centered
    grid = TimeGrid(1.0, 2)
    G = SpaceTimeCluster((), (TimeCluster((0,), 0, 0),), grid)
    vol = Volume.box((0,), (0,))
    x = Configuration.constant(vol, 0.4)
    y = Configuration.constant(vol, -0.1)
    est = cluster_weight(G, x, y, _drift(0.5, 0.2), QUAD, MCParams(n_samples=20_000, dt=0.05), seed=5)
    assert abs(est.value) < 4 * est.stderr


def test_weight_trace_measurability():
    # values of x and y away from the cluster's trace must not matter, bitwise
    grid = TimeGrid(1.0, 1)
    G = SpaceTimeCluster((SpaceCluster(0, frozenset({(0,)})),), (), grid)
    a = Configuration({(0,): 0.2, (1,): 9.0})
    b = Configuration({(0,): 0.2, (1,): -9.0})
    mc = MCParams(n_samples=256, dt=0.05)
    d = _drift(0.7, 0.3)
    e1 = cluster_weight(G, a, a, d, QUAD, mc, seed=7)
    e2 = cluster_weight(G, b, b, d, QUAD, mc, seed=7)
    assert e1.value == e2.value and e1.stderr == e2.stderr


def test_weight_vanishes_at_beta_zero():
    grid = TimeGrid(1.0, 1)
    G = SpaceTimeCluster((SpaceCluster(0, frozenset({(0,)})),), (), grid)
    vol = Volume.box((0,), (0,))
    x = Configuration.constant(vol, 0.3)
    est = cluster_weight(G, x, x, _drift(0.7, 0.0), QUAD, MCParams(n_samples=64, dt=0.05), seed=1)
    assert est.value == 0.0 and est.stderr == 0.0


def test_reconstruction_matches_direct_density_one_slice():
    # M = 1, one site: the expansion is exactly 1 + K = f_T(x, y)
    c, beta, x0, y0, T = 0.7, 0.3, 0.2, 0.5, 1.0
    vol = Volume.box((0,), (0,))
    x = Configuration.constant(vol, x0)
    y = Configuration.constant(vol, y0)
    tab = weight_table(
        vol, NB0, TimeGrid(T, 1), 2, x, y, _drift(c, beta), QUAD,
        MCParams(n_samples=20_000, dt=0.01), seed=11,
    )
    assert len(tab) == 1
    rec = reconstruct_density(tab)
    exact = _exact_density_const_drift(c, beta, x0, y0, T)
    assert abs(rec.value - exact) < 4 * rec.stderr + 0.005


def test_interaction_log_identity_one_slice():
    # with a single cluster the resummed interaction is the truncated log:
    # Phi = -(K - K^2/2 + K^3/3 - ...) up to n_max
    c, beta, x0, y0, T = 0.7, 0.3, 0.2, 0.5, 1.0
    vol = Volume.box((0,), (0,))
    x = Configuration.constant(vol, x0)
    y = Configuration.constant(vol, y0)
    tab = weight_table(
        vol, NB0, TimeGrid(T, 1), 1, x, y, _drift(c, beta), QUAD,
        MCParams(n_samples=20_000, dt=0.01), seed=11,
    )
    K = tab.estimates[0].value
    itab = interaction_terms(tab, n_max=4)
    phi = itab.get(Volume.box((0,), (0,))).value
    series = -(K - K**2 / 2 + K**3 / 3 - K**4 / 4)
    assert phi == pytest.approx(series, rel=1e-12)
    # and exp(-Phi) reproduces the reconstructed density up to truncation
    assert math.exp(-itab.total().value) == pytest.approx(1.0 + K, abs=5e-4)


def test_interaction_get_missing_volume_is_zero():
    itab = InteractionTable(
        entries=(( ((0,),), Estimate(0.2, 0.01, 10)),),
        n_max=1,
        grid=TimeGrid(1.0, 1),
        nbhd=NB0,
    )
    z = itab.get(Volume.box((3,), (4,)))
    assert z.value == 0.0 and z.stderr == 0.0


def test_kp_check_monotone_and_lambda_star():
    vol = Volume.box((0,), (3,))
    grid = TimeGrid(1.0, 3)
    assert kp_check(0.0, vol, NB1, grid, 3)["satisfied"]
    assert not kp_check(1.0, vol, NB1, grid, 3)["satisfied"]
    r_small = kp_check(0.01, vol, NB1, grid, 3)["worstRatio"]
    r_big = kp_check(0.05, vol, NB1, grid, 3)["worstRatio"]
    assert r_small < r_big
    lam = kp_lambda_star(vol, NB1, grid, 3)
    assert lam > 0.0
    assert kp_check(lam, vol, NB1, grid, 3)["satisfied"]
    assert not kp_check(lam + 5e-4, vol, NB1, grid, 3)["satisfied"]


def test_grid_for_beta_scaling():
    assert grid_for_beta(5.0, 0.1, 0.0) == TimeGrid(5.0, 1)
    assert grid_for_beta(5.0, 0.1, 1.0) == TimeGrid(1.0, 5)
    g = grid_for_beta(5.0, 0.1, 100.0)  # memory floor binds
    assert g.M == 50 and g.T == pytest.approx(0.1)
    with pytest.raises(ValidationError):
        grid_for_beta(0.05, 0.1, 1.0)


def test_c2_hat_frozen_values_and_decay():
    # [DERIVED] quadrature values of the L^4(m x m) norm of p_T - 1
    assert c2_hat(QUAD, 1.0) == pytest.approx(3.331897, rel=1e-4)
    assert c2_hat(QUAD, 2.0) == pytest.approx(0.256557, rel=1e-4)
    assert c2_hat(QUAD, 3.0) == pytest.approx(0.087275, rel=1e-4)


def test_summability_report_hand_example():
    e = lambda v: Estimate(v, 0.0, 1)
    itab = InteractionTable(
        entries=(
            (((0,),), e(0.5)),
            (((0,), (1,)), e(-0.2)),
            (((1,), (2,)), e(0.1)),
        ),
        n_max=1,
        grid=TimeGrid(1.0, 1),
        nbhd=NB1,
    )
    rep = summability_report(itab)
    # site 0: 0*0.5 + 1*0.2 = 0.2; site 1: 0.2 + 0.1 = 0.3; site 2: 0.1
    assert rep["perSite"][((0,))] == pytest.approx(0.2)
    assert rep["sup"] == pytest.approx(0.3)
    assert rep["supPlain"] == pytest.approx(0.5 + 0.2)
    assert rep["nTerms"] == 3


def test_weight_table_common_random_numbers():
    # the per-cluster stream depends only on the enumeration index, so two
    # tables at different beta share the same underlying randomness; at the
    # matching beta they coincide bitwise
    vol = Volume.box((0,), (0,))
    x = Configuration.constant(vol, 0.2)
    grid = TimeGrid(1.0, 1)
    mc = MCParams(n_samples=128, dt=0.05)
    t1 = weight_table(vol, NB0, grid, 1, x, x, _drift(0.7, 0.3), QUAD, mc, seed=9)
    t2 = weight_table(vol, NB0, grid, 1, x, x, _drift(0.7, 0.3), QUAD, mc, seed=9)
    assert t1.estimates == t2.estimates
    t3 = weight_table(vol, NB0, grid, 1, x, x, _drift(0.7, 0.3), QUAD, mc, seed=10)
    assert t1.estimates != t3.estimates
