import math

import numpy as np
import pytest

from gibbslab.errors import PrecisionError, ValidationError
from gibbslab.estimates import (
    Estimate,
    MCParams,
    mean_estimate,
    power_product_estimate,
    product_estimate,
    ratio_estimate,
    sum_estimates,
    weighted_mean_estimate,
)


def test_estimate_rejects_negative_stderr():
    with pytest.raises(ValidationError):
        Estimate(1.0, -0.1, 10)


def test_agrees_with_combined_error():
    a = Estimate(1.0, 0.1, 10)
    b = Estimate(1.5, 0.1, 10)
    # |diff| = 0.5, 4 * hypot(0.1, 0.1) ~ 0.566
    assert a.agrees_with(b)
    assert not a.agrees_with(b, n_sigma=3.0)
    assert a.agrees_with(b, n_sigma=3.0, atol=0.2)


def test_mcparams_validation():
    with pytest.raises(ValidationError):
        MCParams(n_samples=1)
    with pytest.raises(ValidationError):
        MCParams(dt=0.0)
    assert MCParams().with_samples(5).n_samples == 5


def test_mean_estimate_matches_numpy():
    xs = np.array([1.0, 2.0, 3.0, 4.0])
    est = mean_estimate(xs)
    assert est.value == pytest.approx(2.5)
    assert est.stderr == pytest.approx(np.std(xs, ddof=1) / 2.0)
    assert est.n == 4


def test_weighted_mean_uniform_weights():
    xs = np.array([1.0, 2.0, 3.0, 4.0])
    est = weighted_mean_estimate(xs, np.zeros(4), ess_threshold=2.0)
    assert est.value == pytest.approx(2.5)


def test_weighted_mean_ess_guard():
    xs = np.arange(100.0)
    logw = np.zeros(100)
    logw[0] = 50.0  # one dominant weight: ESS ~ 1
    with pytest.raises(PrecisionError):
        weighted_mean_estimate(xs, logw, ess_threshold=10.0)


def test_product_estimate_exact_variance():
    # var(XY) = (v1^2+s1^2)(v2^2+s2^2) - v1^2 v2^2 for independent factors
    a = Estimate(2.0, 0.3, 50)
    b = Estimate(-1.5, 0.2, 80)
    p = product_estimate([a, b])
    assert p.value == pytest.approx(-3.0)
    var = (4 + 0.09) * (2.25 + 0.04) - 4 * 2.25
    assert p.stderr == pytest.approx(math.sqrt(var))
    assert p.n == 50


def test_power_product_delta_method():
    a = Estimate(2.0, 0.1, 30)
    p = power_product_estimate([a], [3])
    assert p.value == pytest.approx(8.0)
    assert p.stderr == pytest.approx(3 * 4.0 * 0.1)  # d/dv v^3 = 3 v^2


def test_sum_estimates_with_offset():
    s = sum_estimates([Estimate(0.5, 0.3, 5), Estimate(-0.2, 0.4, 9)], offset=1.0)
    assert s.value == pytest.approx(1.3)
    assert s.stderr == pytest.approx(0.5)
    assert s.n == 5


def test_ratio_estimate():
    r = ratio_estimate(Estimate(2.0, 0.2, 10), Estimate(4.0, 0.4, 10))
    assert r.value == pytest.approx(0.5)
    assert r.stderr == pytest.approx(0.5 * math.hypot(0.1, 0.1))
    with pytest.raises(PrecisionError):
        ratio_estimate(Estimate(1.0, 0.1, 10), Estimate(0.0, 0.1, 10))
