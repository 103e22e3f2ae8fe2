"""Monte Carlo estimate containers and error propagation helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import PrecisionError, ValidationError


@dataclass(frozen=True)
class Estimate:
    """A Monte Carlo value with standard error and sample count."""

    value: float
    stderr: float
    n: int
    method: str = "mc"

    def __post_init__(self):
        if self.stderr < 0:
            raise ValidationError("stderr must be nonnegative")

    def agrees_with(self, other: "Estimate", n_sigma: float = 4.0, atol: float = 0.0) -> bool:
        tol = n_sigma * math.hypot(self.stderr, other.stderr) + atol
        return abs(self.value - other.value) <= tol

    def __str__(self):
        return f"{self.value:.6g} +- {self.stderr:.2g} (n={self.n}, {self.method})"


# DensityEstimate is an Estimate whose method tag names the density route.
DensityEstimate = Estimate


@dataclass(frozen=True)
class MCParams:
    """Monte Carlo knobs shared by the stochastic operations."""

    n_samples: int = 10_000
    dt: float = 0.01
    bandwidth_scale: float = 1.0
    ess_threshold: float = 200.0
    sweeps: int = 200
    burn_in: int = 100
    thin: int = 2

    def __post_init__(self):
        if self.n_samples < 2 or self.dt <= 0:
            raise ValidationError("MC params need n_samples >= 2 and dt > 0")

    def with_samples(self, n: int) -> "MCParams":
        return replace(self, n_samples=n)


def mean_estimate(samples: np.ndarray, method: str = "mc") -> Estimate:
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    return Estimate(
        value=float(np.mean(samples)),
        stderr=float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        n=n,
        method=method,
    )


def weighted_mean_estimate(
    samples: np.ndarray,
    log_weights: np.ndarray,
    ess_threshold: float,
    method: str = "mc",
) -> Estimate:
    """Self-normalized importance-sampling estimate with an ESS guard."""
    samples = np.asarray(samples, dtype=float)
    logw = np.asarray(log_weights, dtype=float)
    w = np.exp(logw - np.max(logw))
    wsum = w.sum()
    ess = wsum * wsum / np.sum(w * w)
    if ess < ess_threshold:
        raise PrecisionError(
            f"effective sample size {ess:.1f} below threshold {ess_threshold}"
        )
    mu = float(np.sum(w * samples) / wsum)
    se = float(math.sqrt(np.sum((w * (samples - mu)) ** 2)) / wsum)
    return Estimate(value=mu, stderr=se, n=samples.size, method=method)


def product_estimate(factors: Sequence[Estimate], method: str = "product") -> Estimate:
    """Product of independent estimates; exact variance of the product."""
    value = 1.0
    var = None
    n = None
    for f in factors:
        value *= f.value
        var = (f.value**2 + f.stderr**2) if var is None else var * (f.value**2 + f.stderr**2)
        n = f.n if n is None else min(n, f.n)
    if var is None:
        return Estimate(1.0, 0.0, 0, method)
    sq = 1.0
    for f in factors:
        sq *= f.value**2
    return Estimate(value, math.sqrt(max(var - sq, 0.0)), n or 0, method)


def power_product_estimate(
    factors: Sequence[Estimate], powers: Sequence[int], method: str = "product"
) -> Estimate:
    """Delta-method error for prod_i v_i^{m_i} with independent factors."""
    value = 1.0
    for f, m in zip(factors, powers):
        value *= f.value**m
    var = 0.0
    for i, (f, m) in enumerate(zip(factors, powers)):
        grad = m * (f.value ** (m - 1)) if m >= 1 else 0.0
        for j, (g, mj) in enumerate(zip(factors, powers)):
            if j != i:
                grad *= g.value**mj
        var += (grad * f.stderr) ** 2
    n = min((f.n for f in factors), default=0)
    return Estimate(value, math.sqrt(var), n, method)


def sum_estimates(
    terms: Sequence[Estimate], offset: float = 0.0, method: str = "sum"
) -> Estimate:
    """Sum of estimates; errors combined in quadrature (correlations ignored)."""
    value = offset + sum(t.value for t in terms)
    var = sum(t.stderr**2 for t in terms)
    n = min((t.n for t in terms), default=0)
    return Estimate(value, math.sqrt(var), n, method)


def ratio_estimate(num: Estimate, den: Estimate, method: str = "ratio") -> Estimate:
    if den.value == 0:
        raise PrecisionError("ratio estimate with zero denominator")
    value = num.value / den.value
    rel = math.hypot(
        num.stderr / num.value if num.value != 0 else num.stderr,
        den.stderr / den.value,
    )
    return Estimate(value, abs(value) * rel if num.value != 0 else rel, min(num.n, den.n), method)
