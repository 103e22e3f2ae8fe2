"""Girsanov reweighting over diffusion bridges.

The finite-volume interacting law Q is absolutely continuous with respect
to the free product law P, with density M = exp(sum_i [beta int b_i dBbar_i
- (beta^2/2) int b_i^2 ds]) over the interior sites.  The per-site exponent
is exposed as psi (with the opposite sign), so exp(-sum_i psi_i) == M holds
exactly, term by term, on the discrete grid.

Bridges of the free dynamics are sampled exactly for the quadratic
potential (Gaussian conditioning step by step) and for the drift-free
circle (winding number first, then a linear Brownian bridge on the lift);
any other potential falls back to forward paths reweighted by a Gaussian
kernel at the terminal point, which is consistent as the bandwidth shrinks.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .dynamics import (
    DriftSpec,
    PathBundle,
    PotentialSpec,
    constant_drift,
    simulate,
)
from .errors import CoverageError, PrecisionError, ValidationError
from .estimates import (
    DensityEstimate,
    Estimate,
    MCParams,
    mean_estimate,
    ratio_estimate,
    weighted_mean_estimate,
)
from .lattice import CIRCLE, TWO_PI, Configuration, Volume, interior, wrap_angle
from .rng import substream


def _free_drift() -> DriftSpec:
    return dataclasses.replace(constant_drift(0.0), beta=0.0, label="free")


def _window_indices(path: PathBundle, window: Tuple[float, float]) -> Tuple[int, int]:
    a, b = float(window[0]), float(window[1])
    if not a < b:
        raise ValidationError("window must satisfy a < b")
    t0, t1 = float(path.times[0]), float(path.times[-1])
    tol = 1e-9 * max(1.0, abs(t1))
    if a < t0 - tol or b > t1 + tol:
        raise CoverageError("window not covered by the path bundle")
    # grid points s_l with a <= s_l < b (left-point rule)
    k_lo = int(np.searchsorted(path.times[:-1], a - tol))
    k_hi = int(np.searchsorted(path.times[:-1], b - tol))
    return k_lo, k_hi


def psi(
    drift: DriftSpec, site, window: Tuple[float, float], path: PathBundle
) -> np.ndarray:
    """Per-site Girsanov exponent on [a, b), one value per replica.

    psi = -beta sum_l b(s_l) dBbar(s_l) + (beta^2/2) sum_l b(s_l)^2 dt,
    so that exp(-sum psi) over interior sites is the Girsanov density.
    Sites outside the drift's interaction reach contribute exactly zero.
    """
    site = tuple(int(c) for c in site)
    k_lo, k_hi = _window_indices(path, window)
    idx = path.site_index(site)
    beta, dt = drift.beta, path.dt
    out = np.zeros(path.n_replicas)
    if beta == 0.0 or k_hi <= k_lo:
        return out
    for k in range(k_lo, k_hi):
        wt, wv = path.window(drift, site, k)
        b = drift.evaluate(site, float(path.times[k]), wt, wv)
        out += -beta * b * path.dbar[:, idx, k] + 0.5 * beta * beta * b * b * dt
    return out


def log_girsanov_weight(
    drift: DriftSpec,
    vol: Volume,
    path: PathBundle,
    window: Optional[Tuple[float, float]] = None,
) -> np.ndarray:
    """log M over the interior of vol, one value per replica."""
    if window is None:
        window = (float(path.times[0]), float(path.times[-1]))
    inner = interior(vol, drift.nbhd)
    total = np.zeros(path.n_replicas)
    for site in inner.sorted_sites():
        total -= psi(drift, site, window, path)
    return total


def girsanov_weight(
    drift: DriftSpec,
    vol: Volume,
    path: PathBundle,
    window: Optional[Tuple[float, float]] = None,
) -> np.ndarray:
    return np.exp(log_girsanov_weight(drift, vol, path, window))


# ---------------------------------------------------------------------------
# bridge sampling
# ---------------------------------------------------------------------------

def _ou_variance(s: float) -> float:
    return 0.5 * (1.0 - math.exp(-2.0 * s))


def _ou_bridge_segment(
    a: np.ndarray, b: np.ndarray, tau: float, dt: float, rng: np.random.Generator
) -> np.ndarray:
    """Exact bridge of dx = dB - x dt from a to b over [0, tau], shape (R, K+1)."""
    K = int(round(tau / dt))
    if K < 1 or abs(K * dt - tau) > 1e-9 * max(tau, 1.0):
        raise ValidationError("segment length must be an integer multiple of dt")
    R = a.shape[0]
    vals = np.empty((R, K + 1))
    vals[:, 0] = a
    e1 = math.exp(-dt)
    v1 = _ou_variance(dt)
    for k in range(1, K):
        rem = tau - k * dt
        er = math.exp(-rem)
        vr = _ou_variance(rem)
        prec = 1.0 / v1 + er * er / vr
        mean = (vals[:, k - 1] * e1 / v1 + b * er / vr) / prec
        vals[:, k] = mean + rng.standard_normal(R) / math.sqrt(prec)
    vals[:, K] = b
    return vals


def _circle_bridge_segment(
    a: np.ndarray, b: np.ndarray, tau: float, dt: float, rng: np.random.Generator
) -> np.ndarray:
    """Brownian bridge on the circle, returned as a continuous lift from a."""
    K = int(round(tau / dt))
    if K < 1 or abs(K * dt - tau) > 1e-9 * max(tau, 1.0):
        raise ValidationError("segment length must be an integer multiple of dt")
    R = a.shape[0]
    # shortest angular displacement, then a winding number weighted by the
    # free Gaussian likelihood of each lifted endpoint
    d = np.mod(b - a + np.pi, TWO_PI) - np.pi
    n_max = max(3, int(math.ceil(4.0 * math.sqrt(tau) / TWO_PI)) + 1)
    windings = np.arange(-n_max, n_max + 1)
    disp = d[:, None] + TWO_PI * windings[None, :]
    logw = -(disp**2) / (2.0 * tau)
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    cdf = np.cumsum(w, axis=1)
    u = rng.uniform(size=R) * cdf[:, -1]
    pick = (u[:, None] > cdf).sum(axis=1)
    target = a + disp[np.arange(R), pick]
    vals = np.empty((R, K + 1))
    vals[:, 0] = a
    for k in range(1, K):
        rem = tau - (k - 1) * dt
        mean = vals[:, k - 1] + (target - vals[:, k - 1]) * dt / rem
        var = dt * (rem - dt) / rem
        vals[:, k] = mean + rng.standard_normal(R) * math.sqrt(max(var, 0.0))
    vals[:, K] = target
    return vals


def _as_replica_array(value, n_replicas: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n_replicas, float(arr))
    if arr.shape != (n_replicas,):
        raise ValidationError("endpoint arrays must be scalars or shape (R,)")
    return arr


def multi_bridge_bundle(
    pot: PotentialSpec,
    sites,
    layers,
    t_start: float,
    tau: float,
    dt: float,
    rng: np.random.Generator,
    n_replicas: int,
) -> PathBundle:
    """Concatenated exact bridges through the given layer values.

    ``layers`` is a list of dicts site -> scalar or (R,) array; consecutive
    layers are tau apart and every segment is bridged exactly.  Only the
    quadratic and drift-free-circle potentials admit exact bridges.
    """
    if pot.family not in ("quadratic", "circle_free"):
        raise ValidationError(
            "exact bridges need the quadratic or drift-free circle potential"
        )
    sites = tuple(tuple(int(c) for c in s) for s in sites)
    n_seg = len(layers) - 1
    if n_seg < 1:
        raise ValidationError("need at least two layers to bridge")
    Kseg = int(round(tau / dt))
    if Kseg < 1 or abs(Kseg * dt - tau) > 1e-9 * max(tau, 1.0):
        raise ValidationError("tau must be an integer multiple of dt")
    R = n_replicas
    K = n_seg * Kseg
    values = np.empty((R, len(sites), K + 1))
    for i, s in enumerate(sites):
        cur = _as_replica_array(layers[0][s], R)
        values[:, i, 0] = cur
        for j in range(n_seg):
            nxt = _as_replica_array(layers[j + 1][s], R)
            if pot.family == "quadratic":
                seg = _ou_bridge_segment(values[:, i, j * Kseg], nxt, tau, dt, rng)
            else:
                seg = _circle_bridge_segment(values[:, i, j * Kseg], nxt, tau, dt, rng)
            values[:, i, j * Kseg : (j + 1) * Kseg + 1] = seg
    times = t_start + dt * np.arange(K + 1)
    state = wrap_angle(values[:, :, :-1]) if pot.state_space == CIRCLE else values[:, :, :-1]
    du = np.asarray(pot.dU(state), dtype=float)
    dbar = np.diff(values, axis=2) + 0.5 * du * dt
    return PathBundle(sites, times, values, dbar, pot.state_space)


def free_bridge_paths(
    pot: PotentialSpec,
    vol: Volume,
    x: Configuration,
    y: Configuration,
    t: float,
    mc: MCParams,
    rng: np.random.Generator,
) -> Tuple[PathBundle, Optional[np.ndarray]]:
    """Replica bundle of free bridges from x to y over [0, t].

    Returns (bundle, log_weights); weights are None when the bridges are
    exact, otherwise they reweight forward paths by a Gaussian kernel at
    the pinned endpoint (bandwidth ~ bandwidth_scale * sd * R^{-1/5}).
    """
    if not (vol.issubset(x.domain) and vol.issubset(y.domain)):
        raise CoverageError("endpoint configurations must cover the volume")
    sites = tuple(vol.sorted_sites())
    R = mc.n_samples
    if pot.family in ("quadratic", "circle_free"):
        layers = [
            {s: x[s] for s in sites},
            {s: y[s] for s in sites},
        ]
        bundle = multi_bridge_bundle(pot, sites, layers, 0.0, t, mc.dt, rng, R)
        return bundle, None
    bundle = simulate(_free_drift(), pot, vol, x, t, mc.dt, seed=0, n_replicas=R, rng=rng)
    logw = np.zeros(R)
    for s in sites:
        end = bundle.state_values(s)[:, -1]
        sd = float(np.std(end)) or 1.0
        h = mc.bandwidth_scale * sd * R ** (-0.2)
        diff = end - y[s]
        logw += -(diff**2) / (2.0 * h * h)
    return bundle, logw


def bridge_expectation(
    F: Callable,
    pot: PotentialSpec,
    vol: Volume,
    x: Configuration,
    y: Configuration,
    t: float,
    mc: MCParams,
    seed: int,
) -> Estimate:
    """Monte Carlo estimate of E[F(X) | X_0 = x, X_t = y] under the free law.

    ``F`` maps a PathBundle to one value per replica.  Reweighted bridges
    are self-normalized; an effective sample size below the configured
    threshold raises PrecisionError.
    """
    rng = substream(seed, "bridge")
    bundle, logw = free_bridge_paths(pot, vol, x, y, t, mc, rng)
    samples = np.asarray(F(bundle), dtype=float)
    if samples.shape != (bundle.n_replicas,):
        raise ValidationError("F must return one value per replica")
    if logw is None:
        return mean_estimate(samples, method="bridge-exact")
    return weighted_mean_estimate(samples, logw, mc.ess_threshold, method="bridge-reweighted")


def density(
    drift: DriftSpec,
    pot: PotentialSpec,
    vol: Volume,
    x: Configuration,
    y: Configuration,
    t: float,
    mc: MCParams,
    seed: int,
) -> DensityEstimate:
    """Interacting-vs-free endpoint density f_t(x, y) by bridge reweighting."""

    def F(bundle: PathBundle) -> np.ndarray:
        return girsanov_weight(drift, vol, bundle)

    est = bridge_expectation(F, pot, vol, x, y, t, mc, seed)
    return dataclasses.replace(est, method="bridge")


def _kde_products(
    bundle: PathBundle, y: Configuration, bandwidths: Dict, circle: bool
) -> np.ndarray:
    prod = np.ones(bundle.n_replicas)
    for s, h in bandwidths.items():
        end = bundle.state_values(s)[:, -1]
        diff = end - y[s]
        if circle:
            diff = np.mod(diff + np.pi, TWO_PI) - np.pi
        prod *= np.exp(-(diff**2) / (2.0 * h * h)) / (h * math.sqrt(2.0 * math.pi))
    return prod


def density_endpoint_ratio(
    drift: DriftSpec,
    pot: PotentialSpec,
    vol: Volume,
    x: Configuration,
    y: Configuration,
    t: float,
    mc: MCParams,
    seed: int,
) -> DensityEstimate:
    """Independent density route: ratio of kernel-smoothed endpoint laws.

    Simulates the interacting and the free system forward from x and
    compares kernel density estimates at y, with one shared bandwidth per
    site so the smoothing bias cancels to leading order in the ratio.
    """
    R = mc.n_samples
    q_bundle = simulate(drift, pot, vol, x, t, mc.dt, seed=0, n_replicas=R,
                        rng=substream(seed, "endpoint", "interacting"))
    p_bundle = simulate(_free_drift(), pot, vol, x, t, mc.dt, seed=0, n_replicas=R,
                        rng=substream(seed, "endpoint", "free"))
    circle = pot.state_space == CIRCLE
    bandwidths = {}
    for s in vol.sorted_sites():
        end = p_bundle.state_values(s)[:, -1]
        sd = float(np.std(end)) or 1.0
        bandwidths[s] = mc.bandwidth_scale * sd * R ** (-0.2)
    q_hat = mean_estimate(_kde_products(q_bundle, y, bandwidths, circle))
    p_hat = mean_estimate(_kde_products(p_bundle, y, bandwidths, circle))
    if p_hat.value <= 0 or p_hat.value < 3.0 * p_hat.stderr:
        raise PrecisionError("free endpoint density at y is not resolved")
    return ratio_estimate(q_hat, p_hat, method="endpoint-ratio")
