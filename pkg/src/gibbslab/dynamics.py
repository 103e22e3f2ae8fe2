"""Free one-dimensional dynamics, drift functionals and the lattice SDE.

The free dynamics is dx = dB - (1/2) U'(x) dt with stationary measure
m(dx) = e^{-U(x)} dx / Z.  Its transition kernel relative to m, p_t(x, y),
has a closed form for the quadratic potential (Mehler kernel) and for the
drift-free circle (wrapped heat kernel); any other potential is handled by
an eigendecomposition of the discretized generator on a truncated interval.

The interacting system runs an Euler-Maruyama scheme: interior sites of the
volume feel the drift functional, the boundary layer runs free.  Delay
evaluators read a window [t - t0, t] from a history buffer; the pre-history
for s < 0 is frozen at the initial configuration (a truncated-window variant
is available as a switch on the drift spec).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import eigh, eigh_tridiagonal

from .errors import (
    BoundViolationError,
    CoverageError,
    NumericalError,
    SetupError,
    ValidationError,
)
from .lattice import CIRCLE, LINE, TWO_PI, Configuration, Neighborhood, Volume, interior, wrap_angle
from .rng import substream

PRE_HISTORY_FROZEN = "frozen"
PRE_HISTORY_TRUNCATED = "truncated"


# ---------------------------------------------------------------------------
# potentials and the free kernel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PotentialSpec:
    """Self-potential U with derivative, state space and kernel machinery."""

    U: Callable
    dU: Callable
    state_space: str = LINE
    gap_hint: Optional[float] = None
    family: str = "general"  # quadratic | circle_free | general
    halfwidth: float = 6.0   # truncation [-L, L] for line quadrature/grids

    def __hash__(self):  # callables hash by identity; good enough for caching
        return hash((id(self.U), id(self.dU), self.state_space, self.family, self.halfwidth))


def quadratic_potential() -> PotentialSpec:
    """U(x) = x^2: Ornstein-Uhlenbeck free dynamics, spectral gap 1."""
    return PotentialSpec(
        U=lambda x: np.asarray(x) ** 2,
        dU=lambda x: 2.0 * np.asarray(x),
        state_space=LINE,
        gap_hint=1.0,
        family="quadratic",
        halfwidth=6.0,
    )


def circle_free_potential() -> PotentialSpec:
    """U = 0 on the circle: Brownian motion, uniform m, spectral gap 1/2."""
    zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))
    return PotentialSpec(
        U=zero, dU=zero, state_space=CIRCLE, gap_hint=0.5, family="circle_free"
    )


def custom_potential(
    U: Callable,
    dU: Callable,
    state_space: str = LINE,
    gap_hint: Optional[float] = None,
) -> PotentialSpec:
    """General smooth potential; normalizability is checked by quadrature."""
    if state_space == CIRCLE:
        return PotentialSpec(U=U, dU=dU, state_space=CIRCLE, gap_hint=gap_hint)
    L = 8.0
    prev_mass = None
    while L <= 64.0:
        xs = np.linspace(-L, L, 4001)
        dens = np.exp(-np.asarray(U(xs), dtype=float))
        mass = np.trapezoid(dens, xs)
        if not np.isfinite(mass):
            raise SetupError("exp(-U) is not integrable on the check grid")
        edge = max(dens[0], dens[-1]) * 2 * L
        if prev_mass is not None and edge < 1e-12 * mass:
            return PotentialSpec(
                U=U, dU=dU, state_space=LINE, gap_hint=gap_hint, halfwidth=L
            )
        prev_mass = mass
        L *= 2.0
    raise SetupError("exp(-U) does not decay on [-64, 64]; potential rejected")


def reference_quadrature(pot: PotentialSpec, n: int = 2001):
    """Grid xs and normalized weights approximating m on the truncation."""
    if pot.state_space == CIRCLE:
        xs = np.linspace(0.0, TWO_PI, n, endpoint=False)
        w = np.exp(-np.asarray(pot.U(xs), dtype=float))
        return xs, w / w.sum()
    xs = np.linspace(-pot.halfwidth, pot.halfwidth, n)
    w = np.exp(-np.asarray(pot.U(xs), dtype=float))
    w[0] *= 0.5
    w[-1] *= 0.5
    return xs, w / w.sum()


def sample_reference(pot: PotentialSpec, n: int, seed: int) -> np.ndarray:
    """n i.i.d. draws from m, by closed form or adaptive-grid inverse CDF."""
    rng = substream(seed, "reference")
    return _sample_reference_rng(pot, n, rng)


def _sample_reference_rng(pot: PotentialSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if pot.family == "quadratic":
        return rng.normal(0.0, math.sqrt(0.5), size=n)
    if pot.family == "circle_free":
        return rng.uniform(0.0, TWO_PI, size=n)
    xs, w = reference_quadrature(pot, 4001)
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    u = rng.uniform(size=n)
    return np.interp(u, cdf, xs)


_FP_CACHE: dict = {}


def _fp_eigensystem(pot: PotentialSpec, n_grid: int = 400):
    """Eigendecomposition of the discrete free generator, weighted by m."""
    key = (hash(pot), n_grid)
    if key in _FP_CACHE:
        return _FP_CACHE[key]
    if pot.state_space == CIRCLE:
        xs = np.linspace(0.0, TWO_PI, n_grid, endpoint=False)
        h = TWO_PI / n_grid
        periodic = True
    else:
        xs = np.linspace(-pot.halfwidth, pot.halfwidth, n_grid)
        h = xs[1] - xs[0]
        periodic = False
    dens = np.exp(-np.asarray(pot.U(xs), dtype=float))
    dens = dens / (dens.sum() * h)
    w = dens * h  # normalized lattice masses of m
    n = n_grid
    d = np.sqrt(w)
    # conductances C_i between i and i+1 from the Dirichlet form
    # (1/2) int f'^2 dm ~ sum_i C_i (f_{i+1} - f_i)^2, C_i = m_mid / (2h)
    if periodic:
        cond = np.sqrt(dens * np.roll(dens, -1)) / (2.0 * h)
        B = np.zeros((n, n))
        for i in range(n):
            j = (i + 1) % n
            B[i, i] -= cond[i] / w[i]
            B[j, j] -= cond[i] / w[j]
            B[i, j] += cond[i] / (d[i] * d[j])
            B[j, i] += cond[i] / (d[i] * d[j])
        lam, psi = eigh(B)
    else:
        cond = np.sqrt(dens[:-1] * dens[1:]) / (2.0 * h)
        diag = np.zeros(n)
        diag[:-1] -= cond / w[:-1]
        diag[1:] -= cond / w[1:]
        off = cond / (d[:-1] * d[1:])
        lam, psi = eigh_tridiagonal(diag, off)
    phis = psi / np.sqrt(w)[:, None]  # orthonormal in L^2(m_h), phi_0 = const
    # fix sign and the constant mode
    order = np.argsort(-lam)
    lam = lam[order]
    phis = phis[:, order]
    lam[0] = 0.0
    phis[:, 0] = 1.0
    result = (xs, w, lam, phis)
    _FP_CACHE[key] = result
    return result


def _circle_heat_kernel(t, d):
    """Wrapped heat kernel relative to the uniform measure."""
    d = np.asarray(d, dtype=float)
    t = float(t)
    if t >= 0.5:
        out = np.ones_like(d)
        k = 1
        while k * k * t / 2.0 < 40.0:
            out = out + 2.0 * np.exp(-k * k * t / 2.0) * np.cos(k * d)
            k += 1
        return out
    out = np.zeros_like(d)
    n_terms = int(np.ceil(8.0 * math.sqrt(t) / TWO_PI)) + 3
    for nw in range(-n_terms, n_terms + 1):
        out = out + np.exp(-((d + TWO_PI * nw) ** 2) / (2.0 * t))
    return out * math.sqrt(TWO_PI / t)


def free_kernel(pot: PotentialSpec, t: float, x, y):
    """Transition density p_t(x, y) of the free dynamics relative to m."""
    if t <= 0:
        raise ValidationError("free_kernel needs t > 0")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if pot.family == "quadratic":
        rho = math.exp(-t)
        denom = 1.0 - rho * rho
        expo = (2.0 * rho * x * y - rho * rho * (x * x + y * y)) / denom
        return np.exp(expo) / math.sqrt(denom)
    if pot.family == "circle_free":
        return _circle_heat_kernel(t, y - x)
    xs, w, lam, phis = _fp_eigensystem(pot)
    keep = lam * t > -45.0
    lam_k = lam[keep]
    phi_k = phis[:, keep]
    def interp_modes(z):
        z = np.atleast_1d(np.asarray(z, dtype=float))
        cols = [np.interp(z, xs, phi_k[:, k]) for k in range(phi_k.shape[1])]
        return np.stack(cols, axis=-1)
    px = interp_modes(x)
    py = interp_modes(y)
    val = np.einsum("...k,...k,k->...", px, py, np.exp(lam_k * t))
    val = val.reshape(np.broadcast(x, y).shape)
    if val.shape == ():
        return float(val)
    return val


def kernel_sup_distance(
    pot: PotentialSpec, T: float, n_grid: int = 201, probe_halfwidth: float = 1.0
) -> float:
    """max |p_T(x, y) - 1| over a compact probe grid (truncated sup norm).

    On the line the probe box is [-probe_halfwidth, probe_halfwidth]; the
    default keeps the decay in its asymptotic single-rate regime for
    moderate T, which is what the ergodicity fits consume.
    """
    if T <= 0:
        raise ValidationError("kernel_sup_distance needs T > 0")
    if pot.state_space == CIRCLE:
        xs = np.linspace(0.0, TWO_PI, n_grid, endpoint=False)
    else:
        L = min(pot.halfwidth, probe_halfwidth)
        xs = np.linspace(-L, L, n_grid)
    vals = free_kernel(pot, T, xs[:, None], xs[None, :])
    return float(np.max(np.abs(vals - 1.0)))


def ultracontractivity_report(pot: PotentialSpec, n_grid: int = 801) -> dict:
    """Numerical check of the three sufficient ultracontractivity conditions.

    Returns flags and diagnostics; failures are reported as warnings since
    the conditions are sufficient, not necessary.
    """
    if pot.state_space == CIRCLE:
        return {"state_space": CIRCLE, "ultracontractive": True, "warnings": []}
    L = pot.halfwidth
    xs = np.linspace(-L, L, n_grid)
    h = xs[1] - xs[0]
    du = np.asarray(pot.dU(xs), dtype=float)
    ddu = np.gradient(du, h)
    warnings = []
    edge = int(0.1 * n_grid)
    cond1 = bool(min(ddu[:edge].min(), ddu[-edge:].min()) > 0)
    if not cond1:
        warnings.append("condition (1): U'' not positive near the truncation edges")
    cond2_max = float(np.max(ddu - 0.5 * du * du))
    cond2 = bool(np.isfinite(cond2_max))
    # condition (3): integrability of 1/U' in the tails
    tail = np.abs(xs) > 0.5 * L
    with np.errstate(divide="ignore"):
        inv = np.where(np.abs(du[tail]) > 1e-12, 1.0 / np.abs(du[tail]), np.inf)
    cond3 = bool(np.all(np.isfinite(inv)) and np.sum(inv) * h < 1e3)
    if not cond3:
        warnings.append("condition (3): 1/U' looks non-integrable in the tails")
    return {
        "state_space": LINE,
        "condition_1_convex_tails": cond1,
        "condition_2_bound": cond2_max,
        "condition_2_holds": cond2,
        "condition_3_integrable": cond3,
        "ultracontractive": cond1 and cond2 and cond3,
        "warnings": warnings,
    }


# ---------------------------------------------------------------------------
# drift functionals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DriftSpec:
    """Bounded space-time-local drift functional with intensity beta.

    ``evaluator(site, t, window_times, window_values)`` receives the path of
    the sites ``site + nbhd`` on the memory window as arrays of shape
    (..., W); it must return an array broadcastable to the leading shape.
    Its absolute value may never exceed ``bound`` (checked at runtime).
    """

    beta: float
    nbhd: Neighborhood
    memory: float
    bound: float
    evaluator: Callable
    label: str = "custom"
    pre_history: str = PRE_HISTORY_FROZEN

    def __post_init__(self):
        if self.beta < 0:
            raise SetupError("beta must be nonnegative")
        if self.memory <= 0:
            raise SetupError("memory time t0 must be positive")
        if self.bound < 0:
            raise SetupError("drift bound must be nonnegative")
        if self.pre_history not in (PRE_HISTORY_FROZEN, PRE_HISTORY_TRUNCATED):
            raise SetupError(f"unknown pre-history convention {self.pre_history!r}")

    def __hash__(self):
        return hash((self.beta, self.nbhd, self.memory, self.bound, id(self.evaluator)))

    def evaluate(self, site, t, window_times, window_values):
        val = np.asarray(
            self.evaluator(site, t, window_times, window_values), dtype=float
        )
        if np.any(np.abs(val) > self.bound + 1e-9):
            raise BoundViolationError(
                f"drift '{self.label}' exceeded its declared bound {self.bound}"
            )
        return val


def constant_drift(c: float, memory: float = 0.1) -> DriftSpec:
    """b = c everywhere: the simplest Markovian finite-range drift."""
    return DriftSpec(
        beta=1.0,
        nbhd=Neighborhood.range1d(0),
        memory=memory,
        bound=abs(c),
        evaluator=lambda site, t, wt, wv: np.full(
            np.shape(next(iter(wv.values()))[..., -1]), float(c)
        ),
        label="constant",
    )


def markov_local_drift(scale: float, nbhd: Neighborhood, memory: float = 0.1) -> DriftSpec:
    """b_i = scale * tanh(mean of the current neighborhood values)."""

    def ev(site, t, wt, wv):
        cur = np.mean([v[..., -1] for v in wv.values()], axis=0)
        return scale * np.tanh(cur)

    return DriftSpec(
        beta=1.0, nbhd=nbhd, memory=memory, bound=abs(scale), evaluator=ev,
        label="markov_local",
    )


def resonance_drift(amplitude: float, memory: float = 0.1) -> DriftSpec:
    """External periodic forcing b = A sin(t); declared bound equals A."""

    def ev(site, t, wt, wv):
        shape = np.shape(next(iter(wv.values()))[..., -1])
        return np.full(shape, amplitude * math.sin(t))

    return DriftSpec(
        beta=1.0, nbhd=Neighborhood.range1d(0), memory=memory,
        bound=abs(amplitude), evaluator=ev, label="resonance",
    )


def delayed_feedback_drift(alpha: float, t0: float) -> DriftSpec:
    """Saturated delayed feedback b = -alpha z / (1 + z^2), z = x(t - t0)."""

    def ev(site, t, wt, wv):
        z = wv[site][..., 0]  # left edge of the window is t - t0
        return -alpha * z / (1.0 + z * z)

    return DriftSpec(
        beta=1.0, nbhd=Neighborhood.range1d(0), memory=t0,
        bound=abs(alpha) / 2.0, evaluator=ev, label="delayed_feedback",
    )


def memory_integral_drift(
    f: Callable, f_bound: float, eps: Callable, eps_l1: float, t0: float
) -> DriftSpec:
    """b_i(t) = integral of eps(s) f(x_i(s)) over the memory window."""

    def ev(site, t, wt, wv):
        vals = wv[site]
        if wt.size < 2:
            return np.zeros(np.shape(vals[..., -1]))
        ds = np.diff(wt)
        integrand = np.asarray(eps(wt[:-1]), dtype=float) * np.asarray(
            f(vals[..., :-1]), dtype=float
        )
        return np.sum(integrand * ds, axis=-1)

    return DriftSpec(
        beta=1.0, nbhd=Neighborhood.range1d(0), memory=t0,
        bound=abs(f_bound) * abs(eps_l1), evaluator=ev, label="memory_integral",
    )


def space_time_integral_drift(
    alpha: Callable,
    alpha_bound: float,
    integrator: Callable,
    total_variation: float,
    nbhd: Neighborhood,
    t0: float,
) -> DriftSpec:
    """b_i(t) = integral of alpha(t - s, x_{i+N}(s)) dV_s over the window.

    ``alpha(lag, values)`` gets values as a dict site -> array (..., W) slice;
    ``integrator`` is the bounded-variation path V evaluated at times.
    """

    def ev(site, t, wt, wv):
        any_vals = next(iter(wv.values()))
        if wt.size < 2:
            return np.zeros(np.shape(any_vals[..., -1]))
        v = np.asarray(integrator(wt), dtype=float)
        dv = np.diff(v)
        out = np.zeros(np.shape(any_vals[..., -1]))
        for l in range(wt.size - 1):
            snap = {s: vals[..., l] for s, vals in wv.items()}
            out = out + np.asarray(alpha(t - wt[l], snap), dtype=float) * dv[l]
        return out

    return DriftSpec(
        beta=1.0, nbhd=nbhd, memory=t0,
        bound=abs(alpha_bound) * abs(total_variation),
        evaluator=ev, label="space_time_integral",
    )


def builtin_drifts() -> dict:
    """Catalog of drift constructors, keyed by family name."""
    return {
        "constant": constant_drift,
        "markov_local": markov_local_drift,
        "resonance": resonance_drift,
        "delayed_feedback": delayed_feedback_drift,
        "memory_integral": memory_integral_drift,
        "space_time_integral": space_time_integral_drift,
    }


# ---------------------------------------------------------------------------
# path bundles and the Euler-Maruyama integrator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PathBundle:
    """Discretized trajectories of all sites, with compensated increments.

    ``values`` has shape (replicas, sites, K+1); circle paths are stored as
    a continuous lift (wrap with ``state_at`` for circle reads).  ``dbar``
    holds the compensated increments dX + (1/2) U'(X_k) dt (left-point rule).
    """

    sites: tuple
    times: np.ndarray
    values: np.ndarray
    dbar: np.ndarray
    state_space: str = LINE

    @property
    def n_replicas(self) -> int:
        return self.values.shape[0]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def site_index(self, site) -> int:
        try:
            return self.sites.index(tuple(site))
        except ValueError:
            raise CoverageError(f"site {site} not covered by this path bundle")

    def state_values(self, site) -> np.ndarray:
        vals = self.values[:, self.site_index(site), :]
        return wrap_angle(vals) if self.state_space == CIRCLE else vals

    def state_at(self, k: int, replica: int = 0) -> dict:
        vals = self.values[replica, :, k]
        if self.state_space == CIRCLE:
            vals = wrap_angle(vals)
        return {s: float(v) for s, v in zip(self.sites, vals)}

    def window(self, drift: DriftSpec, site, k: int):
        """Memory window ending at grid index k for the drift evaluator."""
        W = max(int(round(drift.memory / self.dt)), 1)
        lo = k - W
        idx = np.clip(np.arange(lo, k + 1), 0, None)
        wt = self.times[0] + np.arange(lo, k + 1) * self.dt
        cols = []
        for off_site in sorted(drift.nbhd.around(tuple(site))):
            vals = self.values[:, self.site_index(off_site), :][:, idx]
            if self.state_space == CIRCLE:
                vals = wrap_angle(vals)
            cols.append((off_site, vals))
        if drift.pre_history == PRE_HISTORY_TRUNCATED and lo < 0:
            keep = wt >= self.times[0] - 1e-12
            wt = wt[keep]
            cols = [(s, v[:, keep]) for s, v in cols]
        return wt, dict(cols)


def drift_values(drift: DriftSpec, path: PathBundle, site) -> np.ndarray:
    """Re-evaluate b_site(t_k, X) along a stored bundle, shape (R, K)."""
    K = path.times.size - 1
    out = np.empty((path.n_replicas, K))
    for k in range(K):
        wt, wv = path.window(drift, site, k)
        out[:, k] = drift.evaluate(tuple(site), float(path.times[k]), wt, wv)
    return out


def simulate(
    drift: DriftSpec,
    pot: PotentialSpec,
    vol: Volume,
    x0: Configuration,
    t: float,
    dt: float,
    seed: int,
    n_replicas: int = 1,
    rng: Optional[np.random.Generator] = None,
) -> PathBundle:
    """Euler-Maruyama trajectories of the finite-volume dynamics.

    Interior sites feel the interacting drift, the boundary layer runs free.
    Deterministic given (seed, dt, inputs); replicas share one vectorized
    noise stream derived from (seed, "simulate").
    """
    if dt <= 0:
        raise ValidationError("dt must be positive")
    if drift.beta > 0 and dt > drift.memory + 1e-12:
        raise ValidationError("dt must not exceed the drift memory t0")
    if not vol.issubset(x0.domain):
        raise CoverageError("x0 does not cover the volume")
    if x0.state_space != pot.state_space:
        raise ValidationError("x0 state space does not match the potential")

    sites = tuple(vol.sorted_sites())
    inner = interior(vol, drift.nbhd)
    inner_idx = [i for i, s in enumerate(sites) if s in inner]
    K = int(round(t / dt))
    if K < 1 or abs(K * dt - t) > 1e-9 * max(t, 1.0):
        raise ValidationError("t must be an integer multiple of dt")
    if rng is None:
        rng = substream(seed, "simulate")

    R, n = n_replicas, len(sites)
    values = np.empty((R, n, K + 1))
    values[:, :, 0] = x0.array_for(sites)[None, :]
    dbar = np.empty((R, n, K))
    times = dt * np.arange(K + 1)
    noise = rng.standard_normal((R, n, K)) * math.sqrt(dt)

    bundle_view = PathBundle(sites, times, values, dbar, pot.state_space)
    for k in range(K):
        xk = values[:, :, k]
        state = wrap_angle(xk) if pot.state_space == CIRCLE else xk
        du = np.asarray(pot.dU(state), dtype=float)
        drift_term = -0.5 * du
        if drift.beta > 0:
            for i in inner_idx:
                wt, wv = bundle_view.window(drift, sites[i], k)
                b = drift.evaluate(sites[i], float(times[k]), wt, wv)
                drift_term[:, i] = drift_term[:, i] + drift.beta * b
        step = noise[:, :, k] + drift_term * dt
        values[:, :, k + 1] = xk + step
        dbar[:, :, k] = step + 0.5 * du * dt
    if not np.all(np.isfinite(values)):
        raise NumericalError("simulation produced NaN or overflow")
    return bundle_view
