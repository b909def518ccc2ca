"""Network parameters, spiking-rate functions and the jump transition.

The network consists of ``n_neurons`` membrane potentials on [0, k_max].
Between spikes every potential relaxes exponentially (speed ``lam``) toward
the equilibrium value ``m``.  When neuron ``i`` spikes, its potential is
reset to 0 and every other neuron ``j`` receives a kick ``cap(x_j)`` that
is 1/N away from the ceiling and tapers smoothly to 0 at the ceiling, so
the state space is closed under jumps.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelError",
    "SoftCap",
    "ModelParams",
    "HolderClass",
    "RateFunction",
    "NetworkState",
    "EstimationRegion",
    "linear_rate",
    "log1p_rate",
    "expm1_rate",
    "table_rate",
    "delta_jump",
    "rate_bar",
    "holder_audit",
    "HolderAuditReport",
]


class ModelError(ValueError):
    """Invalid model configuration or argument."""


@dataclass(frozen=True)
class SoftCap:
    """Smooth kick function: 1/N below k_max - 2/N, tapering to 0 at k_max.

    Implemented as (1/N) * s(u) with u = N*(k_max - x)/2 clamped to [0, 1]
    and s(u) = u^2 (3 - 2u) (smoothstep).  Since s(u) < 2u on (0, 1], the
    kick is strictly below k_max - x near the ceiling, so x + cap(x) <= k_max
    everywhere with equality only at x = k_max.
    """

    n_neurons: int
    k_max: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        u = np.clip(self.n_neurons * (self.k_max - x) / 2.0, 0.0, 1.0)
        out = u * u * (3.0 - 2.0 * u) / self.n_neurons
        if out.ndim == 0:
            return float(out)
        return out


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of the network."""

    n_neurons: int
    lam: float
    m: float
    k_max: float
    cap: SoftCap = None

    def __post_init__(self):
        if self.n_neurons < 1:
            raise ModelError("n_neurons must be a positive integer")
        if not self.lam > 0:
            raise ModelError("lam must be > 0")
        if not (0 < self.m < self.k_max):
            raise ModelError("need 0 < m < k_max")
        if self.k_max < 2.0 / self.n_neurons:
            raise ModelError("need k_max >= 2/n_neurons")
        if self.cap is None:
            object.__setattr__(self, "cap", SoftCap(self.n_neurons, self.k_max))


@dataclass(frozen=True)
class HolderClass:
    """Smoothness metadata for a rate function.

    ``beta = k + alpha`` with k = floor(beta) and 0 <= alpha < 1; ``F``
    bounds the function and its first k derivatives, ``L`` is the Holder
    constant of the k-th derivative, and ``f_min`` is a positive
    non-decreasing lower envelope.
    """

    beta: float
    F: float
    L: float
    f_min: object  # callable x -> lower bound

    def __post_init__(self):
        if not (self.beta > 0 and self.F > 0 and self.L > 0):
            raise ModelError("beta, F, L must be > 0")

    @property
    def k(self) -> int:
        return int(math.floor(self.beta))

    @property
    def alpha(self) -> float:
        return self.beta - self.k


def _base_eval(family, x, table_x, table_y):
    x = np.asarray(x, dtype=float)
    if family == "linear":
        return x.copy()
    if family == "log1p":
        return np.log1p(x)
    if family == "expm1":
        return np.expm1(x)
    if family == "table":
        return np.interp(x, table_x, table_y)
    raise ModelError(f"unknown rate family {family!r}")


def _scaled_base(x, family, scale, table_x, table_y):
    return scale * _base_eval(family, x, table_x, table_y)


def _scaled_half_base(x, family, scale, table_x, table_y):
    return 0.5 * scale * _base_eval(family, x, table_x, table_y)


@dataclass(frozen=True)
class RateFunction:
    """Evaluatable spiking intensity with smoothness metadata.

    ``bump`` (amplitude, center, width), when set, adds
    ``amp * (1 - u^2)^2`` with ``u = (x - center)/width`` on top of the base
    family; this is how rate perturbations are represented so that the
    simulator can evaluate them natively.
    """

    name: str
    family: str  # linear | log1p | expm1 | table
    holder: HolderClass
    scale: float = 1.0
    table_x: np.ndarray = None
    table_y: np.ndarray = None
    bump: tuple = None  # (amplitude, center, width) or None

    def __call__(self, x):
        v = self.scale * _base_eval(self.family, x, self.table_x, self.table_y)
        if self.bump is not None:
            amp, center, width = self.bump
            u = (np.asarray(x, dtype=float) - center) / width
            w = np.where(np.abs(u) < 1.0, 1.0 - u * u, 0.0)
            v = v + amp * w * w
        if np.ndim(x) == 0:
            return float(v)
        return v

    def descriptor(self) -> str:
        s = f"{self.family}:scale={self.scale!r}"
        if self.bump is not None:
            amp, center, width = self.bump
            s += f":bump={amp!r},{center!r},{width!r}"
        return s


def linear_rate(k_max: float, scale: float = 1.0, beta: float = 1.0) -> RateFunction:
    """f(x) = scale * x.  F/L carry headroom for small perturbations."""
    holder = HolderClass(
        beta=beta,
        F=scale * (max(k_max, 1.0) + 1.0),
        L=max(scale, 1.0),
        f_min=functools.partial(_scaled_base, family="linear", scale=scale,
                                table_x=None, table_y=None),
    )
    return RateFunction(name=f"linear(scale={scale:g})", family="linear",
                        holder=holder, scale=scale)


def log1p_rate(k_max: float, scale: float = 1.0, beta: float = 1.0) -> RateFunction:
    """f(x) = scale * log(1 + x)."""
    holder = HolderClass(
        beta=beta,
        F=scale * (max(math.log1p(k_max), 1.0) + 1.0),
        L=max(scale, 1.0),
        f_min=functools.partial(_scaled_base, family="log1p", scale=scale,
                                table_x=None, table_y=None),
    )
    return RateFunction(name=f"log1p(scale={scale:g})", family="log1p",
                        holder=holder, scale=scale)


def expm1_rate(k_max: float, scale: float = 1.0, beta: float = 1.0) -> RateFunction:
    """f(x) = scale * (exp(x) - 1)."""
    ek = math.exp(k_max)
    holder = HolderClass(
        beta=beta,
        F=scale * (ek + 1.0),
        L=scale * ek,
        f_min=functools.partial(_scaled_base, family="expm1", scale=scale,
                                table_x=None, table_y=None),
    )
    return RateFunction(name=f"expm1(scale={scale:g})", family="expm1",
                        holder=holder, scale=scale)


def table_rate(xs, ys, beta: float = 1.0) -> RateFunction:
    """Piecewise-linear rate from (x, f(x)) pairs; monotonicity enforced."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2:
        raise ModelError("table needs two equal-length 1-d columns, >= 2 rows")
    if np.any(np.diff(xs) <= 0):
        raise ModelError("table x values must be strictly increasing")
    if xs[0] != 0.0 or ys[0] != 0.0:
        raise ModelError("table must start at (0, 0)")
    if np.any(np.diff(ys) < 0):
        raise ModelError("table values must be non-decreasing")
    slopes = np.diff(ys) / np.diff(xs)
    F = 1.5 * max(float(ys.max()), float(np.abs(slopes).max()), 1e-12)
    L = 1.5 * max(float(slopes.max() - slopes.min()), 1e-12)
    holder = HolderClass(
        beta=beta, F=F, L=L,
        f_min=functools.partial(_scaled_half_base, family="table", scale=1.0,
                                table_x=xs, table_y=ys),
    )
    return RateFunction(name="table", family="table", holder=holder,
                        scale=1.0, table_x=xs, table_y=ys)


@dataclass
class NetworkState:
    """Vector of membrane potentials plus the wall-clock time."""

    potentials: np.ndarray
    clock: float = 0.0

    def __post_init__(self):
        self.potentials = np.asarray(self.potentials, dtype=float)
        if self.potentials.ndim != 1:
            raise ModelError("potentials must be a 1-d vector")


@dataclass(frozen=True)
class EstimationRegion:
    """Open region where the single-neuron invariant density is regular.

    Membership: floor(beta)/N < a < k_max - floor(beta)/N and |a - m| > d,
    and the exclusion radius itself must satisfy d > (floor(beta) + 2)/N.
    """

    params: ModelParams
    beta: float
    d: float

    @property
    def d_valid(self) -> bool:
        k = int(math.floor(self.beta))
        return self.d > (k + 2) / self.params.n_neurons

    def contains(self, a: float) -> bool:
        if not self.d_valid:
            return False
        k = int(math.floor(self.beta))
        n = self.params.n_neurons
        lo, hi = k / n, self.params.k_max - k / n
        return lo < a < hi and abs(a - self.params.m) > self.d


def delta_jump(state: NetworkState, i: int, params: ModelParams) -> NetworkState:
    """Jump transition when neuron ``i`` (0-based) spikes.

    The spiking coordinate is reset to 0, every other coordinate x_j
    becomes x_j + cap(x_j).
    """
    x = state.potentials
    n = params.n_neurons
    if x.shape != (n,):
        raise ModelError("state dimension does not match n_neurons")
    if not 0 <= i < n:
        raise ModelError(f"neuron index {i} out of range [0, {n})")
    out = x + params.cap(x)
    out[i] = 0.0
    return NetworkState(out, state.clock)


def rate_bar(state: NetworkState, f: RateFunction) -> float:
    """Total spiking intensity: sum of f over all potentials."""
    return float(np.sum(f(state.potentials)))


@dataclass(frozen=True)
class HolderAuditReport:
    passed: bool
    checks: dict  # name -> (worst value, bound)

    def failures(self):
        return {k: v for k, v in self.checks.items() if v[0] > v[1]}


def holder_audit(f: RateFunction, k_max: float, grid_step: float = 1e-3,
                 rtol: float = 1e-6) -> HolderAuditReport:
    """Numeric membership check of f in its declared Holder class.

    Grid-based only: monotonicity, f(0) = 0, lower envelope, derivative sup
    bounds (finite differences up to order floor(beta)) and the Holder
    quotient of the top derivative.  Report-only; never raises.
    """
    if grid_step <= 0:
        raise ModelError("grid_step must be > 0")
    h = f.holder
    x = np.arange(0.0, k_max + grid_step / 2, grid_step)
    vals = f(x)
    atol = 1e-9
    checks = {}
    checks["origin"] = (abs(float(f(0.0))), atol)
    checks["monotone"] = (float(-(np.diff(vals)).min(initial=0.0)), atol)
    fmin_vals = np.asarray(h.f_min(x), dtype=float)
    checks["lower_envelope"] = (float((fmin_vals - vals).max()), atol)
    bound = h.F * (1.0 + rtol) + atol
    checks["sup_f"] = (float(np.abs(vals).max()), bound)
    deriv = vals
    for level in range(1, h.k + 1):
        deriv = np.gradient(deriv, grid_step)
        checks[f"sup_d{level}"] = (float(np.abs(deriv).max()), bound)
    # Holder quotient of the k-th derivative.  Pairs closer than a few grid
    # steps are skipped: there the finite-difference noise dominates.
    lbound = h.L * (1.0 + rtol) + atol
    if h.alpha == 0.0:
        quot = float(deriv.max() - deriv.min())
    else:
        min_sep = 5
        quot = 0.0
        for off in range(min_sep, deriv.size):
            dd = np.abs(deriv[off:] - deriv[:-off])
            quot = max(quot, float(dd.max()) / (off * grid_step) ** h.alpha)
    checks["holder_quotient"] = (quot, lbound)
    passed = all(v <= b for v, b in checks.values())
    return HolderAuditReport(passed=passed, checks=checks)
