"""Nadaraya-Watson jump-rate estimator and its confidence intervals.

The rate estimate at a point ``a`` is a ratio: kernel-smoothed count of
spikes whose pre-jump potential fell near ``a`` (the jump measure), divided
by the kernel-smoothed occupation time of all neurons near ``a`` (with
0/0 := 0).  The denominator divided by N*t also estimates the invariant
single-neuron density, which feeds the plug-in CLT variance
f(a) * int(Q^2) / (N * pi1(a)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .model import EstimationRegion, HolderClass, ModelError, ModelParams
from .flow import integrate_along_flow, support_window
from .simulator import EventLog

__all__ = [
    "KernelError",
    "Kernel",
    "kernel_make",
    "kernel_for_beta",
    "default_bandwidth",
    "region_check",
    "numerator",
    "denominator",
    "pilot_occupancy_threshold",
    "estimate_at",
    "EstimateReport",
]

_MOMENT_NODES, _MOMENT_WEIGHTS = np.polynomial.legendre.leggauss(120)


class KernelError(ValueError):
    """Kernel construction failed its moment contract."""


@dataclass(frozen=True)
class Kernel:
    """Compactly supported kernel Q on [-R, R] with cached norms.

    ``poly`` holds the coefficients of Q(y) = P(y/R)/R when Q is polynomial
    on its support (enables closed-form fast paths downstream); None for
    non-polynomial families.
    """

    family: str
    R: float
    order: int
    q: object  # callable on the scaled variable u = y/R, zero outside [-1, 1]
    poly: np.ndarray = None
    norm_l1: float = 0.0
    norm_l2sq: float = 0.0
    sup: float = 0.0

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        u = y / self.R
        inside = np.abs(u) <= 1.0
        if self.poly is not None:
            acc = np.full_like(u, self.poly[-1])
            for c in self.poly[-2::-1]:
                acc *= u
                acc += c
            out = np.where(inside, acc, 0.0) / self.R
        else:
            out = np.where(inside, self.q(np.clip(u, -1.0, 1.0)), 0.0) / self.R
        if out.ndim == 0:
            return float(out)
        return out

    def qh(self, y, h: float):
        """Rescaled kernel Q_h(y) = Q(y/h)/h."""
        return self(np.asarray(y, dtype=float) / h) / h

    def moment(self, j: int) -> float:
        """int y^j Q(y) dy by fixed high-order quadrature on the support."""
        y = self.R * _MOMENT_NODES
        return float(self.R * np.sum(_MOMENT_WEIGHTS * (y ** j) * self(y)))


@dataclass(frozen=True)
class _TruncGaussProfile:
    """Scaled truncated-normal profile in the variable u = y/R."""

    R: float
    c: float

    def __call__(self, u):
        return self.R * norm.pdf(np.asarray(u) * self.R) / self.c


def _epan_poly() -> np.ndarray:
    # 0.75 * (1 - u^2) on [-1, 1]
    return np.array([0.75, 0.0, -0.75])


def _build_from_poly(family, R, order, coeffs) -> Kernel:
    poly = np.polynomial.Polynomial(coeffs)
    l1 = abs(poly.integ()(1.0) - poly.integ()(-1.0))  # coeffs >= 0 case only
    # exact norms by quadrature on [-1, 1]
    u = _MOMENT_NODES
    vals = poly(u)
    l1 = float(np.sum(_MOMENT_WEIGHTS * np.abs(vals)))
    l2 = float(np.sum(_MOMENT_WEIGHTS * vals * vals) / R)
    sup = float(np.abs(vals).max() / R)
    return Kernel(family=family, R=R, order=order, q=poly,
                  poly=np.asarray(coeffs, dtype=float),
                  norm_l1=l1, norm_l2sq=l2, sup=sup)


def _highorder_coeffs(order: int) -> np.ndarray:
    """Even polynomial times the parabolic base so moments 1..order vanish."""
    n_even = order // 2 + 1  # coefficients of 1, u^2, u^4, ...
    # moment of u^{2j} against base 0.75(1-u^2) on [-1,1]
    def base_moment(p):
        return 0.75 * (2.0 / (p + 1) - 2.0 / (p + 3))
    A = np.empty((n_even, n_even))
    b = np.zeros(n_even)
    b[0] = 1.0
    for row in range(n_even):
        for col in range(n_even):
            A[row, col] = base_moment(2 * row + 2 * col)
    try:
        c = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise KernelError(f"moment conditions unachievable: {exc}") from exc
    even = np.zeros(2 * n_even - 1)
    even[::2] = c
    full = np.polynomial.polynomial.polymul(even, _epan_poly())
    return full


def kernel_make(family: str, R: float = 1.0, order: int = 0) -> Kernel:
    """Construct a kernel and verify its moment contract.

    Families: ``epanechnikov`` (parabolic, symmetric), ``truncgauss`` (the
    standard normal density restricted to [-R, R] and renormalized),
    ``highorder`` (Epanechnikov times an even polynomial chosen so moments
    1..order vanish).
    """
    if not R > 0:
        raise KernelError("R must be > 0")
    if order < 0:
        raise KernelError("order must be >= 0")
    if family == "epanechnikov":
        if order > 1:
            raise KernelError("epanechnikov only kills the first moment; "
                              "use highorder for order >= 2")
        kern = _build_from_poly(family, R, order, _epan_poly())
    elif family == "highorder":
        kern = _build_from_poly(family, R, order, _highorder_coeffs(order))
    elif family == "truncgauss":
        if order > 1:
            raise KernelError("truncated Gaussian only kills odd moments")
        c = norm.cdf(R) - norm.cdf(-R)
        # q is expressed in the scaled variable u = y/R; Kernel divides by R
        kern = Kernel(family=family, R=R, order=order,
                      q=_TruncGaussProfile(R, c),
                      poly=None,
                      norm_l1=1.0,
                      norm_l2sq=float((norm.pdf(0) / c ** 2)
                                      * (norm.cdf(R * math.sqrt(2)) - norm.cdf(-R * math.sqrt(2)))
                                      / math.sqrt(2)),
                      sup=float(norm.pdf(0) / c))
    else:
        raise KernelError(f"unknown kernel family {family!r}")
    if abs(kern.moment(0) - 1.0) > 1e-10:
        raise KernelError(f"kernel mass {kern.moment(0)} != 1")
    for j in range(1, order + 1):
        mj = kern.moment(j)
        if abs(mj) > 1e-8:
            raise KernelError(f"moment {j} = {mj} does not vanish")
    return kern


def kernel_for_beta(beta: float, R: float = 1.0) -> Kernel:
    """Epanechnikov when symmetry suffices, high-order otherwise."""
    k = int(math.floor(beta))
    if k <= 1:
        return kernel_make("epanechnikov", R=R, order=min(k, 1))
    return kernel_make("highorder", R=R, order=k)


def default_bandwidth(t: float, beta: float) -> float:
    """Rate-optimal bandwidth t^{-1/(2 beta + 1)}."""
    if not (t > 0 and beta > 0):
        raise ModelError("t and beta must be > 0")
    return float(t ** (-1.0 / (2.0 * beta + 1.0)))


def region_check(a: float, params: ModelParams, holder: HolderClass,
                 d: float) -> bool:
    """True iff ``a`` is in the admissible estimation region for (beta, d)."""
    return EstimationRegion(params, holder.beta, d).contains(a)


def numerator(log: EventLog, a: float, h: float, Q: Kernel) -> float:
    """Kernel-smoothed spike count: sum over jumps of Q_h(Z_n^{I_n} - a)."""
    if not h > 0:
        raise ModelError("h must be > 0")
    if log.n_jumps == 0:
        return 0.0
    return float(np.sum(Q.qh(log.spike_potentials() - a, h)))


def _occupation_pairs(log: EventLog, lo: float, hi: float, t_range=None):
    """Flatten (segment, neuron) pairs whose flow meets [lo, hi]."""
    seg_t, starts, durs = log.segments()
    if t_range is not None:
        t0r, t1r = t_range
        durs = np.clip(np.minimum(seg_t + durs, t1r) - np.maximum(seg_t, t0r),
                       0.0, None)
        keep = durs > 0
        starts, durs, seg_t = starts[keep], durs[keep], seg_t[keep]
        # clip from the left: advance starts by the burn already elapsed
        adv = np.maximum(t0r - seg_t, 0.0)
        from .flow import flow_map
        starts = flow_map(starts, adv[:, None], log.params)
    n = log.params.n_neurons
    x = starts.ravel()
    d = np.repeat(durs, n)
    te, tx = support_window(x, d, lo, hi, log.params)
    mask = tx > te
    return x[mask], te[mask], tx[mask]


def denominator(log: EventLog, a: float, h: float, Q: Kernel,
                tol: float = 1e-8, t_range=None) -> float:
    """Kernel-smoothed occupation time: sum_i int Q_h(X_s^i - a) ds."""
    if not (h > 0 and tol > 0):
        raise ModelError("h and tol must be > 0")
    lo, hi = a - h * Q.R, a + h * Q.R
    x, te, tx = _occupation_pairs(log, lo, hi, t_range)
    if x.size == 0:
        return 0.0
    vals = integrate_along_flow(x, te, tx, lambda p: Q.qh(p - a, h),
                                log.params, tol)
    return float(vals.sum())


def pilot_occupancy_threshold(log: EventLog, a: float, h: float, Q: Kernel,
                              burn_frac: float = 0.1, tol: float = 1e-8) -> float:
    """Default occupancy threshold r: half the burn-in estimate of pi1(a)."""
    t_burn = burn_frac * log.horizon
    den = denominator(log, a, h, Q, tol, t_range=(0.0, t_burn))
    return 0.5 * den / (log.params.n_neurons * t_burn)


@dataclass(frozen=True)
class EstimateReport:
    a: float
    h: float
    t: float
    numerator: float
    denominator: float
    f_hat: float
    pi1_hat: float
    r: float
    a_tr_satisfied: bool
    ci_halfwidth: float
    level: float

    def csv_row(self) -> str:
        lo, hi = self.f_hat - self.ci_halfwidth, self.f_hat + self.ci_halfwidth
        return (f"{self.a!r},{self.h!r},{self.t!r},{self.numerator!r},"
                f"{self.denominator!r},{self.f_hat!r},{self.pi1_hat!r},"
                f"{int(self.a_tr_satisfied)},{lo!r},{hi!r}")

    csv_header = "a,h,t,numerator,denominator,f_hat,pi1_hat,a_tr,ci_low,ci_high"


def estimate_at(log: EventLog, a: float, h: float, Q: Kernel, r: float = None,
                level: float = 0.95, tol: float = 1e-8) -> EstimateReport:
    """Full rate estimate at one point, with occupancy event and CLT interval."""
    if not 0.0 <= a <= log.params.k_max:
        raise ModelError("a must lie in [0, k_max]")
    num = numerator(log, a, h, Q)
    den = denominator(log, a, h, Q, tol)
    f_hat = num / den if den > 0 else 0.0
    n, t = log.params.n_neurons, log.horizon
    pi1_hat = den / (n * t)
    if r is None:
        r = pilot_occupancy_threshold(log, a, h, Q, tol=tol)
    if pi1_hat > 0 and f_hat > 0:
        z = norm.ppf(0.5 + level / 2.0)
        ci = float(z * math.sqrt(f_hat * Q.norm_l2sq / (n * pi1_hat * t * h)))
    else:
        ci = math.inf
    return EstimateReport(a=a, h=h, t=t, numerator=num, denominator=den,
                          f_hat=f_hat, pi1_hat=pi1_hat, r=r,
                          a_tr_satisfied=bool(pi1_hat >= r),
                          ci_halfwidth=ci, level=level)
