"""Log-likelihood ratios between rate functions on an observed event log.

For rates f1, f0 driving the same observed network trajectory,

    log L = sum_jumps [log f1(Z) - log f0(Z)]
          - sum_i int_0^t (f1 - f0)(X_s^i) ds,

the change-of-measure density of the f1-law with respect to the f0-law.
The module also builds the localized rate perturbations
f_t = f0 + b h^{beta+1} chi_h(. - a) whose likelihood ratios stay bounded
at the rate-optimal bandwidth h = t^{-1/(2 beta + 1)}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .model import ModelError, RateFunction, holder_audit
from .flow import integrate_along_flow, support_window
from .simulator import EventLog
from .estimator import default_bandwidth

__all__ = [
    "SingularityError",
    "AmplitudeError",
    "PerturbationSpec",
    "perturb",
    "log_likelihood_ratio",
]


class SingularityError(ValueError):
    """A jump sits where the denominator rate vanishes but the numerator
    rate does not: the two laws are not mutually absolutely continuous on
    this log."""


class AmplitudeError(ValueError):
    """Perturbation amplitude pushes the rate out of its smoothness class."""


@dataclass(frozen=True)
class PerturbationSpec:
    """Localized bump on top of a base rate.

    The perturbed rate is f0 + b h^{beta+1} chi_h(x - a) with
    chi(u) = (1 - u^2)^2 on [-1, 1] and h = t^{-1/(2 beta + 1)}, so the
    peak displacement is exactly b h^beta at x = a and the support is
    [a - h, a + h].
    """

    f0: RateFunction
    a: float
    b: float
    t: float

    def __post_init__(self):
        if not self.b > 0:
            raise ModelError("amplitude b must be > 0")
        if not self.t > 0:
            raise ModelError("horizon t must be > 0")

    @property
    def h(self) -> float:
        return default_bandwidth(self.t, self.f0.holder.beta)

    @property
    def support(self):
        return (self.a - self.h, self.a + self.h)

    @property
    def peak(self) -> float:
        """Displacement at the center: f_t(a) - f0(a) = b h^beta."""
        return self.b * self.h ** self.f0.holder.beta


def perturb(spec: PerturbationSpec, k_max: float = None,
            audit: bool = True) -> RateFunction:
    """Rate with the bump applied, gated on a smoothness-class audit."""
    f0 = spec.f0
    if f0.bump is not None:
        raise ModelError("base rate already carries a bump")
    f_t = replace(f0, name=f"{f0.name}+bump(b={spec.b:g},a={spec.a:g})",
                  bump=(spec.peak, spec.a, spec.h))
    if audit:
        if k_max is None:
            raise ModelError("k_max required for the smoothness audit")
        report = holder_audit(f_t, k_max)
        if not report.passed:
            raise AmplitudeError(
                f"perturbed rate leaves its smoothness class "
                f"{report.failures()}; reduce the amplitude b={spec.b:g}")
    return f_t


def _jump_term(y: np.ndarray, f1: RateFunction, f0: RateFunction) -> float:
    v0 = np.atleast_1d(np.asarray(f0(y), dtype=float))
    v1 = np.atleast_1d(np.asarray(f1(y), dtype=float))
    if np.any((v0 <= 0) & (v1 > 0)):
        raise SingularityError(
            "jump observed where the reference rate vanishes")
    if np.any((v1 <= 0) & (v0 > 0)):
        raise SingularityError(
            "jump observed where the alternative rate vanishes")
    both = (v0 > 0) & (v1 > 0)
    return float(np.sum(np.log(v1[both])) - np.sum(np.log(v0[both])))


def _occupation_term(log: EventLog, f1: RateFunction, f0: RateFunction,
                     tol: float) -> float:
    """sum_i int (f1 - f0)(X_s^i) ds, restricted to the bump support when
    the two rates differ only by a bump."""
    seg_t, starts, durs = log.segments()
    n = log.params.n_neurons
    x = starts.ravel()
    d = np.repeat(durs, n)
    diff_is_bump = (f1.family == f0.family and f1.scale == f0.scale
                    and f1.table_x is f0.table_x and (f1.bump is None)
                    != (f0.bump is None))
    if diff_is_bump:
        bump = f1.bump if f1.bump is not None else f0.bump
        _, center, width = bump
        t0, t1 = support_window(x, d, center - width, center + width,
                                log.params)
        keep = t1 > t0
        x, t0, t1 = x[keep], t0[keep], t1[keep]
    else:
        t0, t1 = np.zeros_like(d), d
    if x.size == 0:
        return 0.0
    vals = integrate_along_flow(x, t0, t1, lambda p: f1(p) - f0(p),
                                log.params, tol)
    return float(vals.sum())


def log_likelihood_ratio(log: EventLog, f1: RateFunction, f0: RateFunction,
                         tol: float = 1e-9) -> float:
    """log dP_{f1}/dP_{f0} evaluated on the observed trajectory."""
    if not tol > 0:
        raise ModelError("tol must be > 0")
    jump = _jump_term(log.spike_potentials(), f1, f0) if log.n_jumps else 0.0
    occ = _occupation_term(log, f1, f0, tol)
    return jump - occ
