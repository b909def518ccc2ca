"""Exact inter-jump dynamics and quadrature along the flow.

Between jumps every potential follows x(t) = e^{-lam t} x0 + (1 - e^{-lam t}) m,
the closed-form relaxation toward the equilibrium m.  Occupation-time
integrals of a function g along this flow are computed by composite 16-node
Gauss-Legendre quadrature in the *time* variable; a change of variables to
the space variable would introduce a 1/|lam (z - m)| singularity at z = m
and is deliberately avoided.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams, NetworkState

__all__ = [
    "FlowError",
    "EvaluationError",
    "FlowSegment",
    "flow_map",
    "flow_inverse",
    "segment_integral",
    "support_window",
    "integrate_along_flow",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_MAX_PANELS = 2 ** 14


class FlowError(ValueError):
    """Argument outside the reachable range of the flow."""


class EvaluationError(ValueError):
    """Integrand returned non-finite values."""


@dataclass(frozen=True)
class FlowSegment:
    """A piece of deterministic trajectory: start state evolved for ``duration``."""

    start_state: NetworkState
    duration: float

    def __post_init__(self):
        if self.duration < 0:
            raise FlowError("duration must be >= 0")


def flow_map(x, dt, params: ModelParams):
    """Position after relaxing from ``x`` toward m for time ``dt``."""
    e = np.exp(-params.lam * np.asarray(dt, dtype=float))
    out = params.m + (np.asarray(x, dtype=float) - params.m) * e
    if out.ndim == 0:
        return float(out)
    return out


def flow_inverse(y: float, z: float, params: ModelParams) -> float:
    """Time at which the flow started at ``y`` reaches ``z``.

    Requires z strictly between y and m (the flow never crosses m).
    """
    uy = y - params.m
    uz = z - params.m
    if uy == 0.0 or uz == 0.0 or (uy > 0) != (uz > 0) or abs(uz) > abs(uy):
        raise FlowError(f"target {z} is not on the flow path from {y} toward m")
    return float(np.log(uy / uz) / params.lam)


def support_window(x0, durations, lo: float, hi: float, params: ModelParams):
    """Time windows during which flows started at ``x0`` lie inside [lo, hi].

    Vectorized over (x0, durations).  Returns (t_enter, t_exit) clipped to
    [0, duration]; empty windows come back with t_exit <= t_enter.
    """
    x0 = np.asarray(x0, dtype=float)
    d = np.asarray(durations, dtype=float)
    m, lam = params.m, params.lam
    u = x0 - m
    with np.errstate(divide="ignore", invalid="ignore"):
        # position(t) = m + u * v with v = e^{-lam t} in (0, 1]
        a = np.where(u > 0, lo - m, hi - m) / u  # lower bound on v
        b = np.where(u > 0, hi - m, lo - m) / u  # upper bound on v
        t_enter = np.where(b >= 1.0, 0.0, -np.log(np.clip(b, 1e-300, None)) / lam)
        t_exit = np.where(a <= 0.0, np.inf, -np.log(np.clip(a, 1e-300, None)) / lam)
    empty = (b <= 0.0) | (a >= 1.0)
    at_m = u == 0.0
    m_inside = bool(lo <= m <= hi)
    t_enter = np.where(at_m, 0.0, t_enter)
    t_exit = np.where(at_m, np.inf if m_inside else 0.0, t_exit)
    empty = np.where(at_m, not m_inside, empty)
    t_enter = np.clip(t_enter, 0.0, d)
    t_exit = np.where(empty, t_enter, np.minimum(t_exit, d))
    return t_enter, t_exit


def integrate_along_flow(x0, t0, t1, g, params: ModelParams, tol: float = 1e-9,
                         check_finite: bool = False):
    """Per-path integrals of g along the flow: int_{t0}^{t1} g(flow(x0, u)) du.

    Vectorized over paths.  Composite Gauss-Legendre panels are doubled
    until the summed change over all paths is <= tol (hard cap 2^14 panels).
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    t0 = np.broadcast_to(np.asarray(t0, dtype=float), x0.shape).astype(float)
    t1 = np.broadcast_to(np.asarray(t1, dtype=float), x0.shape).astype(float)
    if tol <= 0:
        raise FlowError("tol must be > 0")
    n = x0.size
    if n == 0:
        return np.zeros(0)
    out = np.empty(n)
    # chunk so nodes arrays stay bounded in memory
    chunk = max(1, int(4e6) // 64)
    for i0 in range(0, n, chunk):
        sl = slice(i0, min(i0 + chunk, n))
        out[sl] = _integrate_chunk(x0[sl], t0[sl], t1[sl], g, params,
                                   tol * (sl.stop - sl.start) / n, check_finite)
    return out


def _integrate_chunk(x0, t0, t1, g, params, tol, check_finite):
    span = t1 - t0
    live = span > 0
    result = np.zeros(x0.size)
    if not np.any(live):
        return result
    x0, t0, span = x0[live], t0[live], span[live]
    prev = None
    panels = 1
    while True:
        # panel edges: t0 + span * j/panels, GL nodes mapped inside each
        offs = (np.arange(panels)[:, None] + (_GL_NODES[None, :] + 1.0) / 2.0) / panels
        times = t0[:, None, None] + span[:, None, None] * offs[None, :, :]
        pos = flow_map(x0[:, None, None], times, params)
        vals = g(pos)
        if check_finite and not np.all(np.isfinite(vals)):
            raise EvaluationError("integrand returned non-finite values")
        cur = (vals @ _GL_WEIGHTS).sum(axis=1) * span / (2.0 * panels)
        if prev is not None:
            if float(np.abs(cur - prev).sum()) <= tol or panels >= _MAX_PANELS:
                break
        prev = cur
        panels *= 2
    result[live] = cur
    return result


def segment_integral(g, seg: FlowSegment, neuron: int, params: ModelParams,
                     tol: float = 1e-9) -> float:
    """Integral of g along one neuron's flow over a segment.

    If ``g`` declares a compact support via a ``support`` attribute
    (lo, hi), quadrature is restricted to the time window during which the
    flow lies inside it.
    """
    x = float(seg.start_state.potentials[neuron])
    t0, t1 = 0.0, float(seg.duration)
    support = getattr(g, "support", None)
    if support is not None:
        lo, hi = support
        te, tx = support_window(np.array([x]), np.array([t1]), lo, hi, params)
        t0, t1 = float(te[0]), float(tx[0])
        if t1 <= t0:
            return 0.0
    return float(integrate_along_flow([x], [t0], [t1], g, params, tol,
                                      check_finite=True)[0])
