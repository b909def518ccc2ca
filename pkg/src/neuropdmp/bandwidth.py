"""Smoothed cross-validation bandwidth selection on the jump chain.

The selector estimates the L^2 risk of the jump-chain kernel density built
from one stretch of the chain, scored against an earlier, well-separated
stretch, and returns the grid bandwidth minimizing that score.  For
polynomial kernels the density is evaluated in O(log n) per query point via
sorted samples and prefix sums of coordinate powers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb

from .model import ModelError
from .estimator import Kernel
from .simulator import EventLog

__all__ = [
    "ScvError",
    "ScvConfig",
    "default_grid",
    "default_config",
    "jump_chain_density",
    "JumpChainDensity",
    "scv_score",
    "scv_select",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_MAX_PANELS = 2 ** 12


class ScvError(ValueError):
    """Invalid cross-validation configuration."""


def default_grid(t: float, count: int = 32) -> np.ndarray:
    """Log-spaced candidates spanning [t^{-1/2}, t^{-1/8}].

    Wide enough to bracket the rate-optimal t^{-1/(2 beta + 1)} for every
    smoothness level of practical interest.
    """
    if not t > 1.0:
        raise ScvError("need t > 1 for a meaningful bandwidth range")
    return np.geomspace(t ** -0.5, t ** -0.125, count)


@dataclass(frozen=True)
class ScvConfig:
    """Split indices over the jump chain plus the candidate grid.

    The chain is cut at 1 <= m1 < m2 <= ell <= n: the density is built from
    jumps ell+1..n and scored on jumps m1+1..m2, keeping the two stretches
    well separated.
    """

    m1: int
    m2: int
    ell: int
    n: int
    grid: np.ndarray
    tol: float = 1e-7

    def __post_init__(self):
        if not 1 <= self.m1 < self.m2 <= self.ell <= self.n:
            raise ScvError("need 1 <= m1 < m2 <= ell <= n")
        g = np.asarray(self.grid, dtype=float)
        if g.size == 0 or np.any(g <= 0):
            raise ScvError("grid must be nonempty with positive bandwidths")
        if not self.tol > 0:
            raise ScvError("tol must be > 0")
        object.__setattr__(self, "grid", g)


def default_config(log: EventLog, count: int = 32) -> ScvConfig:
    """Splits at 0.2/0.4/0.6 of the chain and the default grid."""
    n = log.n_jumps
    if n < 5:
        raise ScvError("need at least 5 jumps for cross-validation splits")
    return ScvConfig(m1=math.ceil(0.2 * n), m2=math.ceil(0.4 * n),
                     ell=math.ceil(0.6 * n), n=n,
                     grid=default_grid(log.horizon, count))


class JumpChainDensity:
    """Evaluatable kernel density of jump-chain coordinates.

    Averages Q_h over every coordinate of the pre-jump state vectors
    Z_{ell+1}, ..., Z_n; integrates to 1 by construction.  Polynomial
    kernels take a prefix-sum fast path; other kernels fall back to a
    windowed direct sum.
    """

    def __init__(self, samples: np.ndarray, h: float, Q: Kernel):
        if not h > 0:
            raise ScvError("h must be > 0")
        self.h = float(h)
        self.Q = Q
        self.z = np.sort(np.asarray(samples, dtype=float).ravel())
        if self.z.size == 0:
            raise ScvError("no samples")
        self._coeffs = None
        if Q.poly is not None:
            # Q_h(y) = sum_p coeffs[p] y^p on |y| <= hR
            c = 1.0 / (self.h * Q.R)
            self._coeffs = np.asarray(Q.poly, dtype=float) * c ** (
                np.arange(len(Q.poly)) + 1)

    def _fast_eval(self, a):
        """Windowed kernel sums via recentred prefix sums of sample powers.

        Queries are grouped into position bins of width 2hR; within a bin
        every power sum is taken of (z - center), keeping the binomial
        expansion of (z - a)^p free of catastrophic cancellation.
        """
        half = self.h * self.Q.R
        coeffs = self._coeffs
        deg = len(coeffs) - 1
        w = 2.0 * half
        bins = np.floor(a / w).astype(np.int64)
        out = np.empty(a.shape)
        order = np.argsort(bins, kind="stable")
        binom = [[comb(p, q, exact=True) for q in range(p + 1)]
                 for p in range(deg + 1)]
        start = 0
        while start < a.size:
            b = bins[order[start]]
            stop = start + np.searchsorted(bins[order[start:]], b, side="right")
            idx = order[start:stop]
            aq = a[idx]
            center = (b + 0.5) * w
            zl = np.searchsorted(self.z, b * w - half, side="left")
            zr = np.searchsorted(self.z, (b + 1) * w + half, side="right")
            zc = self.z[zl:zr] - center
            pows = zc[None, :] ** np.arange(deg + 1)[:, None]
            prefix = np.concatenate([np.zeros((deg + 1, 1)),
                                     np.cumsum(pows, axis=1)], axis=1)
            lo = np.searchsorted(zc, aq - center - half, side="left")
            hi = np.searchsorted(zc, aq - center + half, side="right")
            ds = prefix[:, hi] - prefix[:, lo]
            ac = aq - center
            acc = np.zeros(aq.shape)
            for p in range(deg + 1):
                if coeffs[p] == 0.0:
                    continue
                term = np.zeros(aq.shape)
                for q in range(p + 1):
                    term += binom[p][q] * (-ac) ** (p - q) * ds[q]
                acc += coeffs[p] * term
            out[idx] = acc
            start = stop
        return out

    def __call__(self, a):
        a = np.atleast_1d(np.asarray(a, dtype=float))
        if self._coeffs is not None:
            out = self._fast_eval(a)
        else:
            half = self.h * self.Q.R
            lo = np.searchsorted(self.z, a - half, side="left")
            hi = np.searchsorted(self.z, a + half, side="right")
            out = np.array([float(np.sum(self.Q.qh(self.z[l:r] - ai, self.h)))
                            for ai, l, r in zip(a, lo, hi)])
        return out / self.z.size

    def integral(self, lo: float, hi: float, tol: float = 1e-7) -> float:
        """int over [lo, hi] of the squared density, by adaptive quadrature."""
        panels = max(8, min(_MAX_PANELS, int(math.ceil(
            (hi - lo) / (self.h * self.Q.R)))))
        prev = None
        while True:
            edges = np.linspace(lo, hi, panels + 1)
            half_w = (hi - lo) / (2.0 * panels)
            pts = (edges[:-1, None] + half_w * (_GL_NODES[None, :] + 1.0)).ravel()
            vals = self(pts) ** 2
            cur = float((vals.reshape(panels, -1) @ _GL_WEIGHTS).sum() * half_w)
            if prev is not None and (abs(cur - prev) <= tol
                                     or panels >= _MAX_PANELS):
                return cur
            prev = cur
            panels = min(panels * 2, _MAX_PANELS)


def jump_chain_density(log: EventLog, ell: int, n: int, h: float,
                       Q: Kernel) -> JumpChainDensity:
    """Kernel density of the coordinates of pre-jump states ell+1..n."""
    if not 0 <= ell < n <= log.n_jumps:
        raise ScvError(f"need 0 <= ell < n <= {log.n_jumps}")
    return JumpChainDensity(log.pre_states[ell:n], h, Q)


def scv_score(log: EventLog, cfg: ScvConfig, h: float, Q: Kernel) -> float:
    """Estimated L^2 risk of the bandwidth-h jump-chain density."""
    if cfg.n > log.n_jumps:
        raise ScvError(f"config expects {cfg.n} jumps, log has {log.n_jumps}")
    dens = jump_chain_density(log, cfg.ell, cfg.n, h, Q)
    term1 = dens.integral(0.0, log.params.k_max, cfg.tol)
    probe = log.pre_states[cfg.m1:cfg.m2].ravel()
    term2 = 2.0 * float(dens(probe).sum()) / probe.size
    return term1 - term2


def scv_select(log: EventLog, cfg: ScvConfig, Q: Kernel):
    """Grid minimizer of the cross-validation score (ties -> smallest h).

    Returns (h_hat, curve) where curve is an (len(grid), 2) array of
    (h, score) rows.
    """
    scores = np.array([scv_score(log, cfg, h, Q) for h in cfg.grid])
    if not np.all(np.isfinite(scores)):
        raise ScvError("non-finite cross-validation score")
    best = int(np.argmin(scores))  # argmin takes the first, i.e. smallest h
    return float(cfg.grid[best]), np.column_stack([cfg.grid, scores])
