"""Monte Carlo harnesses turning the model's limit theorems into
desk-scale empirical checks.

Every study consumes a StudyConfig and returns a StudyResult holding an
analysis-ready table plus a JSON-able summary (fitted slopes, p-values,
discard rates).  All randomness flows from the config's master seed through
deterministic stream offsets, so results are bit-for-bit reproducible.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .model import ModelError, ModelParams, RateFunction, rate_bar
from .flow import flow_map
from .simulator import EventLog, SimConfig, simulate, state_at
from .estimator import (Kernel, default_bandwidth, denominator, estimate_at,
                        kernel_for_beta, region_check)
from .bandwidth import ScvConfig, default_grid, scv_select
from .likelihood import PerturbationSpec, log_likelihood_ratio, perturb

__all__ = [
    "StudyError",
    "StudyConfig",
    "StudyResult",
    "rate_study",
    "clt_study",
    "ergodic_study",
    "exchange_study",
    "jump_chain_study",
    "invariant_density_study",
    "likelihood_study",
    "scv_study",
    "run_study",
    "STUDY_KINDS",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


class StudyError(ValueError):
    """Invalid study configuration."""


@dataclass(frozen=True)
class StudyConfig:
    """Declarative description of one Monte Carlo study.

    ``kind`` selects the harness; unused fields are ignored by kinds that
    do not need them.  ``points`` must lie in the admissible estimation
    region for (beta, d) when the kind estimates the rate pointwise.
    """

    kind: str
    params: ModelParams
    rate: RateFunction
    horizons: tuple = (100.0,)
    replications: int = 1
    points: tuple = ()
    d: float = None
    seed: int = 0
    threads: int = 1
    kernel: Kernel = None
    bandwidth_exponent: float = None  # clt: h = t^-exponent
    times: tuple = ()                 # ergodic: comparison time grid
    bins: int = 64                    # ergodic: histogram resolution
    test_powers: tuple = (1, 2)       # jumpchain: monomials of coordinate 0
    blocks: int = 20                  # jumpchain: batch-means blocks
    grid_size: int = 201              # density: evaluation grid on [0, K]
    amplitude: float = 0.1            # likelihood: bump amplitude b
    scv_grid: tuple = None            # scv: explicit bandwidth grid

    def __post_init__(self):
        if self.kind not in STUDY_KINDS:
            raise StudyError(f"unknown study kind {self.kind!r}; "
                             f"expected one of {sorted(STUDY_KINDS)}")
        if self.replications < 1:
            raise StudyError("replications must be >= 1")
        if len(self.horizons) == 0 or any(t <= 0 for t in self.horizons):
            raise StudyError("horizons must be positive")
        beta = self.rate.holder.beta
        d = self.d if self.d is not None else (
            math.floor(beta) + 2.5) / self.params.n_neurons
        object.__setattr__(self, "d", d)
        if self.kind in ("rate", "clt", "scv"):
            if not self.points:
                raise StudyError(f"{self.kind} study needs evaluation points")
            for a in self.points:
                if not region_check(a, self.params, self.rate.holder, d):
                    raise StudyError(
                        f"evaluation point {a} outside the admissible region")
        if self.kernel is None:
            object.__setattr__(self, "kernel", kernel_for_beta(beta))

    @property
    def beta(self) -> float:
        return self.rate.holder.beta


@dataclass
class StudyResult:
    kind: str
    columns: tuple
    rows: list
    summary: dict

    def csv(self) -> str:
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(repr(row[c]) if isinstance(row[c], float)
                                  else str(row[c]) for c in self.columns))
        return "\n".join(lines) + "\n"

    def write(self, path_base):
        import pathlib
        base = pathlib.Path(path_base)
        base.with_suffix(".csv").write_text(self.csv())
        base.with_suffix(".json").write_text(
            json.dumps({"kind": self.kind, "summary": self.summary},
                       indent=2, sort_keys=True) + "\n")


def _map(fn, jobs, threads):
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _fit_line(x, y):
    """Least-squares slope/intercept with R^2."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


# ---------------------------------------------------------------- rate study

def _rate_rep(job):
    cfg, t, h, a, stream = job
    log = simulate(cfg.params, cfg.rate, SimConfig(horizon=t, seed=cfg.seed,
                                                   stream=stream))
    rep = estimate_at(log, a, h, cfg.kernel)
    return rep.f_hat, rep.a_tr_satisfied


def rate_study(cfg: StudyConfig) -> StudyResult:
    """RMSE of the rate estimate across horizons, conditioned on the
    occupancy event, with a fitted log-log convergence slope."""
    a = cfg.points[0]
    truth = cfg.rate(a)
    rows = []
    for ti, t in enumerate(cfg.horizons):
        h = default_bandwidth(t, cfg.beta)
        jobs = [(cfg, t, h, a, (ti << 20) + rep)
                for rep in range(cfg.replications)]
        out = _map(_rate_rep, jobs, cfg.threads)
        kept = np.array([fh for fh, ok in out if ok])
        discarded = cfg.replications - kept.size
        if kept.size:
            se = (kept - truth) ** 2
            rmse = float(np.sqrt(se.mean()))
            rmse_se = float(np.sqrt(se.std(ddof=1) / se.size) /
                            (2 * rmse)) if se.size > 1 and rmse > 0 else 0.0
        else:
            rmse, rmse_se = math.nan, math.nan
        rows.append({"t": float(t), "h": h, "rmse": rmse, "rmse_se": rmse_se,
                     "kept": int(kept.size), "discarded": int(discarded)})
    usable = [r for r in rows if r["kept"] > 0]
    summary = {"a": a, "truth": truth,
               "discard_rate": float(sum(r["discarded"] for r in rows)
                                     / (len(rows) * cfg.replications))}
    if len(usable) >= 2:
        slope, intercept, r2 = _fit_line(
            np.log([r["t"] for r in usable]),
            np.log([r["rmse"] for r in usable]))
        summary.update(slope=slope, intercept=intercept, r2=r2)
    else:
        summary.update(slope=None, note="slope unavailable (<2 horizons)")
    return StudyResult("rate", ("t", "h", "rmse", "rmse_se", "kept",
                                "discarded"), rows, summary)


# ----------------------------------------------------------------- clt study

def _clt_rep(job):
    cfg, t, h, a, stream = job
    log = simulate(cfg.params, cfg.rate, SimConfig(horizon=t, seed=cfg.seed,
                                                   stream=stream))
    rep = estimate_at(log, a, h, cfg.kernel, r=0.0)
    return rep.f_hat, rep.pi1_hat


def clt_study(cfg: StudyConfig) -> StudyResult:
    """Standardized estimation errors against the normal limit.

    Uses the plug-in variance f_hat * int(Q^2) / (N * pi1_hat * t * h) and
    an undersmoothed bandwidth t^-exponent with exponent > 1/(2 beta + 1).
    """
    expo = cfg.bandwidth_exponent
    if expo is None:
        expo = 0.45
    if not expo > 1.0 / (2.0 * cfg.beta + 1.0):
        raise StudyError("clt bandwidth exponent must exceed 1/(2 beta + 1)")
    a = cfg.points[0]
    t = float(cfg.horizons[0])
    h = t ** (-expo)
    truth = cfg.rate(a)
    n = cfg.params.n_neurons
    out = _map(_clt_rep, [(cfg, t, h, a, rep)
                          for rep in range(cfg.replications)], cfg.threads)
    zs, dropped = [], 0
    for f_hat, pi1 in out:
        if pi1 <= 0 or f_hat <= 0:
            dropped += 1
            continue
        sd = math.sqrt(f_hat * cfg.kernel.norm_l2sq / (n * pi1 * t * h))
        zs.append((f_hat - truth) / sd)
    zs = np.sort(np.array(zs))
    ks = stats.kstest(zs, "norm")
    rows = [{"z": float(v)} for v in zs]
    summary = {"a": a, "t": t, "h": h, "dropped": dropped,
               "ks_stat": float(ks.statistic), "ks_pvalue": float(ks.pvalue),
               "mean": float(zs.mean()), "std": float(zs.std(ddof=1))}
    return StudyResult("clt", ("z",), rows, summary)


# ------------------------------------------------------------- ergodic study

def _ergodic_rep(job):
    cfg, x0, times, stream = job
    log = simulate(cfg.params, cfg.rate,
                   SimConfig(horizon=times[-1], seed=cfg.seed, stream=stream,
                             x0=x0))
    return np.array([state_at(log, t).potentials for t in times])


def ergodic_study(cfg: StudyConfig) -> StudyResult:
    """Total-variation proxy between two extreme starts over time.

    The proxy is half the L1 distance between 64-bin histograms of the
    pooled single-neuron marginals, one histogram per start, matched
    replication budgets.  A geometric decay C * kappa^-t is fitted on the
    stretch above the Monte Carlo noise floor.
    """
    n = cfg.params.n_neurons
    k = cfg.params.k_max
    times = np.asarray(cfg.times if len(cfg.times) else
                       np.arange(2.0, 21.0, 2.0), dtype=float)
    starts = [np.zeros(n), np.full(n, k)]
    pooled = []
    for si, x0 in enumerate(starts):
        jobs = [(cfg, x0, times, (si << 24) + rep)
                for rep in range(cfg.replications)]
        out = _map(_ergodic_rep, jobs, cfg.threads)
        pooled.append(np.stack(out))  # (reps, times, neurons)
    degenerate = cfg.bins < 2
    n_samp = cfg.replications * n
    rows = []
    for j, t in enumerate(times):
        p, _ = np.histogram(pooled[0][:, j, :], bins=cfg.bins, range=(0, k))
        q, _ = np.histogram(pooled[1][:, j, :], bins=cfg.bins, range=(0, k))
        tv = 0.5 * float(np.abs(p / n_samp - q / n_samp).sum())
        rows.append({"t": float(t), "tv": tv})
    # expected TV between two histograms of identical laws (noise floor)
    floor = math.sqrt(cfg.bins / (math.pi * n_samp))
    fit_rows = [r for r in rows if r["tv"] > 2.0 * floor]
    summary = {"bins": cfg.bins, "noise_floor": floor,
               "degenerate": bool(degenerate),
               "final_tv": rows[-1]["tv"]}
    if len(fit_rows) >= 3 and not degenerate:
        slope, intercept, r2 = _fit_line([r["t"] for r in fit_rows],
                                         [math.log(r["tv"]) for r in fit_rows])
        summary.update(kappa=math.exp(-slope), log_fit_r2=r2,
                       fit_points=len(fit_rows))
    else:
        summary.update(kappa=None, log_fit_r2=None, fit_points=len(fit_rows))
    return StudyResult("ergodic", ("t", "tv"), rows, summary)


# ------------------------------------------------------------ exchange study

def exchange_study(cfg: StudyConfig) -> StudyResult:
    """Chi-squared uniformity check of spike counts across neurons.

    By exchangeability of the network, long-run per-neuron spike counts are
    exchangeable; a goodness-of-fit statistic against the uniform split
    diagnoses index-asymmetry bugs.
    """
    t = float(cfg.horizons[0])
    n = cfg.params.n_neurons
    counts = np.zeros(n)
    for rep in range(cfg.replications):
        log = simulate(cfg.params, cfg.rate,
                       SimConfig(horizon=t, seed=cfg.seed, stream=rep))
        counts += np.bincount(log.indices, minlength=n)
    total = counts.sum()
    chi2 = float(((counts - total / n) ** 2 / (total / n)).sum())
    pval = float(stats.chi2.sf(chi2, df=n - 1))
    rows = [{"neuron": int(i), "count": int(c)} for i, c in enumerate(counts)]
    summary = {"chi2": chi2, "pvalue": pval, "total": int(total)}
    return StudyResult("exchange", ("neuron", "count"), rows, summary)


# ---------------------------------------------------------- jump-chain study

def _integrate_states(starts, durs, fn, params, tol=1e-9):
    """sum over segments of int_0^dur fn(state(s)) ds for a vector-state
    integrand fn: (segments, nodes, neurons) -> (segments, nodes)."""
    prev = None
    panels = 1
    while True:
        offs = (np.arange(panels)[:, None]
                + (_GL_NODES[None, :] + 1.0) / 2.0).ravel() / panels
        times = durs[:, None] * offs[None, :]
        pos = flow_map(starts[:, None, :], times[..., None], params)
        vals = fn(pos).reshape(durs.size, panels, 16)
        cur = float(((vals @ _GL_WEIGHTS).sum(axis=1) * durs / (2 * panels))
                    .sum())
        if prev is not None and (abs(cur - prev) <= tol or panels >= 2 ** 12):
            return cur
        prev = cur
        panels *= 2


def jump_chain_study(cfg: StudyConfig) -> StudyResult:
    """Jump-chain averages versus rate-weighted time averages.

    For each test function g (monomials of the first coordinate) compares
    the average of g over pre-jump states with the occupation-time estimate
    of int(rbar * g) / int(rbar), with batch-means standard errors.
    """
    t = float(cfg.horizons[0])
    log = simulate(cfg.params, cfg.rate, SimConfig(horizon=t, seed=cfg.seed))
    if log.n_jumps < cfg.blocks * 2:
        raise StudyError("trajectory too short for batch means")
    seg_t, starts, durs = log.segments()
    f = cfg.rate
    edges = np.linspace(0.0, t, cfg.blocks + 1)
    seg_block = np.clip(np.searchsorted(edges, seg_t, side="right") - 1,
                        0, cfg.blocks - 1)
    jump_block = np.clip(np.searchsorted(edges, log.times, side="right") - 1,
                         0, cfg.blocks - 1)
    rows = []
    for p in cfg.test_powers:
        def g_weighted(pos, _p=p):
            return f(pos).sum(axis=-1) * pos[..., 0] ** _p
        chain_vals = log.pre_states[:, 0] ** p
        block_gaps = []
        for b in range(cfg.blocks):
            sb = seg_block == b
            num = _integrate_states(starts[sb], durs[sb], g_weighted,
                                    log.params)
            den = _integrate_states(starts[sb], durs[sb],
                                    lambda pos: f(pos).sum(axis=-1),
                                    log.params)
            cb = chain_vals[jump_block == b]
            if cb.size == 0 or den <= 0:
                continue
            block_gaps.append(float(cb.mean()) - num / den)
        block_gaps = np.array(block_gaps)
        gap = float(block_gaps.mean())
        se = float(block_gaps.std(ddof=1) / math.sqrt(block_gaps.size))
        chain_avg = float(chain_vals.mean())
        rows.append({"power": int(p), "chain_avg": chain_avg,
                     "weighted_avg": chain_avg - gap, "gap": gap,
                     "se": se, "within_3se": bool(abs(gap) <= 3 * se)})
    summary = {"t": t, "n_jumps": int(log.n_jumps), "blocks": cfg.blocks,
               "all_within_3se": bool(all(r["within_3se"] for r in rows))}
    return StudyResult("jumpchain",
                       ("power", "chain_avg", "weighted_avg", "gap", "se",
                        "within_3se"), rows, summary)


# ----------------------------------------------------- invariant density study

def invariant_density_study(cfg: StudyConfig) -> StudyResult:
    """Occupation-time estimate of the single-neuron invariant density.

    Emits the density on a grid over [0, K] (extended by one kernel width so
    the total mass check is exact up to quadrature), verifies strict
    positivity on the admissible region, and probes the boundary layer of
    elevated density just above 0 left by freshly reset neurons.
    """
    t = float(cfg.horizons[0])
    log = simulate(cfg.params, cfg.rate, SimConfig(horizon=t, seed=cfg.seed))
    params, Q = cfg.params, cfg.kernel
    n, k = params.n_neurons, params.k_max
    h = default_bandwidth(t, cfg.beta)
    pad = h * Q.R
    grid = np.linspace(-pad, k + pad, cfg.grid_size)
    dens = np.array([denominator(log, a, h, Q, tol=1e-7) for a in grid])
    dens /= n * t
    mass = float(np.trapezoid(dens, grid))
    region_pts = [(a, d) for a, d in zip(grid, dens)
                  if region_check(a, params, cfg.rate.holder, cfg.d)]
    positive = bool(region_pts) and all(d > 0 for _, d in region_pts)
    # boundary layer: freshly reset neurons pile up within ~1/(N f(K)) of 0
    h0 = 0.2 / n
    a_ref = min(5.0 / n, params.m / 2.0)
    near = denominator(log, h0, h0, Q, tol=1e-7) / (n * t)
    ref = denominator(log, a_ref, h0, Q, tol=1e-7) / (n * t)
    layer_ratio = near / ref if ref > 0 else math.inf
    rows = [{"a": float(a), "pi1_hat": float(d)} for a, d in zip(grid, dens)]
    summary = {"t": t, "h": h, "mass": mass,
               "mass_ok": bool(abs(mass - 1.0) <= 0.02),
               "region_positive": positive,
               "region_points": len(region_pts),
               "near_zero_density": float(near),
               "reference_density": float(ref),
               "layer_ratio": float(layer_ratio),
               "near_zero_concentration": bool(layer_ratio >= 1.3)}
    return StudyResult("density", ("a", "pi1_hat"), rows, summary)


# ----------------------------------------------------------- likelihood study

def _likelihood_rep(job):
    cfg, f_t, t, stream = job
    log = simulate(cfg.params, cfg.rate,
                   SimConfig(horizon=t, seed=cfg.seed, stream=stream))
    return log_likelihood_ratio(log, f_t, cfg.rate, tol=1e-8)


def likelihood_study(cfg: StudyConfig) -> StudyResult:
    """Change-of-measure diagnostics for the localized rate perturbation.

    Checks E[exp(log L)] = 1 under the base rate at the first horizon and
    tracks E|log L| across horizons (it should stay bounded when the bump
    height is tied to the rate-optimal bandwidth of each horizon).
    """
    a = cfg.points[0] if cfg.points else cfg.params.m / 2.0
    rows = []
    mart = None
    for ti, t in enumerate(cfg.horizons):
        spec = PerturbationSpec(f0=cfg.rate, a=a, b=cfg.amplitude, t=t)
        f_t = perturb(spec, k_max=cfg.params.k_max)
        jobs = [(cfg, f_t, float(t), (ti << 20) + rep)
                for rep in range(cfg.replications)]
        llrs = np.array(_map(_likelihood_rep, jobs, cfg.threads))
        row = {"t": float(t), "h": spec.h,
               "mean_abs_llr": float(np.abs(llrs).mean()),
               "se_abs_llr": float(np.abs(llrs).std(ddof=1)
                                   / math.sqrt(llrs.size))}
        if ti == 0:
            w = np.exp(llrs)
            mart = {"mean_exp_llr": float(w.mean()),
                    "se_exp_llr": float(w.std(ddof=1) / math.sqrt(w.size))}
        rows.append(row)
    summary = {"a": a, "b": cfg.amplitude, **mart,
               "martingale_ok": bool(abs(mart["mean_exp_llr"] - 1.0)
                                     <= 3.0 * mart["se_exp_llr"]),
               "abs_llr_by_t": {str(r["t"]): r["mean_abs_llr"]
                                for r in rows}}
    return StudyResult("likelihood",
                       ("t", "h", "mean_abs_llr", "se_abs_llr"), rows, summary)


# ------------------------------------------------------------------ scv study

def _scv_rep(job):
    cfg, t, a, h_oracle, grid, stream = job
    log = simulate(cfg.params, cfg.rate,
                   SimConfig(horizon=t, seed=cfg.seed, stream=stream))
    n = log.n_jumps
    scv_cfg = ScvConfig(m1=math.ceil(0.2 * n), m2=math.ceil(0.4 * n),
                        ell=math.ceil(0.6 * n), n=n, grid=np.asarray(grid))
    h_hat, _ = scv_select(log, scv_cfg, cfg.kernel)
    f_scv = estimate_at(log, a, h_hat, cfg.kernel, r=0.0).f_hat
    f_orc = estimate_at(log, a, h_oracle, cfg.kernel, r=0.0).f_hat
    return h_hat, f_scv, f_orc


def scv_study(cfg: StudyConfig) -> StudyResult:
    """Data-driven bandwidth quality versus the rate-optimal oracle.

    Selects the cross-validation bandwidth per replication and compares the
    resulting pointwise RMSE with the oracle bandwidth t^{-1/(2 beta + 1)}
    on the same trajectories.
    """
    t = float(cfg.horizons[0])
    a = cfg.points[0]
    truth = cfg.rate(a)
    h_oracle = default_bandwidth(t, cfg.beta)
    grid = np.asarray(cfg.scv_grid) if cfg.scv_grid is not None \
        else default_grid(t)
    jobs = [(cfg, t, a, h_oracle, grid, rep)
            for rep in range(cfg.replications)]
    out = _map(_scv_rep, jobs, cfg.threads)
    h_hats = np.array([o[0] for o in out])
    err_scv = np.array([o[1] for o in out]) - truth
    err_orc = np.array([o[2] for o in out]) - truth
    rmse_scv = float(np.sqrt((err_scv ** 2).mean()))
    rmse_orc = float(np.sqrt((err_orc ** 2).mean()))
    interior = (grid[0] < h_hats) & (h_hats < grid[-1])
    rows = [{"h_hat": float(hh), "err_scv": float(es), "err_oracle": float(eo)}
            for hh, es, eo in zip(h_hats, err_scv, err_orc)]
    summary = {"t": t, "a": a, "h_oracle": h_oracle,
               "grid_lo": float(grid[0]), "grid_hi": float(grid[-1]),
               "h_hat_median": float(np.median(h_hats)),
               "interior_fraction": float(interior.mean()),
               "rmse_scv": rmse_scv, "rmse_oracle": rmse_orc,
               "rmse_ratio": rmse_scv / rmse_orc if rmse_orc > 0
               else math.inf}
    return StudyResult("scv", ("h_hat", "err_scv", "err_oracle"), rows,
                       summary)


STUDY_KINDS = {
    "rate": rate_study,
    "clt": clt_study,
    "ergodic": ergodic_study,
    "exchange": exchange_study,
    "jumpchain": jump_chain_study,
    "density": invariant_density_study,
    "likelihood": likelihood_study,
    "scv": scv_study,
}


def run_study(cfg: StudyConfig) -> StudyResult:
    """Dispatch a study by its configured kind."""
    return STUDY_KINDS[cfg.kind](cfg)
