"""Batch command-line surface for simulations, estimates, and studies.

Configs are JSON with a ``schema-version`` field; all randomness flows from
the config (or ``--seed`` override), never from the wall clock, so reruns
with identical inputs produce byte-identical outputs.

Subcommands::

    neuropdmp simulate --config cfg.json --out run        # run.csv + run.csv.meta
    neuropdmp estimate --config cfg.json --log run.csv --a 0.5 --h auto
    neuropdmp scv      --config cfg.json --log run.csv --out curve.csv
    neuropdmp study rate --config cfg.json --out results/rate
"""

from __future__ import annotations

import argparse
import json
import math
import pathlib
import sys
import time
from dataclasses import dataclass

import numpy as np

from .model import (ModelError, ModelParams, RateFunction, expm1_rate,
                    linear_rate, log1p_rate, table_rate)
from .simulator import SimConfig, load_event_log, save_event_log, simulate
from .estimator import (Kernel, estimate_at, kernel_make, region_check,
                        EstimateReport)
from .bandwidth import ScvConfig, default_config, scv_select
from .experiments import STUDY_KINDS, StudyConfig, run_study

SCHEMA_VERSION = 1

_RATE_FACTORIES = {"linear": linear_rate, "log1p": log1p_rate,
                   "expm1": expm1_rate}


class ConfigError(ValueError):
    """Malformed or incoherent run configuration."""


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams
    rate: RateFunction
    kernel: Kernel
    sim: dict
    study: dict
    seed: int
    d: float


def _build_rate(spec: dict, k_max: float) -> RateFunction:
    family = spec.get("family", "linear")
    beta = float(spec.get("beta", 1.0))
    if family == "table":
        return table_rate(spec["x"], spec["y"], beta=beta)
    if family not in _RATE_FACTORIES:
        raise ConfigError(f"unknown rate family {family!r}")
    return _RATE_FACTORIES[family](k_max, scale=float(spec.get("scale", 1.0)),
                                   beta=beta)


def load_config(path) -> RunConfig:
    """Parse and validate a JSON run configuration."""
    try:
        raw = json.loads(pathlib.Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    version = raw.get("schema-version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema-version {version!r} "
                          f"(expected {SCHEMA_VERSION})")
    model = raw.get("model", {})
    try:
        params = ModelParams(n_neurons=int(model["n_neurons"]),
                             lam=float(model["lam"]), m=float(model["m"]),
                             k_max=float(model["k_max"]))
    except (KeyError, TypeError, ValueError, ModelError) as exc:
        raise ConfigError(f"invalid model block: {exc}") from exc
    rate = _build_rate(raw.get("rate", {}), params.k_max)
    kspec = raw.get("kernel", {})
    kernel = kernel_make(kspec.get("family", "epanechnikov"),
                         R=float(kspec.get("R", 1.0)),
                         order=int(kspec.get("order",
                                             min(1, rate.holder.k))))
    k_needed = rate.holder.k
    if k_needed >= 2 and kernel.order < k_needed:
        raise ConfigError(
            f"kernel order {kernel.order} too low for beta={rate.holder.beta}"
            f" (needs vanishing moments up to {k_needed})")
    sim = dict(raw.get("sim", {}))
    if "horizon" in sim and not float(sim["horizon"]) > 0:
        raise ConfigError("sim.horizon must be > 0")
    study = dict(raw.get("study", {}))
    seed = int(raw.get("seed", 0))
    d = raw.get("d")
    d = float(d) if d is not None else (rate.holder.k + 2.5) / params.n_neurons
    for a in study.get("points", []):
        if not region_check(float(a), params, rate.holder, d):
            raise ConfigError(f"study point {a} outside the admissible "
                              f"estimation region (d={d:g})")
    return RunConfig(params=params, rate=rate, kernel=kernel, sim=sim,
                     study=study, seed=seed, d=d)


def _check_clobber(path: pathlib.Path, args) -> None:
    if args.no_clobber and path.exists():
        raise ConfigError(f"refusing to overwrite existing {path} "
                          f"(--no-clobber)")


def cmd_simulate(cfg: RunConfig, args) -> int:
    sim = cfg.sim
    if "horizon" not in sim:
        raise ConfigError("sim.horizon required for simulate")
    seed = args.seed if args.seed is not None else int(
        sim.get("seed", cfg.seed))
    sc = SimConfig(horizon=float(sim["horizon"]), seed=seed,
                   stream=int(sim.get("stream", 0)),
                   x0=sim.get("x0", "at-m"))
    t0 = time.perf_counter()
    log = simulate(cfg.params, cfg.rate, sc)
    elapsed = time.perf_counter() - t0
    out = pathlib.Path(args.out if args.out else "eventlog.csv")
    if out.suffix != ".csv":
        out = out.with_suffix(".csv")
    _check_clobber(out, args)
    save_event_log(log, out)
    print(f"jumps={log.n_jumps} horizon={log.horizon:g} "
          f"wall={elapsed:.3f}s -> {out}")
    return 0


def cmd_estimate(cfg: RunConfig, args) -> int:
    if args.log is None or args.a is None:
        raise ConfigError("estimate needs --log and --a")
    log = load_event_log(args.log)
    a = float(args.a)
    if not region_check(a, log.params, cfg.rate.holder, cfg.d) \
            and not args.force:
        raise ConfigError(
            f"evaluation point a={a:g} outside the admissible estimation "
            f"region (near 0, m={log.params.m:g}, or K); pass --force to "
            f"estimate anyway")
    if args.h == "auto" or args.h is None:
        scv_cfg = default_config(log)
        h, curve = scv_select(log, scv_cfg, cfg.kernel)
        if not (scv_cfg.grid[0] < h < scv_cfg.grid[-1]):
            print(f"warning: selected bandwidth {h:g} sits on the grid "
                  f"boundary", file=sys.stderr)
    else:
        h = float(args.h)
    r = None if args.r in (None, "auto") else float(args.r)
    rep = estimate_at(log, a, h, cfg.kernel, r=r)
    print(EstimateReport.csv_header)
    print(rep.csv_row())
    if args.out:
        out = pathlib.Path(args.out)
        _check_clobber(out, args)
        out.write_text(EstimateReport.csv_header + "\n" + rep.csv_row() + "\n")
    return 0


def cmd_scv(cfg: RunConfig, args) -> int:
    if args.log is None:
        raise ConfigError("scv needs --log")
    log = load_event_log(args.log)
    scv_cfg = default_config(log)
    h, curve = scv_select(log, scv_cfg, cfg.kernel)
    lines = ["h,scv_score"] + [f"{float(hh)!r},{float(ss)!r}"
                               for hh, ss in curve]
    text = "\n".join(lines) + "\n"
    print(f"h_hat={h!r}")
    if args.out:
        out = pathlib.Path(args.out)
        _check_clobber(out, args)
        out.write_text(text)
    else:
        print(text, end="")
    return 0


def cmd_study(cfg: RunConfig, args) -> int:
    kind = args.kind
    if kind not in STUDY_KINDS:
        raise ConfigError(f"unknown study kind {kind!r}; expected one of "
                          f"{sorted(STUDY_KINDS)}")
    st = cfg.study
    seed = args.seed if args.seed is not None else int(
        st.get("seed", cfg.seed))
    kwargs = dict(
        kind=kind, params=cfg.params, rate=cfg.rate, kernel=cfg.kernel,
        seed=seed, threads=args.threads, d=cfg.d,
        horizons=tuple(float(t) for t in st.get("horizons", [100.0])),
        replications=int(st.get("replications", 1)),
        points=tuple(float(a) for a in st.get("points", [])),
    )
    for key, cast in (("bandwidth_exponent", float), ("bins", int),
                      ("blocks", int), ("grid_size", int),
                      ("amplitude", float)):
        if key in st:
            kwargs[key] = cast(st[key])
    if "times" in st:
        kwargs["times"] = tuple(float(t) for t in st["times"])
    if "test_powers" in st:
        kwargs["test_powers"] = tuple(int(p) for p in st["test_powers"])
    if "scv_grid" in st:
        kwargs["scv_grid"] = tuple(float(h) for h in st["scv_grid"])
    result = run_study(StudyConfig(**kwargs))
    out = pathlib.Path(args.out if args.out else kind)
    _check_clobber(out.with_suffix(".csv"), args)
    _check_clobber(out.with_suffix(".json"), args)
    out.parent.mkdir(parents=True, exist_ok=True)
    result.write(out)
    print(json.dumps({"kind": result.kind, "summary": result.summary},
                     indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="neuropdmp",
        description="Interacting-neuron network simulation and "
                    "nonparametric rate inference.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="JSON run config")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
        sp.add_argument("--out", default=None, help="output path/base")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--force", action="store_true",
                        help="bypass estimation-region validation")
        sp.add_argument("--no-clobber", action="store_true",
                        help="refuse to overwrite existing outputs")

    common(sub.add_parser("simulate", help="run one trajectory to CSV"))
    sp = sub.add_parser("estimate", help="pointwise rate estimate from a log")
    common(sp)
    sp.add_argument("--log", help="event log CSV")
    sp.add_argument("--a", help="evaluation point")
    sp.add_argument("--h", default=None, help="bandwidth or 'auto'")
    sp.add_argument("--r", default=None, help="occupancy threshold or 'auto'")
    sp = sub.add_parser("scv", help="cross-validation bandwidth curve")
    common(sp)
    sp.add_argument("--log", help="event log CSV")
    sp = sub.add_parser("study", help="run a Monte Carlo study")
    sp.add_argument("kind", choices=sorted(STUDY_KINDS))
    common(sp)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "simulate":
            return cmd_simulate(cfg, args)
        if args.command == "estimate":
            return cmd_estimate(cfg, args)
        if args.command == "scv":
            return cmd_scv(cfg, args)
        return cmd_study(cfg, args)
    except (ConfigError, ModelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
