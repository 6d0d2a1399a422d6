"""Command-line entry point: ``transit-csp {analytics,simulate,reproduce}``."""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .analytics import (InfeasibleCapError, UnstableScheduleError, case_i_curve,
                        case_ii_for_policy, delta_star_case_i, drifts,
                        first_passage_moments, gamma_of_pace, schedule_pace_optimizer,
                        sigma0_interpolated)
from .config import (CONFIG_KEYS, ConfigError, ControlPolicy, build_config,
                     derive_travel_components, priority_delta, read_config_file)
from .engine import ClosedLoopParams, PolicyError, replicate
from .experiments import FIGURES, closed_metrics, open_metrics
from .metrics import Table, emit_report

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 2, 3

# run-level keys accepted in a config file next to the corridor keys
RUN_KEYS = {"reps", "out", "sweep", "policy", "holding", "delta", "ts", "fleet", "case",
            "n_buses", "n_signals", "parallel", "gamma", "cap", "deviation", "duration"}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value file")
    common.add_argument("--seed", type=int)
    common.add_argument("--reps", type=int)
    common.add_argument("--out", type=Path)
    common.add_argument("--sweep", help="KEY=a:b:step")
    common.add_argument("--policy", choices=("ntp", "csp", "tsp"))
    common.add_argument("--holding", choices=("none", "schedule", "headway"))
    common.add_argument("--delta", type=float)
    common.add_argument("--ts", type=float, help="schedule pace (s per signal spacing)")
    common.add_argument("--fleet", type=int)
    common.add_argument("--parallel", action="store_true", default=None)
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a corridor parameter")

    p = argparse.ArgumentParser(prog="transit-csp", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analytics", parents=[common], help="evaluate the Brownian model")
    a.add_argument("quantity", choices=("components", "delta-star", "case-i", "case-ii",
                                        "recovery", "optimize"))
    a.add_argument("--gamma", type=float)
    a.add_argument("--cap", type=float, help="variance cap (s^2) for optimize")
    a.add_argument("--case", choices=("i", "ii"))
    a.add_argument("--deviation", type=float)

    s = sub.add_parser("simulate", parents=[common], help="run replications and report")
    s.add_argument("--case", choices=("i", "ii", "iii"))
    s.add_argument("--n-buses", dest="n_buses", type=int)
    s.add_argument("--n-signals", dest="n_signals", type=int)
    s.add_argument("--duration", type=float, help="closed-loop horizon (h)")

    r = sub.add_parser("reproduce", parents=[common], help="regenerate a figure's CSV")
    r.add_argument("figure", choices=sorted(FIGURES))
    return p


def _settings(args: argparse.Namespace) -> tuple[dict[str, Any], dict[str, Any]]:
    """Split file + flag values into (corridor overrides, run settings)."""
    file_vals = read_config_file(args.config) if args.config else {}
    corridor: dict[str, Any] = {}
    run: dict[str, Any] = {}
    for key, value in file_vals.items():
        if key in CONFIG_KEYS:
            corridor[key] = value
        if key in RUN_KEYS:
            run[key] = value
        if key not in CONFIG_KEYS and key not in RUN_KEYS:
            raise ConfigError(f"unknown configuration key {key!r} in {args.config}")
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        corridor[k.strip()] = v.strip()
    for key, value in vars(args).items():
        if value is None or key in ("config", "set", "command"):
            continue
        if key == "seed":
            corridor["seed"] = value
        run[key] = value
    return corridor, run


def _get(run: dict[str, Any], key: str, cast, default=None):
    if key not in run:
        return default
    try:
        return cast(run[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {run[key]!r}") from None


def _sweep(spec: str) -> tuple[str, np.ndarray]:
    try:
        key, rng = spec.split("=", 1)
        a, b, step = (float(v) for v in rng.split(":"))
    except ValueError:
        raise ConfigError(f"--sweep expects KEY=a:b:step, got {spec!r}") from None
    if step <= 0 or b < a:
        raise ConfigError("--sweep needs a <= b and step > 0")
    n = int(math.floor((b - a) / step + 1e-9)) + 1
    return key.strip(), a + step * np.arange(n)


def _manifest(cfg, run: dict[str, Any], command: str) -> dict[str, Any]:
    out = {"command": command, "version": __version__, "config_hash": cfg.digest()}
    out.update({f"config.{k}": v for k, v in sorted(cfg.as_flat().items())})
    out.update({f"run.{k}": v for k, v in sorted(run.items())})
    return out


def _finish(tables: list[Table], cfg, run: dict[str, Any], command: str) -> None:
    out = run.get("out")
    if out is None:
        for t in tables:
            print(",".join(t.columns))
            for row in t.rows:
                print(",".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in row))
        return
    for path in emit_report(tables, out, _manifest(cfg, run, command)):
        print(path)


def cmd_analytics(cfg, run: dict[str, Any]) -> list[Table]:
    comps = derive_travel_components(cfg)
    q = run["quantity"]
    if q == "components":
        t = Table("components", ["name", "value"])
        for name in ("line_haul", "tp_mean", "tp_var", "tn_mean", "tn_var", "ty_mean",
                     "ty_var", "tu", "tc", "var_u", "var_c"):
            t.add(name, float(getattr(comps, name)))
        return [t]
    if q == "delta-star":
        gamma = _get(run, "gamma", float)
        if gamma is None:
            gamma = gamma_of_pace(_require(run, "ts"), comps.tu, comps.tc)
        s2 = sigma0_interpolated(gamma, comps.var_u, comps.var_c)
        t = Table("delta_star", ["gamma[-]", "delta_star[s]"])
        t.add(gamma, delta_star_case_i(gamma, comps.delta_gap, s2))
        return [t]
    if q == "optimize":
        cap = _require(run, "cap")
        case = run.get("case", "i")
        policy = run.get("policy", "csp")
        t = Table("optimize", ["variance_cap[s^2]", "T_s_star[s]"])
        t.add(cap, schedule_pace_optimizer(cap, case, comps, priority=policy))
        return [t]
    paces = _paces(run)
    if q == "case-i":
        t = Table("case_i", ["T_s[s]", "gamma[-]", "mean[s]", "variance[s^2]", "rms[s]",
                             "p_plus[-]"])
        for ts in paces:
            d = drifts(ts, comps.tu, comps.tc)
            m = case_i_curve(ts, comps)
            t.add(float(ts), d.gamma, m.mean, m.variance, m.rms, m.p_plus)
        return [t]
    if q == "case-ii":
        policy = run.get("policy", "csp")
        t = Table("case_ii", ["T_s[s]", "mean[s]", "variance[s^2]", "rms[s]"])
        for ts in paces:
            r = case_ii_for_policy(float(ts), comps, policy)
            t.add(float(ts), r.mean, r.variance, r.rms)
        return [t]
    # recovery
    dev = _get(run, "deviation", float, 30.0)
    t = Table("recovery", ["T_s[s]", "deviation[s]", "mean_distance[spacings]",
                           "var_distance[spacings^2]"])
    for ts in paces:
        d = drifts(ts, comps.tu, comps.tc)
        drift = d.m_plus if dev > 0 else d.m_minus
        s2 = sigma0_interpolated(d.gamma, comps.var_u, comps.var_c)
        t.add(float(ts), dev, *first_passage_moments(dev, drift, s2))
    return [t]


def _require(run: dict[str, Any], key: str) -> float:
    v = _get(run, key, float)
    if v is None:
        raise ConfigError(f"--{key} is required")
    return v


def _paces(run: dict[str, Any]) -> np.ndarray:
    if "sweep" in run:
        key, grid = _sweep(run["sweep"])
        if key not in ("T_s", "ts"):
            raise ConfigError(f"analytics sweeps support T_s only, got {key!r}")
        return grid
    return np.array([_require(run, "ts")])


def cmd_simulate(cfg, run: dict[str, Any]) -> list[Table]:
    case = run.get("case", "i")
    priority = run.get("policy", "csp")
    holding = run.get("holding", {"i": "none", "ii": "schedule", "iii": "headway"}[case])
    delta = priority_delta(priority, _get(run, "delta", float, 0.0))
    reps = _get(run, "reps", int, 1)
    parallel = str(run.get("parallel", False)).lower() in ("1", "true", "yes")
    seed = cfg.seed
    if case == "iii":
        if holding != "headway":
            raise PolicyError("case iii requires --holding headway")
        fleet = _get(run, "fleet", int, 6)
        duration = _get(run, "duration", float, 10.0) * 3600.0
        policy = ControlPolicy(holding="headway", delta=delta)
        pooled = replicate(closed_metrics, reps, seed, parallel=parallel, cfg=cfg,
                           policy=policy, fleet_size=fleet,
                           params=ClosedLoopParams(duration=duration))
    else:
        if holding == "headway":
            raise PolicyError(f"case {case} does not support headway holding; use case iii")
        if (case == "ii") != (holding == "schedule"):
            raise PolicyError(f"case {case} is defined with holding="
                              f"{'schedule' if case == 'ii' else 'none'}")
        ts = _require(run, "ts")
        policy = ControlPolicy(holding=holding, delta=delta, schedule_pace=ts)
        pooled = replicate(open_metrics, reps, seed, parallel=parallel, cfg=cfg,
                           policy=policy, n_buses=_get(run, "n_buses", int, 200),
                           n_signals=_get(run, "n_signals", int, cfg.n_signals))
    t = Table("summary", ["metric", "mean", "se", "replications"])
    for k in sorted(pooled.mean):
        t.add(k, pooled.mean[k], pooled.se[k], reps)
    return [t]


def cmd_reproduce(cfg, run: dict[str, Any]) -> list[Table]:
    fig = run["figure"]
    fn = FIGURES[fig]
    kwargs = {}
    if fig in ("fig8", "fig9") and "reps" in run:
        kwargs["reps"] = _get(run, "reps", int)
    return fn(cfg, cfg.seed, **kwargs)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        corridor, run = _settings(args)
        cfg = build_config(corridor)
        handler = {"analytics": cmd_analytics, "simulate": cmd_simulate,
                   "reproduce": cmd_reproduce}[args.command]
        tables = handler(cfg, run)
        _finish(tables, cfg, run, args.command)
    except (ConfigError, PolicyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (UnstableScheduleError, InfeasibleCapError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
