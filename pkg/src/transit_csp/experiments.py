"""Canonical experiments behind each reproduced figure.

Every function returns :class:`~transit_csp.metrics.Table` objects ready for
``emit_report``.  Paces are in seconds per signal spacing.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .analytics import (case_i_curve, case_ii_for_policy, drifts, first_passage_moments,
                        occupancy_fractions, pace_of_gamma, sigma0_interpolated)
from .config import ControlPolicy, CorridorConfig, TravelTimeComponents, derive_travel_components
from .engine import ClosedLoopParams, replication_seeds, run_closed_loop, run_open_corridor
from .metrics import (Table, denial_rate, headway_stats, lateness_moments, mean_estimate,
                      recovery_distances, request_rate, rms_vs_distance)

CASE_I_GRID = (47.5, 48.0, 48.5, 49.0, 49.21, 49.5, 50.0, 50.5, 50.8, 51.2)
CASE_II_GRID = (47.0, 47.5, 48.0, 48.5, 49.0, 49.21, 49.5, 50.0, 50.5, 51.0, 52.0, 54.0)
FLEETS = (10, 9, 8, 7, 6, 5, 4)  # 4 to 10 stations per bus on a 40-station loop
DELTAS = (-30.0, 0.0, 30.0)


def components_for(cfg: CorridorConfig) -> TravelTimeComponents:
    return derive_travel_components(cfg)


def gamma_one_pace(comps: TravelTimeComponents) -> float:
    return pace_of_gamma(1.0, comps.tu, comps.tc)


def case_i_run(cfg: CorridorConfig, ts: float, seed: int, *, delta: float = 0.0,
               n_buses: int = 500, n_signals: int = 200, initial_lateness: float = 0.0):
    return run_open_corridor(cfg, ControlPolicy.csp(delta, schedule_pace=ts), n_buses,
                             n_signals, seed, initial_lateness=initial_lateness)


def fig2(cfg: CorridorConfig, seed: int, *, grid: Sequence[float] = CASE_I_GRID,
         n_buses: int = 200, n_signals: int = 200) -> list[Table]:
    """Case (i) request rate against schedule pace."""
    comps = components_for(cfg)
    t = Table("fig2", ["T_s[s]", "request_rate[-]", "predicted_p_plus[-]"])
    for k, ts in enumerate(grid):
        res = case_i_run(cfg, ts, seed + k, n_buses=n_buses, n_signals=n_signals)
        req = res.steady(res.requested)
        gamma = drifts(ts, comps.tu, comps.tc).gamma
        t.add(ts, request_rate(req, req.size), occupancy_fractions(gamma)[0])
    return [t]


def fig3(cfg: CorridorConfig, seed: int, *, grid: Sequence[float] = CASE_I_GRID,
         n_buses: int = 500, n_signals: int = 200, deviation: float = 30.0) -> list[Table]:
    """Case (i) lateness moments and recovery distance against pace."""
    comps = components_for(cfg)
    t = Table("fig3", ["T_s[s]", "mean_sim[s]", "mean_pred[s]", "var_sim[s^2]",
                       "var_pred[s^2]", "recovery_late_sim[spacings]",
                       "recovery_late_pred[spacings]", "recovery_early_sim[spacings]",
                       "recovery_early_pred[spacings]"])
    for k, ts in enumerate(grid):
        res = case_i_run(cfg, ts, seed + k, n_buses=n_buses, n_signals=n_signals)
        mom = lateness_moments(res.steady())
        pred = case_i_curve(ts, comps)
        d = drifts(ts, comps.tu, comps.tc)
        s2 = sigma0_interpolated(d.gamma, comps.var_u, comps.var_c)
        rec = []
        for sign, drift in ((1.0, d.m_plus), (-1.0, d.m_minus)):
            r = recovery_mean(cfg, ts, sign * deviation, seed + 1000 + k,
                              n_buses=n_buses, n_signals=n_signals)
            rec += [r, first_passage_moments(sign * deviation, drift, s2)[0]]
        t.add(ts, mom.lateness_mean.value, pred.mean, mom.lateness_var.value,
              pred.variance, *rec)
    return [t]


def recovery_mean(cfg: CorridorConfig, ts: float, deviation: float, seed: int, *,
                  delta: float = 0.0, n_buses: int = 500, n_signals: int = 200) -> float:
    """Mean distance for an injected deviation to first reach ``delta``."""
    res = case_i_run(cfg, ts, seed, delta=delta, n_buses=n_buses, n_signals=n_signals,
                     initial_lateness=delta + deviation)
    dist = recovery_distances(res.signal_lateness, delta + deviation, level=delta)
    return float(np.nanmean(dist))


def fig4(cfg: CorridorConfig, seed: int, *, n_buses: int = 500,
         n_signals: int = 200) -> list[Table]:
    """Sample lateness paths for several thresholds and RMS against distance."""
    comps = components_for(cfg)
    ts = gamma_one_pace(comps)
    paths = Table("fig4_paths", ["x[spacings]"] + [f"lateness_delta_{d:+g}[s]" for d in DELTAS])
    runs = [case_i_run(cfg, ts, seed, delta=d, n_buses=2, n_signals=n_signals) for d in DELTAS]
    for i in range(n_signals):
        paths.add(i + 1, *(float(r.lateness[0, i]) for r in runs))
    strategies = {
        "ntp": ControlPolicy.ntp(schedule_pace=comps.tu),
        "csp": ControlPolicy.csp(0.0, schedule_pace=ts),
        "tsp": ControlPolicy.tsp(schedule_pace=comps.tc),
    }
    curves = {name: rms_vs_distance(run_open_corridor(cfg, pol, n_buses, n_signals, seed).lateness)
              for name, pol in strategies.items()}
    rms = Table("fig4_rms", ["x[spacings]"] + [f"rms_{n}[s]" for n in strategies])
    for i in range(n_signals):
        rms.add(i + 1, *(float(c[i]) for c in curves.values()))
    summary = Table("fig4_delta", ["delta[s]", "mean[s]", "rms[s]"])
    for k, d in enumerate(DELTAS):
        res = case_i_run(cfg, ts, seed + 7 + k, delta=d, n_buses=n_buses, n_signals=n_signals)
        mom = lateness_moments(res.steady())
        summary.add(d, mom.lateness_mean.value, mom.lateness_rms.value)
    return [paths, rms, summary]


def case_ii_run(cfg: CorridorConfig, ts: float, priority: str, seed: int, *,
                n_buses: int = 500, n_signals: int = 200, delta: float | None = None):
    """Schedule holding at every station.

    Buses are held until their lateness reaches ``delta``; by default this
    is the RMS-optimal threshold predicted for ``priority``.  CSP uses the
    same value as its request threshold, TSP requests everywhere.
    """
    if delta is None:
        delta = case_ii_for_policy(ts, components_for(cfg), priority).delta_star
    if priority == "tsp":
        pol = ControlPolicy.tsp(holding="schedule", schedule_pace=ts, hold_offset=delta)
    elif priority == "ntp":
        pol = ControlPolicy.ntp(holding="schedule", schedule_pace=ts, hold_offset=delta)
    else:
        pol = ControlPolicy.csp(delta, holding="schedule", schedule_pace=ts)
    return run_open_corridor(cfg, pol, n_buses, n_signals, seed)


def fig6(cfg: CorridorConfig, seed: int, *, grid: Sequence[float] = CASE_II_GRID,
         n_buses: int = 300, n_signals: int = 200) -> list[Table]:
    """Case (ii) RMS deviation against pace for CSP and TSP at the optimal threshold."""
    comps = components_for(cfg)
    t = Table("fig6", ["T_s[s]", "delta_star[s]", "rms_csp_sim[s]", "rms_tsp_sim[s]",
                       "std_csp_sim[s]", "std_tsp_sim[s]", "rms_pred[s]"])
    for k, ts in enumerate(grid):
        pred = case_ii_for_policy(ts, comps, "csp")
        moms = [lateness_moments(case_ii_run(cfg, ts, p, seed + k, n_buses=n_buses,
                                             n_signals=n_signals).steady())
                for p in ("csp", "tsp")]
        t.add(ts, pred.delta_star, *(m.lateness_rms.value for m in moms),
              *(math.sqrt(m.lateness_var.value) for m in moms), pred.rms)
    return [t]


def fig7(cfg: CorridorConfig, seed: int, *, grid: Sequence[float] = CASE_II_GRID,
         n_buses: int = 300, n_signals: int = 200) -> list[Table]:
    """Case (ii) request rate against pace."""
    t = Table("fig7", ["T_s[s]", "request_rate_csp[-]", "request_rate_tsp[-]"])
    for k, ts in enumerate(grid):
        rates = []
        for p in ("csp", "tsp"):
            res = case_ii_run(cfg, ts, p, seed + k, n_buses=n_buses, n_signals=n_signals)
            req = res.steady(res.requested)
            rates.append(request_rate(req, req.size))
        t.add(ts, *rates)
    return [t]


HEADWAY_POLICIES = {
    "ntp": math.inf,
    "csp": 0.0,
    "tsp": -math.inf,
}


def closed_loop_sweep(cfg: CorridorConfig, seed: int, *, fleets: Sequence[int] = FLEETS,
                      reps: int = 3, params: ClosedLoopParams | None = None,
                      k1: float = 0.2) -> dict[tuple[str, int], list]:
    """Closed-loop results for each (policy, fleet) over ``reps`` seeds."""
    seeds = replication_seeds(seed, reps)
    out: dict[tuple[str, int], list] = {}
    for name, delta in HEADWAY_POLICIES.items():
        pol = ControlPolicy(holding="headway", delta=delta, k1=k1)
        for n in fleets:
            out[name, n] = [run_closed_loop(cfg, pol, n, seed=s, params=params) for s in seeds]
    return out


def headway_table(results: dict[tuple[str, int], list], segments: int = 40) -> Table:
    cols = ["stations_per_bus[-]"]
    for name in HEADWAY_POLICIES:
        cols += [f"{name}_mean_headway[min]", f"{name}_mean_headway_se[min]",
                 f"{name}_std_headway[min]", f"{name}_std_headway_se[min]"]
    t = Table("fig8", cols)
    fleets = sorted({n for _, n in results}, reverse=True)
    for n in fleets:
        row: list[float] = [segments / n]
        for name in HEADWAY_POLICIES:
            stats = [headway_stats(r.headways, r.headway_time, r.params.warmup)
                     for r in results[name, n]]
            m = mean_estimate([s[0] for s in stats])
            s = mean_estimate([s[1] for s in stats])
            row += [m.value, m.se, s.value, s.se]
        t.add(*row)
    return t


def request_table(results: dict[tuple[str, int], list], segments: int = 40) -> Table:
    t = Table("fig9", ["stations_per_bus[-]"] + [f"request_rate_{n}[-]" for n in HEADWAY_POLICIES])
    fleets = sorted({n for _, n in results}, reverse=True)
    for n in fleets:
        rates = []
        for name in HEADWAY_POLICIES:
            runs = results[name, n]
            rates.append(request_rate(sum(r.requests for r in runs), sum(r.passages for r in runs)))
        t.add(segments / n, *rates)
    return t


def fig8(cfg: CorridorConfig, seed: int, *, reps: int = 3) -> list[Table]:
    """Headway mean and spread against stations per bus."""
    return [headway_table(closed_loop_sweep(cfg, seed, reps=reps))]


def fig9(cfg: CorridorConfig, seed: int, *, reps: int = 3) -> list[Table]:
    """Closed-loop request rate against stations per bus."""
    return [request_table(closed_loop_sweep(cfg, seed, reps=reps))]


def table2(cfg: CorridorConfig, seed: int, *, n_arrivals: int = 1_000_000) -> list[Table]:
    """Signal delay moments: sweep oracle against random arrivals."""
    from .signals import delay_moment_oracle, phase_delay

    rng = np.random.default_rng(seed)
    u = rng.uniform(0.0, cfg.cycle_length, n_arrivals)
    t = Table("table2", ["component", "oracle_mean[s]", "oracle_var[s^2]",
                         "sim_mean[s]", "sim_var[s^2]", "sim_mean_se[s]"])
    for name, granted in (("T_n", False), ("T_y", True)):
        om, ov = delay_moment_oracle(cfg, "always" if granted else "never")
        d = phase_delay(u, cfg, granted)
        t.add(name, om, ov, float(d.mean()), float(d.var()),
              float(d.std(ddof=1) / math.sqrt(d.size)))
    return [t]


def denial_check(cfg: CorridorConfig, seed: int, *, n_buses: int = 100,
                 n_signals: int = 200) -> tuple[float, int]:
    """Mainline denial rate when every bus requests priority."""
    res = run_open_corridor(cfg, ControlPolicy.tsp(schedule_pace=46.5), n_buses, n_signals, seed)
    n = int(res.requested.sum())
    return denial_rate(n, int(res.granted.sum())), n


FIGURES: dict[str, Callable[..., list[Table]]] = {
    "fig2": fig2, "fig3": fig3, "fig4": fig4, "fig6": fig6,
    "fig7": fig7, "fig8": fig8, "fig9": fig9, "table2": table2,
}


def case_ii_prediction(ts: float, comps: TravelTimeComponents, priority: str = "csp") -> float:
    return case_ii_for_policy(ts, comps, priority).rms


def open_metrics(seed: int, cfg: CorridorConfig, policy: ControlPolicy, n_buses: int,
                 n_signals: int) -> dict[str, float]:
    """Scalar metrics of one open-corridor replication (picklable for workers)."""
    res = run_open_corridor(cfg, policy, n_buses, n_signals, seed)
    rep = lateness_moments(res.steady())
    req = res.steady(res.requested)
    out = rep.as_flat()
    out["request_rate"] = request_rate(req, req.size)
    n_req = int(req.sum())
    out["denial_rate"] = denial_rate(n_req, int(res.steady(res.granted).sum())) if n_req else 0.0
    out["mean_hold"] = float(res.steady(res.holds).mean())
    return out


def closed_metrics(seed: int, cfg: CorridorConfig, policy: ControlPolicy,
                   fleet_size: int, params: ClosedLoopParams | None = None) -> dict[str, float]:
    res = run_closed_loop(cfg, policy, fleet_size, seed=seed, params=params)
    mean, std = headway_stats(res.headways, res.headway_time, res.params.warmup)
    return {"headway_mean": mean, "headway_std": std, "request_rate": res.request_rate,
            "denial_rate": denial_rate(res.requests, res.grants) if res.requests else 0.0}
