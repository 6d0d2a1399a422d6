"""Simulation engines.

``run_open_corridor`` follows isolated buses down a long homogeneous street
(one signal per station, stations on the far side of each signal).
``run_closed_loop`` runs a fleet on a ring where dwell times depend on the
passengers accumulated since the previous bus, the setting in which
headways are unstable without control.
"""

from __future__ import annotations

import heapq
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from .config import BusState, ControlPolicy, CorridorConfig, sample_offsets
from .control import (desired_delay_headway, desired_delay_schedule, holding_time,
                      should_request_priority)
from .signals import (MAINLINE, PriorityRequest, SignalState, delay_moment_oracle,
                      handle_request, make_signals, signal_delay)


class PolicyError(ValueError):
    """Policy not supported by the requested engine."""


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, stream)))


# -- open corridor -----------------------------------------------------------

@dataclass
class OpenCorridorResult:
    cfg: CorridorConfig
    policy: ControlPolicy
    seed: int
    warmup: int
    initial_lateness: float
    # (n_buses, n_signals) arrays; column i is signal/station i + 1
    signal_lateness: np.ndarray  # projected lateness at the signal
    lateness: np.ndarray  # at the station, after the signal delay
    departure_lateness: np.ndarray  # after any hold
    requested: np.ndarray
    granted: np.ndarray
    holds: np.ndarray
    crossing_requests: int = 0
    crossing_denials: int = 0
    events: list[dict[str, Any]] | None = None

    @property
    def n_buses(self) -> int:
        return self.lateness.shape[0]

    @property
    def n_signals(self) -> int:
        return self.lateness.shape[1]

    @property
    def trajectories(self) -> np.ndarray:
        """Lateness seen by passengers: departure under holding, else arrival."""
        return self.departure_lateness if self.policy.holding == "schedule" else self.lateness

    def steady(self, values: np.ndarray | None = None) -> np.ndarray:
        values = self.trajectories if values is None else values
        return values[:, self.warmup:]


def run_open_corridor(cfg: CorridorConfig, policy: ControlPolicy, n_buses: int,
                      n_signals: int, seed: int, *, dispatch_headway: float = 600.0,
                      initial_lateness: float = 0.0, warmup: int = 20,
                      record_events: bool = False) -> OpenCorridorResult:
    """Simulate ``n_buses`` schedule-following buses over ``n_signals`` signals.

    All buses of one run share the signal timing plan and crossing streams.
    Requests are issued ``advance_notice`` before the (exactly projected)
    signal arrival and resolved first-come first-served.
    """
    if policy.holding == "headway":
        raise PolicyError("headway holding needs the closed-loop engine")
    if policy.schedule_pace is None:
        raise PolicyError("open corridor runs need a schedule pace")
    if n_buses < 1 or n_signals < 1:
        raise ValueError("n_buses and n_signals must be positive")

    rng = _rng(seed, 0)
    offsets = sample_offsets(seed, n_signals, cfg.cycle_length)
    signals = make_signals(cfg, offsets, rng)
    travel = cfg.line_haul + rng.normal(cfg.tp_mean, math.sqrt(cfg.tp_var), (n_buses, n_signals))
    np.maximum(travel, 0.0, out=travel)
    t0 = np.arange(n_buses) * dispatch_headway + rng.uniform(0.0, cfg.cycle_length, n_buses)

    shape = (n_buses, n_signals)
    sig_late = np.empty(shape)
    late = np.empty(shape)
    dep_late = np.empty(shape)
    requested = np.zeros(shape, dtype=bool)
    granted_arr = np.zeros(shape, dtype=bool)
    holds = np.zeros(shape)
    events: list[dict[str, Any]] | None = [] if record_events else None

    pace = float(policy.schedule_pace)
    delta = policy.delta
    hold = policy.holding == "schedule"
    barrier = policy.barrier
    notice = cfg.advance_notice

    # the origin departure carries the injected deviation
    start = t0 + (max(initial_lateness, barrier) if hold else initial_lateness)
    buses = [BusState(index=b, clock=float(start[b]), lateness=float(start[b] - t0[b]))
             for b in range(n_buses)]
    heap: list[tuple[float, int, int]] = []
    arrival = np.empty(n_buses)
    for b, bus in enumerate(buses):
        arrival[b] = bus.clock + travel[b, 0]
        heapq.heappush(heap, (arrival[b] - notice, b, b))

    while heap:
        _, _, b = heapq.heappop(heap)
        bus = buses[b]
        i = bus.position
        arr = float(arrival[b])
        sched = t0[b] + (i + 1) * pace
        D = desired_delay_schedule(sched, arr, location=i, bus=b)
        bus.projected[i] = arr
        want = should_request_priority(D, delta)
        granted = False
        sig = signals[i]
        if want:
            granted = handle_request(PriorityRequest.for_arrival(b, arr, notice), sig)
            bus.requests.append((i, arr - notice, granted))
        d = signal_delay(arr, sig, granted)
        at_station = arr + d
        bus.advance_clock(at_station)
        bus.arrivals[i] = at_station
        h = 0.0
        if hold:
            h = holding_time(desired_delay_schedule(sched + barrier, at_station))
            bus.hold(h)
        bus.lateness = bus.clock - sched
        sig_late[b, i] = arr - sched
        late[b, i] = at_station - sched
        dep_late[b, i] = bus.lateness
        requested[b, i] = want
        granted_arr[b, i] = granted
        holds[b, i] = h
        if events is not None:
            events.append({"bus": b, "signal": i + 1, "arrival": arr, "scheduled": sched,
                           "requested": want, "granted": granted, "delay": d, "hold": h})
        bus.position = i + 1
        if bus.position < n_signals:
            arrival[b] = bus.clock + travel[b, bus.position]
            heapq.heappush(heap, (arrival[b] - notice, (bus.position) * n_buses + b, b))

    return OpenCorridorResult(
        cfg=cfg, policy=policy, seed=seed, warmup=min(warmup, n_signals - 1),
        initial_lateness=initial_lateness, signal_lateness=sig_late, lateness=late,
        departure_lateness=dep_late, requested=requested, granted=granted_arr, holds=holds,
        crossing_requests=sum(s.requests["crossing"] for s in signals),
        crossing_denials=sum(s.denials["crossing"] for s in signals),
        events=events)


# -- closed loop -------------------------------------------------------------

@dataclass
class ClosedLoopParams:
    segments: int = 40
    demand_rate: float = 0.9375  # pax/min/station
    boarding_time: float = 2.0  # s/pax
    duration: float = 10 * 3600.0  # s
    warmup: float = 3600.0  # s
    traffic_mean: float = 7.5  # s per segment, excluding boarding
    traffic_var: float = 56.25  # s^2
    poisson_demand: bool = False
    initial_spacing: str = "random"  # or "even"


@dataclass
class ClosedLoopResult:
    policy: ControlPolicy
    fleet_size: int
    params: ClosedLoopParams
    seed: int
    # (station, time, headway) for every arrival with a predecessor
    headway_station: np.ndarray
    headway_time: np.ndarray
    headways: np.ndarray
    passages: int
    requests: int
    grants: int
    generated: float
    boarded: int
    waiting: float
    holds: float
    bus_count: int
    laps: np.ndarray
    events: list[dict[str, Any]] | None = None

    def steady_headways(self) -> np.ndarray:
        return self.headways[self.headway_time >= self.params.warmup]

    @property
    def request_rate(self) -> float:
        return self.requests / self.passages if self.passages else 0.0


class _Bus:
    __slots__ = ("index", "k", "at_station", "arr_time", "dep_time", "next_sig",
                 "next_sig_time", "eta_station", "granted", "requested")

    def __init__(self, index: int, k: int):
        self.index = index
        self.k = k  # cumulative stations reached
        self.at_station = True
        self.arr_time = 0.0
        self.dep_time: float | None = None
        self.next_sig = -1
        self.next_sig_time = 0.0
        self.eta_station: float | None = None
        self.granted = False
        self.requested = False


class _RunningMean:
    """Exponentially weighted mean; forgets the start-up transient."""

    __slots__ = ("value", "weight")

    def __init__(self, prior: float, weight: float = 0.01):
        self.value, self.weight = prior, weight

    def add(self, x: float) -> None:
        self.value += self.weight * (x - self.value)


def run_closed_loop(cfg: CorridorConfig, policy: ControlPolicy, fleet_size: int,
                    duration: float | None = None, seed: int = 0, *,
                    params: ClosedLoopParams | None = None,
                    record_events: bool = False) -> ClosedLoopResult:
    """Event-driven ring simulation with headway-based holding.

    Each segment holds one signal followed by one station.  Buses never
    overtake: a bus that catches its leader follows it at zero gap.
    """
    params = params or ClosedLoopParams()
    if duration is not None:
        params = ClosedLoopParams(**{**params.__dict__, "duration": duration})
    if policy.holding != "headway":
        raise PolicyError("the closed loop supports headway holding only")
    if fleet_size < 2:
        raise PolicyError("headway control needs at least two buses")
    S = params.segments
    if fleet_size > S:
        raise ValueError("fleet larger than the number of stations")

    rng = _rng(seed, 1)
    offsets = sample_offsets(seed, S, cfg.cycle_length)
    signals = make_signals(cfg, offsets, rng)
    lam = params.demand_rate / 60.0
    board = params.boarding_time
    notice = cfg.advance_notice
    delta, k0, k1 = policy.delta, policy.k0, policy.k1
    horizon = params.duration

    if params.traffic_var > 0:
        shape = params.traffic_mean**2 / params.traffic_var
        scale = params.traffic_var / params.traffic_mean

        def traffic() -> float:
            return float(rng.gamma(shape, scale))
    else:
        def traffic() -> float:
            return params.traffic_mean

    if params.initial_spacing == "even":
        starts = [round(i * S / fleet_size) for i in range(fleet_size)]
    else:
        starts = sorted(int(s) for s in rng.choice(S, size=fleet_size, replace=False))
    # bus 0 is furthest along; the leader of bus n is bus n - 1 (mod N)
    starts = starts[::-1]
    buses = [_Bus(n, starts[n]) for n in range(fleet_size)]
    N = fleet_size

    tn_mean = delay_moment_oracle(cfg, "never", step=0.1)[0]
    move = _RunningMean(cfg.line_haul + params.traffic_mean + tn_mean)
    stop = _RunningMean(board * lam * S * (cfg.line_haul + params.traffic_mean) / N)
    sig_part = _RunningMean(tn_mean)

    last_arr_station: list[float | None] = [None] * S
    last_arr_signal: list[float | None] = [None] * S
    last_pass_signal = [-math.inf] * S
    occupant: list[int | None] = [None] * S
    queue: list[list[int]] = [[] for _ in range(S)]
    cutoff = [0.0] * S
    carry = [0.0] * S

    hw_station: list[int] = []
    hw_time: list[float] = []
    hw: list[float] = []
    passages = requests = grants = boarded = 0
    holds_total = 0.0
    events: list[dict[str, Any]] | None = [] if record_events else None

    heap: list[tuple[float, int, str, int]] = []
    seq = 0

    def push(t: float, kind: str, b: int) -> None:
        nonlocal seq
        heapq.heappush(heap, (t, seq, kind, b))
        seq += 1

    def projected_station(n: int, station: int, now: float) -> float | None:
        """Projected arrival of bus ``n`` at ``station`` from its live state."""
        bus = buses[n]
        gap = (station - bus.k) % S
        if bus.at_station:
            if gap == 0:
                return bus.arr_time
            leave = bus.dep_time if bus.dep_time is not None else max(
                now, bus.arr_time + stop.value)
        else:
            # travelling towards station k + 1
            gap = (gap - 1) % S
            eta = bus.eta_station if bus.eta_station is not None else (
                bus.next_sig_time + sig_part.value)
            return max(now, eta) + gap * (stop.value + move.value)
        return max(now, leave) + move.value + (gap - 1) * (stop.value + move.value)

    def headway_target(n: int, a_n: float, a_prev: float | None,
                       alpha_next: float | None) -> float | None:
        if a_prev is None or alpha_next is None:
            return None
        return desired_delay_headway(a_n, a_prev, alpha_next, k0, k1).value

    def arrive_station(b: int, t: float) -> None:
        nonlocal boarded
        bus = buses[b]
        j = (bus.k + 1) % S
        if occupant[j] is not None:
            queue[j].append(b)
            return
        occupant[j] = b
        bus.k += 1
        bus.at_station = True
        bus.eta_station = None
        bus.arr_time = t
        bus.dep_time = None
        prev = last_arr_station[j]
        if prev is not None:
            hw_station.append(j)
            hw_time.append(t)
            hw.append(t - prev)
        last_arr_station[j] = t
        expected = lam * (t - cutoff[j])
        if params.poisson_demand:
            pax = int(rng.poisson(expected))
        else:
            total = expected + carry[j]
            pax = int(math.floor(total + 1e-12))
            carry[j] = total - pax
        cutoff[j] = t
        boarded += pax
        push(t + board * pax, "board_done", b)

    # every bus leaves its starting station empty at t = 0
    for n, bus in enumerate(buses):
        occupant[bus.k % S] = n
        bus.dep_time = 0.0
        push(0.0, "depart", n)

    while heap:
        t, _, kind, b = heapq.heappop(heap)
        if t > horizon:
            break
        bus = buses[b]
        if kind == "depart":
            j = bus.k % S
            occupant[j] = None
            if t > 0:
                stop.add(t - bus.arr_time)
            bus.at_station = False
            bus.dep_time = t
            nxt = (j + 1) % S
            arr_sig = t + cfg.line_haul + traffic()
            leader = buses[(b - 1) % N]
            if not leader.at_station and leader.next_sig == nxt:
                arr_sig = max(arr_sig, leader.next_sig_time)
            bus.next_sig = nxt
            bus.next_sig_time = arr_sig
            bus.granted = bus.requested = False
            push(max(t, arr_sig - notice), "request", b)
            push(arr_sig, "arrive_signal", b)
            if queue[j]:
                follower = queue[j].pop(0)
                arrive_station(follower, t)
        elif kind == "request":
            i = bus.next_sig
            arr = bus.next_sig_time
            leader = buses[(b - 1) % N]
            if not leader.at_station and leader.next_sig == i:
                a_prev: float | None = leader.next_sig_time
            else:
                a_prev = last_arr_signal[i]
            alpha = projected_station((b + 1) % N, i, t)
            alpha = None if alpha is None else alpha - sig_part.value
            D = headway_target(b, arr, a_prev, alpha)
            want = D is not None and should_request_priority(D, delta)
            if want:
                bus.requested = True
                bus.granted = handle_request(PriorityRequest.for_arrival(b, arr, notice),
                                             signals[i])
        elif kind == "arrive_signal":
            i = bus.next_sig
            d = signal_delay(t, signals[i], bus.granted)
            passed = max(t + d, last_pass_signal[i])
            last_arr_signal[i] = t
            last_pass_signal[i] = passed
            sig_part.add(passed - t)
            if t >= params.warmup:
                passages += 1
                requests += bus.requested
                grants += bus.granted
            bus.eta_station = passed
            move.add(passed - bus.dep_time)
            if events is not None:
                events.append({"t": t, "bus": b, "signal": i, "granted": bus.granted,
                               "delay": passed - t})
            push(passed, "arrive_station", b)
        elif kind == "arrive_station":
            arrive_station(b, t)
        elif kind == "board_done":
            j = bus.k % S
            prev_arrival = _previous_arrival(hw_station, hw_time, hw, j, bus.arr_time)
            alpha = projected_station((b + 1) % N, j, t)
            D = headway_target(b, bus.arr_time, prev_arrival, alpha)
            h = holding_time(D) if D is not None else 0.0
            holds_total += h
            bus.dep_time = t + h
            push(t + h, "depart", b)

    end = min(horizon, params.duration)
    waiting = sum(lam * (end - cutoff[j]) + carry[j] for j in range(S))
    laps = np.array([bus.k for bus in buses]) - np.array(starts)
    return ClosedLoopResult(
        policy=policy, fleet_size=N, params=params, seed=seed,
        headway_station=np.array(hw_station, dtype=int), headway_time=np.array(hw_time),
        headways=np.array(hw), passages=passages, requests=requests, grants=grants,
        generated=lam * end * S, boarded=boarded, waiting=waiting, holds=holds_total,
        bus_count=len(buses), laps=laps, events=events)


def _previous_arrival(stations: list[int], times: list[float], hws: list[float],
                      j: int, t: float) -> float | None:
    # the most recent headway record is this bus's own arrival at j
    if stations and stations[-1] == j and times[-1] == t:
        return t - hws[-1]
    for k in range(len(stations) - 1, -1, -1):
        if stations[k] == j and times[k] == t:
            return t - hws[k]
    return None


# -- replication -------------------------------------------------------------

def replication_seeds(base_seed: int, n: int) -> list[int]:
    children = np.random.SeedSequence(base_seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


@dataclass
class Pooled:
    mean: dict[str, float]
    se: dict[str, float]
    values: dict[str, list[float]] = field(default_factory=dict)
    seeds: list[int] = field(default_factory=list)


def _call(job: tuple[Callable[..., Mapping[str, float]], dict[str, Any], int]) -> Mapping[str, float]:
    fn, kwargs, seed = job
    return fn(seed=seed, **kwargs)


def replicate(run_spec: Callable[..., Mapping[str, float]], n_replications: int,
              base_seed: int, *, parallel: bool = False, workers: int | None = None,
              **kwargs: Any) -> Pooled:
    """Run ``run_spec(seed=..., **kwargs)`` on independent seeds and pool.

    ``run_spec`` returns a mapping of scalar metrics; the result holds their
    means and standard errors.  Parallel and sequential runs give identical
    output because every replication owns its seed.
    """
    if n_replications < 1:
        raise ValueError("n_replications must be >= 1")
    seeds = replication_seeds(base_seed, n_replications)
    jobs = [(run_spec, kwargs, s) for s in seeds]
    if parallel and n_replications > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_call, jobs))
    else:
        results = [_call(j) for j in jobs]
    keys = sorted(results[0])
    values = {k: [float(r[k]) for r in results] for k in keys}
    mean = {k: float(np.mean(v)) for k, v in values.items()}
    se = {k: float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else math.nan
          for k, v in values.items()}
    return Pooled(mean=mean, se=se, values=values, seeds=seeds)
