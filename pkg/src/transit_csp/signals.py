"""Pre-timed signals with priority grants and FCFS conflict resolution.

The bus approach sees green on ``[0, green_phase)`` of the cycle, measured
from the signal's offset.  A granted request either extends the green (the
request reached the signal while it was still green) or ends the crossing
phase early, no sooner than ``clear_lag`` after the request was actioned.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import CorridorConfig

MAINLINE = "mainline"
CROSSING = "crossing"


def phase_delay(u, cfg: CorridorConfig, granted):
    """Delay (s) for arrival at cycle position ``u``; vectorizes over arrays."""
    if np.ndim(u) == 0 and np.ndim(granted) == 0:
        return _scalar_delay(float(u), cfg, bool(granted))
    u = np.asarray(u, dtype=float)
    green, cycle = cfg.green_phase, cfg.cycle_length
    plain = np.where(u < green, 0.0, cycle - u)
    early = np.minimum(cycle - u, max(0.0, cfg.clear_lag - cfg.advance_notice))
    favoured = np.where(u < green + cfg.advance_notice, 0.0, early)
    out = np.where(granted, np.minimum(favoured, plain), plain)
    return float(out) if out.ndim == 0 else out


def _scalar_delay(u: float, cfg: CorridorConfig, granted: bool) -> float:
    green, cycle = cfg.green_phase, cfg.cycle_length
    if u < green:
        return 0.0
    if not granted:
        return cycle - u
    if u < green + cfg.advance_notice:
        return 0.0
    return min(cycle - u, max(0.0, cfg.clear_lag - cfg.advance_notice))


@dataclass(frozen=True)
class PriorityRequest:
    bus_id: int
    direction: str
    issue_time: float
    arrival_time: float

    @classmethod
    def for_arrival(cls, bus_id: int, arrival_time: float, notice: float,
                    direction: str = MAINLINE) -> "PriorityRequest":
        return cls(bus_id, direction, arrival_time - notice, arrival_time)


@dataclass(frozen=True)
class Grant:
    direction: str
    issue_time: float
    start: float  # served from the projected arrival ...
    end: float  # ... until the bus has cleared the intersection
    owner: int


@dataclass
class SignalState:
    """One signal: fixed timing plan, committed grants and crossing streams.

    ``crossing_phases`` holds, per crossing direction, the first arrival time
    of its deterministic-headway bus stream.
    """

    cfg: CorridorConfig
    offset: float
    crossing_phases: Sequence[float] = ()
    index: int = 0
    grants: list[Grant] = field(default_factory=list)
    requests: dict[str, int] = field(default_factory=lambda: {MAINLINE: 0, CROSSING: 0})
    denials: dict[str, int] = field(default_factory=lambda: {MAINLINE: 0, CROSSING: 0})

    def __post_init__(self) -> None:
        self._next_crossing = [float(p) for p in self.crossing_phases]

    def cycle_position(self, t: float) -> float:
        return (t - self.offset) % self.cfg.cycle_length

    def is_green(self, t: float) -> bool:
        return self.cycle_position(t) < self.cfg.green_phase

    def conflict(self, direction: str, start: float, end: float) -> Grant | None:
        lag = self.cfg.clear_lag
        for g in self.grants:
            if g.direction != direction and start < g.end + lag and g.start < end + lag:
                return g
        return None

    def submit(self, req: PriorityRequest) -> bool:
        """Grant ``req`` unless an earlier committed grant conflicts with it."""
        start = req.arrival_time
        end = start + self.cfg.passage_time
        self.requests[req.direction] += 1
        if self.conflict(req.direction, start, end) is not None:
            self.denials[req.direction] += 1
            return False
        self.grants.append(Grant(req.direction, req.issue_time, start, end, req.bus_id))
        return True

    def advance(self, t: float) -> None:
        """Commit crossing-route requests issued up to time ``t``."""
        if self._next_crossing:
            notice = self.cfg.advance_notice
            headway = self.cfg.crossing_headway_s
            while True:
                k = min(range(len(self._next_crossing)), key=self._next_crossing.__getitem__)
                arrival = self._next_crossing[k]
                if arrival - notice > t:
                    break
                self.submit(PriorityRequest(-1 - k, CROSSING, arrival - notice, arrival))
                self._next_crossing[k] = arrival + headway
        horizon = t - self.cfg.clear_lag
        if self.grants and self.grants[0].end < horizon:
            self.grants = [g for g in self.grants if g.end >= horizon]

    def active_grants(self, t: float) -> list[Grant]:
        return [g for g in self.grants if g.issue_time <= t <= g.end]


def make_signals(cfg: CorridorConfig, offsets: Sequence[float],
                 rng: np.random.Generator) -> list[SignalState]:
    """Signals for one replication, each crossed by its own crossing route."""
    n_dir = cfg.crossing_directions if cfg.crossing_routes_per_signal >= 1 else 0
    out = []
    for i, off in enumerate(offsets):
        phases = rng.uniform(0.0, cfg.crossing_headway_s, size=n_dir)
        out.append(SignalState(cfg, float(off), tuple(phases), index=i))
    return out


def signal_delay(arrival_time: float, state: SignalState, granted: bool) -> float:
    """Delay at ``state`` for a bus arriving at ``arrival_time``."""
    return phase_delay(state.cycle_position(arrival_time), state.cfg, granted)


def handle_request(req: PriorityRequest, state: SignalState) -> bool:
    """First-come first-served: earlier crossing requests are committed first."""
    state.advance(req.issue_time)
    return state.submit(req)


def delay_moment_oracle(cfg: CorridorConfig, granted_policy: str | float = "never",
                        step: float = 0.01) -> tuple[float, float]:
    """Mean and variance of the signal delay for arrivals uniform over a cycle.

    ``granted_policy`` is ``"never"``, ``"always"`` or a grant probability.
    Uses a midpoint sweep of the arrival phase; with ``step >= 1`` the sweep
    switches to whole-second arrivals (left endpoints) instead.
    """
    if step <= 0 or step > cfg.cycle_length:
        raise ValueError("step must lie in (0, cycle_length]")
    n = int(round(cfg.cycle_length / step))
    start = 0.0 if step >= 1.0 else 0.5
    u = (np.arange(n) + start) * (cfg.cycle_length / n)
    plain = phase_delay(u, cfg, False)
    favoured = phase_delay(u, cfg, True)
    if granted_policy == "never":
        r = 0.0
    elif granted_policy == "always":
        r = 1.0
    else:
        r = float(granted_policy)
        if not 0.0 <= r <= 1.0:
            raise ValueError("grant rate must lie in [0, 1]")
    mean = r * favoured.mean() + (1 - r) * plain.mean()
    second = r * (favoured**2).mean() + (1 - r) * (plain**2).mean()
    return float(mean), float(max(second - mean * mean, 0.0))


def expected_denial_rate(cfg: CorridorConfig) -> float:
    """Denial probability of an unconditional mainline request.

    A request is denied when a crossing bus was served within
    ``passage_time + clear_lag`` before it; each crossing stream has a
    uniformly random phase.
    """
    n_dir = cfg.crossing_directions if cfg.crossing_routes_per_signal >= 1 else 0
    w = min(1.0, (cfg.passage_time + cfg.clear_lag) / cfg.crossing_headway_s)
    return 1.0 - (1.0 - w) ** n_dir


def red_arrival_moments(cfg: CorridorConfig) -> tuple[float, float]:
    """Closed-form delay moments without priority: red^2/2C and its variance."""
    red, cycle = cfg.red_phase, cfg.cycle_length
    mean = red * red / (2 * cycle)
    second = red**3 / (3 * cycle)
    return mean, second - mean * mean


__all__ = [
    "CROSSING", "MAINLINE", "Grant", "PriorityRequest", "SignalState",
    "delay_moment_oracle", "expected_denial_rate", "handle_request", "make_signals",
    "phase_delay", "red_arrival_moments", "signal_delay",
]
