"""Corridor configuration, unit conventions and shared domain types.

Units: distance is measured in signal spacings, time in seconds.  Raw
configuration keeps the engineering units of the input (miles, minutes,
mi/hr) and exposes converted values as properties.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np


class ConfigError(ValueError):
    """Invalid or unknown configuration value."""


def sample_offsets(seed: int, n: int, cycle_length: float) -> tuple[float, ...]:
    """Per-signal phase offsets drawn uniformly in ``[0, cycle_length)``."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    return tuple(float(v) for v in rng.uniform(0.0, cycle_length, size=n))


@dataclass(frozen=True)
class CorridorConfig:
    signal_separation: float = 0.25  # mi
    station_separation: float = 0.25  # mi
    crossing_route_separation: float = 0.25  # mi
    crossing_route_headway: float = 10.0  # min, per direction
    cycle_length: float = 100.0  # s
    green_phase: float = 60.0  # s, green shown to the bus approach
    advance_notice: float = 10.0  # s
    clear_lag: float = 20.0  # s
    bus_cruise_speed: float = 30.0  # mi/hr
    # time a bus needs to clear the intersection once served
    passage_time: float = 2.5  # s
    crossing_directions: int = 2
    tp_mean: float = 13.60  # s
    tp_var: float = 130.9  # s^2
    seed: int = 0
    n_signals: int = 200
    signal_offsets: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        for name in ("signal_separation", "station_separation",
                     "crossing_route_separation", "crossing_route_headway",
                     "cycle_length", "bus_cruise_speed"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("green_phase", "advance_notice", "clear_lag", "passage_time", "tp_var"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        # green == cycle is the unsignalized limit; build_config() forbids it
        if self.green_phase > self.cycle_length:
            raise ConfigError("green_phase exceeds cycle_length")
        if self.advance_notice + self.clear_lag > self.cycle_length:
            raise ConfigError("advance_notice + clear_lag must not exceed cycle_length")
        if self.crossing_directions < 0 or self.n_signals < 1:
            raise ConfigError("crossing_directions must be >= 0 and n_signals >= 1")
        if not self.signal_offsets:
            object.__setattr__(self, "signal_offsets",
                               sample_offsets(self.seed, self.n_signals, self.cycle_length))

    @property
    def red_phase(self) -> float:
        return self.cycle_length - self.green_phase

    @property
    def line_haul(self) -> float:
        """Free-flow travel time over one signal spacing (s)."""
        return self.signal_separation / self.bus_cruise_speed * 3600.0

    @property
    def crossing_headway_s(self) -> float:
        return self.crossing_route_headway * 60.0

    @property
    def crossing_routes_per_signal(self) -> float:
        return self.signal_separation / self.crossing_route_separation

    def with_seed(self, seed: int, n_signals: int | None = None) -> "CorridorConfig":
        n = self.n_signals if n_signals is None else n_signals
        return replace(self, seed=seed, n_signals=n, signal_offsets=())

    def as_flat(self) -> dict[str, Any]:
        out = asdict(self)
        out.pop("signal_offsets")
        return out

    def digest(self) -> str:
        text = "\n".join(f"{k} = {v!r}" for k, v in sorted(self.as_flat().items()))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


CONFIG_KEYS = frozenset(f.name for f in fields(CorridorConfig)) - {"signal_offsets"}
_INT_KEYS = {"seed", "n_signals", "crossing_directions"}
_DURATION_KEYS = {"crossing_route_headway", "cycle_length", "green_phase"}


def build_config(overrides: Mapping[str, Any] | None = None) -> CorridorConfig:
    """Default corridor with ``overrides`` applied.

    Stricter than the constructor: the green phase must be shorter than the
    cycle and timing durations must be positive.
    """
    overrides = dict(overrides or {})
    unknown = set(overrides) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(sorted(unknown))}")
    values: dict[str, Any] = {}
    for key, raw in overrides.items():
        try:
            values[key] = int(raw) if key in _INT_KEYS else float(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: cannot parse {raw!r}") from None
        if key in _DURATION_KEYS and values[key] <= 0:
            raise ConfigError(f"{key} must be a positive duration, got {raw!r}")
    cfg = CorridorConfig(**values)
    if not cfg.green_phase < cfg.cycle_length:
        raise ConfigError("green_phase must be shorter than cycle_length")
    return cfg


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


@dataclass(frozen=True)
class TravelTimeComponents:
    """Moments (s, s^2) of the per-spacing travel time and its parts."""

    line_haul: float
    tp_mean: float
    tp_var: float
    tn_mean: float
    tn_var: float
    ty_mean: float
    ty_var: float
    denial_rate: float = 0.08

    @property
    def tu(self) -> float:
        return self.line_haul + self.tp_mean + self.tn_mean

    @property
    def tc(self) -> float:
        w = self.denial_rate
        return self.line_haul + self.tp_mean + w * self.tn_mean + (1 - w) * self.ty_mean

    @property
    def var_u(self) -> float:
        return self.tp_var + self.tn_var

    @property
    def var_c(self) -> float:
        w = self.denial_rate
        return self.tp_var + w * self.tn_var + (1 - w) * self.ty_var

    @property
    def delta_gap(self) -> float:
        return self.tu - self.tc


@dataclass(frozen=True)
class ReportedComponents(TravelTimeComponents):
    """Component table with the composites pinned to reported values."""

    reported_tu: float = math.nan
    reported_tc: float = math.nan
    reported_var_u: float = math.nan
    reported_var_c: float = math.nan

    @property
    def tu(self) -> float:
        return self.reported_tu

    @property
    def tc(self) -> float:
        return self.reported_tc

    @property
    def var_u(self) -> float:
        return self.reported_var_u

    @property
    def var_c(self) -> float:
        return self.reported_var_c


# Reference travel-time components for the default corridor (s, s^2).
BASELINE_COMPONENTS = ReportedComponents(
    line_haul=30.00, tp_mean=13.60, tp_var=130.9,
    tn_mean=8.20, tn_var=154.2, ty_mean=2.55, ty_var=17.35,
    reported_tu=51.80, reported_tc=46.62,
    reported_var_u=285.0, reported_var_c=159.6,
)


def derive_travel_components(cfg: CorridorConfig, tp_mean: float | None = None,
                             tp_var: float | None = None, *, denial_rate: float = 0.08,
                             sweep_step: float = 0.01) -> TravelTimeComponents:
    """Travel-time components for ``cfg`` using the signal-delay oracle.

    ``sweep_step`` is the arrival-time resolution of the oracle sweep; a
    one-second step reproduces a simulator that runs on a one-second clock.
    """
    from .signals import delay_moment_oracle

    tn = delay_moment_oracle(cfg, "never", step=sweep_step)
    ty = delay_moment_oracle(cfg, "always", step=sweep_step)
    return TravelTimeComponents(
        line_haul=cfg.line_haul,
        tp_mean=cfg.tp_mean if tp_mean is None else tp_mean,
        tp_var=cfg.tp_var if tp_var is None else tp_var,
        tn_mean=tn[0], tn_var=tn[1], ty_mean=ty[0], ty_var=ty[1],
        denial_rate=denial_rate,
    )


# -- control policy ---------------------------------------------------------

HOLDING_MODES = ("none", "schedule", "headway")


@dataclass(frozen=True)
class ControlPolicy:
    """Holding mode x priority threshold.

    ``delta`` is the CSP threshold: +inf is NTP, -inf is TSP.
    ``hold_offset`` is the lateness level schedule holding releases buses
    at; it defaults to ``delta`` when finite, else 0.
    """

    holding: str = "none"
    delta: float = math.inf
    schedule_pace: float | None = None
    k0: float = 0.0
    k1: float = 0.2
    hold_offset: float | None = None

    def __post_init__(self) -> None:
        if self.holding not in HOLDING_MODES:
            raise ConfigError(f"unknown holding mode {self.holding!r}")
        if math.isnan(self.delta):
            raise ConfigError("delta must not be NaN")
        if self.holding == "headway" and self.k0 < 0:
            raise ConfigError("headway holding requires k0 >= 0")
        if self.holding != "headway" and self.schedule_pace is None:
            raise ConfigError("schedule-based operation needs a schedule_pace")

    @classmethod
    def ntp(cls, **kw: Any) -> "ControlPolicy":
        return cls(delta=math.inf, **kw)

    @classmethod
    def tsp(cls, **kw: Any) -> "ControlPolicy":
        return cls(delta=-math.inf, **kw)

    @classmethod
    def csp(cls, delta: float = 0.0, **kw: Any) -> "ControlPolicy":
        return cls(delta=delta, **kw)

    @property
    def priority(self) -> str:
        if self.delta == math.inf:
            return "ntp"
        if self.delta == -math.inf:
            return "tsp"
        return "csp"

    @property
    def barrier(self) -> float:
        if self.hold_offset is not None:
            return self.hold_offset
        return self.delta if math.isfinite(self.delta) else 0.0


def priority_delta(name: str, delta: float = 0.0) -> float:
    name = name.lower()
    if name == "ntp":
        return math.inf
    if name == "tsp":
        return -math.inf
    if name == "csp":
        return float(delta)
    raise ConfigError(f"unknown priority mode {name!r}")


@dataclass
class BusState:
    """Mutable per-bus state owned by one simulation engine."""

    index: int
    position: int = 0  # locations passed, in signal spacings
    clock: float = 0.0
    lateness: float = 0.0
    arrivals: dict[int, float] = field(default_factory=dict)
    projected: dict[int, float] = field(default_factory=dict)
    hold_time: float = 0.0
    requests: list[tuple[int, float, bool]] = field(default_factory=list)

    def advance_clock(self, t: float) -> None:
        if t < self.clock:
            raise ValueError(f"bus {self.index}: clock cannot move backwards ({t} < {self.clock})")
        self.clock = t

    def hold(self, duration: float) -> None:
        if duration < 0:
            raise ValueError("hold duration must be non-negative")
        self.hold_time += duration
        self.clock += duration
