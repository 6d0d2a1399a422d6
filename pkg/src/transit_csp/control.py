"""Desired delay, holding and the conditional priority rule.

A single desired delay ``D`` drives both agents: drivers hold for its
positive part at control points and the bus asks for priority at a signal
when ``D`` falls below ``-delta``.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class DesiredDelay:
    value: float
    location: int = 0
    bus: int = 0


def desired_delay_schedule(scheduled: float, projected: float,
                           location: int = 0, bus: int = 0) -> DesiredDelay:
    """Schedule-based target: the negative of the projected lateness."""
    return DesiredDelay(scheduled - projected, location, bus)


def desired_delay_headway(a_n: float, a_prev: float, alpha_next: float,
                          k0: float = 0.0, k1: float = 0.2,
                          location: int = 0, bus: int = 0) -> DesiredDelay:
    """Two-sided headway target from the forward and backward gaps."""
    forward = a_n - a_prev
    backward = alpha_next - a_n
    return DesiredDelay(k0 - k1 * forward + k1 * backward, location, bus)


def holding_time(D: DesiredDelay | float) -> float:
    value = D.value if isinstance(D, DesiredDelay) else float(D)
    return max(value, 0.0)


def should_request_priority(D: DesiredDelay | float, delta: float) -> bool:
    value = D.value if isinstance(D, DesiredDelay) else float(D)
    return value < -delta
