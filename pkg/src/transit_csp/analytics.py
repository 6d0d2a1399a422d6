"""Brownian-motion performance model for schedule-based operation.

Lateness is treated as a Brownian motion in distance (signal spacings) with
a state-dependent drift: ``m_plus`` while the bus requests priority and
``m_minus`` while it does not.  Case (i) has no holding; case (ii) holds
buses by schedule at every station, which turns the equilibrium into a
reflecting barrier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize

from .config import TravelTimeComponents


class UnstableScheduleError(ValueError):
    """Schedule pace outside the range where lateness stays bounded."""


class InfeasibleCapError(ValueError):
    """Requested variance cap lies below what any schedule pace achieves."""

    def __init__(self, msg: str, minimum: float):
        super().__init__(msg)
        self.minimum = minimum


@dataclass(frozen=True)
class DriftPair:
    m_plus: float
    m_minus: float
    gamma: float
    delta_gap: float


@dataclass(frozen=True)
class SteadyStateMoments:
    mean: float
    variance: float
    p_plus: float
    p_minus: float

    @property
    def rms(self) -> float:
        return math.sqrt(self.mean**2 + self.variance)


@dataclass(frozen=True)
class CaseIIResult:
    mean: float
    variance: float
    rms: float
    delta_star: float


def drifts(T_s: float, T_u: float, T_c: float) -> DriftPair:
    if not T_c < T_u:
        raise ValueError("priority pace T_c must be faster than T_u")
    if T_s <= T_c:
        raise UnstableScheduleError(
            f"T_s={T_s} is not slower than the all-priority pace T_c={T_c}: "
            "even TSP cannot keep up (TSP benchmark regime, lateness unbounded)")
    if T_s >= T_u:
        raise UnstableScheduleError(
            f"T_s={T_s} is not faster than the no-priority pace T_u={T_u}: "
            "buses run early without bound (NTP benchmark regime); use schedule holding")
    m_plus = T_c - T_s
    m_minus = T_u - T_s
    return DriftPair(m_plus, m_minus, -m_plus / m_minus, T_u - T_c)


def drifts_from_gamma(gamma: float, delta_gap: float) -> tuple[float, float]:
    """``(m_plus, m_minus)`` from the ratio and gap parametrization."""
    return -delta_gap * gamma / (1 + gamma), delta_gap / (1 + gamma)


def gamma_of_pace(T_s: float, T_u: float, T_c: float) -> float:
    return (T_s - T_c) / (T_u - T_s)


def pace_of_gamma(gamma: float, T_u: float, T_c: float) -> float:
    return (T_c + gamma * T_u) / (1 + gamma)


def first_passage_moments(initial_gap: float, drift: float,
                          sigma0_sq: float) -> tuple[float, float]:
    """Mean and variance of the distance back to equilibrium.

    The hitting distance is inverse Gaussian with mean ``gap/-drift`` and
    shape ``gap^2/sigma0_sq``.
    """
    if sigma0_sq <= 0:
        raise ValueError("sigma0_sq must be positive")
    if initial_gap == 0:
        return 0.0, 0.0
    if initial_gap * drift >= 0:
        raise UnstableScheduleError(
            "drift pushes lateness away from equilibrium; no finite recovery")
    mean = initial_gap / -drift
    var = initial_gap * sigma0_sq / -(drift**3)
    return mean, var


def occupancy_fractions(gamma: float) -> tuple[float, float]:
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if math.isinf(gamma):
        return 0.0, 1.0
    return 1.0 / (1.0 + gamma), gamma / (1.0 + gamma)


def exponential_part_moments(sigma0_sq: float, drift: float) -> tuple[float, float]:
    """First two moments of one side of the deviation.

    Each side behaves as Brownian motion against a reflecting barrier, so
    its magnitude is exponential with scale ``sigma0_sq / (2|drift|)``.
    """
    scale = sigma0_sq / (2 * abs(drift))
    return scale, 2 * scale * scale


def steady_state_case_i(gamma: float, delta_gap: float, sigma0_sq: float) -> SteadyStateMoments:
    """Stationary mean and variance of ``lateness - delta`` without holding."""
    if gamma <= 0 or delta_gap <= 0 or sigma0_sq <= 0:
        raise ValueError("gamma, delta_gap and sigma0_sq must be positive")
    k = sigma0_sq / (2 * delta_gap)
    mean = k * (1 - gamma**2) / gamma
    variance = k * k * (1 + gamma) ** 2 * (1 + gamma**2) / gamma**2
    p_plus, p_minus = occupancy_fractions(gamma)
    return SteadyStateMoments(mean, variance, p_plus, p_minus)


def delta_star_case_i(gamma: float, delta_gap: float, sigma0_sq: float) -> float:
    """Threshold that centres the lateness on the schedule."""
    return -steady_state_case_i(gamma, delta_gap, sigma0_sq).mean + 0.0


def sigma0_at_rate(r: float, sigma0u_sq: float, sigma0c_sq: float) -> float:
    """Per-spacing variance when a fraction ``r`` of signals is requested."""
    if not 0.0 <= r <= 1.0:
        raise ValueError("request rate must lie in [0, 1]")
    return (1 - r) * sigma0u_sq + r * sigma0c_sq


def sigma0_interpolated(gamma: float, sigma0u_sq: float, sigma0c_sq: float) -> float:
    """Variance interpolated at the request rate implied by ``gamma``."""
    if sigma0c_sq > sigma0u_sq:
        raise ValueError("sigma0c_sq must not exceed sigma0u_sq")
    return sigma0_at_rate(occupancy_fractions(gamma)[0], sigma0u_sq, sigma0c_sq)


def steady_state_case_ii(m_plus: float, sigma0_sq: float) -> CaseIIResult:
    """Schedule holding at every station: the deviation is one-sided."""
    if m_plus >= 0:
        raise UnstableScheduleError(
            f"drift m_plus={m_plus} is not negative: lateness grows without bound")
    if sigma0_sq <= 0:
        raise ValueError("sigma0_sq must be positive")
    mean = sigma0_sq / (-2 * m_plus)
    return CaseIIResult(mean=mean, variance=mean * mean, rms=mean, delta_star=-mean)


def rms_case_ii(m_plus: float, sigma0_sq: float, delta: float) -> float:
    """RMS lateness for an arbitrary threshold ``delta``."""
    res = steady_state_case_ii(m_plus, sigma0_sq)
    return math.sqrt((res.mean + delta) ** 2 + res.variance)


def case_ii_for_policy(T_s: float, comps: TravelTimeComponents, priority: str,
                       *, request_rate: float | None = None,
                       sigma_source: str = "requesting") -> CaseIIResult:
    """Case (ii) prediction for ``priority`` in {"ntp", "csp", "tsp"}.

    ``sigma_source`` selects the CSP variance: ``"requesting"`` uses the
    priority-regime variance (late buses always request), ``"rate"`` the
    interpolation at ``request_rate`` and ``"gamma"`` the interpolation at
    the no-holding request fraction (only for ``T_c < T_s < T_u``).
    """
    if priority == "ntp":
        return steady_state_case_ii(comps.tu - T_s, comps.var_u)
    m_plus = comps.tc - T_s
    if priority == "tsp" or sigma_source == "requesting":
        return steady_state_case_ii(m_plus, comps.var_c)
    if sigma_source == "rate":
        if request_rate is None:
            raise ValueError("sigma_source='rate' needs request_rate")
        return steady_state_case_ii(m_plus, sigma0_at_rate(request_rate, comps.var_u, comps.var_c))
    if sigma_source == "gamma":
        return steady_state_case_ii(
            m_plus, sigma0_interpolated(gamma_of_pace(T_s, comps.tu, comps.tc), comps.var_u, comps.var_c))
    raise ValueError(f"unknown sigma_source {sigma_source!r}")


def case_i_curve(T_s: float, comps: TravelTimeComponents,
                 sigma0_sq: float | None = None) -> SteadyStateMoments:
    """Case (i) moments at pace ``T_s``; variance interpolated unless given."""
    d = drifts(T_s, comps.tu, comps.tc)
    s2 = sigma0_interpolated(d.gamma, comps.var_u, comps.var_c) if sigma0_sq is None else sigma0_sq
    return steady_state_case_i(d.gamma, d.delta_gap, s2)


def schedule_pace_optimizer(variance_cap: float, case: str, comps: TravelTimeComponents,
                            *, sigma0_sq: float | None = None, priority: str = "csp",
                            request_rate: float | Callable[[float], float] | None = None,
                            tol: float = 1e-6) -> float:
    """Fastest schedule pace whose predicted variance stays under the cap.

    Case "i" searches the declining branch between ``T_c`` and the curve
    minimum (at or below the midpoint of ``T_c`` and ``T_u``).  Case "ii"
    searches above ``T_c`` where the variance falls monotonically.
    """
    tc, tu = comps.tc, comps.tu
    if case == "i":
        def var(ts: float) -> float:
            return case_i_curve(ts, comps, sigma0_sq).variance

        mid = 0.5 * (tu + tc)
        lo = tc + 1e-9 * (tu - tc)
        hi = tu - 1e-9 * (tu - tc)
        grid = np.linspace(lo, hi, 2001)
        k = int(np.argmin([var(t) for t in grid]))
        res = optimize.minimize_scalar(var, bounds=(grid[max(k - 1, 0)], grid[min(k + 1, 2000)]),
                                       method="bounded", options={"xatol": tol * 1e-3})
        # with a fixed variance the curve bottoms out exactly at gamma = 1
        t_min = mid if sigma0_sq is not None else float(res.x)
        v_min = var(t_min)
    elif case == "ii":
        def var(ts: float) -> float:
            if priority == "csp" and request_rate is not None:
                r = request_rate(ts) if callable(request_rate) else request_rate
                return case_ii_for_policy(ts, comps, "csp", request_rate=r,
                                          sigma_source="rate").variance
            if sigma0_sq is not None:
                return steady_state_case_ii(tc - ts, sigma0_sq).variance
            return case_ii_for_policy(ts, comps, priority).variance

        lo = (tu if priority == "ntp" else tc) + 1e-9
        t_min = lo + 1e4
        v_min = var(t_min)
    else:
        raise ValueError("case must be 'i' or 'ii'")

    if variance_cap < v_min - 1e-9 * v_min:
        raise InfeasibleCapError(
            f"variance cap {variance_cap:.6g} s^2 is below the attainable minimum "
            f"{v_min:.6g} s^2 (at T_s={t_min:.6g} s)", v_min)
    if var(lo) <= variance_cap:
        return lo
    if variance_cap <= v_min:
        return t_min
    return float(optimize.bisect(lambda t: var(t) - variance_cap, lo, t_min, xtol=tol))
