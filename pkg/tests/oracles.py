"""Independent numerical oracles used by the test suites.

None of these call into the package: they simulate the underlying
stochastic processes directly.
"""

from __future__ import annotations

import numpy as np


def first_passage_mc(gap: float, drift: float, sigma0_sq: float, n: int,
                     rng: np.random.Generator, dt: float = 0.01,
                     max_steps: int = 200_000) -> np.ndarray:
    """Hitting distances of Brownian motion started at ``gap`` to level 0.

    Crossings between grid points are detected with the Brownian-bridge
    crossing probability; the hitting point is placed mid-step.
    """
    sign = np.sign(gap)
    pos = np.full(n, abs(float(gap)))
    mu = drift * sign  # drift toward the barrier is negative here
    sd = np.sqrt(sigma0_sq * dt)
    out = np.full(n, np.nan)
    alive = np.arange(n)
    for step in range(max_steps):
        if alive.size == 0:
            break
        x0 = pos[alive]
        x1 = x0 + mu * dt + sd * rng.standard_normal(alive.size)
        p_bridge = np.exp(-2.0 * x0 * np.clip(x1, 0, None) / (sigma0_sq * dt))
        hit = (x1 <= 0) | (rng.random(alive.size) < p_bridge)
        out[alive[hit]] = (step + 0.5) * dt
        pos[alive] = x1
        alive = alive[~hit]
    return out


def reflected_bm_samples(drift: float, sigma0_sq: float, n_chains: int, length: float,
                         rng: np.random.Generator, dt: float = 1.0) -> np.ndarray:
    """Exact samples of reflected Brownian motion at distance ``length``.

    Each step draws the increment and the minimum of the driving Brownian
    path over the step, so reflection inside a step is captured exactly.
    """
    r = np.zeros(n_chains)
    sd2 = sigma0_sq * dt
    for _ in range(int(round(length / dt))):
        y = drift * dt + np.sqrt(sd2) * rng.standard_normal(n_chains)
        u = rng.random(n_chains)
        low = 0.5 * (y - np.sqrt(y * y - 2.0 * sd2 * np.log(u)))
        r = np.maximum(r + y, y - low)
    return r


def switching_drift_samples(m_plus: float, m_minus: float, sigma0_sq: float,
                            n_chains: int, length: float, rng: np.random.Generator,
                            dt: float = 0.01) -> np.ndarray:
    """Fine-grid Brownian motion whose drift depends on its sign."""
    x = np.zeros(n_chains)
    sd = np.sqrt(sigma0_sq * dt)
    for _ in range(int(round(length / dt))):
        x += np.where(x > 0, m_plus, m_minus) * dt + sd * rng.standard_normal(n_chains)
    return x


def signal_delay_reference(u: np.ndarray, green: float, cycle: float) -> np.ndarray:
    """Plain pre-timed delay written out from first principles."""
    return np.where(u < green, 0.0, cycle - u)
