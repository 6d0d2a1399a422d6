import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import first_passage_mc, reflected_bm_samples, switching_drift_samples
from transit_csp.analytics import (InfeasibleCapError, UnstableScheduleError, case_i_curve,
                                   case_ii_for_policy, delta_star_case_i, drifts,
                                   drifts_from_gamma, exponential_part_moments,
                                   first_passage_moments, gamma_of_pace, occupancy_fractions,
                                   pace_of_gamma, rms_case_ii, schedule_pace_optimizer,
                                   sigma0_at_rate, sigma0_interpolated, steady_state_case_i,
                                   steady_state_case_ii)
from transit_csp.config import BASELINE_COMPONENTS as B

TU, TC = 51.80, 46.62


def test_drifts_at_gamma_one():
    d = drifts(49.21, TU, TC)
    assert d.gamma == pytest.approx(1.0)
    assert d.m_plus == pytest.approx(-2.59)
    assert d.m_minus == pytest.approx(2.59)
    assert d.delta_gap == pytest.approx(5.18)


def test_drifts_fast_schedule():
    assert drifts(48.0, TU, TC).gamma == pytest.approx(1.38 / 3.80)


@pytest.mark.parametrize("ts,regime", [(TC, "TSP"), (45.0, "TSP"), (TU, "NTP"), (60.0, "NTP")])
def test_drifts_outside_band(ts, regime):
    with pytest.raises(UnstableScheduleError, match=regime):
        drifts(ts, TU, TC)


def test_round_trip_vectorized():
    rng = np.random.default_rng(0)
    tc = rng.uniform(30, 60, 10_000)
    tu = tc + rng.uniform(0.5, 20, tc.size)
    ts = tc + rng.uniform(0.01, 0.99, tc.size) * (tu - tc)
    for a, b, c in zip(ts, tu, tc):
        d = drifts(a, b, c)
        mp, mm = drifts_from_gamma(d.gamma, d.delta_gap)
        assert abs(mp - d.m_plus) < 1e-12 and abs(mm - d.m_minus) < 1e-12


@given(tc=st.floats(20, 80), gap=st.floats(0.1, 30), frac=st.floats(0.01, 0.99))
def test_round_trip_property(tc, gap, frac):
    tu = tc + gap
    ts = tc + frac * gap
    d = drifts(ts, tu, tc)
    mp, mm = drifts_from_gamma(d.gamma, d.delta_gap)
    assert mp == pytest.approx(d.m_plus, abs=1e-12)
    assert mm == pytest.approx(d.m_minus, abs=1e-12)
    assert pace_of_gamma(gamma_of_pace(ts, tu, tc), tu, tc) == pytest.approx(ts, abs=1e-9)


def test_first_passage_examples():
    mean, var = first_passage_moments(10.0, -2.59, 222.3)
    assert mean == pytest.approx(3.861, abs=1e-3)
    assert var == pytest.approx(127.9, abs=0.1)
    assert first_passage_moments(0.0, -2.59, 222.3) == (0.0, 0.0)
    assert first_passage_moments(-10.0, 2.59, 222.3) == pytest.approx((mean, var))
    with pytest.raises(UnstableScheduleError):
        first_passage_moments(10.0, 2.59, 222.3)


@pytest.mark.parametrize("gap,drift", [(10.0, -2.59), (-10.0, 2.59)])
def test_first_passage_against_monte_carlo(gap, drift):
    x = first_passage_mc(gap, drift, 222.3, 100_000, np.random.default_rng(3))
    mean, var = first_passage_moments(gap, drift, 222.3)
    assert not np.isnan(x).any()
    assert abs(x.mean() - mean) < 3 * x.std(ddof=1) / math.sqrt(x.size)
    se_var = ((x - x.mean()) ** 2).std(ddof=1) / math.sqrt(x.size)
    assert abs(x.var() - var) < 3 * se_var


def test_occupancy():
    assert occupancy_fractions(1.0) == (0.5, 0.5)
    assert occupancy_fractions(3.0) == (0.25, 0.75)
    assert occupancy_fractions(1e-12)[0] == pytest.approx(1.0)


def test_reflected_walk_is_exponential():
    drift, s2 = -2.59, 222.3
    r = reflected_bm_samples(drift, s2, 20_000, 400.0, np.random.default_rng(5))
    mean, second = exponential_part_moments(s2, drift)
    assert abs(r.mean() - mean) < 3 * r.std(ddof=1) / math.sqrt(r.size)
    assert abs((r**2).mean() - second) < 3 * (r**2).std(ddof=1) / math.sqrt(r.size)


def test_case_i_examples():
    assert steady_state_case_i(1.0, 5.18, 222.3).mean == 0.0
    assert steady_state_case_i(1.0, 5.18, 222.3).variance == pytest.approx(3.68e3, rel=2e-3)
    assert steady_state_case_i(0.5, 5.18, 207.2).mean == pytest.approx(30.0, abs=0.05)
    assert delta_star_case_i(1.0, 5.18, 222.3) == 0.0
    assert delta_star_case_i(2.0, 5.18, 244.5) == pytest.approx(35.4, abs=0.05)
    assert delta_star_case_i(0.5, 5.18, 207.2) < 0


def test_case_i_variance_against_switching_walk():
    mp, mm = drifts_from_gamma(1.0, 5.18)
    x = switching_drift_samples(mp, mm, 222.3, 4000, 200.0, np.random.default_rng(9))
    assert x.var() == pytest.approx(steady_state_case_i(1.0, 5.18, 222.3).variance, rel=0.10)
    assert abs(x.mean()) < 3 * x.std() / math.sqrt(x.size)


@settings(max_examples=200)
@given(gamma=st.floats(0.05, 20), gap=st.floats(0.5, 20), s2=st.floats(10, 500))
def test_case_i_mean_from_parts(gamma, gap, s2):
    mp, mm = drifts_from_gamma(gamma, gap)
    p_plus, p_minus = occupancy_fractions(gamma)
    beta_plus = exponential_part_moments(s2, mp)[0]
    beta_minus = exponential_part_moments(s2, mm)[0]
    res = steady_state_case_i(gamma, gap, s2)
    assert res.mean == pytest.approx(p_plus * beta_plus - p_minus * beta_minus, rel=1e-9, abs=1e-9)
    assert res.p_plus + res.p_minus == pytest.approx(1.0)
    assert res.variance > 0


@settings(max_examples=200)
@given(gamma=st.floats(0.05, 20), gap=st.floats(0.5, 20), s2=st.floats(10, 500))
def test_case_i_variance_expansion(gamma, gap, s2):
    # second moments of the two exponential parts, weighted, minus the squared mean
    mp, mm = drifts_from_gamma(gamma, gap)
    p_plus, p_minus = occupancy_fractions(gamma)
    b1, m2p = exponential_part_moments(s2, mp)
    b2, m2m = exponential_part_moments(s2, mm)
    expanded = p_plus * m2p + p_minus * m2m - (p_plus * b1 - p_minus * b2) ** 2
    assert steady_state_case_i(gamma, gap, s2).variance == pytest.approx(expanded, rel=1e-9)


@given(gap=st.floats(0.5, 20), s2=st.floats(10, 500))
def test_case_i_variance_minimized_at_gamma_one(gap, s2):
    grid = np.concatenate([np.linspace(0.05, 0.99, 60), np.linspace(1.01, 20, 60)])
    v1 = steady_state_case_i(1.0, gap, s2).variance
    assert all(v1 <= steady_state_case_i(g, gap, s2).variance for g in grid)


def test_interpolated_variance():
    assert sigma0_interpolated(1.0, 285.0, 159.6) == pytest.approx(222.3)
    assert sigma0_interpolated(1e-12, 285.0, 159.6) == pytest.approx(159.6)
    # direct evaluation at gamma = 2 and 0.5
    assert sigma0_interpolated(2.0, 285.0, 159.6) == pytest.approx(243.2)
    assert sigma0_interpolated(0.5, 285.0, 159.6) == pytest.approx(201.4)
    assert sigma0_at_rate(0.5, 285.0, 159.6) == pytest.approx(222.3)
    with pytest.raises(ValueError):
        sigma0_interpolated(1.0, 100.0, 200.0)


def test_case_ii_examples():
    r = steady_state_case_ii(-2.59, 222.3)
    assert r.rms == pytest.approx(42.9, abs=0.05)
    assert r.delta_star == pytest.approx(-42.9, abs=0.05)
    assert r.variance == pytest.approx(r.mean**2)
    assert steady_state_case_ii(-1e9, 222.3).rms < 1e-6
    assert case_ii_for_policy(53.80, B, "ntp").rms == pytest.approx(71.25)
    with pytest.raises(UnstableScheduleError):
        case_ii_for_policy(51.0, B, "ntp")
    with pytest.raises(UnstableScheduleError):
        steady_state_case_ii(0.0, 222.3)


def test_case_ii_threshold_optimal():
    base = rms_case_ii(-2.59, 222.3, steady_state_case_ii(-2.59, 222.3).delta_star)
    for d in (-60.0, -30.0, 0.0, 10.0):
        assert rms_case_ii(-2.59, 222.3, d) >= base


def test_case_ii_reflected_walk_oracle():
    r = reflected_bm_samples(-2.59, 222.3, 20_000, 400.0, np.random.default_rng(2))
    # with delta = delta*, lateness is the reflected walk shifted by delta*
    rms = math.sqrt(r.var())
    assert rms == pytest.approx(steady_state_case_ii(-2.59, 222.3).rms, rel=0.03)


def test_case_ii_variance_sources():
    a = case_ii_for_policy(48.0, B, "csp")
    b = case_ii_for_policy(48.0, B, "csp", request_rate=1.0, sigma_source="rate")
    assert a.mean == pytest.approx(b.mean)
    c = case_ii_for_policy(48.0, B, "csp", request_rate=0.82, sigma_source="rate")
    assert c.mean > a.mean
    with pytest.raises(ValueError):
        case_ii_for_policy(48.0, B, "csp", sigma_source="rate")


def test_optimizer_at_curve_minimum():
    s2 = 222.3
    vmin = steady_state_case_i(1.0, B.delta_gap, s2).variance
    assert schedule_pace_optimizer(vmin, "i", B, sigma0_sq=s2) == pytest.approx(49.21, abs=1e-6)


def test_optimizer_declining_branch_against_grid():
    ts = schedule_pace_optimizer(5000.0, "i", B)
    assert ts < 49.21
    grid = np.linspace(B.tc + 1e-3, 49.21, 200_001)
    ok = [t for t in grid if case_i_curve(t, B).variance <= 5000.0]
    assert ts == pytest.approx(ok[0], abs=1e-4)


def test_optimizer_case_ii():
    ts = schedule_pace_optimizer(2000.0, "ii", B, request_rate=0.82)
    grid = np.linspace(B.tc + 1e-3, 60, 200_001)
    var = [case_ii_for_policy(t, B, "csp", request_rate=0.82, sigma_source="rate").variance
           for t in grid[::20]]
    first = grid[::20][int(np.argmax(np.array(var) <= 2000.0))]
    assert ts == pytest.approx(first, abs=2e-3)
    assert schedule_pace_optimizer(500.0, "ii", B) > 49.21


def test_optimizer_infeasible_cap():
    with pytest.raises(InfeasibleCapError) as err:
        schedule_pace_optimizer(100.0, "i", B)
    assert err.value.minimum > 100.0
