import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmgmrf.errors import NonMonotonicTimestamps, TooFewSamples
from mmgmrf.stopgo import (LinkTrace, build_ls_system, decompose_trajectory, kkt_residual,
                           lambda_grid, lasso_path_df, select_lambda_bic, solve_lasso, split_points)
from mmgmrf.synth import render_gps_trace, stop_profile
from mmgmrf.markov import CompressedObservation

from oracles import lasso_support_enumeration


def trace_from_speeds(v, dt, x0=0.0, noise=0.0, rng=None):
    t = np.r_[0.0, np.cumsum(dt)]
    x = x0 + np.r_[0.0, np.cumsum(v * dt)]
    if noise:
        x = x + rng.normal(0, noise, x.size)
    return LinkTrace(link=0, t=t, x=x)


def test_ls_system_examples():
    A, b = build_ls_system(LinkTrace(0, [0, 1, 2], [0, 5, 10]))
    np.testing.assert_array_equal(A, [[1, 0], [1, 1]])
    np.testing.assert_array_equal(b, [5, 10])
    A, b = build_ls_system(LinkTrace(0, [0, 2], [0, 8]))
    np.testing.assert_array_equal(A, [[2]])
    np.testing.assert_array_equal(b, [8])


def test_ls_system_recovers_speeds(rng):
    dt = rng.uniform(0.5, 2.0, 5)
    v = rng.uniform(0, 15, 5)
    A, b = build_ls_system(trace_from_speeds(v, dt, x0=3.0))
    np.testing.assert_allclose(np.linalg.solve(A, b), v, atol=1e-10)


def test_trace_validation():
    with pytest.raises(NonMonotonicTimestamps):
        LinkTrace(0, [0, 2, 1], [0, 1, 2])
    with pytest.raises(TooFewSamples):
        LinkTrace(0, [0], [0])


def test_lasso_zero_penalty_recovers_speeds(rng):
    dt = rng.uniform(0.5, 2.0, 8)
    v = rng.uniform(1, 15, 8)
    v[3] = 0.0
    A, b = build_ls_system(trace_from_speeds(v, dt))
    np.testing.assert_allclose(solve_lasso(A, b, 0.0), v, atol=1e-6)


def test_lasso_large_penalty_is_zero(rng):
    dt = rng.uniform(0.5, 2.0, 6)
    A, b = build_ls_system(trace_from_speeds(rng.uniform(1, 15, 6), dt))
    lam_max = float(np.max(A.T @ b))
    assert np.all(solve_lasso(A, b, lam_max) == 0)
    assert np.all(solve_lasso(A, b, 1e9) == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2 ** 31), st.floats(0.0, 1.0))
def test_lasso_matches_support_enumeration(J, seed, frac):
    rng = np.random.default_rng(seed)
    dt = rng.uniform(0.5, 2.0, J)
    v = rng.uniform(0, 12, J) * (rng.random(J) > 0.3)
    A, b = build_ls_system(trace_from_speeds(v, dt, noise=1.0, rng=rng))
    lam = frac * float(max(np.max(A.T @ b), 0.0))
    got = solve_lasso(A, b, lam)
    np.testing.assert_allclose(got, lasso_support_enumeration(A, b, lam), atol=1e-6)
    assert np.all(got >= 0)
    assert kkt_residual(A, b, got, lam) <= 1e-8 * max(1.0, float(np.abs(A.T @ b).max()))


def test_bic_path_solution_matches_enumeration(rng):
    # J = 5 stop trace; solution picked along the BIC grid agrees with the oracle
    dt = np.ones(5)
    v = np.array([10.0, 0.0, 0.0, 8.0, 9.0])
    tr = trace_from_speeds(v, dt, noise=1.0, rng=rng)
    lam, res = select_lambda_bic(tr)
    A, b = build_ls_system(tr)
    np.testing.assert_allclose(res.speeds, lasso_support_enumeration(A, b, lam), atol=1e-6)


def test_df_along_grid_matches_oracle_even_when_not_monotone():
    # the support size of a LASSO path need not grow as the penalty falls;
    # this trace (found by search) loses a variable, and the oracle agrees
    rng = np.random.default_rng(5)
    J = int(rng.integers(4, 9))
    dt = rng.uniform(0.8, 1.2, J)
    v = rng.uniform(0, 12, J) * (rng.random(J) > 0.3)
    tr = trace_from_speeds(v, dt, noise=2.0, rng=rng)
    A, b = build_ls_system(tr)
    grid = lambda_grid(A, b)
    df = lasso_path_df(tr, grid)
    oracle_df = [int(np.sum(lasso_support_enumeration(A, b, lam) > 0)) for lam in grid]
    assert list(df) == oracle_df
    assert np.any(np.diff(df) < 0)
    assert df[0] <= 1 and df[-1] == df.max()


def test_single_speed_trace_has_no_stop():
    tr = trace_from_speeds(np.full(12, 10.0), np.ones(12))
    _, res = select_lambda_bic(tr)
    assert res.stop_count == 0


def plateau_trace(n_stops, rng, noise):
    L = 200.0
    t_bp, x_bp = [0.0], [0.0]
    x = 0.0
    t = 0.0
    v = rng.uniform(8, 12)
    stops = np.sort(rng.uniform(0.15, 0.85, n_stops)) if n_stops else []
    if n_stops == 2:
        stops = np.array([0.3, 0.7]) + rng.uniform(-0.05, 0.05, 2)
    for s in stops:
        t += (s * L - x) / v
        x = s * L
        t_bp.append(t)
        x_bp.append(x)
        t += 10.0
        t_bp.append(t)
        x_bp.append(x)
    t += (L - x) / v
    t_bp.append(t)
    x_bp.append(L)
    ts = np.arange(0.0, t, 1.0)
    xs = np.interp(ts, t_bp, x_bp) + rng.normal(0, noise, ts.size)
    return LinkTrace(0, ts, xs)


@pytest.mark.parametrize("n_stops", [1, 2])
def test_plateau_stop_count(n_stops):
    rng = np.random.default_rng(100 + n_stops)
    hits = sum(select_lambda_bic(plateau_trace(n_stops, rng, 1.0))[1].stop_count == n_stops
               for _ in range(200))
    assert hits >= 190


def test_decompose_single_link():
    tr = LinkTrace(4, np.arange(13.0), np.linspace(0.0, 120.0, 13))
    (obs,) = decompose_trajectory([tr], lengths=np.full(5, 120.0), modes=np.full(5, 2))
    assert list(obs.path) == [4]
    assert list(obs.states) == [0]
    assert obs.travel_times[0] == pytest.approx(12.0, abs=1e-9)


def test_decompose_clamps_state():
    rng = np.random.default_rng(9)
    ts, xs = [], []
    # three 8 s stops on a 300 m link
    bp_t = [0, 7.5, 15.5, 23, 31, 38.5, 46.5, 54]
    bp_x = [0, 75, 75, 150, 150, 225, 225, 300]
    ts = np.arange(0.0, 54.0, 1.0)
    xs = np.interp(ts, bp_t, bp_x) + rng.normal(0, 0.5, ts.size)
    tr = LinkTrace(0, ts, xs)
    assert select_lambda_bic(tr)[1].stop_count == 3
    (obs,) = decompose_trajectory([tr], lengths=[300.0], modes=[2])
    assert obs.states[0] == 1


def test_decompose_drops_short_links_and_splits():
    a = LinkTrace(0, [0, 1, 2, 3], [0, 10, 20, 30])
    b = LinkTrace(1, [4, 5], [5, 15])
    c = LinkTrace(2, [6, 7, 8, 9], [0, 10, 20, 30])
    out = decompose_trajectory([a, b, c], lengths=[40.0] * 3, modes=[2] * 3)
    assert [list(o.path) for o in out] == [[0], [2]]


class _Truth:
    def __init__(self, lengths):
        self.network = type("N", (), {"length": lengths})()


def test_five_link_times_sum_to_duration():
    rng = np.random.default_rng(5)
    lengths = rng.uniform(150, 250, 5)
    for _ in range(20):
        y = rng.uniform(15, 60, 5)
        obs = CompressedObservation(path=np.arange(5), states=rng.integers(0, 2, 5), travel_times=y)
        traces = render_gps_trace(obs, 1.0, 2.0, _Truth(lengths), rng)
        (comp,) = decompose_trajectory(traces, lengths, modes=np.full(5, 2))
        assert abs(comp.travel_times.sum() - y.sum()) <= 1.0


def test_split_points_groups_by_link():
    pts = [{"t": 0, "link": 0, "offset": 0}, {"t": 1, "link": 0, "offset": 5},
           {"t": 2, "link": 1, "offset": 1}, {"t": 3, "link": 1, "offset": 6}]
    traces = split_points(pts)
    assert [tr.link for tr in traces] == [0, 1]
    np.testing.assert_array_equal(traces[1].t, [2, 3])


def test_stop_profile_shape():
    rng = np.random.default_rng(0)
    t, x = stop_profile(200.0, 40.0, 1, rng)
    assert t[-1] == pytest.approx(40.0) and x[-1] == pytest.approx(200.0)
    flat = np.flatnonzero(np.diff(x) == 0)
    assert flat.size == 1
