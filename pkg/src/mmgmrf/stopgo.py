"""Stop-and-go compression of per-link offset traces.

Speeds are reconstructed as piecewise constant between samples by an
l1-penalized least-squares fit of the offsets, with nonnegative speeds, and the
penalty weight is chosen by BIC.  Runs of zero speed are the stops.

With the cumulative design matrix the fitted positions ``p = A v`` only need
to be nondecreasing and nonnegative, so the nonnegative LASSO is a bounded
isotonic regression against a shifted target, solved exactly by pool-adjacent-
violators.
"""
import json
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.optimize import nnls
from scipy.linalg import solve_triangular

from .errors import NonMonotonicTimestamps, TooFewSamples
from .markov import CompressedObservation

STOP_MIN_DURATION = 2.0
MERGE_SIGMAS = 3.0
N_LAMBDA = 30
LAMBDA_RATIO = 1e-4
ZERO_TOL = 1e-12


@dataclass(frozen=True)
class LinkTrace:
    link: int
    t: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if t.shape != x.shape or t.ndim != 1:
            raise ValueError("t and x must be 1-d arrays of equal length")
        if t.size < 2:
            raise TooFewSamples(f"link {self.link}: need at least two samples")
        if np.any(np.diff(t) <= 0):
            raise NonMonotonicTimestamps(f"link {self.link}: timestamps must increase")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)

    @property
    def J(self):
        return self.t.size - 1


@dataclass(frozen=True)
class StopGoResult:
    speeds: np.ndarray
    stop_count: int
    travel_time: float
    lambda_used: float
    bic: float
    df: int
    rss: float


def build_ls_system(trace):
    """Design matrix and target of the offset least-squares problem.

    ``A[i, k] = t[k+1] - t[k]`` for ``k <= i`` and ``b[i] = x[i+1] - x[0]``.
    """
    t = np.asarray(trace.t if hasattr(trace, "t") else trace[0], dtype=float)
    x = np.asarray(trace.x if hasattr(trace, "x") else trace[1], dtype=float)
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise NonMonotonicTimestamps("timestamps must be strictly increasing")
    A = np.tril(np.broadcast_to(dt, (dt.size, dt.size))).copy()
    b = x[1:] - x[0]
    return A, b


def kkt_residual(A, b, v, lam):
    """Violation of the optimality conditions of the nonnegative LASSO."""
    g = A.T @ (A @ v - b) + lam
    pos = v > 0
    return float(max(np.max(np.abs(g[pos]), initial=0.0),
                     np.max(np.maximum(-g[~pos], 0.0), initial=0.0)))


def solve_lasso(A, b, lam):
    """Minimize ``0.5 ||Av - b||^2 + lam * sum(v)`` over ``v >= 0``.

    ``A`` must be square and lower triangular with a positive diagonal.  The
    linear penalty is folded into the target, ``b - lam * A^{-T} 1``, leaving
    a nonnegative least-squares problem; for the cumulative offset design
    that problem is solved exactly by isotonic regression.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    dt = np.diag(A).copy()
    if np.array_equal(A, np.tril(np.broadcast_to(dt, A.shape))):
        p = np.empty(dt.size)
        zero_tol = ZERO_TOL * np.max(np.abs(b), initial=0.0)
        _pava_nonneg(b - lam * _cumulative_shift(dt), p, zero_tol)
        return np.diff(p, prepend=0.0) / dt
    shift = solve_triangular(A, np.ones(A.shape[0]), trans="T", lower=True)
    v, _ = nnls(A, b - lam * shift, maxiter=50 * A.shape[1])
    return v


@njit(cache=True)
def _pava_nonneg(y, out_p, zero_tol):
    # isotonic regression of y (unit weights) clipped below at 0; blocks within
    # zero_tol of 0 are rounding residue of the penalty shift and become 0
    n = y.shape[0]
    val = np.empty(n)
    wt = np.empty(n)
    end = np.empty(n, np.int64)
    nb = 0
    for i in range(n):
        val[nb] = y[i]
        wt[nb] = 1.0
        end[nb] = i
        nb += 1
        while nb > 1 and val[nb - 2] >= val[nb - 1]:
            w = wt[nb - 2] + wt[nb - 1]
            val[nb - 2] = (wt[nb - 2] * val[nb - 2] + wt[nb - 1] * val[nb - 1]) / w
            wt[nb - 2] = w
            end[nb - 2] = end[nb - 1]
            nb -= 1
    start = 0
    for k in range(nb):
        v = val[k] if val[k] > zero_tol else 0.0
        for i in range(start, end[k] + 1):
            out_p[i] = v
        start = end[k] + 1


@njit(cache=True)
def _lasso_path_bic(dt, b, shift, lambdas, speeds_out, bic_out, rss_out, df_out):
    J = dt.shape[0]
    p = np.empty(J)
    target = np.empty(J)
    best = 0
    zero_tol = ZERO_TOL * np.max(np.abs(b)) if J > 0 else 0.0
    for g in range(lambdas.shape[0]):
        for i in range(J):
            target[i] = b[i] - lambdas[g] * shift[i]
        _pava_nonneg(target, p, zero_tol)
        rss = 0.0
        df = 0
        prev = 0.0
        for i in range(J):
            r = p[i] - b[i]
            rss += r * r
            v = (p[i] - prev) / dt[i]
            speeds_out[g, i] = v
            if v != 0.0:
                df += 1
            prev = p[i]
        rss_out[g] = rss
        df_out[g] = df
        bic_out[g] = J * np.log(max(rss / J, 1e-12)) + df * np.log(J)
        if bic_out[g] < bic_out[best]:
            best = g
    return best


def _cumulative_shift(dt):
    # A^{-T} 1 for the cumulative design
    inv = 1.0 / dt
    shift = inv.copy()
    shift[:-1] -= inv[1:]
    return shift


def lambda_grid(A, b, n=N_LAMBDA, ratio=LAMBDA_RATIO):
    """Log-spaced grid from the smallest all-zero penalty down by ``ratio``."""
    lam_max = float(np.max(A.T @ b, initial=0.0))
    if lam_max <= 0:
        return np.zeros(1)
    return np.geomspace(lam_max, lam_max * ratio, n)


def count_stops(speeds, dt, rss, min_duration=STOP_MIN_DURATION, merge_sigmas=MERGE_SIGMAS):
    """Number of stop phases in a reconstructed speed profile.

    Zero-speed runs separated by a displacement smaller than ``merge_sigmas``
    times the residual noise level are one stop; a stop must last at least
    ``min_duration`` seconds.
    """
    speeds = np.asarray(speeds)
    dt = np.asarray(dt)
    J = speeds.size
    sigma = np.sqrt(rss / max(J, 1))
    gap = merge_sigmas * sigma
    runs = []
    i = 0
    while i < J:
        if speeds[i] == 0.0:
            j = i
            while j < J and speeds[j] == 0.0:
                j += 1
            if runs and float(np.dot(speeds[runs[-1][1]:i], dt[runs[-1][1]:i])) < gap:
                runs[-1][1] = j
            else:
                runs.append([i, j])
            i = j
        else:
            i += 1
    return sum(1 for a, c in runs if dt[a:c].sum() >= min_duration)


def select_lambda_bic(trace, lambda_grid_values=None):
    """Fit the nonnegative LASSO along a penalty grid and keep the BIC winner."""
    A, b = build_ls_system(trace)
    dt = np.diff(trace.t)
    lams = lambda_grid(A, b) if lambda_grid_values is None else np.asarray(lambda_grid_values, float)
    if lams.size == 0 or np.any(lams < 0):
        raise ValueError("lambda grid must be nonempty and nonnegative")
    J = dt.size
    speeds = np.empty((lams.size, J))
    bic = np.empty(lams.size)
    rss = np.empty(lams.size)
    df = np.empty(lams.size, np.int64)
    best = _lasso_path_bic(dt, b, _cumulative_shift(dt), lams, speeds, bic, rss, df)
    v = speeds[best]
    stops = count_stops(v, dt, rss[best])
    tt = float(trace.t[-1] - trace.t[0])
    result = StopGoResult(speeds=v, stop_count=stops, travel_time=tt,
                          lambda_used=float(lams[best]), bic=float(bic[best]),
                          df=int(df[best]), rss=float(rss[best]))
    return float(lams[best]), result


def lasso_path_df(trace, lambda_grid_values):
    """Support size along a penalty grid (diagnostic)."""
    A, b = build_ls_system(trace)
    dt = np.diff(trace.t)
    lams = np.asarray(lambda_grid_values, dtype=float)
    speeds = np.empty((lams.size, dt.size))
    bic = np.empty(lams.size)
    rss = np.empty(lams.size)
    df = np.empty(lams.size, np.int64)
    _lasso_path_bic(dt, b, _cumulative_shift(dt), lams, speeds, bic, rss, df)
    return df


def _boundary_time(prev, cur, prev_length):
    # linear interpolation of the crossing between the last sample on prev and
    # the first sample on cur, proportional to remaining/entered distance
    t0, x0 = prev.t[-1], prev.x[-1]
    t1, x1 = cur.t[0], cur.x[0]
    rem = max(prev_length - x0, 0.0)
    ent = max(x1, 0.0)
    if rem + ent <= 0:
        return 0.5 * (t0 + t1)
    return t0 + (t1 - t0) * rem / (rem + ent)


def _extrapolate(t_edge, x_edge, target, speed, mean_speed, limit):
    dist = abs(target - x_edge)
    v = speed if speed > 0 else mean_speed
    if v <= 0:
        return 0.0
    return min(dist / v, limit)


def decompose_trajectory(traces, lengths, modes, traj_id=None, period=None):
    """Compress contiguous per-link traces into one or more observations.

    Parameters
    ----------
    traces : list of LinkTrace
        Consecutive links of one path; samples carry absolute timestamps.
    lengths : sequence
        Link lengths in meters, indexed by link id.
    modes : sequence
        Number of states per link; stop counts are clamped to ``m_l - 1``.

    Returns
    -------
    list of CompressedObservation
        Links with fewer than three samples are dropped and split the
        observation into contiguous runs.
    """
    if not traces:
        return []
    results = []
    for tr in traces:
        if tr.t.size < 3:
            results.append(None)
        else:
            results.append(select_lambda_bic(tr)[1])
    if period is None:
        gaps = np.concatenate([np.diff(tr.t) for tr in traces])
        period = float(np.median(gaps)) if gaps.size else 1.0
    entry = np.empty(len(traces))
    exit_ = np.empty(len(traces))
    for i, tr in enumerate(traces):
        L = float(lengths[tr.link])
        mean_speed = max((tr.x[-1] - tr.x[0]) / max(tr.t[-1] - tr.t[0], 1e-9), 0.0)
        if i > 0:
            entry[i] = _boundary_time(traces[i - 1], tr, float(lengths[traces[i - 1].link]))
        else:
            v0 = results[i].speeds[0] if results[i] is not None else mean_speed
            entry[i] = tr.t[0] - _extrapolate(tr.t[0], tr.x[0], 0.0, v0, mean_speed, period)
        if i + 1 < len(traces):
            exit_[i] = _boundary_time(tr, traces[i + 1], L)
        else:
            v1 = results[i].speeds[-1] if results[i] is not None else mean_speed
            exit_[i] = tr.t[-1] + _extrapolate(tr.t[-1], tr.x[-1], L, v1, mean_speed, period)
    out = []
    cur = ([], [], [])
    for i, tr in enumerate(traces):
        res = results[i]
        if res is None:
            if cur[0]:
                out.append(cur)
            cur = ([], [], [])
            continue
        state = min(res.stop_count, int(modes[tr.link]) - 1)
        cur[0].append(tr.link)
        cur[1].append(state)
        cur[2].append(max(exit_[i] - entry[i], 1e-3))
    if cur[0]:
        out.append(cur)
    return [CompressedObservation(path=np.array(p), states=np.array(s), travel_times=np.array(y),
                                  id=traj_id) for p, s, y in out]


def split_points(points):
    """Group ``[{"t", "link", "offset"}, ...]`` into consecutive per-link traces."""
    traces = []
    cur_link, ts, xs = None, [], []
    for pt in points:
        link = int(pt["link"])
        if link != cur_link and ts:
            traces.append((cur_link, ts, xs))
            ts, xs = [], []
        cur_link = link
        ts.append(float(pt["t"]))
        xs.append(float(pt["offset"]))
    if ts:
        traces.append((cur_link, ts, xs))
    out = []
    for link, t, x in traces:
        if len(t) >= 2:
            out.append(LinkTrace(link=link, t=np.array(t), x=np.array(x)))
        else:
            out.append(_SingleSample(link, np.array(t), np.array(x)))
    return out


@dataclass(frozen=True)
class _SingleSample:
    # placeholder for links crossed with one sample; never decomposed
    link: int
    t: np.ndarray
    x: np.ndarray


def compress_record(record, lengths, modes):
    """One trace JSON record to compressed observations (possibly several)."""
    traces = split_points(record["points"])
    return decompose_trajectory(traces, lengths, modes, traj_id=record.get("id"))


def read_traces(path):
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_observations(observations, fh):
    for obs in observations:
        fh.write(json.dumps(obs.to_record()) + "\n")
