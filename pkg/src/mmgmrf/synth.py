"""Synthetic ground-truth worlds and probe-vehicle data drawn from them.

A world is a directed grid with per-link state chains and a sparse
precision matrix on the road-graph pattern.  Trajectories are random walks;
their per-link travel times are drawn jointly from the Gaussian marginal of
the visited variables, and GPS traces are rendered from piecewise-constant
speed profiles with one zero-speed plateau per stop.
"""
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import ndtr

from .factor import ExactInverse, factorize
from .markov import CompressedObservation, MarkovParams, sample_state_sequences
from .network import build_edge_pattern, build_variable_index, grid_network
from .stopgo import split_points

TIME_FLOOR = 0.5
FLOOR_RATE_MAX = 1e-3
STOP_DURATION = (5.0, 30.0)
MEAN_STOP_TIME = 17.5
STOP_SPAN = (0.1, 0.95)
STOP_SPACING = 0.2
MAX_STOP_FRACTION = 0.7
DENSE_COVARIANCE_MAX_D = 6000


@dataclass
class GroundTruth:
    network: object
    markov: MarkovParams
    mu: np.ndarray
    S_true: sp.csc_matrix
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.index = build_variable_index(self.network)
        self.pattern = build_edge_pattern(self.network, self.index)
        self._factor = None
        self._cov = None
        self._inv = None

    @property
    def d(self):
        return self.index.d

    def factor(self):
        if self._factor is None:
            self._factor = factorize(self.S_true)
        return self._factor

    def covariance_block(self, idx):
        """Exact ``S_true^{-1}`` restricted to ``idx`` x ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        if self.d <= DENSE_COVARIANCE_MAX_D:
            if self._cov is None:
                self._cov = np.linalg.inv(self.S_true.toarray())
            return self._cov[np.ix_(idx, idx)]
        if self._inv is None:
            self._inv = ExactInverse(self.factor())
        return self._inv.block(idx)

    def covariance(self):
        return self.covariance_block(np.arange(self.d))

    def marginal_variances(self):
        Z = self.factor().selected_inverse()
        return Z.diagonal()

    def to_json(self):
        S = sp.triu(self.S_true).tocoo()
        return {"seed": self.seed, "mu": self.mu.tolist(), "markov": self.markov.to_json(),
                "S": {"d": self.d, "u": S.row.tolist(), "v": S.col.tolist(), "x": S.data.tolist()},
                "meta": self.meta}

    @classmethod
    def from_json(cls, data, network):
        S = data["S"]
        u, v, x = np.asarray(S["u"]), np.asarray(S["v"]), np.asarray(S["x"], float)
        off = u != v
        M = sp.csc_matrix((np.r_[x, x[off]], (np.r_[u, v[off]], np.r_[v, u[off]])),
                          shape=(S["d"], S["d"]))
        M.sort_indices()
        return cls(network=network, markov=MarkovParams.from_json(data["markov"]),
                   mu=np.asarray(data["mu"], float), S_true=M, seed=data["seed"],
                   meta=data.get("meta", {}))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)


def _persistent_chain(network, rng, persistence=(0.6, 0.9)):
    m = network.modes
    pi = {}
    T = {}
    for l in range(network.n_links):
        p0 = rng.uniform(0.4, 0.8) if m[l] > 1 else 1.0
        rest = rng.dirichlet(np.ones(m[l] - 1)) * (1 - p0) if m[l] > 1 else np.zeros(0)
        pi[l] = np.r_[p0, rest]
    for u in range(network.n_links):
        for l in network.downstream[u]:
            mu_, ml = int(m[u]), int(m[l])
            M = np.empty((mu_, ml))
            for s in range(mu_):
                stay = rng.uniform(*persistence)
                row = rng.dirichlet(np.ones(ml)) * (1 - stay)
                row[min(s, ml - 1)] += stay
                M[s] = row
            T[(u, l)] = M
    return MarkovParams(modes=m.copy(), pi=pi, T=T, smoothing=0.0)


def _precision(network, index, pattern, p, rng, dominance=0.9, weak=0.1):
    """Diagonally dominant precision with diagonal ``p``.

    Raw couplings ``a_uv`` are ``U(0.5, 1)`` between equal states of
    consecutive links (the pairs a vehicle actually co-observes) and
    ``U(0, weak)`` for the other pattern pairs.  Off-diagonals are
    ``-dominance * a_uv * min(p_u / r_u, p_v / r_v)`` with ``r_u = sum_v a_uv``,
    so each row's off-diagonal magnitudes sum to at most ``dominance * p_u``.
    """
    up = sp.triu(pattern.matrix, 1).tocoo()
    lu, lv = index.var_link[up.row], index.var_link[up.col]
    su, sv = index.var_state[up.row], index.var_state[up.col]
    adj = network.adjacency()
    consecutive = (np.asarray(adj[lu, lv]).ravel() > 0) | (np.asarray(adj[lv, lu]).ravel() > 0)
    uturn = consecutive & (np.asarray(adj[lu, lv]).ravel() > 0) & (np.asarray(adj[lv, lu]).ravel() > 0)
    strong = consecutive & ~uturn & (su == sv)
    a = np.where(strong, rng.uniform(0.5, 1.0, size=up.nnz), rng.uniform(0.0, weak, size=up.nnz))
    d = p.size
    A = sp.coo_matrix((a, (up.row, up.col)), shape=(d, d))
    r = np.asarray((A + A.T).sum(axis=1)).ravel()
    ratio = p / np.maximum(r, 1e-300)
    w = dominance * a * np.minimum(ratio[up.row], ratio[up.col])
    off = sp.coo_matrix((-w, (up.row, up.col)), shape=(d, d))
    S = (off + off.T + sp.diags(p)).tocsc()
    S.sort_indices()
    return S


def generate_world(grid_w, grid_h, m=2, seed=0, block_length=200.0, free_speed=(9.0, 12.0),
                   cv=(0.08, 0.2), persistence=(0.6, 0.9), dominance=0.9):
    """Deterministic ground-truth world for ``seed``.

    Mode means grow with the stop count (``mu_s = L / v + 17.5 s * s`` plus a
    small per-stop penalty), transitions favour keeping the previous state,
    and ``S_true`` is diagonally dominant on the road-graph pattern.  If more
    than 0.1% of any variable's mass falls under the 0.5 s floor, the
    precision is scaled up until it does not.
    """
    if grid_w < 1 or grid_h < 1:
        raise ValueError("grid dimensions must be positive")
    rng = np.random.default_rng(seed)
    net = grid_network(grid_w, grid_h, m=m, block_length=block_length, rng=rng)
    index = build_variable_index(net)
    pattern = build_edge_pattern(net, index)
    d = index.d
    link = index.var_link
    state = index.var_state
    v_free = rng.uniform(*free_speed, size=net.n_links)
    base = net.length / v_free
    extra = rng.uniform(0.0, 5.0, size=d)
    mu = base[link] + state * (MEAN_STOP_TIME + extra)
    p = 1.0 / (rng.uniform(*cv, size=d) * mu) ** 2 if d else np.zeros(0)
    S = _precision(net, index, pattern, p, rng, dominance) if d else sp.csc_matrix((0, 0))
    markov = _persistent_chain(net, rng, persistence)
    truth = GroundTruth(network=net, markov=markov, mu=mu, S_true=S, seed=seed,
                        meta={"grid": [grid_w, grid_h], "m": m})
    if d:
        for _ in range(20):
            sd = np.sqrt(truth.marginal_variances())
            if float(np.max(ndtr((TIME_FLOOR - mu) / sd))) <= FLOOR_RATE_MAX:
                break
            truth = GroundTruth(network=net, markov=markov, mu=mu, S_true=(4.0 * truth.S_true).tocsc(),
                                seed=seed, meta=truth.meta)
    return truth


def random_walk(network, length, rng, start=None):
    """Walk of up to ``length`` links that never revisits a link.

    Stops early when every downstream link was already visited.
    """
    n = network.n_links
    cur = int(rng.integers(n)) if start is None else int(start)
    path = [cur]
    seen = {cur}
    while len(path) < length:
        nxt = [v for v in network.downstream[cur] if v not in seen]
        if not nxt:
            break
        cur = nxt[int(rng.integers(len(nxt)))]
        path.append(cur)
        seen.add(cur)
    return np.array(path, dtype=np.int64)


def _path_length(path_len, rng):
    if np.isscalar(path_len):
        return int(path_len)
    lo, hi = path_len
    return int(rng.integers(lo, hi + 1))


def sample_trajectory(truth, path_len, rng, markov=None, traj_id=None):
    """Random-walk path, chain states and jointly Gaussian travel times."""
    return sample_trajectories(truth, 1, path_len, rng, markov=markov, first_id=traj_id)[0]


def sample_trajectories(truth, n, path_len, rng, markov=None, first_id=0):
    """``n`` independent trajectories.

    ``path_len`` is an int or an inclusive ``(lo, hi)`` range.  Travel times
    are ``mu[v] + chol(Sigma_vv) z`` over the visited variables ``v``, floored
    at 0.5 s.
    """
    if n and truth.network.n_links == 0:
        raise ValueError("world has no links")
    markov = truth.markov if markov is None else markov
    off = truth.index.offset
    out = []
    for k in range(n):
        path = random_walk(truth.network, max(_path_length(path_len, rng), 1), rng)
        states = sample_state_sequences(markov, path, 1, rng)[0]
        v = off[path] + states
        C = truth.covariance_block(v)
        z = rng.standard_normal(v.size)
        y = truth.mu[v] + np.linalg.cholesky(C) @ z
        y = np.maximum(y, TIME_FLOOR)
        tid = None if first_id is None else first_id + k
        out.append(CompressedObservation(path=path, states=states, travel_times=y, id=tid))
    return out


def stop_profile(length, travel_time, n_stops, rng):
    """Breakpoints ``(t, x)`` of a piecewise-linear offset curve on one link.

    Stops last ``U[5, 30]`` s (scaled down if they would exceed 70% of the
    travel time) and sit in ``(0.1 L, 0.95 L)`` at least ``0.2 L`` apart;
    the go speed is set so the link takes exactly ``travel_time``.
    """
    L = float(length)
    Y = float(travel_time)
    if n_stops == 0:
        return np.array([0.0, Y]), np.array([0.0, L])
    dur = rng.uniform(*STOP_DURATION, size=n_stops)
    cap = MAX_STOP_FRACTION * Y
    if dur.sum() > cap:
        dur *= cap / dur.sum()
    lo, hi = STOP_SPAN[0] * L, STOP_SPAN[1] * L
    spacing = min(STOP_SPACING * L, (hi - lo) / max(n_stops, 1))
    free = hi - lo - spacing * (n_stops - 1)
    pos = lo + np.sort(rng.uniform(0.0, free, size=n_stops)) + spacing * np.arange(n_stops)
    v = L / (Y - dur.sum())
    ts, xs = [0.0], [0.0]
    t = x = 0.0
    for p, dd in zip(pos, dur):
        t += (p - x) / v
        x = p
        ts.append(t)
        xs.append(x)
        t += dd
        ts.append(t)
        xs.append(x)
    ts.append(Y)
    xs.append(L)
    return np.array(ts), np.array(xs)


def render_points(obs, sampling_period_s, noise_sigma_m, truth, rng, t0=None):
    """GPS samples ``(t, link, offset)`` for one trajectory.

    The ground-truth offset curve is sampled on a regular clock with random
    phase; each sample keeps its true link and gets i.i.d. Gaussian offset
    noise.
    """
    lengths = truth.network.length if hasattr(truth, "network") else truth
    start = rng.uniform(0.0, sampling_period_s) if t0 is None else float(t0)
    ts_all, links, xs = [], [], []
    t_link = 0.0
    for l, s, y in zip(obs.path, obs.states, obs.travel_times):
        bt, bx = stop_profile(lengths[l], y, int(s), rng)
        k0 = int(np.ceil((t_link - start) / sampling_period_s - 1e-9))
        k1 = int(np.ceil((t_link + y - start) / sampling_period_s - 1e-9))
        tk = start + sampling_period_s * np.arange(k0, k1)
        tk = tk[(tk >= t_link) & (tk < t_link + y)]
        xk = np.interp(tk - t_link, bt, bx)
        ts_all.append(tk)
        links.append(np.full(tk.size, l, dtype=np.int64))
        xs.append(xk)
        t_link += y
    t = np.concatenate(ts_all)
    link = np.concatenate(links)
    x = np.concatenate(xs) + rng.normal(0.0, noise_sigma_m, size=t.size) if noise_sigma_m else np.concatenate(xs)
    return t, link, x


def render_gps_trace(obs, sampling_period_s, noise_sigma_m, truth, rng, t0=None):
    """Per-link traces (consecutive samples grouped by link)."""
    t, link, x = render_points(obs, sampling_period_s, noise_sigma_m, truth, rng, t0)
    return split_points({"t": a, "link": b, "offset": c} for a, b, c in zip(t, link, x))


def trace_record(obs, t, link, x, decimals=3):
    return {"id": obs.id,
            "points": [{"t": round(float(a), decimals), "link": int(b), "offset": round(float(c), decimals)}
                       for a, b, c in zip(t, link, x)]}
