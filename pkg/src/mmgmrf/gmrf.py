"""Partial empirical covariance (PECM) statistics and the sparse precision fit.

Observations cover a handful of variables each.  Marginal moments are pooled
per variable and second moments per pattern pair over the observations that
cover both variables; the resulting partial covariance is rescaled so that
each pair is consistent with its marginal variances, boosted on the diagonal
if needed, and used as the sufficient statistic of the log-det program

    minimize  -log det S + <S, Sigma_hat>   s.t.  S_uv = 0 off the pattern.
"""
import json
import logging
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numba import njit

from .errors import (DegenerateVariance, LineSearchFailed, NotConverged, NotPositiveDefinite,
                     NumericalError)
from .factor.cholesky import analyze, factorize, factorize_numeric
from .factor.sketch import ExactInverse, build_sketch
from .network import EdgePattern

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6
DEFAULT_PRUNE_MIN_COUNT = 10
BOOST_FACTORS = (0.0, 1e-8, 1e-6, 1e-4, 1e-2, 1.0, 1e2)
REFINE_RATIO = 1.25

_MAGIC = b"MMSP"
_HEADER = struct.Struct("<4sIQQdQ")
_TRIPLET = np.dtype([("u", "<u4"), ("v", "<u4"), ("x", "<f8")])


class Compensated:
    """Array of running sums with Neumaier compensation."""

    __slots__ = ("hi", "lo")

    def __init__(self, n):
        self.hi = np.zeros(n)
        self.lo = np.zeros(n)

    def add(self, x):
        s = self.hi + x
        big = np.abs(self.hi) >= np.abs(x)
        self.lo += np.where(big, (self.hi - s) + x, (x - s) + self.hi)
        self.hi = s

    def merged(self, other):
        out = Compensated(self.hi.size)
        out.hi = self.hi.copy()
        out.lo = self.lo.copy()
        out.add(other.hi)
        out.add(other.lo)
        return out

    @property
    def value(self):
        return self.hi + self.lo


@dataclass
class PecmStats:
    """Streaming moment accumulators.

    Per variable: count, sum of y, sum of y^2.  Per off-diagonal pattern pair
    ``(u, v)``, ``u < v``: co-observation count, sum of y_u y_v, and the sums
    of y_u^2 and y_v^2 restricted to co-observations.
    """

    d: int
    pair_u: np.ndarray
    pair_v: np.ndarray
    n_var: np.ndarray = None
    sum_y: Compensated = None
    sum_ysq: Compensated = None
    n_pair: np.ndarray = None
    sum_yy: Compensated = None
    sum_ysq_u: Compensated = None
    sum_ysq_v: Compensated = None

    def __post_init__(self):
        P = self.pair_u.size
        if self.n_var is None:
            self.n_var = np.zeros(self.d, dtype=np.int64)
            self.sum_y = Compensated(self.d)
            self.sum_ysq = Compensated(self.d)
            self.n_pair = np.zeros(P, dtype=np.int64)
            self.sum_yy = Compensated(P)
            self.sum_ysq_u = Compensated(P)
            self.sum_ysq_v = Compensated(P)
        self._keys = self.pair_u * self.d + self.pair_v

    @classmethod
    def empty(cls, pattern):
        u, v = pattern.pairs()
        return cls(d=pattern.d, pair_u=u, pair_v=v)

    def merge(self, other):
        if self.d != other.d or not np.array_equal(self._keys, other._keys):
            raise ValueError("cannot merge statistics over different patterns")
        return PecmStats(d=self.d, pair_u=self.pair_u, pair_v=self.pair_v,
                         n_var=self.n_var + other.n_var,
                         sum_y=self.sum_y.merged(other.sum_y),
                         sum_ysq=self.sum_ysq.merged(other.sum_ysq),
                         n_pair=self.n_pair + other.n_pair,
                         sum_yy=self.sum_yy.merged(other.sum_yy),
                         sum_ysq_u=self.sum_ysq_u.merged(other.sum_ysq_u),
                         sum_ysq_v=self.sum_ysq_v.merged(other.sum_ysq_v))

    __add__ = merge

    def pair_index(self, u, v):
        a, b = min(u, v), max(u, v)
        key = a * self.d + b
        pos = int(np.searchsorted(self._keys, key))
        if pos < self._keys.size and self._keys[pos] == key:
            return pos
        return -1

    def update(self, var_lists, y_lists):
        """Add a batch of observations given as variable and value sequences."""
        if not var_lists:
            return self
        vars_all = np.concatenate([np.asarray(v, dtype=np.int64) for v in var_lists])
        y_all = np.concatenate([np.asarray(y, dtype=float) for y in y_lists])
        d = self.d
        self.n_var += np.bincount(vars_all, minlength=d)
        self.sum_y.add(np.bincount(vars_all, weights=y_all, minlength=d))
        self.sum_ysq.add(np.bincount(vars_all, weights=y_all * y_all, minlength=d))

        ia, ib = [], []
        start = 0
        for v in var_lists:
            m = len(v)
            if m > 1:
                a, b = np.triu_indices(m, 1)
                ia.append(a + start)
                ib.append(b + start)
            start += m
        if not ia or self._keys.size == 0:
            return self
        ia = np.concatenate(ia)
        ib = np.concatenate(ib)
        va, vb = vars_all[ia], vars_all[ib]
        ya, yb = y_all[ia], y_all[ib]
        lo = np.minimum(va, vb)
        hi = np.maximum(va, vb)
        keys = lo * d + hi
        pos = np.searchsorted(self._keys, keys)
        pos_c = np.minimum(pos, self._keys.size - 1)
        ok = (self._keys[pos_c] == keys) & (lo != hi)
        pos = pos_c[ok]
        y_lo = np.where(va <= vb, ya, yb)[ok]
        y_hi = np.where(va <= vb, yb, ya)[ok]
        P = self._keys.size
        self.n_pair += np.bincount(pos, minlength=P)
        self.sum_yy.add(np.bincount(pos, weights=y_lo * y_hi, minlength=P))
        self.sum_ysq_u.add(np.bincount(pos, weights=y_lo * y_lo, minlength=P))
        self.sum_ysq_v.add(np.bincount(pos, weights=y_hi * y_hi, minlength=P))
        return self

    def as_arrays(self):
        return {"n_var": self.n_var, "sum_y": self.sum_y.value, "sum_ysq": self.sum_ysq.value,
                "n_pair": self.n_pair, "sum_yy": self.sum_yy.value,
                "sum_ysq_u": self.sum_ysq_u.value, "sum_ysq_v": self.sum_ysq_v.value}


def accumulate(stats, obs, index, batch=4096):
    """Fold observations into ``stats`` (in place) and return it.

    ``obs`` is one CompressedObservation or an iterable of them.  A variable
    that occurs twice on a path contributes each occurrence to its marginal
    moments; pairs are formed once per unordered pair of distinct positions.
    """
    if hasattr(obs, "path"):
        obs = [obs]
    vl, yl = [], []
    for o in obs:
        vl.append(o.variables(index))
        yl.append(o.travel_times)
        if len(vl) >= batch:
            stats.update(vl, yl)
            vl, yl = [], []
    stats.update(vl, yl)
    return stats


@dataclass(frozen=True)
class Pecm:
    """Assembled partial covariance on the (pruned) pattern.

    ``sigma_hat`` holds the corrected covariance without the diagonal boost;
    the fit uses ``target = sigma_hat + diag_boost * I``.
    """

    mu_hat: np.ndarray
    sigma_hat: sp.csc_matrix
    diag_boost: float
    pattern: EdgePattern
    pruned: tuple
    observed: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def d(self):
        return self.mu_hat.size

    @property
    def target(self):
        return (self.sigma_hat + self.diag_boost * sp.eye(self.d, format="csc")).tocsc()

    def save(self, path):
        _write_triplets(path, self.target, self.diag_boost, len(self.pruned[0]))
        meta = dict(self.diagnostics)
        meta.update({"mu": self.mu_hat.tolist(), "diag_boost": self.diag_boost,
                     "pruned": [self.pruned[0].tolist(), self.pruned[1].tolist()],
                     "observed": self.observed.astype(int).tolist()})
        with open(str(path) + ".json", "w") as fh:
            json.dump(meta, fh, sort_keys=True)


def _alpha(e2_u, e2_v, c2_u, c2_v):
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.sqrt((e2_u * e2_v) / (c2_u * c2_v))
    return np.where(np.isfinite(a), a, 1.0)


def choose_diag_boost(matrix, factors=BOOST_FACTORS, ordering="nd", refine=REFINE_RATIO):
    """Diagonal shift ``delta`` that lets ``matrix + delta I`` factor.

    Candidates are ``factor * trace / d`` in the order given; the first that
    factors wins.  With ``refine`` set, the bracket between the last failing
    and the first succeeding candidate is narrowed by geometric bisection
    until its ratio is below ``refine`` and the upper end is returned, so the
    boost overshoots the smallest workable value by at most that ratio.
    """
    d = matrix.shape[0]
    scale = float(matrix.diagonal().sum()) / max(d, 1)
    M = (sp.csc_matrix(matrix) + 0 * sp.eye(d, format="csc")).tocsc()
    M.sort_indices()
    sym = analyze(M, ordering)
    diag_pos = _diag_positions(M)

    def works(delta):
        data = M.data.copy()
        data[diag_pos] += delta
        try:
            factorize_numeric(sym, sp.csc_matrix((data, M.indices, M.indptr), shape=M.shape))
        except NotPositiveDefinite:
            return False
        return True

    prev = None
    for f in factors:
        delta = f * scale
        if works(delta):
            break
        prev = delta
    else:
        raise NumericalError("partial covariance could not be made positive definite")
    if refine and prev is not None and prev > 0:
        lo, hi = prev, delta
        while hi / lo > refine:
            mid = np.sqrt(lo * hi)
            if works(mid):
                hi = mid
            else:
                lo = mid
        delta = hi
    return float(delta)


def _diag_positions(M):
    rows = M.indices
    cols = np.repeat(np.arange(M.shape[1]), np.diff(M.indptr))
    pos = np.flatnonzero(rows == cols)
    return pos


def assemble_pecm(stats, pattern, prune_min_count=DEFAULT_PRUNE_MIN_COUNT,
                  diag_boost="auto", alpha_correction=True, prior_mu=None, prior_var=None,
                  variance_floor=VARIANCE_FLOOR, ordering="nd", strict_variance=False):
    """Build the corrected partial covariance from accumulated moments.

    Variables never observed take ``prior_mu``/``prior_var`` (defaults: the
    mean of observed means and of observed variances) and no off-diagonal
    entries.  Pairs with fewer than ``max(prune_min_count, 1)`` co-observations
    are removed from the pattern.  Observed variables with zero variance are
    floored at ``variance_floor`` and listed in the diagnostics, or raise
    DegenerateVariance with ``strict_variance=True``.
    """
    d = stats.d
    A = stats.as_arrays()
    n = A["n_var"]
    observed = n > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        mean = np.where(observed, A["sum_y"] / np.maximum(n, 1), 0.0)
        m2 = np.where(observed, A["sum_ysq"] / np.maximum(n, 1), 0.0)
    var = m2 - mean * mean
    degenerate = np.flatnonzero(observed & (var < variance_floor))
    if strict_variance and degenerate.size:
        raise DegenerateVariance(f"variables {degenerate[:10].tolist()} have zero variance")
    var = np.maximum(var, variance_floor)
    if prior_mu is None:
        prior_mu = np.full(d, mean[observed].mean() if observed.any() else 0.0)
    if prior_var is None:
        prior_var = np.full(d, var[observed].mean() if observed.any() else 1.0)
    mu_hat = np.where(observed, mean, prior_mu)
    var = np.where(observed, var, prior_var)
    m2 = np.where(observed, m2, prior_var + prior_mu ** 2)

    u, v = stats.pair_u, stats.pair_v
    npair = A["n_pair"]
    keep = (npair >= max(int(prune_min_count), 1)) & observed[u] & observed[v]
    with np.errstate(divide="ignore", invalid="ignore"):
        cyy = A["sum_yy"] / np.maximum(npair, 1)
        c2u = A["sum_ysq_u"] / np.maximum(npair, 1)
        c2v = A["sum_ysq_v"] / np.maximum(npair, 1)
    alpha = _alpha(m2[u], m2[v], c2u, c2v) if alpha_correction else np.ones(u.size)
    off = alpha * cyy - mu_hat[u] * mu_hat[v]

    ku, kv, kx = u[keep], v[keep], off[keep]
    rows = np.r_[np.arange(d), ku, kv]
    cols = np.r_[np.arange(d), kv, ku]
    vals = np.r_[var, kx, kx]
    sigma = sp.csc_matrix((vals, (rows, cols)), shape=(d, d))
    sigma.sort_indices()
    pruned = (u[~keep], v[~keep])
    eff = pattern.without(*pruned) if pruned[0].size else pattern
    if diag_boost == "auto":
        delta = choose_diag_boost(sigma, ordering=ordering)
    else:
        delta = float(diag_boost)
    diagnostics = {"degenerate_variables": degenerate.tolist(),
                   "n_pruned": int(pruned[0].size), "n_pairs": int(u.size),
                   "n_observed": int(observed.sum()), "alpha_correction": bool(alpha_correction)}
    if degenerate.size:
        log.warning("%d variables with zero empirical variance floored at %g",
                    degenerate.size, variance_floor)
    return Pecm(mu_hat=mu_hat, sigma_hat=sigma, diag_boost=delta, pattern=eff,
                pruned=pruned, observed=observed, diagnostics=diagnostics)


@dataclass(frozen=True)
class PrecisionModel:
    S: sp.csc_matrix
    mu: np.ndarray
    pattern: EdgePattern
    diagnostics: dict = field(default_factory=dict)
    ordering: str = "nd"

    @property
    def d(self):
        return self.mu.size

    def factor(self):
        f = self.__dict__.get("_factor")
        if f is None:
            f = factorize(self.S, self.ordering)
            object.__setattr__(self, "_factor", f)
        return f

    def save(self, path):
        _write_triplets(path, self.S, float(self.diagnostics.get("diag_boost", 0.0)),
                        int(self.diagnostics.get("n_pruned", 0)))
        meta = {k: v for k, v in self.diagnostics.items() if k != "objective_history"}
        meta.update({"mu": self.mu.tolist(), "ordering": self.ordering})
        with open(str(path) + ".json", "w") as fh:
            json.dump(meta, fh, sort_keys=True)

    @classmethod
    def load(cls, path):
        S, _hdr = read_triplets(path)
        with open(str(path) + ".json") as fh:
            meta = json.load(fh)
        mu = np.asarray(meta.pop("mu"), dtype=float)
        ordering = meta.pop("ordering", "nd")
        pattern = EdgePattern(sp.csc_matrix(S != 0))
        return cls(S=S, mu=mu, pattern=pattern, diagnostics=meta, ordering=ordering)


def _write_triplets(path, M, delta, n_pruned):
    coo = sp.triu(M).tocoo()
    order = np.lexsort((coo.row, coo.col))
    trip = np.empty(coo.nnz, dtype=_TRIPLET)
    trip["u"] = coo.row[order]
    trip["v"] = coo.col[order]
    trip["x"] = coo.data[order]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, M.shape[0], coo.nnz, float(delta), int(n_pruned)))
        fh.write(trip.tobytes())


def read_triplets(path):
    """Read a symmetric matrix written as upper-triangle triplets."""
    with open(path, "rb") as fh:
        magic, _ver, d, nnz, delta, n_pruned = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC:
            raise ValueError(f"{path} is not a sparse matrix container")
        trip = np.frombuffer(fh.read(nnz * _TRIPLET.itemsize), dtype=_TRIPLET)
    u = trip["u"].astype(np.int64)
    v = trip["v"].astype(np.int64)
    x = trip["x"]
    off = u != v
    M = sp.csc_matrix((np.r_[x, x[off]], (np.r_[u, v[off]], np.r_[v, u[off]])), shape=(d, d))
    M.sort_indices()
    return M, {"d": d, "nnz": nnz, "diag_boost": delta, "n_pruned": n_pruned}


@njit(cache=True)
def _locate(Lp, Li, pinv, rows, cols):
    out = np.empty(rows.shape[0], np.int64)
    for t in range(rows.shape[0]):
        a = pinv[rows[t]]
        b = pinv[cols[t]]
        c = min(a, b)
        r = max(a, b)
        lo = Lp[c]
        hi = Lp[c + 1]
        while lo < hi:
            mid = (lo + hi) // 2
            if Li[mid] < r:
                lo = mid + 1
            else:
                hi = mid
        out[t] = lo if lo < Lp[c + 1] and Li[lo] == r else -1
    return out


def _values_on_pattern(M, rows, cols, d):
    # entries of M at (rows, cols); zero where M has no entry
    coo = sp.coo_matrix(M)
    keys = coo.col.astype(np.int64) * d + coo.row
    order = np.argsort(keys)
    keys = keys[order]
    data = coo.data[order]
    want = cols.astype(np.int64) * d + rows
    pos = np.searchsorted(keys, want)
    pos_c = np.minimum(pos, max(keys.size - 1, 0))
    hit = keys.size > 0
    out = np.zeros(want.size)
    if hit:
        ok = keys[pos_c] == want
        out[ok] = data[pos_c[ok]]
    return out


class _InverseOnPattern:
    """Computes (S^{-1}) at the pattern entries from a numeric factor."""

    def __init__(self, method, rows, cols, k=None, seed=0):
        self.method = method
        self.rows = rows
        self.cols = cols
        self.k = k
        self.seed = seed
        self.calls = 0
        self._loc = None

    def __call__(self, F):
        self.calls += 1
        if self.method == "selected":
            if self._loc is None:
                loc = _locate(F.Lp, F.Li, F.pinv, self.rows, self.cols)
                self._loc = F.symbolic.block_index(loc)
            Z = F.selected_inverse_blocks()
            return Z[self._loc]
        if self.method == "columns":
            inv = ExactInverse(F)
            X = inv.columns(np.arange(F.n))
            return X[self.rows, self.cols]
        if self.method == "sketch":
            sk = build_sketch(F, self.k, seed=self.seed + self.calls)
            out = np.empty(self.rows.size)
            step = 65536
            for s in range(0, self.rows.size, step):
                r = self.rows[s:s + step]
                c = self.cols[s:s + step]
                out[s:s + step] = np.einsum("ij,ij->i", sk.Q[r], sk.Q[c])
            return out
        raise ValueError(f"unknown inverse method {self.method!r}")


def fit_precision(pecm, pattern=None, step=None, max_iter=1000, tol=1e-6, inverse="selected",
                  jl_k=None, seed=0, ordering="nd", strict=False, callback=None):
    """Projected gradient with backtracking for the pattern-constrained log-det MLE.

    The problem is solved in correlation scale (``D Sigma_hat D`` with unit
    diagonal) and mapped back, which leaves the optimum unchanged.  Steps
    follow Barzilai-Borwein lengths and are shortened until the Cholesky
    factorization succeeds and the Armijo condition holds, so the objective
    never increases.  Convergence is declared when
    ``max_{(u,v) in E} |Sigma_hat_uv - (S^{-1})_uv| <= tol``.

    ``inverse`` picks how ``(S^{-1})`` is evaluated on the pattern:
    ``selected`` (exact, sparse selected inversion), ``columns`` (exact, one
    solve per column) or ``sketch`` (random projection of width ``jl_k``).
    """
    if pattern is None:
        pattern = pecm.pattern
    elif pecm.pruned[0].size:
        pattern = pattern.without(*pecm.pruned)
    d = pattern.d
    P = sp.csc_matrix(pattern.matrix, dtype=float)
    P.sort_indices()
    indptr, indices = P.indptr, P.indices
    rows = indices.astype(np.int64)
    cols = np.repeat(np.arange(d, dtype=np.int64), np.diff(indptr))
    target = _values_on_pattern(pecm.target, rows, cols, d)
    diag = rows == cols
    tdiag = np.empty(d)
    tdiag[rows[diag]] = target[diag]
    if np.any(tdiag <= 0):
        raise NumericalError("target covariance has a nonpositive diagonal entry")
    D = 1.0 / np.sqrt(tdiag)
    scale = D[rows] * D[cols]
    C = target * scale

    if inverse == "sketch" and jl_k is None:
        raise ValueError("inverse='sketch' needs jl_k")
    inv = _InverseOnPattern(inverse, rows, cols, k=jl_k, seed=seed)
    sym = analyze(P, ordering)

    def mat(x):
        return sp.csc_matrix((x, indices, indptr), shape=(d, d))

    def factor_at(x):
        return factorize_numeric(sym, mat(x))

    def pivots(F):
        return F.pivots()

    # the change in f is computed from pivot ratios, which keeps it accurate
    # long after f itself stops resolving the decrease
    x = np.where(diag, 1.0, 0.0)
    F = factor_at(x)
    f = -F.logdet() + float(x @ C)
    G = C - inv(F)
    history = [f]
    t = 1.0 if step is None else float(step)
    converged = False
    it = 0
    log_d = 2.0 * float(np.sum(np.log(D)))
    for it in range(1, max_iter + 1):
        gmax = float(np.max(np.abs(G) / scale))
        if gmax <= tol:
            converged = True
            it -= 1
            break
        g2 = float(G @ G)
        gc = float(G @ C)
        piv = pivots(F)
        accepted = False
        for _ in range(100):
            x_new = x - t * G
            try:
                F_new = factor_at(x_new)
            except NotPositiveDefinite:
                t *= 0.5
                continue
            df = -2.0 * float(np.sum(np.log(pivots(F_new) / piv))) - t * gc
            if df <= -1e-4 * t * g2:
                accepted = True
                break
            # once the decrease sinks below rounding noise, fall back to
            # requiring a smaller gradient
            noise = 64.0 * np.finfo(float).eps * (d + abs(t * gc))
            if abs(df) <= noise:
                G_try = C - inv(F_new)
                if float(G_try @ G_try) < g2:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            res = _model(x, D, rows, cols, d, pecm, pattern, it, gmax, f - log_d,
                         history, False, inverse, ordering)
            raise LineSearchFailed(f"line search failed at iteration {it}", result=res)
        f_new = f + df
        G_new = C - inv(F_new)
        s = x_new - x
        y = G_new - G
        sy = float(s @ y)
        x, f, G, F = x_new, f_new, G_new, F_new
        history.append(f)
        if callback is not None:
            callback(it, f - log_d, G)
        if step is None:
            if sy > 0:
                t = float(s @ s) / sy if it % 2 else sy / float(y @ y)
            else:
                t = min(2.0 * t, 1e3)
    gmax = float(np.max(np.abs(G) / scale))
    converged = converged or gmax <= tol
    res = _model(x, D, rows, cols, d, pecm, pattern, it, gmax, f - log_d, history,
                 converged, inverse, ordering)
    if not converged:
        msg = f"precision fit did not reach tol={tol:g} in {max_iter} iterations (gap {gmax:.3g})"
        if strict:
            raise NotConverged(msg, result=res)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return res


def _model(x, D, rows, cols, d, pecm, pattern, iters, gmax, objective, history,
           converged, inverse, ordering):
    S = sp.csc_matrix((x * D[rows] * D[cols], (rows, cols)), shape=(d, d))
    S.sort_indices()
    diag = {"iterations": int(iters), "grad_max": gmax, "objective": float(objective),
            "converged": bool(converged), "inverse": inverse,
            "objective_history": [float(h) for h in history],
            "diag_boost": float(pecm.diag_boost), "n_pruned": int(pecm.pruned[0].size)}
    return PrecisionModel(S=S, mu=np.asarray(pecm.mu_hat, dtype=float).copy(),
                          pattern=pattern, diagnostics=diag, ordering=ordering)


def objective(S, sigma):
    """``-log det S + <S, sigma>`` using a sparse factorization."""
    F = factorize(S)
    return -F.logdet() + float(sp.csc_matrix(S).multiply(sigma).sum())


def pecm_from_covariance(sigma, pattern, mu=None, diag_boost=0.0):
    """Wrap a known covariance (restricted to the pattern) as a Pecm."""
    sigma = np.asarray(sigma.toarray() if sp.issparse(sigma) else sigma, dtype=float)
    d = sigma.shape[0]
    M = sp.csc_matrix(pattern.matrix.multiply(sp.csc_matrix(sigma)))
    M = (M + sp.diags(np.diag(sigma) - M.diagonal())).tocsc()
    M.sort_indices()
    empty = (np.zeros(0, np.int64), np.zeros(0, np.int64))
    return Pecm(mu_hat=np.zeros(d) if mu is None else np.asarray(mu, float), sigma_hat=M,
                diag_boost=diag_boost, pattern=pattern, pruned=empty,
                observed=np.ones(d, bool))
