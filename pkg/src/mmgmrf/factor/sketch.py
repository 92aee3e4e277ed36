"""Random-projection sketch of ``S^{-1}`` for fast quadratic forms.

With ``P S P^T = L L^T`` and a Rademacher matrix ``R`` (k x d, entries
``+-1/sqrt(k)``), the rows of ``Q = P^T L^{-T} R^T`` satisfy

    x^T S^{-1} x  ~=  ||Q^T x||^2

to within ``1 +- eps`` when ``k >= 24 eps^-2 ln n`` for ``n`` tracked vectors.
"""
import math
import struct
from dataclasses import dataclass

import numpy as np

_MAGIC = b"MMSK"
_HEADER = struct.Struct("<4sIIIdQ")


def jl_dimension(eps, n):
    """Smallest sketch width with the (1 +- eps) guarantee for n vectors."""
    if not 0 < eps < 1:
        raise ValueError("eps must be in (0, 1)")
    return int(math.ceil(24.0 / eps ** 2 * math.log(max(n, 2))))


def rademacher(k, d, rng):
    return (rng.integers(0, 2, size=(k, d)) * 2 - 1) / math.sqrt(k)


@dataclass(frozen=True)
class ProjectionSketch:
    """``Q`` has one row per variable; row ``u`` is ``Q_u`` (length ``k``)."""

    Q: np.ndarray
    eps: float
    seed: int

    @property
    def d(self):
        return self.Q.shape[0]

    @property
    def k(self):
        return self.Q.shape[1]

    def save(self, fh):
        Q = np.ascontiguousarray(self.Q, dtype="<f4")
        fh.write(_HEADER.pack(_MAGIC, 1, self.d, self.k, float(self.eps), int(self.seed)))
        fh.write(Q.tobytes())

    @classmethod
    def load(cls, fh):
        magic, _ver, d, k, eps, seed = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC:
            raise ValueError("not a sketch file")
        Q = np.frombuffer(fh.read(4 * d * k), dtype="<f4").reshape(d, k)
        return cls(Q=Q.astype(np.float32), eps=eps, seed=seed)


def build_sketch(factor, k, seed=0, eps=float("nan"), dtype=np.float64, block=256):
    """Solve ``L^T (P Q) = R^T`` for the k columns of ``R^T``.

    ``R`` is generated from ``seed`` in blocks of columns, so the sketch is
    reproducible and never holds more than ``d x block`` doubles of workspace
    beyond ``Q`` itself.
    """
    if k < 1:
        raise ValueError("k must be positive")
    d = factor.n
    rng = np.random.default_rng(seed)
    Q = np.empty((d, k), dtype=dtype)
    for c0 in range(0, k, block):
        c1 = min(k, c0 + block)
        Rt = (rng.integers(0, 2, size=(d, c1 - c0)) * 2 - 1) / math.sqrt(k)
        W = factor.solve_lower_t(Rt)
        Q[factor.perm, c0:c1] = W
    return ProjectionSketch(Q=Q, eps=eps, seed=seed)


def quad_form(sketch, selector):
    """Estimate ``e^T S^{-1} e`` for the 0/1 vector with ones at ``selector``.

    ``selector`` may also be a 2-d array of index rows, giving one estimate
    per row.
    """
    idx = np.asarray(selector, dtype=np.int64)
    if idx.ndim == 1:
        v = sketch.Q[idx].sum(axis=0, dtype=np.float64)
        return float(v @ v)
    v = sketch.Q[idx].sum(axis=1, dtype=np.float64)
    return np.einsum("ij,ij->i", v, v)


def inverse_entry(sketch, u, v):
    """Estimate ``(S^{-1})_{uv}`` as ``Q_u . Q_v``."""
    return float(np.dot(sketch.Q[u].astype(np.float64), sketch.Q[v].astype(np.float64)))


class ExactInverse:
    """Exact entries of ``S^{-1}`` from column solves, cached per column."""

    def __init__(self, factor):
        self.factor = factor
        self._cols = {}

    def column(self, v):
        col = self._cols.get(v)
        if col is None:
            e = np.zeros(self.factor.n)
            e[v] = 1.0
            col = self._cols[v] = self.factor.solve(e)
        return col

    def columns(self, vs):
        vs = [int(v) for v in vs]
        missing = [v for v in dict.fromkeys(vs) if v not in self._cols]
        if missing:
            n = self.factor.n
            E = np.zeros((n, len(missing)))
            E[self.factor.pinv[missing], np.arange(len(missing))] = 1.0
            Y = self.factor.solve_lower_t(self.factor.solve_lower(E))
            X = np.empty_like(Y)
            X[self.factor.perm] = Y
            for j, v in enumerate(missing):
                self._cols[v] = X[:, j]
        return np.stack([self._cols[v] for v in vs], axis=1)

    def entry(self, u, v):
        return float(self.column(v)[u])

    def block(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return self.columns(idx)[idx]

    def quad_form(self, idx):
        B = self.block(idx)
        return float(B.sum())


def exact_inverse_entries(factor, pairs, cache=None):
    """Exact ``(S^{-1})_{uv}`` for each pair, via cached column solves."""
    inv = cache if cache is not None else ExactInverse(factor)
    pairs = list(pairs)
    inv.columns([v for _, v in pairs])
    return np.array([inv.entry(u, v) for u, v in pairs])
