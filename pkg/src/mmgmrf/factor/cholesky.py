"""Sparse Cholesky factorization with a fill-reducing ordering.

The factorization is split into a symbolic phase (ordering, elimination tree,
supernodes, column structure) and a numeric phase, so that repeated
factorizations of matrices sharing one pattern, as in the precision fit,
reuse the analysis.  The numeric phase is supernodal; ``L`` is also exposed
in plain CSC form for the triangular solves.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from ..errors import NotPositiveDefinite
from . import _kernels as K
from . import _supernodal as SN
from .ordering import fill_reducing_order


@dataclass(frozen=True)
class SymbolicFactor:
    """Ordering, supernodes and column structure of L for a fixed pattern."""

    n: int
    perm: np.ndarray
    pinv: np.ndarray
    parent: np.ndarray
    Lp: np.ndarray
    Li: np.ndarray
    # supernode J spans columns first[J]:first[J+1]; its rows below the
    # diagonal block are rows[rp[J]:rp[J+1]]; its dense block starts at bp[J]
    first: np.ndarray
    rp: np.ndarray
    rows: np.ndarray
    sparent: np.ndarray
    snode: np.ndarray
    bp: np.ndarray
    work: tuple  # (max front, max rows, max columns, update stack size)
    # lower triangle of the permuted matrix; its values are data[src_map]
    Ap: np.ndarray
    Ai: np.ndarray
    src_map: np.ndarray
    src_nnz: int
    ordering: str

    @property
    def nnz(self):
        return int(self.Lp[-1])

    @property
    def n_supernodes(self):
        return int(self.first.shape[0] - 1)

    @cached_property
    def diag_index(self):
        """Position of each pivot inside the supernodal blocks."""
        return self.block_index(self.Lp[:-1])

    def block_index(self, positions):
        """Map positions in the CSC layout of ``L`` to the block layout."""
        positions = np.asarray(positions, dtype=np.int64)
        col = np.searchsorted(self.Lp, positions, side="right") - 1
        J = self.snode[col]
        t = col - self.first[J]
        nf = self.first[J + 1] - self.first[J] + self.rp[J + 1] - self.rp[J]
        return self.bp[J] + t * nf + t + (positions - self.Lp[col])


@dataclass(frozen=True)
class CholeskyFactor:
    """``P S P^T = L L^T`` with ``P = I[perm]``.

    ``L`` is held as CSC arrays (``Lp``, ``Li``, ``Lx``), diagonal first in
    every column, and as dense supernodal blocks.  The pattern may contain a
    few explicit zeros from supernode amalgamation.
    """

    symbolic: SymbolicFactor
    blocks: np.ndarray
    stats: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.symbolic.n

    @property
    def perm(self):
        return self.symbolic.perm

    @property
    def pinv(self):
        return self.symbolic.pinv

    @property
    def Lp(self):
        return self.symbolic.Lp

    @property
    def Li(self):
        return self.symbolic.Li

    @cached_property
    def Lx(self):
        sym = self.symbolic
        return SN.blocks_to_csc(sym.first, sym.rp, sym.bp, sym.Lp, self.blocks)

    def pivots(self):
        return self.blocks[self.symbolic.diag_index]

    @property
    def L(self):
        n = self.n
        return sp.csc_matrix((self.Lx, self.Li, self.Lp), shape=(n, n))

    def logdet(self):
        return 2.0 * float(np.sum(np.log(self.pivots())))

    def solve_lower(self, B):
        """Return ``L^{-1} B`` (permuted coordinates)."""
        X = np.array(B, dtype=float, order="C", copy=True)
        squeeze = X.ndim == 1
        if squeeze:
            X = X[:, None]
        K.lsolve(self.n, self.Lp, self.Li, self.Lx, X)
        return X[:, 0] if squeeze else X

    def solve_lower_t(self, B):
        """Return ``L^{-T} B`` (permuted coordinates)."""
        X = np.array(B, dtype=float, order="C", copy=True)
        squeeze = X.ndim == 1
        if squeeze:
            X = X[:, None]
        K.ltsolve(self.n, self.Lp, self.Li, self.Lx, X)
        return X[:, 0] if squeeze else X

    def solve(self, b):
        """Solve ``S x = b`` in the original coordinates."""
        b = np.asarray(b, dtype=float)
        y = self.solve_lower(b[self.perm])
        z = self.solve_lower_t(y)
        x = np.empty_like(z)
        x[self.perm] = z
        return x

    def selected_inverse_blocks(self):
        """``(S^{-1})`` on the pattern of ``L`` in the supernodal block layout
        (see ``SymbolicFactor.block_index``)."""
        sym = self.symbolic
        _front, max_r, max_s, _stack = sym.work
        return SN.selected_inverse(sym.first, sym.rp, sym.rows, sym.snode, sym.bp, self.blocks,
                                   max_r, max_s)

    def selected_inverse_values(self):
        """``(S^{-1})`` on the pattern of ``L``, laid out like ``Lx``."""
        sym = self.symbolic
        return SN.blocks_to_csc(sym.first, sym.rp, sym.bp, sym.Lp, self.selected_inverse_blocks())

    def selected_inverse(self):
        """``(S^{-1})`` on the pattern of ``L``, as a symmetric CSC matrix in
        original coordinates (both triangles)."""
        Z = self.selected_inverse_values()
        n = self.n
        Zl = sp.csc_matrix((Z, self.Li, self.Lp), shape=(n, n))
        Zfull = Zl + sp.tril(Zl, k=-1).T
        p = self.perm
        # entry (a, b) in permuted coords is (perm[a], perm[b]) in original
        Zfull = Zfull.tocoo()
        return sp.csc_matrix((Zfull.data, (p[Zfull.row], p[Zfull.col])), shape=(n, n))


def _permuted(S, pinv, lower, values=None):
    n = S.shape[0]
    indptr = S.indptr.astype(np.int64)
    indices = S.indices.astype(np.int64)
    x = np.ones(indices.shape[0]) if values is None else values
    return K.symmetric_permute(n, indptr, indices, x, pinv, lower)


def _inverse_perm(perm):
    pinv = np.empty(perm.shape[0], dtype=np.int64)
    pinv[perm] = np.arange(perm.shape[0], dtype=np.int64)
    return pinv


def analyze(S, ordering="nd"):
    """Symbolic analysis of a symmetric sparse matrix pattern."""
    S = sp.csc_matrix(S)
    S.sort_indices()
    n = S.shape[0]
    if S.shape[1] != n:
        raise ValueError("matrix must be square")
    perm = np.asarray(fill_reducing_order(S, ordering), dtype=np.int64)
    # postorder the elimination tree: same fill, contiguous supernodes
    Cp, Ci, _ = _permuted(S, _inverse_perm(perm), lower=False)
    perm = perm[SN.postorder(K.etree(n, Cp, Ci))]
    pinv = _inverse_perm(perm)
    Cp, Ci, _ = _permuted(S, pinv, lower=False)
    parent = K.etree(n, Cp, Ci)
    counts = K.column_counts(n, Cp, Ci, parent)
    first = SN.supernodes(parent, counts, SN.RELAX_SMALL,
                          np.array([c for c, _ in SN.RELAX_RULES], np.int64),
                          np.array([f for _, f in SN.RELAX_RULES]), SN.RELAX_ANY)
    # permuting the positions 0..nnz-1 gives the gather index for values
    Ap, Ai, pos = _permuted(S, pinv, lower=True, values=np.arange(S.nnz, dtype=float))
    rp, rows, sparent, snode = SN.supernode_rows(n, first, Ap, Ai, counts)
    bp, Lp, Li, max_front, max_r, max_s, peak = SN.layout(n, first, rp, rows, sparent)
    return SymbolicFactor(n=n, perm=perm, pinv=pinv, parent=parent, Lp=Lp, Li=Li, first=first,
                          rp=rp, rows=rows, sparent=sparent, snode=snode, bp=bp,
                          work=(int(max_front), int(max_r), int(max_s), int(peak)),
                          Ap=Ap, Ai=Ai, src_map=pos.astype(np.int64), src_nnz=int(S.nnz),
                          ordering=ordering)


def factorize_numeric(symbolic, S):
    """Numeric phase; ``S`` must have exactly the analyzed pattern (CSC order)."""
    S = sp.csc_matrix(S)
    S.sort_indices()
    if S.nnz != symbolic.src_nnz:
        raise ValueError("matrix pattern differs from the analyzed pattern")
    sym = symbolic
    Ax = np.asarray(S.data, dtype=float)[sym.src_map]
    max_front, _r, _s, peak = sym.work
    blocks, bad = SN.numeric(sym.n, sym.first, sym.rp, sym.rows, sym.sparent, sym.bp, sym.Ap,
                             sym.Ai, Ax, max_front, peak)
    if bad >= 0:
        raise NotPositiveDefinite(int(sym.perm[bad]))
    nnz_s = int(S.nnz)
    stats = {"nnz_S": nnz_s, "nnz_L": sym.nnz, "fill_ratio": sym.nnz / max(nnz_s, 1),
             "supernodes": sym.n_supernodes, "ordering": sym.ordering}
    return CholeskyFactor(symbolic=sym, blocks=blocks, stats=stats)


def factorize(S, ordering="nd"):
    """Cholesky factor of a sparse symmetric positive definite matrix.

    Raises
    ------
    NotPositiveDefinite
        With ``pivot`` set to the original index where elimination failed.
    """
    S = sp.csc_matrix(S, dtype=float)
    S.sort_indices()
    return factorize_numeric(analyze(S, ordering), S)
