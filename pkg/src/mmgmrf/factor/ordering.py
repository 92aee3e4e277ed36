"""Fill-reducing orderings for symmetric sparse matrices."""
import numpy as np
import pymetis
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from ._amd import amd_order

ORDERINGS = ("nd", "amd", "rcm", "natural")


def _csc_pattern(S):
    S = sp.csc_matrix(S)
    return S.indptr.astype(np.int64), S.indices.astype(np.int64)


def nested_dissection(S):
    """METIS nested-dissection ordering of the graph of ``S``."""
    A = sp.csr_matrix(S, dtype=bool, copy=True)
    A.setdiag(False)
    A.eliminate_zeros()
    A = (A + A.T).tocsr()
    A.sort_indices()
    adj = pymetis.CSRAdjacency(A.indptr.astype(np.int64), A.indices.astype(np.int64))
    perm, _iperm = pymetis.nested_dissection(adjacency=adj)
    return np.asarray(perm, dtype=np.int64)


def fill_reducing_order(S, method="nd"):
    """Permutation ``perm`` such that ``S[perm][:, perm]`` factors with little fill.

    ``method`` is one of ``nd`` (METIS nested dissection, default), ``amd``,
    ``rcm`` or ``natural``.
    """
    n = S.shape[0]
    if method == "natural" or n == 0:
        return np.arange(n, dtype=np.int64)
    if method == "nd":
        return nested_dissection(S)
    if method == "amd":
        Ap, Ai = _csc_pattern(S)
        return amd_order(n, Ap, Ai)
    if method == "rcm":
        return reverse_cuthill_mckee(sp.csr_matrix(S), symmetric_mode=True).astype(np.int64)
    raise ValueError(f"unknown ordering {method!r}; expected one of {ORDERINGS}")
