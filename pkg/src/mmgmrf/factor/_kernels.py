"""Compiled kernels for the scalar parts of sparse Cholesky: etree, column
counts, permutation and triangular solves.

All matrices are CSC with int64 index arrays.  The factor ``L`` stores each
column with the diagonal first and strictly increasing row indices.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def etree(n, Cp, Ci):
    """Elimination tree of a symmetric matrix from its upper triangle."""
    parent = -np.ones(n, np.int64)
    ancestor = -np.ones(n, np.int64)
    for k in range(n):
        for p in range(Cp[k], Cp[k + 1]):
            i = Ci[p]
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return parent


@njit(cache=True)
def _ereach(Cp, Ci, k, parent, s, w):
    # pattern of row k of L, returned in s[top:n] in topological order
    n = parent.shape[0]
    top = n
    w[k] = k
    for p in range(Cp[k], Cp[k + 1]):
        i = Ci[p]
        if i > k:
            continue
        ln = 0
        while w[i] != k:
            s[ln] = i
            ln += 1
            w[i] = k
            i = parent[i]
        while ln > 0:
            top -= 1
            ln -= 1
            s[top] = s[ln]
    return top


@njit(cache=True)
def column_counts(n, Cp, Ci, parent):
    """Column counts of L (diagonal included), by walking row subtrees."""
    counts = np.ones(n, np.int64)
    s = np.empty(n, np.int64)
    w = -np.ones(n, np.int64)
    for k in range(n):
        top = _ereach(Cp, Ci, k, parent, s, w)
        for t in range(top, n):
            counts[s[t]] += 1
    return counts


@njit(cache=True)
def lsolve(n, Lp, Li, Lx, B):
    """Solve L X = B in place, B of shape (n, r)."""
    r = B.shape[1]
    for j in range(n):
        piv = Lx[Lp[j]]
        for c in range(r):
            B[j, c] /= piv
        for p in range(Lp[j] + 1, Lp[j + 1]):
            i = Li[p]
            v = Lx[p]
            for c in range(r):
                B[i, c] -= v * B[j, c]


@njit(cache=True)
def ltsolve(n, Lp, Li, Lx, B):
    """Solve L^T X = B in place, B of shape (n, r)."""
    r = B.shape[1]
    for j in range(n - 1, -1, -1):
        for p in range(Lp[j] + 1, Lp[j + 1]):
            i = Li[p]
            v = Lx[p]
            for c in range(r):
                B[j, c] -= v * B[i, c]
        piv = Lx[Lp[j]]
        for c in range(r):
            B[j, c] /= piv


@njit(cache=True)
def symmetric_permute(n, Ap, Ai, Ax, pinv, lower):
    """Upper (or lower) triangle of P A P^T from a full symmetric CSC matrix.

    Output columns have sorted row indices.  ``pinv[old] = new``.
    """
    cnt = np.zeros(n, np.int64)
    for j in range(n):
        j2 = pinv[j]
        for p in range(Ap[j], Ap[j + 1]):
            i = Ai[p]
            if i > j:
                continue
            i2 = pinv[i]
            cnt[min(i2, j2) if lower else max(i2, j2)] += 1
    Cp = np.zeros(n + 1, np.int64)
    for j in range(n):
        Cp[j + 1] = Cp[j] + cnt[j]
    Ci = np.empty(Cp[n], np.int64)
    Cx = np.empty(Cp[n])
    fill = Cp[:n].copy()
    for j in range(n):
        j2 = pinv[j]
        for p in range(Ap[j], Ap[j + 1]):
            i = Ai[p]
            if i > j:
                continue
            i2 = pinv[i]
            col = min(i2, j2) if lower else max(i2, j2)
            q = fill[col]
            Ci[q] = max(i2, j2) if lower else min(i2, j2)
            Cx[q] = Ax[p]
            fill[col] += 1
    for j in range(n):
        # insertion sort; columns are short
        for a in range(Cp[j] + 1, Cp[j + 1]):
            ki = Ci[a]
            kx = Cx[a]
            b = a - 1
            while b >= Cp[j] and Ci[b] > ki:
                Ci[b + 1] = Ci[b]
                Cx[b + 1] = Cx[b]
                b -= 1
            Ci[b + 1] = ki
            Cx[b + 1] = kx
    return Cp, Ci, Cx
