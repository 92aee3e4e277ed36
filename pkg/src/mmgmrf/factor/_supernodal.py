"""Supernodal multifrontal Cholesky and selected inversion.

Consecutive columns of ``L`` that form a chain in the elimination tree with
nested structure are grouped into supernodes (with a small relaxation that
admits some explicit zeros).  A supernode with ``s`` columns and
below-diagonal row set ``R`` (``r`` rows) is stored as a dense column-major
``(s + r) x s`` block; its rows are the supernode's own columns followed by
``R``.  Dense work goes to LAPACK/BLAS through scipy's Cython bindings, so the
large separator blocks run at BLAS speed.

The kernels calling LAPACK hold raw function addresses and therefore are not
cached on disk by numba.
"""
import ctypes

import numpy as np
from numba import njit
from numba.extending import get_cython_function_address

# amalgamation: always merge up to RELAX_SMALL columns, otherwise merge while
# the fraction of explicit zeros stays under the threshold for that width
RELAX_SMALL = 4
RELAX_RULES = ((16, 0.8), (48, 0.1))
RELAX_ANY = 0.05

_vp = ctypes.c_void_p


def _bind(module, name, nargs):
    addr = get_cython_function_address(f"scipy.linalg.cython_{module}", name)
    return ctypes.CFUNCTYPE(None, *([_vp] * nargs))(addr)


_dpotrf = _bind("lapack", "dpotrf", 5)
_dtrtri = _bind("lapack", "dtrtri", 6)
_dtrsm = _bind("blas", "dtrsm", 11)
_dsyrk = _bind("blas", "dsyrk", 10)
_dgemm = _bind("blas", "dgemm", 13)
_dsymm = _bind("blas", "dsymm", 12)

_L, _R, _N, _T = ord("L"), ord("R"), ord("N"), ord("T")


@njit(cache=True)
def postorder(parent):
    """Postorder of a forest given by ``parent`` (-1 at roots)."""
    n = parent.shape[0]
    head = -np.ones(n, np.int64)
    nxt = np.empty(n, np.int64)
    for j in range(n - 1, -1, -1):
        p = parent[j]
        if p != -1:
            nxt[j] = head[p]
            head[p] = j
    post = np.empty(n, np.int64)
    stack = np.empty(n, np.int64)
    k = 0
    for root in range(n):
        if parent[root] != -1:
            continue
        top = 0
        stack[0] = root
        while top >= 0:
            p = stack[top]
            i = head[p]
            if i == -1:
                top -= 1
                post[k] = p
                k += 1
            else:
                head[p] = nxt[i]
                top += 1
                stack[top] = i
    return post


@njit(cache=True)
def supernodes(parent, counts, relax_small, relax_cols, relax_frac, relax_any):
    """Column boundaries of (relaxed) supernodes of a postordered etree.

    Returns ``first`` with supernode ``J`` spanning columns
    ``first[J]:first[J + 1]``.
    """
    n = parent.shape[0]
    nchild = np.zeros(n, np.int64)
    for j in range(n):
        if parent[j] != -1:
            nchild[parent[j]] += 1
    # fundamental supernodes
    ff = np.empty(n + 1, np.int64)
    nf = 0
    for j in range(n):
        if j > 0 and parent[j - 1] == j and counts[j - 1] == counts[j] + 1 and nchild[j] == 1:
            continue
        ff[nf] = j
        nf += 1
    ff[nf] = n
    # fundamental supernode s is a chain; its parent supernode starts at
    # parent[last column]
    # merge s into the group starting right after it when that group is its
    # parent, walking from the top of the tree down
    start = np.empty(nf + 1, np.int64)  # group boundaries, built in reverse
    ng = 0
    g_cols = 0
    g_rows = 0
    g_zeros = 0
    g_first = n
    for s in range(nf - 1, -1, -1):
        c0 = ff[s]
        c1 = ff[s + 1]
        ns = c1 - c0
        below = counts[c0] - ns  # rows under the diagonal block of s
        merge = False
        if ng > 0 and parent[c1 - 1] == g_first and g_first == c1:
            cols = ns + g_cols
            rows = ns + g_rows
            zeros = g_zeros + ns * (g_rows - below)
            total = cols * rows - cols * (cols - 1) // 2
            frac = zeros / total
            if cols <= relax_small:
                merge = True
            elif frac < relax_any:
                merge = True
            else:
                for q in range(relax_cols.shape[0]):
                    if cols <= relax_cols[q] and frac < relax_frac[q]:
                        merge = True
                        break
            if merge:
                g_cols = cols
                g_rows = rows
                g_zeros = zeros
                g_first = c0
                start[ng - 1] = c0
        if not merge:
            start[ng] = c0
            ng += 1
            g_cols = ns
            g_rows = counts[c0]
            g_zeros = 0
            g_first = c0
    first = np.empty(ng + 1, np.int64)
    for J in range(ng):
        first[J] = start[ng - 1 - J]
    first[ng] = n
    return first


@njit(cache=True)
def supernode_rows(n, first, Ap, Ai, counts):
    """Below-diagonal row sets of every supernode.

    ``Ap, Ai`` is the lower triangle of the permuted matrix.  Returns
    ``(rp, rows, sparent, snode)``.
    """
    ns = first.shape[0] - 1
    snode = np.empty(n, np.int64)
    for J in range(ns):
        for c in range(first[J], first[J + 1]):
            snode[c] = J
    rp = np.zeros(ns + 1, np.int64)
    for J in range(ns):
        rp[J + 1] = rp[J] + counts[first[J + 1] - 1] - 1
    rows = np.empty(rp[ns], np.int64)
    sparent = -np.ones(ns, np.int64)
    head = -np.ones(ns, np.int64)  # children lists
    nxt = -np.ones(ns, np.int64)
    mark = -np.ones(n, np.int64)
    for J in range(ns):
        c0 = first[J]
        c1 = first[J + 1]
        k = rp[J]
        for c in range(c0, c1):
            for p in range(Ap[c], Ap[c + 1]):
                i = Ai[p]
                if i >= c1 and mark[i] != J:
                    mark[i] = J
                    rows[k] = i
                    k += 1
        C = head[J]
        while C != -1:
            for p in range(rp[C], rp[C + 1]):
                i = rows[p]
                if i >= c1 and mark[i] != J:
                    mark[i] = J
                    rows[k] = i
                    k += 1
            C = nxt[C]
        if k != rp[J + 1]:
            raise ValueError("supernode row count mismatch")
        rows[rp[J]:k].sort()
        if k > rp[J]:
            P = snode[rows[rp[J]]]
            sparent[J] = P
            nxt[J] = head[P]
            head[P] = J
    return rp, rows, sparent, snode


@njit(cache=True)
def layout(n, first, rp, rows, sparent):
    """Block offsets, the CSC pattern of L and workspace sizes."""
    ns = first.shape[0] - 1
    bp = np.zeros(ns + 1, np.int64)
    Lp = np.zeros(n + 1, np.int64)
    max_front = 0
    max_r = 0
    max_s = 0
    for J in range(ns):
        s = first[J + 1] - first[J]
        r = rp[J + 1] - rp[J]
        bp[J + 1] = bp[J] + (s + r) * s
        max_front = max(max_front, s + r)
        max_r = max(max_r, r)
        max_s = max(max_s, s)
        for t in range(s):
            c = first[J] + t
            Lp[c + 1] = Lp[c] + s - t + r
    Li = np.empty(Lp[n], np.int64)
    for J in range(ns):
        c0 = first[J]
        c1 = first[J + 1]
        for c in range(c0, c1):
            q = Lp[c]
            for i in range(c, c1):
                Li[q] = i
                q += 1
            for p in range(rp[J], rp[J + 1]):
                Li[q] = rows[p]
                q += 1
    # peak size of the update-matrix stack in the multifrontal sweep
    stack_id = np.empty(ns, np.int64)
    sp = 0
    top = 0
    peak = 0
    for J in range(ns):
        while sp > 0 and sparent[stack_id[sp - 1]] == J:
            C = stack_id[sp - 1]
            sp -= 1
            rc = rp[C + 1] - rp[C]
            top -= rc * rc
        r = rp[J + 1] - rp[J]
        if r > 0:
            stack_id[sp] = J
            sp += 1
            top += r * r
            peak = max(peak, top)
    return bp, Lp, Li, max_front, max_r, max_s, peak


@njit
def numeric(n, first, rp, rows, sparent, bp, Ap, Ai, Ax, max_front, stack_size):
    """Multifrontal factorization.  Returns ``(blocks, bad)``; ``bad`` is the
    failing pivot column or -1."""
    ns = first.shape[0] - 1
    blocks = np.empty(bp[ns])
    F = np.empty(max_front * max_front)
    stack = np.empty(max(stack_size, 1))
    ustart = np.zeros(ns, np.int64)
    stack_id = np.empty(ns, np.int64)
    rel = np.empty(n, np.int64)
    sp = 0
    top = 0
    cL = np.array([_L], np.uint8)
    cR = np.array([_R], np.uint8)
    cN = np.array([_N], np.uint8)
    cT = np.array([_T], np.uint8)
    one = np.array([1.0])
    mone = np.array([-1.0])
    i_s = np.zeros(1, np.int32)
    i_r = np.zeros(1, np.int32)
    i_f = np.zeros(1, np.int32)
    info = np.zeros(1, np.int32)
    for J in range(ns):
        c0 = first[J]
        c1 = first[J + 1]
        s = c1 - c0
        r0 = rp[J]
        r = rp[J + 1] - r0
        nf = s + r
        # only the lower triangle of the front is ever read
        for t in range(nf):
            for q in range(t, nf):
                F[q + t * nf] = 0.0
        for t in range(s):
            rel[c0 + t] = t
        for q in range(r):
            rel[rows[r0 + q]] = s + q
        for t in range(s):
            c = c0 + t
            for p in range(Ap[c], Ap[c + 1]):
                F[rel[Ai[p]] + t * nf] += Ax[p]
        while sp > 0 and sparent[stack_id[sp - 1]] == J:
            C = stack_id[sp - 1]
            sp -= 1
            rc0 = rp[C]
            rc = rp[C + 1] - rc0
            off = ustart[C]
            for b in range(rc):
                col = rel[rows[rc0 + b]] * nf
                for a in range(b, rc):
                    F[rel[rows[rc0 + a]] + col] += stack[off + a + b * rc]
            top = off
        i_s[0] = s
        i_r[0] = r
        i_f[0] = nf
        _dpotrf(cL.ctypes, i_s.ctypes, F.ctypes, i_f.ctypes, info.ctypes)
        if info[0] != 0:
            return blocks, c0 + info[0] - 1
        if r > 0:
            _dtrsm(cR.ctypes, cL.ctypes, cT.ctypes, cN.ctypes, i_r.ctypes, i_s.ctypes,
                   one.ctypes, F.ctypes, i_f.ctypes, F[s:].ctypes, i_f.ctypes)
            _dsyrk(cL.ctypes, cN.ctypes, i_r.ctypes, i_s.ctypes, mone.ctypes, F[s:].ctypes,
                   i_f.ctypes, one.ctypes, F[s + s * nf:].ctypes, i_f.ctypes)
        b0 = bp[J]
        for q in range(nf * s):
            blocks[b0 + q] = F[q]
        if r > 0:
            off = top
            for b in range(r):
                src = s + (s + b) * nf
                for a in range(b, r):
                    stack[off + a + b * r] = F[src + a]
            ustart[J] = off
            top += r * r
            stack_id[sp] = J
            sp += 1
    return blocks, -1


@njit
def selected_inverse(first, rp, rows, snode, bp, blocks, max_r, max_s):
    """Entries of ``(L L^T)^{-1}`` on the supernodal pattern, same block layout."""
    ns = first.shape[0] - 1
    # every entry on or below the block diagonal is written before it is read
    Z = np.empty(blocks.shape[0])
    Zrr = np.empty(max(max_r * max_r, 1))
    Y = np.empty(max(max_r * max_s, 1))
    W = np.empty(max(max_s * max_s, 1))
    loc = np.empty(max(max_r, 1), np.int64)
    cL = np.array([_L], np.uint8)
    cR = np.array([_R], np.uint8)
    cN = np.array([_N], np.uint8)
    cT = np.array([_T], np.uint8)
    one = np.array([1.0])
    zero = np.array([0.0])
    mone = np.array([-1.0])
    i_s = np.zeros(1, np.int32)
    i_r = np.zeros(1, np.int32)
    i_f = np.zeros(1, np.int32)
    info = np.zeros(1, np.int32)
    for J in range(ns - 1, -1, -1):
        c0 = first[J]
        s = first[J + 1] - c0
        r0 = rp[J]
        r = rp[J + 1] - r0
        nf = s + r
        b0 = bp[J]
        i_s[0] = s
        i_r[0] = r
        i_f[0] = nf
        # W = L_JJ^{-1}, lower triangular with a clean upper part
        for t in range(s):
            for a in range(s):
                W[a + t * s] = blocks[b0 + a + t * nf] if a >= t else 0.0
        _dtrtri(cL.ctypes, cN.ctypes, i_s.ctypes, W.ctypes, i_s.ctypes, info.ctypes)
        # Z_JJ = W^T W (lower)
        _dsyrk(cL.ctypes, cT.ctypes, i_s.ctypes, i_s.ctypes, one.ctypes, W.ctypes, i_s.ctypes,
               zero.ctypes, Z[b0:].ctypes, i_f.ctypes)
        if r == 0:
            continue
        # Y = L_RJ L_JJ^{-1}
        for t in range(s):
            for a in range(r):
                Y[a + t * r] = blocks[b0 + s + a + t * nf]
        _dtrsm(cR.ctypes, cL.ctypes, cN.ctypes, cN.ctypes, i_r.ctypes, i_s.ctypes, one.ctypes,
               blocks[b0:].ctypes, i_f.ctypes, Y.ctypes, i_r.ctypes)
        # gather Z_RR from the ancestors' blocks
        q = 0
        while q < r:
            K = snode[rows[r0 + q]]
            f0 = first[K]
            f1 = first[K + 1]
            nfK = f1 - f0 + rp[K + 1] - rp[K]
            ptr = rp[K]
            for q2 in range(q, r):
                i = rows[r0 + q2]
                if i < f1:
                    loc[q2] = i - f0
                else:
                    while rows[ptr] != i:
                        ptr += 1
                    loc[q2] = f1 - f0 + ptr - rp[K]
            qe = q
            while qe < r and rows[r0 + qe] < f1:
                qe += 1
            for qc in range(q, qe):
                colbase = bp[K] + (rows[r0 + qc] - f0) * nfK
                dst = qc * r
                for q2 in range(qc, r):
                    Zrr[q2 + dst] = Z[colbase + loc[q2]]
            q = qe
        # Z_RJ = -Z_RR Y (Z_RR symmetric, lower triangle filled) ;  Z_JJ -= Y^T Z_RJ
        _dsymm(cL.ctypes, cL.ctypes, i_r.ctypes, i_s.ctypes, mone.ctypes, Zrr.ctypes, i_r.ctypes,
               Y.ctypes, i_r.ctypes, zero.ctypes, Z[b0 + s:].ctypes, i_f.ctypes)
        _dgemm(cT.ctypes, cN.ctypes, i_s.ctypes, i_s.ctypes, i_r.ctypes, mone.ctypes, Y.ctypes,
               i_r.ctypes, Z[b0 + s:].ctypes, i_f.ctypes, one.ctypes, Z[b0:].ctypes, i_f.ctypes)
    return Z


@njit(cache=True)
def blocks_to_csc(first, rp, bp, Lp, blocks):
    """Copy the lower part of each block into CSC column order."""
    ns = first.shape[0] - 1
    out = np.empty(Lp[Lp.shape[0] - 1])
    for J in range(ns):
        s = first[J + 1] - first[J]
        nf = s + rp[J + 1] - rp[J]
        for t in range(s):
            src = bp[J] + t * nf + t
            dst = Lp[first[J] + t]
            for q in range(nf - t):
                out[dst + q] = blocks[src + q]
    return out
