"""Independent reference implementations used only by the tests."""
import itertools

import numpy as np


def lasso_support_enumeration(A, b, lam):
    """Nonnegative LASSO by trying every support.

    On a support ``P`` the stationarity condition is linear,
    ``A_P^T A_P v_P = A_P^T b - lam``; among supports whose solution is
    nonnegative the one with the lowest objective is the global minimizer.
    """
    J = A.shape[1]
    best, best_f = np.zeros(J), 0.5 * float(b @ b)
    for r in range(1, J + 1):
        for P in itertools.combinations(range(J), r):
            P = list(P)
            AP = A[:, P]
            try:
                vP = np.linalg.solve(AP.T @ AP, AP.T @ b - lam)
            except np.linalg.LinAlgError:
                continue
            if np.any(vP < 0):
                continue
            v = np.zeros(J)
            v[P] = vP
            f = 0.5 * float(np.sum((A @ v - b) ** 2)) + lam * float(v.sum())
            if f < best_f:
                best, best_f = v, f
    return best


def ips_fit(sigma, cliques, iters=100000, tol=1e-12):
    """Iterative proportional scaling for the Gaussian MLE on a pattern.

    Each sweep sets the marginal covariance of every clique to the target:
    ``K_CC <- K_CC + inv(sigma_CC) - inv((inv K)_CC)``.
    """
    d = sigma.shape[0]
    K = np.diag(1.0 / np.diag(sigma))
    for _ in range(iters):
        change = 0.0
        for C in cliques:
            C = np.asarray(C)
            W = np.linalg.inv(K)
            upd = np.linalg.inv(sigma[np.ix_(C, C)]) - np.linalg.inv(W[np.ix_(C, C)])
            K[np.ix_(C, C)] += upd
            change = max(change, float(np.max(np.abs(upd))))
        if change < tol:
            break
    return K


def chain_probabilities(pi, Ts, seqs):
    """Exact probability of each state sequence of a chain by direct product."""
    out = []
    for s in seqs:
        p = pi[s[0]]
        for i in range(1, len(s)):
            p *= Ts[i - 1][s[i - 1], s[i]]
        out.append(p)
    return np.array(out)
