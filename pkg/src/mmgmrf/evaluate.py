"""Validation metrics: held-out log-likelihood, p-p calibration, KL to the exact mixture,
and fit-time scaling."""
import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .factor import factorize
from .gmrf import Pecm, PrecisionModel, fit_precision
from .inference import (PathQuery, TravelTimeModel, exact_mixture, infer_distribution,
                        stratified_distribution)

LENGTH_BINS = ((1, 3), (4, 6), (7, 10), (11, None))
PP_GRID = 101
KL_GRID = 4096
DENSITY_FLOOR = 1e-300


def _bin_label(lo, hi):
    return f"{lo}+" if hi is None else f"{lo}-{hi}"


def length_bin(n, bins=LENGTH_BINS):
    for lo, hi in bins:
        if n >= lo and (hi is None or n <= hi):
            return _bin_label(lo, hi)
    return None


def path_loglik(model, obs, K=1000, seed=0, query_id=None, dist=None):
    """Log mixture density at the observed total travel time (floored at 1e-300)."""
    if dist is None:
        dist = infer_distribution(model, PathQuery(tuple(obs.path), K=K, seed=seed,
                                                   query_id=query_id))
    return float(dist.logpdf(obs.total_time, floor=DENSITY_FLOOR))


@dataclass
class ValidationResult:
    loglik: np.ndarray
    pit: np.ndarray
    lengths: np.ndarray

    def mean_loglik(self):
        return float(np.mean(self.loglik))

    def by_length(self, bins=LENGTH_BINS):
        out = {}
        for lo, hi in bins:
            sel = (self.lengths >= lo) & ((self.lengths <= hi) if hi is not None else True)
            out[_bin_label(lo, hi)] = {"n": int(sel.sum()),
                                       "mean_loglik": float(self.loglik[sel].mean()) if sel.any() else None}
        return out


def validate(model, observations, K=1000, seed=0):
    """Log-likelihood and percentile of the observed total for each path."""
    ll, pit, lens = [], [], []
    for q, obs in enumerate(observations):
        dist = infer_distribution(model, PathQuery(tuple(obs.path), K=K, seed=seed, query_id=q))
        y = obs.total_time
        ll.append(float(dist.logpdf(y, floor=DENSITY_FLOOR)))
        pit.append(float(dist.cdf(y)))
        lens.append(len(obs))
    return ValidationResult(np.array(ll), np.array(pit), np.array(lens, dtype=np.int64))


@dataclass(frozen=True)
class PpCurve:
    alpha: np.ndarray
    f: np.ndarray
    a: float
    b: float

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["alpha", "f"])
        for x, y in zip(self.alpha, self.f):
            w.writerow([f"{x:.4f}", f"{y:.6f}"])
        return buf.getvalue()


def pp_from_curve(alpha, f):
    """a = int max(f - alpha, 0), b = int max(alpha - f, 0), trapezoid rule."""
    alpha = np.asarray(alpha, float)
    f = np.asarray(f, float)
    a = float(np.trapezoid(np.maximum(f - alpha, 0.0), alpha))
    b = float(np.trapezoid(np.maximum(alpha - f, 0.0), alpha))
    return PpCurve(alpha=alpha, f=f, a=a, b=b)


def pp_metrics(values, grid=PP_GRID):
    """Empirical p-p curve ``f(alpha) = #{values <= alpha} / n`` on a uniform grid."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("no percentile values")
    if v[0] < 0 or v[-1] > 1:
        raise ValueError("percentile values must lie in [0, 1]")
    alpha = np.linspace(0.0, 1.0, grid)
    f = np.searchsorted(v, alpha, side="right") / v.size
    return pp_from_curve(alpha, f)


def kl_divergence(p, q, n_grid=KL_GRID, span=6.0):
    """KL(p || q) for two Gaussian mixtures by the trapezoid rule.

    The grid covers ``mu +- 6 sigma`` of every component of both mixtures.
    """
    sp_ = np.sqrt(p.variances)
    sq = np.sqrt(q.variances)
    lo = min(np.min(p.means - span * sp_), np.min(q.means - span * sq))
    hi = max(np.max(p.means + span * sp_), np.max(q.means + span * sq))
    t = np.linspace(lo, hi, n_grid)
    fp = np.maximum(p.pdf(t), DENSITY_FLOOR)
    fq = np.maximum(q.pdf(t), DENSITY_FLOOR)
    val = float(np.trapezoid(fp * np.log(fp / fq), t))
    return max(val, 0.0)


def kl_vs_exact(model, path, K_list, seeds=range(10), stratified=False, exact=None):
    """KL(exact || sampled) for each K in ``K_list`` and each seed.

    With ``stratified=True`` the sampled mixture is replaced by exact
    probabilities rounded to multiples of ``1/K`` (debug mode).
    Returns ``{K: array of KL over seeds}``.
    """
    if exact is None:
        exact = exact_mixture(model, path)
    out = {}
    for K in K_list:
        vals = []
        for s in seeds:
            if stratified:
                approx = stratified_distribution(model, path, K)
            else:
                approx = infer_distribution(model, PathQuery(tuple(path), K=int(K), seed=int(s)))
            vals.append(kl_divergence(exact, approx))
        out[K] = np.array(vals)
    return out


def diagonal_ablation(model):
    """Same means and marginal variances, all correlations removed."""
    Z = model.precision.factor().selected_inverse()
    var = Z.diagonal()
    S = sp.diags(1.0 / var).tocsc()
    S.sort_indices()
    prec = PrecisionModel(S=S, mu=model.precision.mu, pattern=model.precision.pattern,
                          diagnostics={"ablation": "diagonal"}, ordering="natural")
    return TravelTimeModel(network=model.network, markov=model.markov, precision=prec,
                           sketch=None, covered=model.covered, meta={"ablation": "diagonal"})


@dataclass
class ScalingReport:
    rows: list = field(default_factory=list)

    @property
    def slope(self):
        d = np.array([r["d"] for r in self.rows], float)
        t = np.array([r["seconds"] for r in self.rows], float)
        return float(np.polyfit(np.log(d), np.log(t), 1)[0])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        keys = ["grid", "d", "nnz_pattern", "iterations", "seconds", "fit_seconds",
                "factor_seconds", "grad_max"]
        w.writerow(keys)
        for r in self.rows:
            w.writerow([r[k] for k in keys])
        w.writerow(["slope", f"{self.slope:.4f}"] + [""] * (len(keys) - 2))
        return buf.getvalue()


def scaling_report(sizes, m=2, seed=0, tol=1e-6, max_iter=500, inverse="selected", repeats=1):
    """Time ``fit_precision`` + ``factorize`` on worlds of increasing size.

    Each size is a grid ``(w, h)`` (or a single int for a square grid).  The
    fit target is the true covariance restricted to the pattern, so every
    size solves a problem with a known optimum.  The reported time is the
    minimum over ``repeats`` runs.  A small untimed fit runs first so that
    JIT compilation is not counted.
    """
    from .synth import generate_world

    sizes = list(sizes)
    if len(sizes) < 3:
        raise ValueError("scaling_report needs at least three sizes")
    warm = generate_world(3, 3, m=m, seed=seed)
    factorize(fit_precision(true_pecm(warm), tol=tol, max_iter=max_iter, inverse=inverse).S)
    report = ScalingReport()
    for size in sizes:
        w, h = (size, size) if np.isscalar(size) else size
        truth = generate_world(w, h, m=m, seed=seed)
        pecm = true_pecm(truth)
        best = None
        for _ in range(repeats):
            t0 = time.perf_counter()
            model = fit_precision(pecm, tol=tol, max_iter=max_iter, inverse=inverse)
            t1 = time.perf_counter()
            factorize(model.S)
            t2 = time.perf_counter()
            if best is None or t2 - t0 < best[0]:
                best = (t2 - t0, t1 - t0, t2 - t1, model)
        model = best[3]
        report.rows.append({"grid": f"{w}x{h}", "d": truth.d, "nnz_pattern": truth.pattern.nnz,
                            "iterations": model.diagnostics["iterations"],
                            "seconds": best[0], "fit_seconds": best[1], "factor_seconds": best[2],
                            "grad_max": model.diagnostics["grad_max"]})
    return report


def true_pecm(truth):
    """Pecm holding the exact covariance of a world on its pattern."""
    Z = truth.factor().selected_inverse()
    sigma = truth.pattern.matrix.multiply(Z).tocsc()
    sigma.sort_indices()
    empty = (np.zeros(0, np.int64), np.zeros(0, np.int64))
    return Pecm(mu_hat=truth.mu.copy(), sigma_hat=sigma, diag_boost=0.0, pattern=truth.pattern,
                pruned=empty, observed=np.ones(truth.d, dtype=bool))
