"""Path travel-time distributions: sampled mixtures, exact enumeration, exact mean.

Given the state sequence ``s`` on a path, the travel time is Gaussian with
mean ``e(p,s)^T mu`` and variance ``e(p,s)^T S^{-1} e(p,s)``; the path
distribution is the mixture of these over state sequences weighted by the
chain probabilities.
"""
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from .errors import PathTooLong, UncoveredLink, ValidationError
from .factor.sketch import ExactInverse, ProjectionSketch, quad_form
from .gmrf import PrecisionModel
from .markov import MarkovParams, sample_state_sequences, state_marginals
from .network import build_variable_index, load_network, save_network

DEFAULT_SPEED = 30.0 / 3.6
MAX_EXACT_COMPONENTS = 2 ** 20
DEFAULT_QUANTILES = (0.5, 0.9)


@dataclass(frozen=True)
class PathQuery:
    path: tuple
    K: int = 1000
    seed: int = 0
    query_id: int = None
    budget_s: float = None

    def __post_init__(self):
        path = tuple(int(l) for l in self.path)
        if not path:
            raise ValidationError("query path is empty")
        if self.K < 1:
            raise ValidationError("K must be positive")
        object.__setattr__(self, "path", path)

    def rng(self):
        if self.query_id is None:
            return np.random.default_rng(self.seed)
        return np.random.default_rng([self.seed, self.query_id])

    @classmethod
    def from_json(cls, rec, K=1000, seed=0, query_id=None):
        return cls(path=rec["path"], K=int(rec.get("K", K)), seed=int(rec.get("seed", seed)),
                   query_id=rec.get("id", query_id), budget_s=rec.get("budget_s"))


@dataclass(frozen=True)
class TravelTimeDistribution:
    """Gaussian mixture over total path time (seconds)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    provenance: str = "sampled"
    K: int = None
    fallback_links: tuple = ()

    def __post_init__(self):
        for name in ("weights", "means", "variances"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), float)))

    @property
    def n_components(self):
        return self.weights.size

    @property
    def std(self):
        return np.sqrt(self.variances)

    def mean(self):
        return float(self.weights @ self.means)

    def variance(self):
        m = self.mean()
        return float(self.weights @ (self.variances + (self.means - m) ** 2))

    def cdf(self, t):
        return cdf(self, t)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        z = (t[..., None] - self.means) / self.std
        dens = np.exp(-0.5 * z * z) / (self.std * np.sqrt(2 * np.pi))
        return dens @ self.weights

    def logpdf(self, t, floor=1e-300):
        return np.log(np.maximum(self.pdf(t), floor))

    def quantile(self, q):
        return quantile(self, q)

    @property
    def negative_mass(self):
        """Probability assigned to negative travel times (diagnostic only)."""
        return float(cdf(self, 0.0))

    def to_response(self, budget_s=None, quantiles=DEFAULT_QUANTILES):
        out = {"components": [{"w": float(w), "mu": float(m), "sigma2": float(v)}
                              for w, m, v in zip(self.weights, self.means, self.variances)],
               "mean": self.mean(),
               "quantiles": {str(q): quantile(self, q) for q in quantiles},
               "fallback_links": list(self.fallback_links),
               "negative_mass": self.negative_mass}
        if budget_s is not None:
            out["p_on_time"] = float(cdf(self, budget_s))
        return out


def cdf(dist, t):
    """``sum_s w_s Phi((t - mu_s) / sigma_s)``; vectorized over ``t``."""
    t = np.asarray(t, dtype=float)
    val = ndtr((t[..., None] - dist.means) / np.sqrt(dist.variances)) @ dist.weights
    # the weighted sum can round past 1
    val = np.clip(val, 0.0, 1.0)
    return float(val) if val.ndim == 0 else val


def quantile(dist, q, xtol=1e-7):
    """Smallest ``t`` with ``cdf(t) >= q`` found by bracketing root search."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must be in (0, 1)")
    sd = np.sqrt(dist.variances)
    lo = float(np.min(dist.means - 40 * sd))
    hi = float(np.max(dist.means + 40 * sd))
    return float(brentq(lambda t: cdf(dist, t) - q, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps))


@dataclass
class TravelTimeModel:
    """Everything needed to answer queries: network, chain, GMRF and sketch.

    ``covered[l]`` is False for links never seen in training; such links
    contribute an independent prior term (length at 30 km/h, 50% std).
    """

    network: object
    markov: MarkovParams
    precision: PrecisionModel
    sketch: ProjectionSketch = None
    covered: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.index = build_variable_index(self.network)
        if self.covered is None:
            self.covered = np.ones(self.network.n_links, dtype=bool)
        self.covered = np.asarray(self.covered, dtype=bool)
        self._exact = None

    @property
    def mu(self):
        return self.precision.mu

    def exact_inverse(self):
        if self._exact is None:
            self._exact = ExactInverse(self.precision.factor())
        return self._exact

    def prior(self, link):
        mean = float(self.network.length[link]) / DEFAULT_SPEED
        return mean, (0.5 * mean) ** 2

    def split_path(self, path, fallback=True):
        """Validate ``path``; return (positions covered, prior mean, prior var, fallback links)."""
        self.network.check_path(path)
        path = np.asarray(path, dtype=np.int64)
        cov = self.covered[path]
        missing = tuple(int(l) for l in path[~cov])
        if missing and not fallback:
            raise UncoveredLink(missing)
        pm = pv = 0.0
        for l in missing:
            a, b = self.prior(l)
            pm += a
            pv += b
        return np.flatnonzero(cov), pm, pv, tuple(dict.fromkeys(missing))

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        save_network(self.network, os.path.join(directory, "network.csv"))
        self.markov.save(os.path.join(directory, "markov.json"))
        self.precision.save(os.path.join(directory, "precision.bin"))
        if self.sketch is not None:
            with open(os.path.join(directory, "sketch.bin"), "wb") as fh:
                self.sketch.save(fh)
        meta = dict(self.meta)
        meta["uncovered_links"] = np.flatnonzero(~self.covered).tolist()
        with open(os.path.join(directory, "model.json"), "w") as fh:
            json.dump(meta, fh, sort_keys=True, indent=1)

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "model.json")) as fh:
            meta = json.load(fh)
        markov = MarkovParams.load(os.path.join(directory, "markov.json"))
        network = load_network(os.path.join(directory, "network.csv"))
        if network.n_links and not np.array_equal(network.modes, markov.modes):
            network = type(network)(network.downstream, markov.modes, network.length)
        precision = PrecisionModel.load(os.path.join(directory, "precision.bin"))
        sketch = None
        sk_path = os.path.join(directory, "sketch.bin")
        if os.path.exists(sk_path):
            with open(sk_path, "rb") as fh:
                sketch = ProjectionSketch.load(fh)
        covered = np.ones(network.n_links, dtype=bool)
        covered[np.asarray(meta.pop("uncovered_links", []), dtype=np.int64)] = False
        return cls(network=network, markov=markov, precision=precision, sketch=sketch,
                   covered=covered, meta=meta)


def _encode(seqs, m):
    # integer code per state sequence (base max-mode); falls back to rows
    base = int(max(m, 2))
    if seqs.shape[1] * np.log2(base) < 62:
        w = base ** np.arange(seqs.shape[1] - 1, -1, -1, dtype=np.int64)
        return seqs @ w
    return None


def _unique_sequences(seqs, m):
    codes = _encode(seqs, m)
    if codes is None:
        return np.unique(seqs, axis=0, return_counts=True)
    _, first, counts = np.unique(codes, return_index=True, return_counts=True)
    return seqs[first], counts


def _component_moments(model, path, seqs, positions, exact):
    if positions.size == 0:
        z = np.zeros(seqs.shape[0])
        return z, z.copy()
    vars_ = model.index.offset[path[positions]] + seqs[:, positions]
    means = model.mu[vars_].sum(axis=1)
    if exact or model.sketch is None:
        inv = model.exact_inverse()
        allv = np.unique(vars_)
        B = inv.block(allv)
        loc = np.searchsorted(allv, vars_)
        variances = _block_quad(B, loc)
    else:
        variances = np.atleast_1d(quad_form(model.sketch, vars_))
    return means, variances


def _block_quad(B, loc, chunk=8192):
    out = np.empty(loc.shape[0])
    for s in range(0, loc.shape[0], chunk):
        L = loc[s:s + chunk]
        out[s:s + chunk] = B[L[:, :, None], L[:, None, :]].sum(axis=(1, 2))
    return out


def infer_distribution(model, query, fallback=True, exact_variances=False):
    """Sampled mixture for ``query.path``.

    ``query.K`` state sequences are drawn by ancestral sampling; identical
    sequences are merged with weight equal to their frequency, and each
    distinct sequence becomes one Gaussian component.
    """
    path = np.asarray(query.path, dtype=np.int64)
    positions, pm, pv, fb = model.split_path(path, fallback)
    seqs = sample_state_sequences(model.markov, path, query.K, query.rng())
    uniq, counts = _unique_sequences(seqs, int(model.network.modes[path].max()))
    means, variances = _component_moments(model, path, uniq, positions, exact_variances)
    return TravelTimeDistribution(weights=counts / counts.sum(), means=means + pm,
                                  variances=variances + pv, provenance="sampled",
                                  K=int(query.K), fallback_links=fb)


def enumerate_sequences(modes):
    modes = [int(m) for m in modes]
    total = int(np.prod(modes, dtype=np.float64)) if modes else 1
    if total > MAX_EXACT_COMPONENTS:
        raise PathTooLong(f"{total} state sequences exceed the limit of {MAX_EXACT_COMPONENTS}")
    grids = np.indices(modes).reshape(len(modes), -1).T
    return np.ascontiguousarray(grids, dtype=np.int64)


def sequence_probabilities(markov, path, seqs):
    p = markov.initial(path[0])[seqs[:, 0]].astype(float)
    for i in range(1, len(path)):
        T = markov.transition(path[i - 1], path[i])
        p = p * T[seqs[:, i - 1], seqs[:, i]]
    return p


def exact_mixture(model, path, fallback=True):
    """Enumerate every state sequence with its exact chain probability.

    Component variances use exact entries of ``S^{-1}`` from column solves.
    Sequences with probability zero are dropped.
    """
    path = np.asarray(path, dtype=np.int64)
    positions, pm, pv, fb = model.split_path(path, fallback)
    seqs = enumerate_sequences(model.network.modes[path])
    w = sequence_probabilities(model.markov, path, seqs)
    keep = w > 0
    seqs, w = seqs[keep], w[keep]
    means, variances = _component_moments(model, path, seqs, positions, True)
    return TravelTimeDistribution(weights=w / w.sum(), means=means + pm, variances=variances + pv,
                                  provenance="exact", K=None, fallback_links=fb)


def exact_mean(model, path, fallback=True):
    """Expected path time from forward state marginals, O(I m^2)."""
    path = np.asarray(path, dtype=np.int64)
    positions, pm, _pv, _fb = model.split_path(path, fallback)
    marg = state_marginals(model.markov, path)
    total = pm
    off = model.index.offset
    for i in positions:
        l = path[i]
        total += float(marg[i] @ model.mu[off[l]:off[l + 1]])
    return total


def stratified_distribution(model, path, K, fallback=True):
    """Mixture whose weights are exact probabilities rounded to multiples of 1/K.

    Debug mode for convergence checks: behaves like a sample in which every
    sequence appears with (nearly) its exact frequency.
    """
    exact = exact_mixture(model, path, fallback)
    counts = np.floor(exact.weights * K + 0.5)
    keep = counts > 0
    w = counts[keep] / counts[keep].sum()
    return TravelTimeDistribution(weights=w, means=exact.means[keep],
                                  variances=exact.variances[keep], provenance="stratified",
                                  K=int(K), fallback_links=exact.fallback_links)
