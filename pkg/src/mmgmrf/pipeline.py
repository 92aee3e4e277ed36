"""Offline stages shared by the command line and the tests: compress and learn."""
import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .factor import build_sketch, jl_dimension
from .gmrf import DEFAULT_PRUNE_MIN_COUNT, PecmStats, accumulate, assemble_pecm, fit_precision
from .inference import TravelTimeModel
from .markov import DEFAULT_SMOOTHING, fit_markov
from .network import build_edge_pattern, build_variable_index
from .stopgo import compress_record

log = logging.getLogger(__name__)

DEFAULT_JL_K = 512


def _compress_chunk(args):
    records, lengths, modes = args
    out = []
    for rec in records:
        out.extend(compress_record(rec, lengths, modes))
    return out


def compress_records(records, network, threads=1, chunk=2000):
    """Stop-and-go compression of trace records, order preserved."""
    records = list(records)
    lengths, modes = network.length, network.modes
    if threads <= 1 or len(records) <= chunk:
        return _compress_chunk((records, lengths, modes))
    jobs = [(records[i:i + chunk], lengths, modes) for i in range(0, len(records), chunk)]
    out = []
    with ProcessPoolExecutor(max_workers=threads) as pool:
        for part in pool.map(_compress_chunk, jobs):
            out.extend(part)
    return out


def pecm_statistics(observations, network, index=None, pattern=None):
    index = build_variable_index(network) if index is None else index
    pattern = build_edge_pattern(network, index) if pattern is None else pattern
    stats = PecmStats.empty(pattern)
    accumulate(stats, observations, index)
    return stats, pattern


def sketch_width(jl_k=None, jl_eps=None, n_tracked=None):
    if jl_k:
        return int(jl_k)
    if jl_eps:
        return jl_dimension(jl_eps, max(int(n_tracked or 2), 2))
    return DEFAULT_JL_K


def learn(network, observations, smoothing=DEFAULT_SMOOTHING,
          prune_min_count=DEFAULT_PRUNE_MIN_COUNT, tol=1e-6, max_iter=1000, inverse="selected",
          jl_k=None, jl_eps=None, seed=0, sketch_dtype=np.float32, strict=False):
    """Fit the chain, the PECM and the precision, then factor and sketch it."""
    observations = list(observations)
    index = build_variable_index(network)
    markov = fit_markov(observations, network.modes, smoothing)
    stats, pattern = pecm_statistics(observations, network, index)
    pecm = assemble_pecm(stats, pattern, prune_min_count=prune_min_count)
    precision = fit_precision(pecm, tol=tol, max_iter=max_iter, inverse=inverse, strict=strict)
    k = sketch_width(jl_k, jl_eps, index.d)
    sketch = build_sketch(precision.factor(), k, seed=seed, eps=float(jl_eps or np.nan),
                          dtype=sketch_dtype)
    covered = np.zeros(network.n_links, dtype=bool)
    covered[index.var_link[pecm.observed]] = True
    meta = {"seed": int(seed), "jl_k": int(k), "n_observations": len(observations),
            "prune_min_count": int(prune_min_count), "smoothing": float(smoothing),
            "diag_boost": float(pecm.diag_boost), "n_pruned": int(pecm.pruned[0].size),
            "fit": {k_: v for k_, v in precision.diagnostics.items() if k_ != "objective_history"}}
    model = TravelTimeModel(network=network, markov=markov, precision=precision, sketch=sketch,
                            covered=covered, meta=meta)
    return model, stats, pecm
