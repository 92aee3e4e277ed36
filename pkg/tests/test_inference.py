import itertools
import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from mmgmrf.errors import PathTooLong, UncoveredLink, UnknownLink, ValidationError
from mmgmrf.factor import build_sketch
from mmgmrf.gmrf import PrecisionModel
from mmgmrf.inference import (DEFAULT_SPEED, PathQuery, TravelTimeDistribution, TravelTimeModel,
                              cdf, enumerate_sequences, exact_mean, exact_mixture,
                              infer_distribution, quantile, stratified_distribution)
from mmgmrf.markov import MarkovParams
from mmgmrf.network import build_edge_pattern, build_variable_index
from mmgmrf.synth import generate_world, random_walk

from conftest import chain_network, model_from_truth
from oracles import chain_probabilities


def chain_model(n, m, rng, deterministic=False, k=None):
    net = chain_network(n, m=m)
    idx = build_variable_index(net)
    pat = build_edge_pattern(net, idx)
    A = sp.triu(pat.matrix, 1).astype(float).multiply(rng.uniform(-0.3, 0.0, (idx.d, idx.d)))
    S = (A + A.T).tocsc()
    S = (S + sp.diags(np.asarray(abs(S).sum(axis=1)).ravel() + rng.uniform(0.01, 0.05, idx.d))).tocsc()
    mu = rng.uniform(10, 60, idx.d)
    if deterministic:
        pi = {l: np.eye(m)[0] for l in range(n)}
        T = {(l, l + 1): np.eye(m) for l in range(n - 1)}
    else:
        pi = {l: rng.dirichlet(np.ones(m)) for l in range(n)}
        T = {(l, l + 1): rng.dirichlet(np.ones(m), size=m) for l in range(n - 1)}
    markov = MarkovParams(modes=net.modes, pi=pi, T=T, smoothing=0.0)
    prec = PrecisionModel(S=S, mu=mu, pattern=pat)
    sketch = build_sketch(prec.factor(), k, seed=0) if k else None
    return TravelTimeModel(network=net, markov=markov, precision=prec, sketch=sketch)


def test_single_link_single_mode(rng):
    model = chain_model(1, 1, rng, k=500)
    dist = infer_distribution(model, PathQuery((0,), K=100))
    assert dist.n_components == 1 and dist.weights[0] == 1.0
    assert dist.means[0] == model.mu[0]
    np.testing.assert_allclose(dist.variances[0], 1 / model.precision.S[0, 0], rtol=0.3)
    exact = exact_mixture(model, [0])
    assert exact.variances[0] == pytest.approx(1 / model.precision.S[0, 0], rel=1e-12)


def test_deterministic_chain_one_component(rng):
    model = chain_model(5, 2, rng, deterministic=True)
    for K in (1, 10, 1000):
        dist = infer_distribution(model, PathQuery(tuple(range(5)), K=K))
        assert dist.n_components == 1
        assert dist.means[0] == pytest.approx(model.mu[model.index.offset[:5]].sum(), rel=1e-14)
    assert exact_mean(model, list(range(5))) == pytest.approx(model.mu[model.index.offset[:5]].sum())


def test_sampled_weights_close_to_exact(rng):
    model = chain_model(3, 2, rng)
    path = (0, 1, 2)
    exact = exact_mixture(model, path)
    dist = infer_distribution(model, PathQuery(path, K=5000, seed=1))
    assert dist.n_components <= 5000
    assert abs(dist.weights.sum() - 1) <= 1e-12
    w_exact = dict(zip(np.round(exact.means, 9), exact.weights))
    tv = 0.5 * sum(abs(w_exact.get(m, 0.0) - w) for m, w in zip(np.round(dist.means, 9), dist.weights))
    tv += 0.5 * sum(w for m, w in w_exact.items() if m not in set(np.round(dist.means, 9)))
    assert tv <= 0.03


def test_exact_mixture_m1_and_i2(rng):
    model = chain_model(4, 1, rng)
    d = exact_mixture(model, [0, 1, 2, 3])
    assert d.n_components == 1 and d.weights[0] == 1.0
    assert exact_mean(model, [0, 1, 2, 3]) == pytest.approx(model.mu.sum(), rel=1e-14)
    model = chain_model(2, 2, rng)
    d = exact_mixture(model, [0, 1])
    seqs = list(itertools.product(range(2), repeat=2))
    expect = chain_probabilities(model.markov.initial(0), [model.markov.transition(0, 1)], seqs)
    np.testing.assert_allclose(d.weights, expect, atol=1e-15)
    S_inv = np.linalg.inv(model.precision.S.toarray())
    for (a, b), v in zip(seqs, d.variances):
        idx = [a, 2 + b]
        assert v == pytest.approx(S_inv[np.ix_(idx, idx)].sum(), rel=1e-10)


def test_exact_mixture_ten_links(rng):
    model = chain_model(10, 2, rng)
    d = exact_mixture(model, list(range(10)))
    assert d.n_components == 1024
    assert abs(d.weights.sum() - 1) <= 1e-10
    assert exact_mean(model, list(range(10))) == pytest.approx(d.mean(), abs=1e-10 * d.mean())


def test_path_too_long():
    with pytest.raises(PathTooLong):
        enumerate_sequences([2] * 21)
    assert enumerate_sequences([2] * 3).shape == (8, 3)


def test_cdf_quantile_examples():
    d = TravelTimeDistribution([1.0], [100.0], [25.0])
    assert cdf(d, 100.0) == pytest.approx(0.5, abs=1e-15)
    d = TravelTimeDistribution([0.5, 0.5], [0.0, 1000.0], [1.0, 1.0])
    assert cdf(d, 500.0) == pytest.approx(0.5, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 6), st.floats(0.02, 0.98))
def test_quantile_round_trip(seed, n, q):
    rng = np.random.default_rng(seed)
    d = TravelTimeDistribution(rng.dirichlet(np.ones(n)), rng.uniform(50, 500, n),
                               rng.uniform(1, 400, n))
    t = quantile(d, q)
    assert cdf(d, t) == pytest.approx(q, abs=1e-7)
    # t0 drawn from the mixture; in the gaps between far-apart components the
    # cdf is flat to machine precision and no inverse is defined there
    c = rng.choice(n, p=d.weights)
    t0 = float(rng.normal(d.means[c], 0.5 * np.sqrt(d.variances[c])))
    assert abs(quantile(d, cdf(d, t0)) - t0) <= 1e-4
    grid = np.linspace(0, 600, 200)
    assert np.all(np.diff(cdf(d, grid)) >= 0)


def test_quantile_rejects_bad_q():
    d = TravelTimeDistribution([1.0], [10.0], [1.0])
    with pytest.raises(ValueError):
        quantile(d, 1.0)


def test_sampling_deterministic_per_seed(rng):
    model = chain_model(6, 2, rng, k=300)
    q = PathQuery(tuple(range(6)), K=400, seed=3, query_id=2)
    a, b = infer_distribution(model, q), infer_distribution(model, q)
    np.testing.assert_array_equal(a.weights, b.weights)
    np.testing.assert_array_equal(a.variances, b.variances)


def test_uncovered_link_fallback(rng):
    model = chain_model(3, 2, rng)
    model.covered[1] = False
    with pytest.raises(UncoveredLink):
        infer_distribution(model, PathQuery((0, 1, 2)), fallback=False)
    dist = infer_distribution(model, PathQuery((0, 1, 2), K=200))
    assert dist.fallback_links == (1,)
    prior = model.network.length[1] / DEFAULT_SPEED
    full = exact_mixture(model, [0, 1, 2])
    assert np.all(full.means >= prior)


def test_invalid_paths(rng):
    model = chain_model(3, 2, rng)
    with pytest.raises(UnknownLink):
        infer_distribution(model, PathQuery((0, 9)))
    with pytest.raises(ValidationError):
        infer_distribution(model, PathQuery((0, 2)))
    with pytest.raises(ValidationError):
        PathQuery(())


def test_stratified_matches_exact(rng):
    model = chain_model(4, 2, rng)
    ex = exact_mixture(model, [0, 1, 2, 3])
    st_ = stratified_distribution(model, [0, 1, 2, 3], 10 ** 9)
    np.testing.assert_allclose(st_.weights, ex.weights, atol=1e-8)


def test_response_json(rng):
    model = chain_model(3, 2, rng)
    resp = exact_mixture(model, [0, 1, 2]).to_response(budget_s=120.0)
    json.dumps(resp)
    assert set(resp) >= {"components", "mean", "quantiles", "p_on_time", "fallback_links"}
    assert set(resp["quantiles"]) == {"0.5", "0.9"}


def test_model_save_load(tmp_path):
    truth = generate_world(3, 3, m=2, seed=1)
    model = model_from_truth(truth, k=64)
    model.covered[0] = False
    model.save(tmp_path / "m")
    back = TravelTimeModel.load(tmp_path / "m")
    assert not back.covered[0] and back.covered[1:].all()
    path = tuple(random_walk(truth.network, 4, np.random.default_rng(0), start=2))
    a = infer_distribution(model, PathQuery(path, K=50))
    b = infer_distribution(back, PathQuery(path, K=50))
    np.testing.assert_allclose(a.means, b.means)
    np.testing.assert_allclose(a.variances, b.variances, rtol=1e-5)


def test_exact_mean_matches_mixture_on_world():
    truth = generate_world(4, 4, m=3, seed=2)
    model = model_from_truth(truth)
    rng = np.random.default_rng(0)
    for _ in range(10):
        path = random_walk(truth.network, int(rng.integers(1, 7)), rng)
        mix = exact_mixture(model, path)
        assert exact_mean(model, path) == pytest.approx(mix.mean(), abs=1e-10 * mix.mean())
