import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmgmrf.evaluate import (LENGTH_BINS, ScalingReport, diagonal_ablation, kl_divergence,
                             kl_vs_exact, length_bin, path_loglik, pp_from_curve, pp_metrics,
                             scaling_report, validate)
from mmgmrf.inference import TravelTimeDistribution, exact_mixture
from mmgmrf.markov import CompressedObservation
from mmgmrf.synth import generate_world, random_walk, sample_trajectories

from conftest import model_from_truth


def one(mu, var):
    return TravelTimeDistribution([1.0], [mu], [var])


def test_loglik_at_mean():
    obs = CompressedObservation(path=[0], states=[0], travel_times=[10.0])
    assert path_loglik(None, obs, dist=one(10.0, 4.0)) == pytest.approx(np.log(1 / np.sqrt(8 * np.pi)),
                                                                         abs=1e-14)


def test_loglik_tail_is_floored():
    obs = CompressedObservation(path=[0], states=[0], travel_times=[1e6])
    ll = path_loglik(None, obs, dist=one(10.0, 4.0))
    assert np.isfinite(ll) and ll == pytest.approx(np.log(1e-300))


def test_pp_uniform_calibrated():
    v = np.random.default_rng(0).random(10_000)
    pp = pp_metrics(v)
    assert pp.a <= 0.02 and pp.b <= 0.02
    assert np.all(np.diff(pp.f) >= 0)
    assert pp.alpha.size == 101


def test_pp_all_zero():
    pp = pp_metrics(np.zeros(500))
    assert pp.a == pytest.approx(0.5) and pp.b == 0.0


def test_pp_quadratic_curve():
    alpha = np.linspace(0, 1, 101)
    pp = pp_from_curve(alpha, alpha ** 2)
    assert pp.a == 0.0
    # trapezoid error on 101 points is h^2/12 * max|f''| < 2e-5
    assert pp.b == pytest.approx(1 / 6, abs=2e-5)


def test_pp_rejects_out_of_range():
    with pytest.raises(ValueError):
        pp_metrics([0.2, 1.5])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=200), st.integers(0, 2 ** 31))
def test_pp_permutation_invariant(values, seed):
    v = np.array(values)
    w = np.random.default_rng(seed).permutation(v)
    a, b = pp_metrics(v), pp_metrics(w)
    assert (a.a, a.b) == (b.a, b.b)
    assert 0 <= a.a <= 0.5 and 0 <= a.b <= 0.5


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_kl_nonnegative_and_zero_on_self(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    p = TravelTimeDistribution(rng.dirichlet(np.ones(n)), rng.uniform(50, 200, n), rng.uniform(4, 100, n))
    q = TravelTimeDistribution(rng.dirichlet(np.ones(n)), rng.uniform(50, 200, n), rng.uniform(4, 100, n))
    assert kl_divergence(p, q) >= 0
    assert kl_divergence(p, p) <= 1e-8


def test_kl_two_gaussians_closed_form():
    p, q = one(100.0, 25.0), one(103.0, 36.0)
    exact = np.log(6 / 5) + (25 + 9) / (2 * 36) - 0.5
    assert kl_divergence(p, q) == pytest.approx(exact, abs=1e-6)


@pytest.fixture(scope="module")
def small_world():
    truth = generate_world(4, 4, m=2, seed=3)
    return truth, model_from_truth(truth, k=512)


def test_kl_stratified_debug_mode(small_world):
    truth, model = small_world
    path = random_walk(truth.network, 6, np.random.default_rng(1))
    kl = kl_vs_exact(model, path, [10 ** 8], seeds=range(2), stratified=True)
    assert np.all(kl[10 ** 8] <= 1e-6)


def test_kl_decreases_with_k(small_world):
    truth, model = small_world
    path = random_walk(truth.network, 8, np.random.default_rng(2))
    exact = exact_mixture(model, path)
    kl = kl_vs_exact(model, path, [int(100 * np.log(8)), int(1000 * np.log(8))], exact=exact)
    small, large = (np.median(v) for v in kl.values())
    assert large < small


def test_true_model_beats_diagonal_ablation(small_world):
    truth, model = small_world
    ablated = diagonal_ablation(model)
    # the ablation keeps every marginal variance
    np.testing.assert_allclose(1 / ablated.precision.S.diagonal(), np.diag(truth.covariance()), rtol=1e-10)
    full, diag = [], []
    for seed in range(5):
        obs = sample_trajectories(truth, 1000, (2, 10), np.random.default_rng([seed, 9]))
        full.append(validate(model, obs, K=300, seed=seed).mean_loglik())
        diag.append(validate(ablated, obs, K=300, seed=seed).mean_loglik())
    assert np.median(full) >= np.median(diag)


def test_validation_by_length(small_world):
    truth, model = small_world
    obs = sample_trajectories(truth, 60, (1, 14), np.random.default_rng(0))
    res = validate(model, obs, K=100)
    table = res.by_length()
    assert list(table) == ["1-3", "4-6", "7-10", "11+"]
    assert sum(v["n"] for v in table.values()) == 60
    assert np.all((res.pit >= 0) & (res.pit <= 1))
    assert length_bin(12) == "11+" and length_bin(2) == "1-3"
    assert len(LENGTH_BINS) == 4


def test_scaling_report_needs_three_sizes():
    with pytest.raises(ValueError):
        scaling_report([4])
    with pytest.raises(ValueError):
        scaling_report([4, 6])


def test_scaling_report_rows_and_repeat_stability():
    rep = scaling_report([8, 12, 16], repeats=3)
    assert [r["grid"] for r in rep.rows] == ["8x8", "12x12", "16x16"]
    assert np.isfinite(rep.slope)
    assert rep.to_csv().splitlines()[-1].startswith("slope,")
    again = scaling_report([8, 12, 16], repeats=3)
    for a, b in zip(rep.rows, again.rows):
        ratio = a["seconds"] / b["seconds"]
        assert 0.5 <= ratio <= 2.0


def test_slope_of_exact_power_law():
    rep = ScalingReport(rows=[{"d": d, "seconds": 1e-6 * d ** 1.2} for d in (1e3, 4e3, 1.6e4)])
    assert rep.slope == pytest.approx(1.2, abs=1e-12)
