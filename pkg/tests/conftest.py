import numpy as np
import pytest
import scipy.sparse as sp

from mmgmrf.network import RoadNetwork


def chain_network(n, m=2, length=100.0):
    """Links 0 -> 1 -> ... -> n-1."""
    down = [(i + 1,) if i + 1 < n else () for i in range(n)]
    return RoadNetwork.from_downstream(down, length=np.full(n, length), m=m)


def random_spd(d, rng, density=0.2, ridge=1.0):
    """Sparse symmetric positive definite matrix (diagonally dominant)."""
    A = sp.random(d, d, density=density, random_state=rng, data_rvs=lambda k: rng.uniform(-1, 1, k))
    A = sp.triu(A, 1)
    A = A + A.T
    diag = np.asarray(abs(A).sum(axis=1)).ravel() + ridge
    S = (A + sp.diags(diag)).tocsc()
    S.sort_indices()
    return S


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def model_from_truth(truth, k=None, seed=0):
    """Query model using a world's true parameters (exact precision, optional sketch)."""
    from mmgmrf.factor import build_sketch
    from mmgmrf.gmrf import PrecisionModel
    from mmgmrf.inference import TravelTimeModel

    prec = PrecisionModel(S=truth.S_true, mu=truth.mu, pattern=truth.pattern)
    sketch = build_sketch(prec.factor(), k, seed=seed) if k else None
    return TravelTimeModel(network=truth.network, markov=truth.markov, precision=prec,
                           sketch=sketch)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
