import numpy as np
import pytest

from osoa.prob import QuantizedPmf

# five-symbol worked example a_1..a_5
TOY_PROBS = (0.32, 0.08, 0.16, 0.02, 0.42)
A1, A2, A3, A4, A5 = range(5)


@pytest.fixture
def toy_table() -> QuantizedPmf:
    return QuantizedPmf.from_counts([32, 8, 16, 2, 42])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_pmf(rng: np.random.Generator, n: int, zero_prob: float = 0.0) -> np.ndarray:
    p = rng.dirichlet(np.full(n, rng.choice([0.1, 0.5, 1.0, 5.0])))
    if zero_prob:
        p[rng.random(n) < zero_prob] = 0.0
        if p.sum() == 0:
            p[0] = 1.0
    return p / p.sum()


def finite_difference(loss, params, h=1e-5):
    grads = []
    for k, t in enumerate(params.tensors()):
        g = np.zeros_like(t)
        for idx in np.ndindex(t.shape):
            plus = [u.copy() for u in params.tensors()]
            minus = [u.copy() for u in params.tensors()]
            plus[k][idx] += h
            minus[k][idx] -= h
            g[idx] = (loss(params.with_tensors(plus)) - loss(params.with_tensors(minus))) / (2 * h)
        grads.append(g)
    return grads


def relative_error(analytic, numeric) -> float:
    a = np.concatenate([g.ravel() for g in analytic])
    n = np.concatenate([g.ravel() for g in numeric])
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(n), 1e-300))
