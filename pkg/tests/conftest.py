import numpy as np
import pytest
from scipy.special import expit, softmax


def central_difference(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Numerical gradient of scalar f at x by central differences."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for index in np.ndindex(*x.shape):
        orig = x[index]
        x[index] = orig + eps
        plus = f(x)
        x[index] = orig - eps
        minus = f(x)
        x[index] = orig
        grad[index] = (plus - minus) / (2 * eps)
    return grad


@pytest.fixture
def fd_grad():
    return central_difference


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def random_probs():
    """Random (n, k) probabilities via softmax of Gaussian logits."""

    def make(rng: np.random.Generator, n: int, k: int, scale: float = 2.0) -> np.ndarray:
        return softmax(rng.normal(0.0, scale, size=(n, k)), axis=1)

    return make


@pytest.fixture
def random_query_set():
    """Random QuerySet logits and the QuerySet they map to."""
    from otlabel.ot_assign.queries import QuerySet

    def make(rng: np.random.Generator, n: int, k: int, h: int, w: int):
        score_logits = rng.normal(0.0, 1.5, size=(n, k + 1))
        mask_logits = rng.normal(0.0, 2.0, size=(n, h, w))
        z = QuerySet(scores=softmax(score_logits, axis=1), masks=expit(mask_logits))
        return z, score_logits, mask_logits

    return make
