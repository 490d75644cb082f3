import numpy as np
import pytest

from lgmsep import _core_py

try:
    from lgmsep import _core
except ImportError:
    _core = None

BACKENDS = [pytest.param(_core_py, id="python"),
            pytest.param(_core, id="cython",
                         marks=pytest.mark.skipif(_core is None, reason="extension not built"))]


def random_psd(rng, shape, d, rank=None, load=0.0):
    rank = d if rank is None else rank
    B = rng.standard_normal(shape + (d, rank)) + 1j * rng.standard_normal(shape + (d, rank))
    return B @ np.conj(np.swapaxes(B, -1, -2)) + load * np.eye(d)


def random_instance(seed, F=4, N=5, I=2, J=3):
    """Observation, per-source variances and full-rank spatial covariances."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((F, N, I)) + 1j * rng.standard_normal((F, N, I))
    v = rng.uniform(0.2, 2.0, size=(J, F, N))
    R = random_psd(rng, (J, F), I, load=0.1)
    return X, v, R


@pytest.fixture(params=BACKENDS)
def kernels(request):
    return request.param
