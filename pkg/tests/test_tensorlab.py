import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lgmsep import tensorlab
from lgmsep.errors import IllConditionedError, InvalidInputError

from conftest import random_psd


def test_eig_of_diagonal_is_sorted_diagonal():
    w, U = tensorlab.herm_eig(np.diag([3.0, -1.0, 2.0]))
    np.testing.assert_allclose(w, [-1.0, 2.0, 3.0], atol=1e-14)
    np.testing.assert_allclose(np.abs(U), np.eye(3)[:, [1, 2, 0]], atol=1e-14)


@pytest.mark.parametrize("d", [1, 2, 3, 4, 6])
def test_eig_reconstructs_and_is_unitary(d):
    rng = np.random.default_rng(d)
    A = rng.standard_normal((50, d, d)) + 1j * rng.standard_normal((50, d, d))
    H = A + np.conj(np.swapaxes(A, -1, -2))
    w, U = tensorlab.herm_eig(H)
    UH = np.conj(np.swapaxes(U, -1, -2))
    np.testing.assert_allclose((U * w[..., None, :]) @ UH, H, atol=1e-12)
    np.testing.assert_allclose(UH @ U, np.broadcast_to(np.eye(d), U.shape), atol=1e-12)
    np.testing.assert_allclose(w, np.linalg.eigvalsh(H), atol=1e-12)


def test_eig_rejects_non_hermitian():
    with pytest.raises(InvalidInputError):
        tensorlab.herm_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_sqrt_squares_back():
    rng = np.random.default_rng(1)
    H = random_psd(rng, (30,), 3, rank=2)
    S = tensorlab.herm_sqrt(H)
    np.testing.assert_allclose(S @ S, H, atol=1e-10 * np.abs(H).max())


def test_sqrt_rejects_indefinite():
    with pytest.raises(InvalidInputError):
        tensorlab.herm_sqrt(np.diag([1.0, -1.0]))


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_riccati_residual_pd_and_psd(d):
    rng = np.random.default_rng(10 + d)
    Psi = random_psd(rng, (250,), d, load=1e-3)
    Omega = random_psd(rng, (250,), d, rank=max(1, d - 1))
    R = tensorlab.solve_riccati(Psi, Omega)
    res = tensorlab.riccati_residual(R, Psi, Omega)
    bound = 1e-8 * np.maximum(1.0, np.linalg.norm(Omega, axis=(-2, -1)))
    assert np.all(res <= bound)
    assert np.all(np.linalg.eigvalsh(R) >= -1e-10)


def test_riccati_scalar_closed_form():
    R = tensorlab.solve_riccati(np.array([[4.0]]), np.array([[9.0]]))
    assert R[0, 0].real == pytest.approx(1.5)


def test_riccati_singular_psi_reports_index():
    Psi = np.stack([np.eye(2), np.zeros((2, 2))])
    with pytest.raises(IllConditionedError) as exc:
        tensorlab.solve_riccati(Psi, np.stack([np.eye(2)] * 2))
    assert exc.value.index == (1,)


def test_regularize_idempotent_without_loading():
    rng = np.random.default_rng(2)
    H = random_psd(rng, (5,), 3)
    once = tensorlab.regularize_psd(H, 0.0)
    np.testing.assert_array_equal(tensorlab.regularize_psd(once, 0.0), once)


def test_default_eps_scales_with_trace():
    M = np.stack([np.eye(2), 10 * np.eye(2)])
    np.testing.assert_allclose(tensorlab.default_eps(M), [1e-7, 1e-6])
    L = tensorlab.regularize_psd(M, tensorlab.default_eps(M))
    np.testing.assert_allclose(L[1], (10 + 1e-6) * np.eye(2))


def test_trace_prod_matches_dense():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((4, 3, 3)) + 1j * rng.standard_normal((4, 3, 3))
    B = rng.standard_normal((4, 3, 3))
    np.testing.assert_allclose(tensorlab.trace_prod(A, B), np.trace(A @ B, axis1=1, axis2=2))
    with pytest.raises(InvalidInputError):
        tensorlab.trace_prod(A, B[:, :2])


@settings(max_examples=60, deadline=None)
@given(d=st.integers(1, 4), seed=st.integers(0, 2 ** 32 - 1), scale=st.floats(1e-3, 1e3))
def test_riccati_residual_property(d, seed, scale):
    rng = np.random.default_rng(seed)
    Psi = random_psd(rng, (), d, load=1e-2) * scale
    Omega = random_psd(rng, (), d, rank=rng.integers(1, d + 1))
    R = tensorlab.solve_riccati(Psi, Omega)
    res = tensorlab.riccati_residual(R, Psi, Omega)
    assert res <= 1e-8 * max(1.0, np.linalg.norm(Omega))
