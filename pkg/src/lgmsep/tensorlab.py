"""Small-dimension Hermitian linear algebra.

All functions accept a single ``(d, d)`` matrix or a stack ``(..., d, d)``
and operate on the trailing two axes in double-precision complex.
"""
import numpy as np

from . import _backend
from .errors import IllConditionedError, InvalidInputError

HERM_ATOL = 1e-12
PSD_RTOL = 1e-10
LOADING = 1e-7


def hermitian_part(M):
    M = np.asarray(M, dtype=np.complex128)
    return 0.5 * (M + np.conj(np.swapaxes(M, -1, -2)))


def _check_square(M):
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise InvalidInputError(f"expected square matrices, got shape {M.shape}")


def _check_hermitian(H):
    _check_square(H)
    scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
    err = np.max(np.abs(H - np.conj(np.swapaxes(H, -1, -2)))) if H.size else 0.0
    if err > HERM_ATOL * scale:
        raise InvalidInputError(f"matrix is not Hermitian (asymmetry {err:.3e})")


def herm_eig(H):
    """Eigendecomposition ``H = U diag(w) U^H`` with ``w`` ascending."""
    H = np.asarray(H, dtype=np.complex128)
    _check_hermitian(H)
    batch = H.shape[:-2]
    d = H.shape[-1]
    w, U = _backend.herm_eig_batch(H.reshape(-1, d, d))
    return w.reshape(batch + (d,)), U.reshape(batch + (d, d))


def _from_eig(w, U):
    return (U * w[..., None, :]) @ np.conj(np.swapaxes(U, -1, -2))


def _psd_eig(H, what="matrix"):
    w, U = herm_eig(H)
    d = H.shape[-1]
    scale = np.maximum(np.abs(np.trace(H, axis1=-2, axis2=-1).real) / d, np.finfo(float).tiny)
    if np.any(w[..., 0] < -PSD_RTOL * scale):
        raise InvalidInputError(f"{what} has a negative eigenvalue (min {w[..., 0].min():.3e})")
    return np.maximum(w, 0.0), U


def herm_sqrt(H):
    """Principal square root of a PSD Hermitian matrix."""
    w, U = _psd_eig(np.asarray(H, dtype=np.complex128))
    return _from_eig(np.sqrt(w), U)


def solve_riccati(Psi, Omega):
    """Solve ``R Psi R = Omega`` for PSD ``R``.

    Uses the closed form ``R = Psi^-1/2 (Psi^1/2 Omega Psi^1/2)^1/2 Psi^-1/2``.
    Raises ``IllConditionedError`` (index = flat batch position) when some
    ``Psi`` is not numerically positive definite.
    """
    Psi = hermitian_part(Psi)
    Omega = hermitian_part(Omega)
    _check_square(Psi)
    if Psi.shape != Omega.shape:
        raise InvalidInputError(f"shape mismatch {Psi.shape} vs {Omega.shape}")
    wp, Up = herm_eig(Psi)
    bad = wp[..., 0] <= 1e-13 * np.maximum(wp[..., -1], np.finfo(float).tiny)
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise IllConditionedError(f"Psi is singular at batch index {idx}", index=idx)
    sq = np.sqrt(wp)
    Ps = _from_eig(sq, Up)
    Pis = _from_eig(1.0 / sq, Up)
    M = hermitian_part(Ps @ Omega @ Ps)
    wm, Um = herm_eig(M)
    Ms = _from_eig(np.sqrt(np.maximum(wm, 0.0)), Um)
    return hermitian_part(Pis @ Ms @ Pis)


def default_eps(M):
    """Diagonal loading level ``1e-7 * trace(M) / dim`` per matrix."""
    M = np.asarray(M)
    return LOADING * np.abs(np.trace(M, axis1=-2, axis2=-1).real) / M.shape[-1]


def regularize_psd(M, eps=0.0):
    """Symmetrize, then load the diagonal by ``eps`` (scalar or per matrix)."""
    M = np.asarray(M, dtype=np.complex128)
    _check_square(M)
    H = hermitian_part(M)
    eps = np.asarray(eps, dtype=np.float64)
    return H + eps[..., None, None] * np.eye(M.shape[-1])


def trace_prod(A, B):
    """``tr(A @ B)`` without forming the product."""
    A = np.asarray(A)
    B = np.asarray(B)
    if A.shape[-2:] != B.shape[-2:][::-1] or A.shape[-1] != A.shape[-2]:
        raise InvalidInputError(f"dimension mismatch {A.shape} vs {B.shape}")
    return np.einsum("...ab,...ba->...", A, B)


def riccati_residual(R, Psi, Omega):
    """Frobenius residual ``||R Psi R - Omega||``, batched."""
    return np.linalg.norm(R @ Psi @ R - Omega, axis=(-2, -1))
