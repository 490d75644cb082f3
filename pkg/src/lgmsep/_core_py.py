"""Pure-numpy kernels, used when the compiled ``_core`` extension is absent.

Every function here has an identically named, identically behaving
counterpart in ``_core.pyx``.  Both are tested against each other.
"""
import numpy as np

from .errors import IllConditionedError

MAX_SWEEPS = 50
OFF_TOL = 1e-15


def herm_eig_batch(A):
    """Cyclic Jacobi eigendecomposition of a stack of Hermitian matrices.

    Parameters
    ----------
    A : ndarray, shape (B, d, d), complex
        Hermitian matrices (not checked here).

    Returns
    -------
    w : ndarray, shape (B, d)
        Eigenvalues in ascending order.
    V : ndarray, shape (B, d, d)
        Unitary matrices whose columns are the eigenvectors.
    """
    A = np.array(A, dtype=np.complex128, copy=True)
    B, d, _ = A.shape
    V = np.tile(np.eye(d, dtype=np.complex128), (B, 1, 1))
    scale = np.sqrt(np.sum(np.abs(A) ** 2, axis=(1, 2)))
    rows = np.arange(B)

    for _ in range(MAX_SWEEPS):
        off = np.sum(np.abs(A) ** 2, axis=(1, 2)) - np.sum(
            np.abs(np.diagonal(A, axis1=1, axis2=2)) ** 2, axis=1
        )
        if np.all(np.sqrt(np.maximum(off, 0.0)) <= OFF_TOL * scale):
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = A[:, p, q]
                mag = np.abs(apq)
                active = mag > OFF_TOL * scale * 1e-3
                if not np.any(active):
                    continue
                safe = np.where(active, mag, 1.0)
                ph = np.where(active, apq / safe, 1.0)
                app = A[:, p, p].real
                aqq = A[:, q, q].real
                tau = (aqq - app) / (2.0 * safe)
                t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                c = np.where(active, c, 1.0)
                s = np.where(active, s, 0.0)
                phc = np.conj(ph)

                # columns p, q  (A <- A U, V <- V U)
                for M in (A, V):
                    cp = M[:, :, p].copy()
                    cq = M[:, :, q]
                    M[:, :, p] = cp * c[:, None] - cq * (s * phc)[:, None]
                    M[:, :, q] = cp * s[:, None] + cq * (c * phc)[:, None]
                # rows p, q  (A <- U^H A)
                rp = A[:, p, :].copy()
                rq = A[:, q, :]
                A[:, p, :] = rp * c[:, None] - rq * (s * ph)[:, None]
                A[:, q, :] = rp * s[:, None] + rq * (c * ph)[:, None]
                A[rows, p, q] = np.where(active, 0.0, A[:, p, q])
                A[rows, q, p] = np.where(active, 0.0, A[:, q, p])
                A[:, p, p] = A[:, p, p].real
                A[:, q, q] = A[:, q, q].real

    w = np.diagonal(A, axis1=1, axis2=2).real.copy()
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    return w, V


def _model_cov(v, R):
    return np.einsum("jfn,jfab->fnab", v, R)


def _chol(Xhat):
    try:
        return np.linalg.cholesky(Xhat)
    except np.linalg.LinAlgError:
        pass
    # locate the first offending bin for the error message
    F, N = Xhat.shape[:2]
    for f in range(F):
        for n in range(N):
            try:
                np.linalg.cholesky(Xhat[f, n])
            except np.linalg.LinAlgError:
                raise IllConditionedError(
                    f"model covariance is not positive definite at bin (f={f}, n={n})",
                    index=(f, n),
                ) from None
    raise IllConditionedError("model covariance is not positive definite")


def _solve_parts(X, v, R):
    Xhat = _model_cov(v, R)
    L = _chol(Xhat)
    d = Xhat.shape[-1]
    eye = np.broadcast_to(np.eye(d, dtype=np.complex128), Xhat.shape)
    Linv = np.linalg.solve(L, eye)
    Xinv = np.conj(np.swapaxes(Linv, -1, -2)) @ Linv
    y = np.einsum("fnab,fnb->fna", Xinv, X)
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1).real), axis=-1)
    return Xinv, y, logdet


def model_stats(X, v, R):
    """Per-bin statistics of the local Gaussian mixture model.

    With Xhat(f,n) = sum_j v_j(f,n) R_j(f) and y = Xhat^-1 x:

    - ``a[j,f,n] = tr(Xhat^-1 X Xhat^-1 R_j) = y^H R_j y``
    - ``b[j,f,n] = tr(Xhat^-1 R_j)``
    - ``nll[f,n] = x^H Xhat^-1 x + logdet Xhat + I log(pi)``
    """
    I = X.shape[-1]
    Xinv, y, logdet = _solve_parts(X, v, R)
    a = np.einsum("fna,jfab,fnb->jfn", np.conj(y), R, y).real
    b = np.einsum("fnab,jfba->jfn", Xinv, R).real
    quad = np.einsum("fna,fna->fn", np.conj(X), y).real
    nll = quad + logdet + I * np.log(np.pi)
    return a, b, nll


def riccati_terms(X, v, R):
    """Frame sums feeding the spatial update.

    ``Psi[j,f] = sum_n v_j Xhat^-1`` and
    ``Phi[j,f] = sum_n v_j Xhat^-1 X Xhat^-1``.
    """
    Xinv, y, _ = _solve_parts(X, v, R)
    Psi = np.einsum("jfn,fnab->jfab", v, Xinv)
    Phi = np.einsum("jfn,fna,fnb->jfab", v, y, np.conj(y))
    return Psi, Phi
