"""Determined separation with demixing matrices (ILRMA).

``y(f,n) = W(f)^H x(f,n)`` with ``W(f) = [w_1(f), ..., w_J(f)]`` and J = I.
Demixing vectors are updated by iterative projection, source variances by
the same multiplicative rules as MNMF.
"""
import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import source_models
from .errors import InvalidInputError
from .mnmf_solver import (
    FitResult, MixtureObservation, SolverTrace, check_invariants,
)
from .source_models import NmfPerSource, NmfShared, SolverStats

LOG_PI = float(np.log(np.pi))


@dataclass
class IlrmaConfig:
    n_bases: int = 8
    n_shared_bases: int = None
    n_iter: int = 300
    seed: int = 0
    ref_channel: int = 0
    check_invariants: bool = True


def demix(obs, W):
    """Separated signals ``y_j = w_j^H x``, shape (J, F, N)."""
    return np.einsum("fij,fni->jfn", np.conj(W), obs.X)


def neg_log_likelihood_det(obs, W, v):
    """``-2N sum_f log|det W| + sum (log v + |w^H x|^2 / v) + FNI log(pi)``."""
    F, N, I = obs.shape
    y = demix(obs, W)
    _, logabsdet = np.linalg.slogdet(W)
    return float(-2.0 * N * np.sum(logabsdet) + np.sum(np.log(v) + np.abs(y) ** 2 / v)
                 + F * N * I * LOG_PI)


def weighted_covariance(obs, v_j):
    """``U_j(f) = (1/N) sum_n x x^H / v_j(f, n)``, shape (F, I, I)."""
    N = obs.shape[1]
    return np.einsum("fna,fnb,fn->fab", obs.X, np.conj(obs.X), 1.0 / v_j) / N


def ip_update(obs, W, v, j, f=None):
    """Iterative-projection update of column ``j`` (all frequencies, or one).

    Returns the new ``W``; the input is not modified.
    """
    W = np.array(W, dtype=np.complex128)
    freqs = slice(None) if f is None else slice(f, f + 1)
    U = weighted_covariance(obs, v[j])[freqs]
    Wf = W[freqs]
    I = W.shape[1]
    e = np.zeros(I)
    e[j] = 1.0
    WU = np.conj(np.swapaxes(Wf, -1, -2)) @ U
    try:
        w = np.linalg.solve(WU, np.broadcast_to(e[:, None], WU.shape[:-1] + (1,)))[..., 0]
    except np.linalg.LinAlgError:
        load = 1e-10 * np.trace(WU, axis1=-2, axis2=-1).real.mean() * np.eye(I)
        try:
            w = np.linalg.solve(WU + load, np.broadcast_to(e[:, None], WU.shape[:-1] + (1,)))[..., 0]
        except np.linalg.LinAlgError:
            warnings.warn(f"IP update of source {j} skipped: singular system", RuntimeWarning)
            return W
    norm = np.einsum("fa,fab,fb->f", np.conj(w), U, w).real
    w = w / np.sqrt(norm)[:, None]
    W[freqs, :, j] = w
    return W


def mixing_estimate(W):
    """``A(f) = W(f)^-H``, shape (F, I, J)."""
    return np.linalg.inv(np.conj(np.swapaxes(W, -1, -2)))


def project_back(y, W, ref_channel=0):
    """Restore the scale of ``y`` (J, F, N) at the reference microphone."""
    A = mixing_estimate(W)
    return A[:, ref_channel, :].T[:, :, None] * y


def source_images(obs, W):
    """Per-source multichannel images ``A[:, j] y_j``, shape (J, F, N, I)."""
    y = demix(obs, W)
    A = mixing_estimate(W)
    return np.einsum("fij,jfn->jfni", A, y)


def fit_ilrma(obs, model_kind="nmf1", config=None, W0=None, model0=None):
    """ILRMA with per-source or shared NMF source models."""
    cfg = config or IlrmaConfig()
    if not isinstance(obs, MixtureObservation):
        obs = MixtureObservation(obs)
    F, N, I = obs.shape
    J = I
    rng = np.random.default_rng(cfg.seed)
    W = np.tile(np.eye(I, dtype=np.complex128), (F, 1, 1)) if W0 is None else np.array(W0)
    if model_kind == "nmf1":
        model = NmfPerSource.init_random(J, cfg.n_bases, F, N, rng) if model0 is None else model0
    elif model_kind == "nmf2":
        K = cfg.n_shared_bases or J * cfg.n_bases
        model = NmfShared.init_random(J, K, F, N, rng) if model0 is None else model0
    else:
        raise InvalidInputError(f"unknown ILRMA source model {model_kind!r}")

    trace = SolverTrace()
    state = {"W": W}

    def refresh(v):
        p = np.abs(demix(obs, state["W"])) ** 2
        return SolverStats(p / (v * v), 1.0 / v)

    def absorb(s):
        state["W"] = state["W"] / np.sqrt(s)[None, None, :]

    trace.nll.append(neg_log_likelihood_det(obs, W, model.variance()))
    for it in range(cfg.n_iter):
        t0 = time.perf_counter()
        if model_kind == "nmf1":
            model = source_models.update_nmf1(model, refresh)
        else:
            model = source_models.update_nmf2(model, refresh, on_rescale=absorb)
            model = source_models.normalize_shared_templates(model)
        trace.tick("source", t0)
        v = model.variance()
        trace.block("source", neg_log_likelihood_det(obs, state["W"], v))

        t0 = time.perf_counter()
        for j in range(J):
            state["W"] = ip_update(obs, state["W"], v, j)
        trace.tick("spatial", t0)
        trace.block("spatial", neg_log_likelihood_det(obs, state["W"], v))

        if model_kind == "nmf1":
            # unit mean output power per source; exact rescaling of w_j and h_j
            lam = np.sqrt(np.mean(np.abs(demix(obs, state["W"])) ** 2, axis=(1, 2)))
            state["W"] = state["W"] / lam[None, None, :]
            model = NmfPerSource(model.h / (lam ** 2)[:, None, None], model.u)
            v = model.variance()
        nll = neg_log_likelihood_det(obs, state["W"], v)
        trace.block("scale", nll)
        trace.nll.append(nll)
        if cfg.check_invariants:
            check_invariants(trace, v, model)
    result = FitResult(state["W"], model, trace, "ilrma")
    result.W = state["W"]
    return result
