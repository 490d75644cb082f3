"""Majorization-minimization solver for the mixing-model family.

The observation model is ``x(f,n) ~ CN(0, Xhat(f,n))`` with
``Xhat = sum_j v_j(f,n) R_j(f)``.  MNMF1, MNMF2 and the CVAE-based GMVAE
share the spatial update (an algebraic Riccati equation per source and
frequency) and differ only in how ``v_j`` is parameterized.
"""
import copy
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _backend, neural, source_models, tensorlab
from .errors import IllConditionedError, InvalidInputError, InvariantViolation, SolverDivergenceError
from .source_models import NmfPerSource, NmfShared, SolverStats, VaeSourceParams

LOG_PI = float(np.log(np.pi))
RICCATI_TOL = 1e-6


@dataclass
class MixtureObservation:
    X: np.ndarray  # (F, N, I) complex

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.complex128)
        if self.X.ndim != 3:
            raise InvalidInputError(f"observation must be (F, N, I), got {self.X.shape}")
        if not np.all(np.isfinite(self.X)):
            f, n, i = (int(k) for k in np.argwhere(~np.isfinite(self.X))[0])
            raise InvalidInputError(f"non-finite observation at (f={f}, n={n}, channel {i})")

    @property
    def shape(self):
        return self.X.shape

    def outer(self):
        """``X(f,n) = x x^H``, shape (F, N, I, I)."""
        return self.X[..., :, None] * np.conj(self.X[..., None, :])


@dataclass
class AuxiliaryVars:
    P: np.ndarray  # (J, F, N, I, I)
    K: np.ndarray  # (F, N, I, I)


@dataclass
class SolverTrace:
    nll: list = field(default_factory=list)
    block_nll: list = field(default_factory=list)
    majorizer: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    checks: int = 0

    def tick(self, name, t0):
        self.timings.setdefault(name, []).append(time.perf_counter() - t0)

    def block(self, name, value):
        self.block_nll.append((name, value))
        if not np.isfinite(value):
            raise SolverDivergenceError(f"negative log-likelihood became {value} after {name}",
                                        trace=self)


@dataclass
class MnmfConfig:
    n_sources: int = 3
    n_bases: int = 8
    n_shared_bases: int = None  # MNMF2; defaults to n_sources * n_bases
    n_iter: int = 300
    seed: int = 0
    init_spatial: str = "auto"
    check_invariants: bool = True


@dataclass
class GmvaeConfig:
    n_sources: int = 3
    warm_iter: int = 200
    n_iter: int = 100
    latent_steps: int = 10
    lr: float = 5e-4
    n_bases: int = 8
    seed: int = 0
    check_invariants: bool = True


@dataclass
class FitResult:
    R: np.ndarray
    model: object
    trace: SolverTrace
    method: str

    def variance(self, weights=None):
        if isinstance(self.model, VaeSourceParams):
            return vae_variance(self.model, weights)
        return self.model.variance()


# ----------------------------------------------------------------- likelihood

def model_covariance(R, v):
    return np.einsum("jfn,jfab->fnab", v, R)


def compute_stats(obs, R, v):
    """Return (:class:`SolverStats`, total NLL) at the current model."""
    a, b, nll = _backend.model_stats(obs.X, v, R)
    return SolverStats(a, b), float(np.sum(nll))


def neg_log_likelihood(obs, R, v):
    """``sum_{f,n} x^H Xhat^-1 x + logdet Xhat + I log(pi)``."""
    return compute_stats(obs, R, v)[1]


def refresh_aux(obs, R, v):
    """Auxiliary variables at which the majorizer touches the NLL.

    ``P_j = v_j R_j Xhat^-1`` (Wiener gains, summing to the identity) and
    ``K = Xhat``.
    """
    Xhat = model_covariance(R, v)
    Xinv = np.linalg.inv(Xhat)
    P = v[..., None, None] * np.einsum("jfab,fnbc->jfnac", R, Xinv)
    return AuxiliaryVars(P, Xhat)


def majorizer(obs, R, v, aux):
    """Upper bound on the NLL for any ``P`` with ``sum_j P_j = I`` and PD ``K``.

    Value::

        sum_{j,f,n} [ x^H P_j^H R_j^-1 P_j x / v_j + v_j tr(K^-1 R_j) ]
          + sum_{f,n} [ logdet K - I + I log(pi) ]

    The second line gathers the terms that do not depend on ``R`` or ``v``;
    with them the bound equals :func:`neg_log_likelihood` exactly at
    :func:`refresh_aux`.
    """
    X = obs.X
    I = X.shape[-1]
    Px = np.einsum("jfnab,fnb->jfna", aux.P, X)
    Rinv = np.linalg.inv(R)
    quad = np.einsum("jfna,jfab,jfnb->jfn", np.conj(Px), Rinv, Px).real / v
    Kinv = np.linalg.inv(aux.K)
    tr = np.einsum("fnab,jfba->jfn", Kinv, R).real * v
    sign, logdet = np.linalg.slogdet(aux.K)
    const = logdet - I + I * LOG_PI
    return float(np.sum(quad) + np.sum(tr) + np.sum(const))


# -------------------------------------------------------------- spatial model

def init_spatial(n_sources, n_freq, n_chan, rng, kind="random"):
    eye = np.eye(n_chan, dtype=np.complex128)
    if kind == "identity":
        return np.tile(eye, (n_sources, n_freq, 1, 1))
    if kind != "random":
        raise InvalidInputError(f"unknown spatial initialization {kind!r}")
    a = rng.standard_normal((n_sources, n_freq, n_chan)) + 1j * rng.standard_normal(
        (n_sources, n_freq, n_chan))
    a /= np.linalg.norm(a, axis=-1, keepdims=True)
    R = 0.5 * a[..., :, None] * np.conj(a[..., None, :]) + 0.5 * eye / n_chan
    return R / np.trace(R, axis1=-2, axis2=-1).real[..., None, None]


def update_spatial(obs, R, v, trace=None):
    """Riccati update of every ``R_j(f)``, then symmetrize and load.

    Frequencies whose ``Psi`` is singular or whose Riccati residual exceeds
    1e-6 (relative) keep their previous value and a warning is issued.
    """
    Psi, Phi = _backend.riccati_terms(obs.X, v, R)
    Psi = tensorlab.hermitian_part(Psi)
    Omega = tensorlab.hermitian_part(R @ Phi @ R)
    wp, _ = tensorlab.herm_eig(Psi)
    bad = wp[..., 0] <= 1e-13 * np.maximum(wp[..., -1], np.finfo(float).tiny)
    if np.any(bad):
        Psi = np.where(bad[..., None, None], np.eye(Psi.shape[-1]), Psi)
    R_new = tensorlab.solve_riccati(Psi, Omega)
    res = tensorlab.riccati_residual(R_new, Psi, Omega)
    bad |= res > RICCATI_TOL * np.maximum(1.0, np.linalg.norm(Omega, axis=(-2, -1)))
    R_new = tensorlab.regularize_psd(R_new, tensorlab.default_eps(R_new))
    if np.any(bad):
        js, fs = np.nonzero(bad)
        msg = f"Riccati update failed for {len(fs)} (source, frequency) pairs, e.g. f={fs[0]}; skipped"
        warnings.warn(msg, RuntimeWarning)
        if trace is not None:
            trace.events.append(msg)
        R_new = np.where(bad[..., None, None], R, R_new)
    return R_new


def normalize_spatial_trace(R):
    """Scale every ``R_j(f)`` to unit trace; returns ``(R, traces)``."""
    mu = np.trace(R, axis1=-2, axis2=-1).real
    return R / mu[..., None, None], mu


# ---------------------------------------------------------------- invariants

def check_invariants(trace, v=None, model=None, R=None):
    trace.checks += 1
    if v is not None and not (np.all(np.isfinite(v)) and np.all(v > 0)):
        raise InvariantViolation("variance field is not strictly positive and finite")
    if isinstance(model, NmfShared):
        err = np.max(np.abs(model.b.sum(axis=1) - 1.0))
        if err > 1e-9:
            raise InvariantViolation(f"indicator rows do not sum to one (error {err:.2e})")
    if isinstance(model, VaeSourceParams):
        c = model.classes()
        if np.max(np.abs(c.sum(axis=-1) - 1.0)) > 1e-12:
            raise InvariantViolation("class posterior is not on the simplex")
        if not np.all(model.g > 0):
            raise InvariantViolation("global scale is not positive")
    if R is not None and not np.all(np.isfinite(R)):
        raise InvariantViolation("spatial covariance is not finite")


# ----------------------------------------------------------------------- MNMF

def fit_mnmf(obs, model_kind="nmf1", config=None, R0=None, model0=None, snapshots=()):
    """Run MNMF with per-source (``"nmf1"``) or shared (``"nmf2"``) templates.

    Each iteration updates the spatial model, then the source model, then
    fixes the scale ambiguity.  Every block is monotone in the NLL.
    Copies of the state after the iteration counts listed in ``snapshots``
    are kept in ``result.snapshots``; a 200-iteration snapshot of a
    300-iteration run is identical to a separate 200-iteration run.
    """
    cfg = config or MnmfConfig()
    if not isinstance(obs, MixtureObservation):
        obs = MixtureObservation(obs)
    F, N, I = obs.shape
    J = cfg.n_sources
    rng = np.random.default_rng(cfg.seed)
    kind = cfg.init_spatial
    if kind == "auto":
        # shared templates start with uniform indicators, so only R can break symmetry
        kind = "identity" if model_kind == "nmf1" else "random"
    R = init_spatial(J, F, I, rng, kind) if R0 is None else np.array(R0)
    if model_kind == "nmf1":
        model = NmfPerSource.init_random(J, cfg.n_bases, F, N, rng) if model0 is None else model0
    elif model_kind == "nmf2":
        K = cfg.n_shared_bases or J * cfg.n_bases
        model = NmfShared.init_random(J, K, F, N, rng) if model0 is None else model0
    else:
        raise InvalidInputError(f"unknown MNMF source model {model_kind!r}")

    method = "mnmf1" if model_kind == "nmf1" else "mnmf2"
    trace = SolverTrace()
    state = {"R": R}
    snaps = {}

    def refresh(v):
        stats, nll = compute_stats(obs, state["R"], v)
        return stats

    def absorb(s):
        state["R"] = state["R"] * s[:, None, None, None]

    trace.nll.append(neg_log_likelihood(obs, R, model.variance()))
    for it in range(cfg.n_iter):
        t0 = time.perf_counter()
        state["R"] = update_spatial(obs, state["R"], model.variance(), trace)
        trace.tick("spatial", t0)
        stats, nll = compute_stats(obs, state["R"], model.variance())
        trace.block("spatial", nll)

        t0 = time.perf_counter()
        if model_kind == "nmf1":
            model = source_models.update_nmf1(model, refresh, stats)
        else:
            model = source_models.update_nmf2(model, refresh, stats, on_rescale=absorb)
        trace.tick("source", t0)

        if model_kind == "nmf1":
            R_n, mu = normalize_spatial_trace(state["R"])
            state["R"] = R_n
            h = model.h * mu[:, None, :]
            scale = h.sum(axis=2)
            model = NmfPerSource(h / scale[..., None], model.u * scale[..., None])
        else:
            model = source_models.normalize_shared_templates(model)

        v = model.variance()
        nll = neg_log_likelihood(obs, state["R"], v)
        trace.block("source", nll)
        trace.nll.append(nll)
        if cfg.check_invariants:
            check_invariants(trace, v, model, state["R"])
        if it + 1 in snapshots:
            snaps[it + 1] = FitResult(state["R"].copy(), copy.deepcopy(model),
                                      copy.deepcopy(trace), method)
    result = FitResult(state["R"], model, trace, method)
    result.snapshots = snaps
    return result


# ---------------------------------------------------------------------- GMVAE

def vae_variance(p, weights):
    return p.g[:, None, None] * decoder_stack(p, weights)


def decoder_stack(p, weights):
    return np.stack([source_models.decoder_variance(p, weights, j) for j in range(len(p.g))])


def _source_value(weights, z, d, g, q, t):
    sig2 = neural.decoder_forward(weights, z, neural.softmax(d))
    v = g * sig2
    return float(np.sum(q / v + v * t))


def init_vae_params(obs, R, v, weights):
    """Latent initialization from a warm-start model.

    ``z_j`` is the encoder mean of source ``j``'s Wiener power estimate
    (normalized to unit mean, uniform class input), ``d_j = 0`` and
    ``g_j = 1``.
    """
    images = reconstruct_sources(obs, R, v)
    power = np.mean(np.abs(images) ** 2, axis=-1)
    J = power.shape[0]
    C = weights.n_classes
    uniform = np.full(C, 1.0 / C)
    z = np.stack([neural.encoder_forward(weights, neural.normalize_power(power[j]), uniform)[0]
                  for j in range(J)])
    return VaeSourceParams(z, np.zeros((J, C)), np.ones(J))


def fit_gmvae(obs, weights, config=None, warm_start=None):
    """Separate with the CVAE decoder as source model.

    ``warm_start`` is a :class:`FitResult` from :func:`fit_mnmf`; when
    omitted MNMF2 is run for ``config.warm_iter`` iterations first.
    """
    cfg = config or GmvaeConfig()
    if not isinstance(obs, MixtureObservation):
        obs = MixtureObservation(obs)
    if warm_start is None:
        warm_start = fit_mnmf(obs, "nmf2", MnmfConfig(
            n_sources=cfg.n_sources, n_bases=cfg.n_bases, n_iter=cfg.warm_iter, seed=cfg.seed,
            check_invariants=cfg.check_invariants))
    if weights.n_freq != obs.shape[0]:
        raise InvalidInputError(f"decoder has {weights.n_freq} bins, mixture has {obs.shape[0]}")
    R = np.array(warm_start.R)
    p = init_vae_params(obs, R, warm_start.variance(), weights)
    J = len(p.g)
    R, _ = normalize_spatial_trace(R)

    trace = SolverTrace()
    sig2 = decoder_stack(p, weights)
    stats, _ = compute_stats(obs, R, p.g[:, None, None] * sig2)
    p.g = source_models.update_g(p, stats, sig2)
    trace.nll.append(neg_log_likelihood(obs, R, p.g[:, None, None] * sig2))

    for it in range(cfg.n_iter):
        t0 = time.perf_counter()
        R = update_spatial(obs, R, p.g[:, None, None] * sig2, trace)
        trace.tick("spatial", t0)

        t0 = time.perf_counter()
        v = p.g[:, None, None] * sig2
        stats, nll = compute_stats(obs, R, v)
        trace.block("spatial", nll)
        q = v * v * stats.a
        t = stats.b
        before = after = 0.0
        z, d = p.z.copy(), p.d.copy()
        for j in range(J):
            def objective(x, j=j):
                return _source_value(weights, x["z"], x["d"], p.g[j], q[j], t[j])

            x = {"z": z[j], "d": d[j]}
            value, grad = neural.source_term_and_grad(weights, x["z"], x["d"], p.g[j], q[j], t[j])
            before += value
            for _ in range(cfg.latent_steps):
                x, new_value, step = neural.latent_step(x, {"z": grad["z"], "d": grad["d"]},
                                                        objective, cfg.lr, value)
                if step == 0.0:
                    break
                value, grad = neural.source_term_and_grad(weights, x["z"], x["d"], p.g[j],
                                                          q[j], t[j])
            after += value
            z[j], d[j] = x["z"], x["d"]
        p = VaeSourceParams(z, d, p.g)
        trace.majorizer.append((before, after))
        trace.tick("latent", t0)
        sig2 = decoder_stack(p, weights)
        v = p.g[:, None, None] * sig2
        stats, nll = compute_stats(obs, R, v)
        trace.block("latent", nll)

        t0 = time.perf_counter()
        p.g = source_models.update_g(p, stats, sig2)
        # g is frequency independent, so only the mean trace can move into it
        scale = np.trace(R, axis1=-2, axis2=-1).real.mean(axis=1)
        R = R / scale[:, None, None, None]
        p.g = p.g * scale
        trace.tick("scale", t0)
        v = p.g[:, None, None] * sig2
        nll = neg_log_likelihood(obs, R, v)
        trace.block("scale", nll)
        trace.nll.append(nll)
        if cfg.check_invariants:
            check_invariants(trace, v, p, R)
    result = FitResult(R, p, trace, "gmvae")
    result.warm_start = warm_start
    return result


# ------------------------------------------------------------- reconstruction

def reconstruct_sources(obs, R, v):
    """Multichannel Wiener images ``P_j x``, shape (J, F, N, I)."""
    Xhat = model_covariance(R, v)
    y = np.linalg.solve(Xhat, obs.X[..., None])[..., 0]
    return v[..., None] * np.einsum("jfab,fnb->jfna", R, y)
