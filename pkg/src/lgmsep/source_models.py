"""Source variance models ``v_j(f, n)`` and their multiplicative MM updates.

Three parameterizations are supported:

* :class:`NmfPerSource` -- each source owns ``K_j`` templates and activations.
* :class:`NmfShared` -- templates are shared and softly assigned to sources
  through the indicator matrix ``b`` (rows sum to one).
* :class:`VaeSourceParams` -- the variance is a scaled CVAE decoder output.

Updates consume :class:`SolverStats`, the two per-bin traces that both
the mixing-model (MNMF) and demixing-model (ILRMA) majorizers reduce to::

    a[j, f, n] = tr(Xhat^-1 X Xhat^-1 R_j)      (ILRMA: |y_j|^2 / v_j^2)
    b[j, f, n] = tr(Xhat^-1 R_j)                (ILRMA: 1 / v_j)
"""
from dataclasses import dataclass, replace

import numpy as np

from . import neural
from .errors import SolverDivergenceError

FLOOR = 1e-12


@dataclass
class SolverStats:
    a: np.ndarray
    b: np.ndarray


@dataclass
class NmfPerSource:
    h: np.ndarray  # (J, K, F)
    u: np.ndarray  # (J, K, N)

    def variance(self):
        return np.maximum(np.swapaxes(self.h, 1, 2) @ self.u, FLOOR)

    @classmethod
    def init_random(cls, n_sources, n_bases, n_freq, n_frames, rng):
        h = rng.uniform(0.1, 1.0, size=(n_sources, n_bases, n_freq))
        u = rng.uniform(0.1, 1.0, size=(n_sources, n_bases, n_frames))
        return cls(h, u)


@dataclass
class NmfShared:
    b: np.ndarray  # (J, K)
    h: np.ndarray  # (K, F)
    u: np.ndarray  # (K, N)

    def variance(self):
        return np.maximum(np.swapaxes(self.b[:, :, None] * self.h, 1, 2) @ self.u, FLOOR)

    @classmethod
    def init_random(cls, n_sources, n_bases, n_freq, n_frames, rng):
        b = np.full((n_sources, n_bases), 1.0 / n_bases)
        h = rng.uniform(0.1, 1.0, size=(n_bases, n_freq))
        u = rng.uniform(0.1, 1.0, size=(n_bases, n_frames))
        return cls(b, h, u)


@dataclass
class VaeSourceParams:
    z: np.ndarray  # (J, D, N)
    d: np.ndarray  # (J, C)
    g: np.ndarray  # (J,)

    def classes(self):
        return neural.softmax(self.d, axis=-1)


def variance_nmf1(m, j, f, n):
    return max(float(np.dot(m.h[j, :, f], m.u[j, :, n])), FLOOR)


def variance_nmf2(m, j, f, n):
    return max(float(np.sum(m.b[j] * m.h[:, f] * m.u[:, n])), FLOOR)


def _check_stats(stats):
    for name in ("a", "b"):
        arr = getattr(stats, name)
        if not np.all(np.isfinite(arr)):
            j, f, n = (int(i) for i in np.argwhere(~np.isfinite(arr))[0])
            raise SolverDivergenceError(
                f"non-finite statistic {name} at (f={f}, n={n}) for source {j}", index=(f, n)
            )


def _ratio(num, den):
    return np.sqrt(num / np.maximum(den, np.finfo(float).tiny))


def update_nmf1(m, refresh, stats=None):
    """One MM sweep over templates then activations.

    ``refresh(v)`` must return the :class:`SolverStats` for variance field
    ``v`` under the current spatial model; it is called before each block
    so that every block minimizes a majorizer tight at its start point.
    """
    stats = refresh(m.variance()) if stats is None else stats
    _check_stats(stats)
    num = m.u @ np.swapaxes(stats.a, 1, 2)
    den = m.u @ np.swapaxes(stats.b, 1, 2)
    h = np.maximum(m.h * _ratio(num, den), FLOOR)
    m = NmfPerSource(h, m.u)

    stats = refresh(m.variance())
    _check_stats(stats)
    num = m.h @ stats.a
    den = m.h @ stats.b
    u = np.maximum(m.u * _ratio(num, den), FLOOR)
    return NmfPerSource(m.h, u)


def update_nmf2(m, refresh, stats=None, on_rescale=None):
    """MM sweep over ``b``, then ``h``, then ``u`` for the shared model.

    After the ``b`` step each row is renormalized to sum to one.  The row
    sums ``s_j`` are passed to ``on_rescale(s)`` so the caller can absorb
    them into source ``j``'s spatial scale, which leaves ``v_j R_j`` and
    therefore the objective unchanged.  Without a callback the
    normalization perturbs the objective slightly.
    """
    stats = refresh(m.variance()) if stats is None else stats
    _check_stats(stats)
    num = np.sum((stats.a @ m.u.T) * m.h.T, axis=1)
    den = np.sum((stats.b @ m.u.T) * m.h.T, axis=1)
    b = np.maximum(m.b * _ratio(num, den), FLOOR)
    s = b.sum(axis=1)
    b = b / s[:, None]
    if on_rescale is not None:
        on_rescale(s)
    m = NmfShared(b, m.h, m.u)

    stats = refresh(m.variance())
    _check_stats(stats)
    num = np.einsum("jk,jfk->kf", m.b, stats.a @ m.u.T)
    den = np.einsum("jk,jfk->kf", m.b, stats.b @ m.u.T)
    m = replace(m, h=np.maximum(m.h * _ratio(num, den), FLOOR))

    stats = refresh(m.variance())
    _check_stats(stats)
    num = np.einsum("jk,jkn->kn", m.b, m.h @ stats.a)
    den = np.einsum("jk,jkn->kn", m.b, m.h @ stats.b)
    return replace(m, u=np.maximum(m.u * _ratio(num, den), FLOOR))


def normalize_shared_templates(m):
    """Scale each ``h_k`` to unit sum over frequency, absorbed into ``u_k``."""
    scale = m.h.sum(axis=1)
    return NmfShared(m.b, m.h / scale[:, None], m.u * scale[:, None])


def decoder_variance(p, weights, j):
    """Unscaled decoder field ``sigma^2(z_j, softmax(d_j))``, shape (F, N)."""
    return neural.decoder_forward(weights, p.z[j], neural.softmax(p.d[j]))


def variance_vae(p, weights, j):
    return p.g[j] * decoder_variance(p, weights, j)


def update_g(p, stats, sigma2):
    """Optimal global scales given frozen statistics.

    ``sigma2`` is the (J, F, N) stack of decoder outputs for the current
    latents; returns the new ``g`` vector.
    """
    _check_stats(stats)
    num = np.einsum("jfn,jfn->j", sigma2, stats.a)
    den = np.einsum("jfn,jfn->j", sigma2, stats.b)
    g = p.g * _ratio(num, den)
    if not np.all(np.isfinite(g)) or np.any(g <= 0):
        raise SolverDivergenceError(f"global scale update produced {g}")
    return g


def majorizer_source_term(v, q, t):
    """Source-wise majorizer ``sum(q / v + v * t)`` and its gradient in ``v``.

    With auxiliary variables fixed at the current model, ``q = v_old^2 a``
    and ``t = b``.
    """
    val = float(np.sum(q / v + v * t))
    return val, -q / (v * v) + t
