"""Conditional VAE source model with hand-written reverse-mode gradients.

Both networks are frame-wise: every spectrogram frame (a column of the
``F x N`` input) is processed independently, and the class vector is
concatenated to the input of every layer.  Layers are gated linear units::

    encoder:  [log S; c] -> GLU -> [.; c] -> GLU -> [.; c] -> (mu, logvar)
    decoder:  [z; c]     -> GLU -> [.; c] -> GLU -> [.; c] -> log sigma^2

The decoder's log-variance head is clamped to [-30, 30].
"""
from dataclasses import dataclass, field

import numpy as np

from . import container
from .errors import InvalidInputError, InvariantViolation, TrainingDivergenceError

CLAMP = 30.0
FEATURE_FLOOR = 1e-6
LOG_PI = float(np.log(np.pi))


def softmax(d, axis=-1):
    d = np.asarray(d, dtype=np.float64)
    e = np.exp(d - np.max(d, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def layer_shapes(n_freq, n_classes, latent_dim, hidden):
    """Ordered ``{name: shape}`` of every parameter tensor."""
    F, C, D, H = n_freq, n_classes, latent_dim, hidden
    return {
        "enc1.W": (2 * H, F + C), "enc1.b": (2 * H,),
        "enc2.W": (2 * H, H + C), "enc2.b": (2 * H,),
        "enc_mu.W": (D, H + C), "enc_mu.b": (D,),
        "enc_lv.W": (D, H + C), "enc_lv.b": (D,),
        "dec1.W": (2 * H, D + C), "dec1.b": (2 * H,),
        "dec2.W": (2 * H, H + C), "dec2.b": (2 * H,),
        "dec_out.W": (F, H + C), "dec_out.b": (F,),
    }


@dataclass
class CvaeWeights:
    n_freq: int
    n_classes: int
    latent_dim: int = 16
    hidden: int = 128
    params: dict = field(default_factory=dict)

    @classmethod
    def init(cls, n_freq, n_classes, latent_dim=16, hidden=128, rng=None):
        rng = np.random.default_rng(rng)
        params = {}
        for name, shape in layer_shapes(n_freq, n_classes, latent_dim, hidden).items():
            if name.endswith(".W"):
                params[name] = rng.normal(0.0, 1.0 / np.sqrt(shape[1]), size=shape)
            else:
                params[name] = np.zeros(shape)
        return cls(n_freq, n_classes, latent_dim, hidden, params)

    @classmethod
    def zeros(cls, n_freq, n_classes, latent_dim=16, hidden=128):
        shapes = layer_shapes(n_freq, n_classes, latent_dim, hidden)
        return cls(n_freq, n_classes, latent_dim, hidden,
                   {k: np.zeros(s) for k, s in shapes.items()})

    def copy(self):
        return CvaeWeights(self.n_freq, self.n_classes, self.latent_dim, self.hidden,
                           {k: v.copy() for k, v in self.params.items()})

    def save(self, path, extra=None, meta=None):
        tensors = dict(self.params)
        if extra:
            tensors.update(extra)
        info = {"hidden": self.hidden, "layers": list(self.params)}
        info.update(meta or {})
        container.save(path, tensors, "cvae",
                       (self.latent_dim, self.n_classes, self.n_freq), info)

    @classmethod
    def load(cls, path, with_extra=False):
        tensors, (D, C, F), meta = container.load(path, kind="cvae")
        shapes = layer_shapes(F, C, D, meta["hidden"])
        params = {}
        for name, shape in shapes.items():
            if name not in tensors or tensors[name].shape != tuple(shape):
                raise InvalidInputError(f"weight file lacks tensor {name!r} of shape {shape}")
            params[name] = tensors.pop(name)
        w = cls(F, C, D, meta["hidden"], params)
        if with_extra:
            return w, tensors, meta
        return w


# --------------------------------------------------------------------- layers

def _with_class(x, c):
    return np.vstack([x, c])


def _glu_fwd(W, b, inp):
    a = W @ inp + b[:, None]
    H = a.shape[0] // 2
    lin, sg = a[:H], _sigmoid(a[H:])
    return lin * sg, (inp, lin, sg)


def _glu_bwd(W, dout, cache):
    inp, lin, sg = cache
    da = np.vstack([dout * sg, dout * lin * sg * (1.0 - sg)])
    return da @ inp.T, da.sum(axis=1), W.T @ da


def _affine_fwd(W, b, inp):
    return W @ inp + b[:, None]


def _affine_bwd(W, dout, inp):
    return dout @ inp.T, dout.sum(axis=1), W.T @ dout


def _class_matrix(c, n_frames):
    c = np.asarray(c, dtype=np.float64)
    if c.ndim == 1:
        c = np.repeat(c[:, None], n_frames, axis=1)
    return c


def encoder_features(S):
    return np.log(np.asarray(S, dtype=np.float64) + FEATURE_FLOOR)


def _encoder(w, S, c):
    p = w.params
    c = _class_matrix(c, S.shape[1])
    x0 = _with_class(encoder_features(S), c)
    h1, k1 = _glu_fwd(p["enc1.W"], p["enc1.b"], x0)
    x1 = _with_class(h1, c)
    h2, k2 = _glu_fwd(p["enc2.W"], p["enc2.b"], x1)
    x2 = _with_class(h2, c)
    mu = _affine_fwd(p["enc_mu.W"], p["enc_mu.b"], x2)
    lv_raw = _affine_fwd(p["enc_lv.W"], p["enc_lv.b"], x2)
    lv = np.clip(lv_raw, -CLAMP, CLAMP)
    return mu, lv, (k1, k2, x2, np.abs(lv_raw) < CLAMP)


def _encoder_bwd(w, dmu, dlv, cache):
    p = w.params
    k1, k2, x2, mask = cache
    H = w.hidden
    g = {}
    dlv = dlv * mask
    g["enc_mu.W"], g["enc_mu.b"], dx2 = _affine_bwd(p["enc_mu.W"], dmu, x2)
    g["enc_lv.W"], g["enc_lv.b"], dx2b = _affine_bwd(p["enc_lv.W"], dlv, x2)
    dx2 = dx2 + dx2b
    g["enc2.W"], g["enc2.b"], dx1 = _glu_bwd(p["enc2.W"], dx2[:H], k2)
    g["enc1.W"], g["enc1.b"], _ = _glu_bwd(p["enc1.W"], dx1[:H], k1)
    return g


def _decoder(w, z, c):
    p = w.params
    c = _class_matrix(c, z.shape[1])
    x0 = _with_class(z, c)
    h1, k1 = _glu_fwd(p["dec1.W"], p["dec1.b"], x0)
    x1 = _with_class(h1, c)
    h2, k2 = _glu_fwd(p["dec2.W"], p["dec2.b"], x1)
    x2 = _with_class(h2, c)
    raw = _affine_fwd(p["dec_out.W"], p["dec_out.b"], x2)
    logv = np.clip(raw, -CLAMP, CLAMP)
    return logv, (k1, k2, x2, np.abs(raw) < CLAMP)


def _decoder_bwd(w, dlogv, cache, want_params=True):
    """Returns (param grads or None, dz, dc) with dc of shape (C, N)."""
    p = w.params
    k1, k2, x2, mask = cache
    D, H = w.latent_dim, w.hidden
    g = {}
    dlogv = dlogv * mask
    g["dec_out.W"], g["dec_out.b"], dx2 = _affine_bwd(p["dec_out.W"], dlogv, x2)
    g["dec2.W"], g["dec2.b"], dx1 = _glu_bwd(p["dec2.W"], dx2[:H], k2)
    g["dec1.W"], g["dec1.b"], dx0 = _glu_bwd(p["dec1.W"], dx1[:H], k1)
    dc = dx2[H:] + dx1[H:] + dx0[D:]
    return (g if want_params else None), dx0[:D], dc


# ------------------------------------------------------------------ public ops

def encoder_forward(w, S, c):
    """Posterior mean and log-variance, each (D, N), for spectrogram ``S``."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != w.n_freq:
        raise InvalidInputError(f"expected ({w.n_freq}, N) spectrogram, got {S.shape}")
    mu, lv, _ = _encoder(w, S, c)
    return mu, lv


def decoder_forward(w, z, c):
    """Decoder variance field ``sigma^2`` of shape (F, N)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] != w.latent_dim:
        raise InvalidInputError(f"expected ({w.latent_dim}, N) latents, got {z.shape}")
    logv, _ = _decoder(w, z, c)
    return np.exp(logv)


def reparam_sample(mu, logvar, rng):
    eps = rng.standard_normal(np.shape(mu))
    return mu + np.exp(0.5 * np.clip(logvar, -CLAMP, CLAMP)) * eps


def kl_standard_normal(mu, logvar):
    """Closed-form KL[N(mu, exp(logvar)) || N(0, 1)], summed."""
    return 0.5 * float(np.sum(mu * mu + np.exp(logvar) - 1.0 - logvar))


def lgm_log_likelihood(S, v):
    """``sum(-log(pi) - log v - S / v)`` for power spectrogram ``S``."""
    return float(np.sum(-LOG_PI - np.log(v) - S / v))


def loss_and_grad(w, S, c, eps):
    """Negative ELBO for one fixed noise draw, with parameter gradients.

    Returns ``(loss, grads, (rec, kl))``; ``grads`` maps parameter names to
    arrays of the same shape.
    """
    mu, lv, ecache = _encoder(w, S, c)
    sd = np.exp(0.5 * lv)
    z = mu + sd * eps
    logv, dcache = _decoder(w, z, c)
    ratio = S * np.exp(-logv)
    rec = float(np.sum(-LOG_PI - logv - ratio))
    kl = 0.5 * float(np.sum(mu * mu + np.exp(lv) - 1.0 - lv))
    if kl < -1e-9 * max(1.0, abs(rec)):
        raise InvariantViolation(f"negative KL divergence {kl}")
    loss = kl - rec
    gdec, dz, _ = _decoder_bwd(w, 1.0 - ratio, dcache)
    dmu = dz + mu
    dlv = dz * eps * 0.5 * sd + 0.5 * (np.exp(lv) - 1.0)
    genc = _encoder_bwd(w, dmu, dlv, ecache)
    genc.update(gdec)
    return loss, genc, (rec, kl)


def elbo(w, S, c, rng):
    """Single-sample Monte-Carlo ELBO of ``(S, c)``."""
    S = np.asarray(S, dtype=np.float64)
    if np.any(S < 0):
        raise InvalidInputError("power spectrogram must be nonnegative")
    eps = rng.standard_normal((w.latent_dim, S.shape[1]))
    loss, _, _ = loss_and_grad(w, S, c, eps)
    if not np.isfinite(loss):
        raise TrainingDivergenceError("non-finite ELBO")
    return -loss


def source_term_and_grad(w, z, d, g, q, t, want_params=False):
    """Majorizer term ``sum(q / v + v t)`` for one source, ``v = g sigma^2(z, softmax(d))``.

    Returns ``(value, grads)`` where ``grads`` has keys ``"z"``, ``"d"``,
    ``"g"`` and, if requested, ``"params"``.
    """
    c = softmax(d)
    logv, cache = _decoder(w, z, c)
    sig2 = np.exp(logv)
    v = g * sig2
    value = float(np.sum(q / v + v * t))
    dv = -q / (v * v) + t
    pg, dz, dc = _decoder_bwd(w, dv * v, cache, want_params)
    dcs = dc.sum(axis=1)
    dd = c * (dcs - np.dot(c, dcs))
    out = {"z": dz, "d": dd, "g": float(np.sum(dv * sig2))}
    if want_params:
        out["params"] = pg
    return value, out


def latent_step(x, grad, objective, lr, value=None, max_halvings=10):
    """Backtracked gradient step on a dict of arrays.

    Tries ``x - lr * grad``, halving ``lr`` up to ``max_halvings`` times
    until ``objective`` does not increase.  Returns
    ``(new_x, new_value, step_taken)``; ``step_taken`` is 0.0 when every
    trial failed and ``x`` is returned unchanged.
    """
    f0 = objective(x) if value is None else value
    step = lr
    for _ in range(max_halvings + 1):
        cand = {k: x[k] - step * grad[k] for k in x}
        f1 = objective(cand)
        if f1 <= f0:
            return cand, f1, step
        step *= 0.5
    return x, f0, 0.0


# ------------------------------------------------------------------- training

@dataclass
class TrainExample:
    S: np.ndarray  # (F, N) power spectrogram
    c: np.ndarray  # (C,) one-hot

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        if np.any(self.S < 0):
            raise InvalidInputError("training spectrogram has negative entries")
        if not (np.all((self.c == 0) | (self.c == 1)) and self.c.sum() == 1):
            raise InvalidInputError("class label must be one-hot")


def normalize_power(S):
    """Scale a power spectrogram to unit mean."""
    m = float(np.mean(S))
    return S / m if m > 0 else S


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_frames: int = 64
    latent_dim: int = 16
    hidden: int = 128
    seed: int = 0


class _Adam:
    def __init__(self, params, cfg, m=None, v=None, t=0):
        self.cfg = cfg
        self.m = m or {k: np.zeros_like(p) for k, p in params.items()}
        self.v = v or {k: np.zeros_like(p) for k, p in params.items()}
        self.t = t

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        b1t = 1.0 - c.beta1 ** self.t
        b2t = 1.0 - c.beta2 ** self.t
        for k, gk in grads.items():
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * gk
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * gk * gk
            params[k] -= c.lr * (self.m[k] / b1t) / (np.sqrt(self.v[k] / b2t) + c.adam_eps)


def _stack_frames(dataset):
    S = np.concatenate([ex.S for ex in dataset], axis=1)
    C = np.concatenate([np.repeat(ex.c[:, None], ex.S.shape[1], axis=1) for ex in dataset], axis=1)
    return S, C


def _save_checkpoint(path, w, opt, epoch, rng, log):
    extra = {}
    for k in w.params:
        extra["adam_m/" + k] = opt.m[k]
        extra["adam_v/" + k] = opt.v[k]
    meta = {"epoch": epoch, "step": opt.t, "rng_state": rng.bit_generator.state, "log": log}
    w.save(path, extra=extra, meta=meta)


def train_cvae(dataset, config=None, checkpoint=None, resume=False, stop_after=None):
    """Fit encoder and decoder parameters by maximizing the ELBO with Adam.

    Parameters
    ----------
    dataset : list of TrainExample
    config : TrainConfig
    checkpoint : path, optional
        Written after every epoch; holds weights, optimizer moments, the RNG
        state and the log so that ``resume=True`` continues bit-identically.
    stop_after : int, optional
        Stop after this many epochs (used to simulate an interrupted run).

    Returns
    -------
    weights : CvaeWeights
    log : list of float
        Mean per-frame ELBO of each epoch.
    """
    cfg = config or TrainConfig()
    if not dataset:
        raise InvalidInputError("empty training set")
    F = dataset[0].S.shape[0]
    C = dataset[0].c.shape[0]
    S_all, C_all = _stack_frames(dataset)
    M = S_all.shape[1]

    if resume and checkpoint is not None:
        w, extra, meta = CvaeWeights.load(checkpoint, with_extra=True)
        opt = _Adam(w.params, cfg,
                    {k: extra["adam_m/" + k] for k in w.params},
                    {k: extra["adam_v/" + k] for k in w.params}, meta["step"])
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng_state"]
        start, log = meta["epoch"], list(meta["log"])
    else:
        rng = np.random.default_rng(cfg.seed)
        w = CvaeWeights.init(F, C, cfg.latent_dim, cfg.hidden, rng)
        opt = _Adam(w.params, cfg)
        start, log = 0, []

    last_good = w.copy()
    for epoch in range(start, cfg.epochs):
        if stop_after is not None and epoch - start >= stop_after:
            break
        order = rng.permutation(M)
        total = 0.0
        for lo in range(0, M, cfg.batch_frames):
            idx = order[lo:lo + cfg.batch_frames]
            S, Cb = S_all[:, idx], C_all[:, idx]
            eps = rng.standard_normal((w.latent_dim, len(idx)))
            loss, grads, _ = loss_and_grad(w, S, Cb, eps)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDivergenceError(f"non-finite loss at epoch {epoch}", last_good=last_good)
            n = len(idx)
            opt.step(w.params, {k: g / n for k, g in grads.items()})
            total -= loss
        log.append(total / M)
        last_good = w.copy()
        if checkpoint is not None:
            _save_checkpoint(checkpoint, w, opt, epoch + 1, rng, log)
    return w, log
