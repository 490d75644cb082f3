"""Synthetic mixtures with ground truth.

Sources are drawn in the STFT domain from the local Gaussian model, so
their true variance fields are known exactly.  Mixing is either a
frequency-flat complex matrix or pure inter-microphone delays.
"""
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidInputError

MIX_KINDS = ("instantaneous", "anechoic")


@dataclass
class MixSpec:
    n_sources: int = 3
    n_channels: int = 2
    kind: str = "anechoic"
    seed: int = 0
    gains: list = None
    sample_rate: int = 16000
    max_delay: float = 2e-3
    max_cond: float = 10.0

    def __post_init__(self):
        if self.n_sources < 1 or self.n_channels < 1:
            raise InvalidInputError("need at least one source and one channel")
        if self.kind not in MIX_KINDS:
            raise InvalidInputError(f"unknown mixing kind {self.kind!r}; expected {MIX_KINDS}")
        if self.gains is not None:
            if len(self.gains) != self.n_sources or min(self.gains) <= 0:
                raise InvalidInputError("gains must be positive, one per source")


def bin_frequencies(n_freq, sample_rate):
    """Center frequency in Hz of each one-sided STFT bin."""
    return np.arange(n_freq) * sample_rate / (2.0 * (n_freq - 1)) if n_freq > 1 else np.zeros(1)


def gen_mixing(spec, n_freq, rng=None):
    """Mixing matrices ``A(f)``, shape (F, I, J).

    Returns ``(A, info)`` where ``info`` records the drawn matrix or delays.
    """
    rng = np.random.default_rng(spec.seed if rng is None else rng)
    I, J = spec.n_channels, spec.n_sources
    gains = np.ones(J) if spec.gains is None else np.asarray(spec.gains, dtype=float)
    if spec.kind == "instantaneous":
        for _ in range(1000):
            M = rng.standard_normal((I, J)) + 1j * rng.standard_normal((I, J))
            if I == 1 or J == 1 or np.linalg.cond(M) <= spec.max_cond:
                break
        else:
            raise InvalidInputError("could not draw a well-conditioned mixing matrix")
        M = M * gains[None, :]
        A = np.broadcast_to(M, (n_freq, I, J)).copy()
        info = {"matrix_real": M.real.tolist(), "matrix_imag": M.imag.tolist()}
    else:
        tau = rng.uniform(0.0, spec.max_delay, size=(I, J))
        tau[0] = 0.0  # delays relative to the first microphone
        freqs = bin_frequencies(n_freq, spec.sample_rate)
        A = np.exp(-2j * np.pi * freqs[:, None, None] * tau[None]) * gains[None, None, :]
        info = {"delays_s": tau.tolist()}
    info["gains"] = gains.tolist()
    return A, info


def mix(sources, A):
    """Mix (J, F, N) source spectrograms with (F, I, J) matrices.

    Returns ``(x, images)`` with ``x`` of shape (F, N, I) and per-source
    images of shape (J, F, N, I); the images sum to ``x``.
    """
    sources = np.asarray(sources)
    images = np.einsum("fij,jfn->jfni", A, sources)
    return images.sum(axis=0), images


def sample_lgm(v, rng):
    """Draw ``s ~ CN(0, v)`` element-wise."""
    v = np.asarray(v, dtype=np.float64)
    z = rng.standard_normal(v.shape + (2,))
    return np.sqrt(v / 2.0) * (z[..., 0] + 1j * z[..., 1])


def synth_nmf_sources(K, F, N, seed, n_sources=1, activation_shape=0.3):
    """Sources whose variance is a random rank-``K`` NMF model.

    Templates are Gamma(1)-distributed, activations Gamma(``activation_shape``)
    so that sources are intermittent.  Returns ``(s, v)`` of shape (J, F, N).
    """
    rng = np.random.default_rng(seed)
    h = rng.gamma(1.0, size=(n_sources, K, F))
    u = rng.gamma(activation_shape, size=(n_sources, K, N))
    v = np.einsum("jkf,jkn->jfn", h, u) + 1e-6
    v /= v.mean(axis=(1, 2), keepdims=True)
    return sample_lgm(v, rng), v


# ----------------------------------------------------------- spectral classes

@dataclass
class ClassBank:
    """Harmonic source classes with class-specific pitch range and envelope.

    A frame of class ``c`` is a harmonic comb whose fundamental (in bins)
    is drawn from ``f0_ranges[c]``, shaped by a smooth spectral envelope,
    with a frame gain drawn from a sticky on/off process.
    """

    n_freq: int = 129
    f0_ranges: list = field(default_factory=lambda: [(3.0, 5.0), (6.0, 9.0), (10.0, 14.0),
                                                     (15.0, 20.0)])
    tilts: list = field(default_factory=lambda: [-2.5, -1.0, 0.0, 1.0])
    width: float = 0.6
    floor: float = 1e-3

    def __post_init__(self):
        if len(self.f0_ranges) != len(self.tilts):
            raise InvalidInputError("need one spectral tilt per pitch range")

    @property
    def n_classes(self):
        return len(self.f0_ranges)

    def restrict(self, n_classes):
        """The first ``n_classes`` classes of this bank."""
        if not 1 <= n_classes <= self.n_classes:
            raise InvalidInputError(f"bank has {self.n_classes} classes, asked for {n_classes}")
        return ClassBank(self.n_freq, list(self.f0_ranges[:n_classes]),
                         list(self.tilts[:n_classes]), self.width, self.floor)

    def frame_variance(self, c, f0, gain):
        f = np.arange(self.n_freq, dtype=float)
        comb = np.zeros(self.n_freq)
        for k in range(1, int(self.n_freq / f0) + 2):
            comb += np.exp(-0.5 * ((f - k * f0) / self.width) ** 2)
        env = np.exp(self.tilts[c] * f / self.n_freq)
        return gain * (comb * env + self.floor)

    def variance(self, c, n_frames, rng):
        lo, hi = self.f0_ranges[c]
        # slowly varying pitch: random walk clipped to the class range
        f0 = np.empty(n_frames)
        f0[0] = rng.uniform(lo, hi)
        for n in range(1, n_frames):
            f0[n] = np.clip(f0[n - 1] + rng.normal(0, 0.1 * (hi - lo)), lo, hi)
        on = np.empty(n_frames, dtype=bool)
        on[0] = rng.random() < 0.7
        for n in range(1, n_frames):
            on[n] = on[n - 1] if rng.random() < 0.9 else not on[n - 1]
        gain = np.where(on, rng.gamma(4.0, 0.25, size=n_frames), 0.02)
        v = np.stack([self.frame_variance(c, f0[n], gain[n]) for n in range(n_frames)], axis=1)
        return v / v.mean()


def synth_class_sources(bank, classes, n_frames, seed):
    """Draw one source per entry of ``classes``; returns ``(s, v)``."""
    rng = np.random.default_rng(seed)
    v = np.stack([bank.variance(c, n_frames, rng) for c in classes])
    return sample_lgm(v, rng), v


# ----------------------------------------------------------------- scenarios

def write_manifest(path, spec, mixing_info, extra=None):
    doc = {"spec": asdict(spec), "mixing": mixing_info}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path):
    with open(path) as fh:
        return json.load(fh)


def scenario_paths(out_dir, n_sources):
    return {
        "mixture": os.path.join(out_dir, "mixture.wav"),
        "references": [os.path.join(out_dir, f"ref{j}.wav") for j in range(n_sources)],
        "manifest": os.path.join(out_dir, "manifest.json"),
    }
