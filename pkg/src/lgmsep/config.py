"""Run configuration for the command-line pipeline.

A config file is a JSON object with optional sections::

    {
      "seed": 0,
      "workers": 1,
      "out": "run",
      "stft":     {"frame_ms": 256, "hop_ms": 128, "window": "sqrt_hann", "sample_rate": 16000},
      "train":    {...},  "mix": {...},  "separate": {...},  "eval": {...}
    }

Every section maps onto a dataclass below; unknown keys at any level are
rejected with :class:`ConfigError`.  Defaults follow the published
protocol (STFT 256/128 ms, 300 baseline iterations, 200 warm-start
iterations, 100 GMVAE iterations, learning rates 2e-4 and 5e-4, two
microphones and three sources).
"""
import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError

METHODS = ("mnmf1", "mnmf2", "ilrma", "gmvae")
DEFAULT_ITERS = {"mnmf1": 300, "mnmf2": 300, "ilrma": 300, "gmvae": 100}


@dataclass
class StftConfig:
    frame_ms: float = 256.0
    hop_ms: float = 128.0
    window: str = "sqrt_hann"
    sample_rate: int = 16000


@dataclass
class CorpusConfig:
    """Synthetic class-labelled training corpus written by ``mix``."""
    n_classes: int = 4
    n_utterances: int = 30
    n_frames: int = 100


@dataclass
class TrainConfig:
    corpus: str = None
    weights: str = "cvae.bin"
    classes: list = None
    epochs: int = 200
    lr: float = 2e-4
    batch_frames: int = 64
    latent_dim: int = 16
    hidden: int = 128
    checkpoint: str = None
    resume: bool = False


@dataclass
class MixConfig:
    n_sources: int = 3
    n_channels: int = 2
    kind: str = "anechoic"
    gains: list = None
    max_delay: float = 2e-3
    sources: list = None
    classes: list = None
    n_frames: int = 100
    corpus: CorpusConfig = None


@dataclass
class SeparateConfig:
    mixture: str = "mixture.wav"
    method: str = "mnmf2"
    n_sources: int = 3
    n_bases: int = 8
    n_shared_bases: int = None
    n_iter: int = None
    warm_iter: int = 200
    latent_steps: int = 10
    lr: float = 5e-4
    weights: str = None
    warm_start: str = None
    ref_channel: int = 0

    def iterations(self):
        return DEFAULT_ITERS[self.method] if self.n_iter is None else self.n_iter


@dataclass
class EvalItem:
    estimates: object = None
    references: object = None
    name: str = None


@dataclass
class EvalConfig:
    items: list = field(default_factory=list)
    label: str = None
    table: str = "metrics.tsv"
    report: str = "metrics.json"
    bars: str = "bars.tsv"


@dataclass
class RunConfig:
    seed: int = 0
    workers: int = 1
    out: str = "."
    stft: StftConfig = field(default_factory=StftConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    mix: MixConfig = field(default_factory=MixConfig)
    separate: SeparateConfig = field(default_factory=SeparateConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self):
        return dataclasses.asdict(self)


_NESTED = {
    (RunConfig, "stft"): StftConfig, (RunConfig, "train"): TrainConfig,
    (RunConfig, "mix"): MixConfig, (RunConfig, "separate"): SeparateConfig,
    (RunConfig, "eval"): EvalConfig, (MixConfig, "corpus"): CorpusConfig,
}


def _build(cls, doc, where):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object, got {type(doc).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, val in doc.items():
        sub = _NESTED.get((cls, key))
        if sub is not None and val is not None:
            val = _build(sub, val, f"{where}.{key}")
        elif cls is EvalConfig and key == "items":
            if not isinstance(val, list):
                raise ConfigError(f"{where}.items: expected a list")
            val = [_build(EvalItem, it, f"{where}.items[{i}]") for i, it in enumerate(val)]
        kwargs[key] = val
    return cls(**kwargs)


def _check_positive(where, **values):
    for name, val in values.items():
        if val is not None and (isinstance(val, bool) or not isinstance(val, (int, float))
                                or val <= 0):
            raise ConfigError(f"{where}.{name} must be a positive number, got {val!r}")


def validate(cfg):
    _check_positive("stft", frame_ms=cfg.stft.frame_ms, hop_ms=cfg.stft.hop_ms,
                    sample_rate=cfg.stft.sample_rate)
    _check_positive("train", epochs=cfg.train.epochs, lr=cfg.train.lr,
                    batch_frames=cfg.train.batch_frames, latent_dim=cfg.train.latent_dim,
                    hidden=cfg.train.hidden)
    _check_positive("mix", n_sources=cfg.mix.n_sources, n_channels=cfg.mix.n_channels,
                    n_frames=cfg.mix.n_frames, max_delay=cfg.mix.max_delay)
    s = cfg.separate
    _check_positive("separate", n_sources=s.n_sources, n_bases=s.n_bases,
                    n_shared_bases=s.n_shared_bases, n_iter=s.n_iter, warm_iter=s.warm_iter,
                    latent_steps=s.latent_steps, lr=s.lr)
    _check_positive("", workers=cfg.workers)
    if s.method not in METHODS:
        raise ConfigError(f"separate.method must be one of {', '.join(METHODS)}, got {s.method!r}")
    if cfg.mix.kind not in ("anechoic", "instantaneous"):
        raise ConfigError(f"mix.kind must be 'anechoic' or 'instantaneous', got {cfg.mix.kind!r}")
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or not 0 <= cfg.seed < 2 ** 64:
        raise ConfigError(f"seed must be an integer in [0, 2**64), got {cfg.seed!r}")
    return cfg


def from_dict(doc):
    return validate(_build(RunConfig, doc, "config"))


def load(path):
    """Read and validate a JSON config file; a missing path gives defaults."""
    if path is None:
        return validate(RunConfig())
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(doc)


def apply_overrides(cfg, seed=None, method=None, iters=None, out=None, workers=None):
    """Command-line flags take precedence over the file."""
    if seed is not None:
        cfg.seed = seed
    if method is not None:
        cfg.separate.method = method
    if iters is not None:
        cfg.separate.n_iter = iters
        cfg.train.epochs = iters
    if out is not None:
        cfg.out = out
    if workers is not None:
        cfg.workers = workers
    return validate(cfg)
