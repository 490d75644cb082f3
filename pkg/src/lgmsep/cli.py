"""``lgmsep`` command-line pipeline: train, mix, separate, eval.

Usage::

    lgmsep train|mix|separate|eval --config FILE [--seed N] [--method M]
                                   [--iters N] [--out DIR] [--workers N]

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error.  Relative input paths are taken as given (relative to the
working directory); outputs go under ``--out``.
"""
import argparse
import json
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import config as config_mod
from . import container, evalkit, mixsim, neural, signal_io
from .errors import (
    ConfigError, FormatError, IllConditionedError, InvalidInputError, InvariantViolation,
    SolverDivergenceError, TrainingDivergenceError,
)
from .ilrma_solver import IlrmaConfig, fit_ilrma, source_images
from .mnmf_solver import (
    FitResult, GmvaeConfig, MixtureObservation, MnmfConfig, SolverTrace, fit_gmvae, fit_mnmf,
    reconstruct_sources,
)
from .source_models import NmfPerSource, NmfShared

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
MONOTONE_TOL = 1e-7


def _stft_params(cfg):
    frame_len, hop = signal_io.frames_from_ms(cfg.stft.frame_ms, cfg.stft.hop_ms,
                                              cfg.stft.sample_rate)
    return frame_len, hop


def _out_path(cfg, name):
    return name if os.path.isabs(name) else os.path.join(cfg.out, name)


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sub_seed(seed, *keys):
    """Deterministic child seed derived from the run seed and integer keys."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1, np.uint64)[0])


def _read_checked(path, cfg):
    w = signal_io.read_wav(path)
    if w.sample_rate != cfg.stft.sample_rate:
        raise ConfigError(f"{path}: sample rate {w.sample_rate} Hz, config expects "
                          f"{cfg.stft.sample_rate} Hz (resample offline)")
    return w


def _natural_key(path):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", os.path.basename(path))]


# ---------------------------------------------------------------------- train

def load_corpus(root, cfg):
    """Class-labelled examples from ``root/<class>/*.wav``.

    WAV files directly under ``root`` carry no label and are rejected.
    """
    if not root or not os.path.isdir(root):
        raise ConfigError(f"train.corpus {root!r} is not a directory")
    entries = sorted(os.listdir(root))
    stray = [e for e in entries if e.lower().endswith(".wav")]
    if stray:
        raise ConfigError(f"unlabelled WAV files in {root} (expected <class>/<file>.wav): "
                          + ", ".join(stray[:3]))
    found = [e for e in entries if os.path.isdir(os.path.join(root, e))]
    classes = cfg.train.classes or found
    missing = [c for c in classes if c not in found]
    if missing:
        raise ConfigError(f"class directories not found in {root}: {', '.join(missing)}")
    if len(classes) < 1:
        raise ConfigError(f"no class directories in {root}")
    frame_len, hop = _stft_params(cfg)
    data = []
    for ci, name in enumerate(classes):
        files = sorted((f for f in os.listdir(os.path.join(root, name)) if f.lower().endswith(".wav")),
                       key=_natural_key)
        if not files:
            raise ConfigError(f"class {name!r} has no WAV files")
        label = np.eye(len(classes))[ci]
        for fname in files:
            w = _read_checked(os.path.join(root, name, fname), cfg)
            S = signal_io.stft(w, frame_len, hop, cfg.stft.window).values
            power = np.mean(np.abs(S) ** 2, axis=-1)
            data.append(neural.TrainExample(neural.normalize_power(power), label))
    return data, list(classes)


def cmd_train(cfg):
    data, classes = load_corpus(cfg.train.corpus, cfg)
    tc = neural.TrainConfig(epochs=cfg.train.epochs, lr=cfg.train.lr,
                            batch_frames=cfg.train.batch_frames, latent_dim=cfg.train.latent_dim,
                            hidden=cfg.train.hidden, seed=cfg.seed)
    ckpt = _out_path(cfg, cfg.train.checkpoint) if cfg.train.checkpoint else None
    resume = bool(cfg.train.resume and ckpt and os.path.exists(ckpt))
    weights, log = neural.train_cvae(data, tc, checkpoint=ckpt, resume=resume)
    path = _out_path(cfg, cfg.train.weights)
    weights.save(path, meta={"classes": classes, "seed": cfg.seed})
    _write_json(_out_path(cfg, "train_log.json"), {
        "seed": cfg.seed, "classes": classes, "elbo_per_frame": log, "weights": path,
        "n_examples": len(data), "config": cfg.to_dict(),
    })
    return path


# ------------------------------------------------------------------------ mix

def _bank(cfg, n_freq, n_classes=None):
    bank = mixsim.ClassBank(n_freq=n_freq)
    return bank if n_classes is None else bank.restrict(n_classes)


def write_corpus(cfg, root):
    """Synthetic class-labelled corpus ``root/class<c>/utt<k>.wav``."""
    cc = cfg.mix.corpus
    frame_len, hop = _stft_params(cfg)
    bank = _bank(cfg, frame_len // 2 + 1, cc.n_classes)
    for c in range(cc.n_classes):
        d = os.path.join(root, f"class{c}")
        os.makedirs(d, exist_ok=True)
        for k in range(cc.n_utterances):
            s, _ = mixsim.synth_class_sources(bank, [c], cc.n_frames, _sub_seed(cfg.seed, 1, c, k))
            S = signal_io.Spectrogram(s[0][:, :, None], frame_len, hop, cfg.stft.window,
                                      hop * (cc.n_frames - 1), cfg.stft.sample_rate)
            signal_io.write_wav(os.path.join(d, f"utt{k}.wav"), signal_io.istft(S))


def cmd_mix(cfg):
    m = cfg.mix
    frame_len, hop = _stft_params(cfg)
    F = frame_len // 2 + 1
    if m.corpus is not None:
        write_corpus(cfg, _out_path(cfg, "corpus"))
    if m.sources:
        specs = [signal_io.stft(_read_checked(p, cfg), frame_len, hop, cfg.stft.window)
                 for p in m.sources]
        length = min(s.length for s in specs)
        N = min(s.shape[1] for s in specs)
        s = np.stack([sp.values[:, :N, 0] for sp in specs])
        classes = None
        if len(m.sources) != m.n_sources:
            raise ConfigError(f"mix.sources lists {len(m.sources)} files, n_sources is {m.n_sources}")
    else:
        bank = _bank(cfg, F)
        classes = m.classes if m.classes is not None else [j % bank.n_classes
                                                          for j in range(m.n_sources)]
        if len(classes) != m.n_sources or not all(0 <= c < bank.n_classes for c in classes):
            raise ConfigError(f"mix.classes must list {m.n_sources} class indices "
                              f"below {bank.n_classes}")
        s, _ = mixsim.synth_class_sources(bank, classes, m.n_frames, _sub_seed(cfg.seed, 2))
        length = hop * (m.n_frames - 1)
    try:
        spec = mixsim.MixSpec(m.n_sources, m.n_channels, m.kind, _sub_seed(cfg.seed, 3), m.gains,
                              cfg.stft.sample_rate, m.max_delay)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from exc
    A, info = mixsim.gen_mixing(spec, F)
    x, images = mixsim.mix(s, A)
    paths = mixsim.scenario_paths(cfg.out, m.n_sources)

    def to_wave(values):
        S = signal_io.Spectrogram(values, frame_len, hop, cfg.stft.window, length,
                                  cfg.stft.sample_rate)
        return signal_io.istft(S)

    refs = [to_wave(im) for im in images]
    mixture = signal_io.Waveform(np.sum([r.samples for r in refs], axis=0), cfg.stft.sample_rate)
    signal_io.write_wav(paths["mixture"], mixture)
    for path, r in zip(paths["references"], refs):
        signal_io.write_wav(path, r)
    mixsim.write_manifest(paths["manifest"], spec, info, {
        "seed": cfg.seed, "classes": classes, "sources": m.sources, "stft": cfg.to_dict()["stft"],
        "mixture": paths["mixture"], "references": paths["references"],
    })
    return paths


# ------------------------------------------------------------------- separate

def _model_tensors(model, prefix=""):
    if isinstance(model, NmfShared):
        return {prefix + "b": model.b, prefix + "h": model.h, prefix + "u": model.u}
    if isinstance(model, NmfPerSource):
        return {prefix + "h": model.h, prefix + "u": model.u}
    return {prefix + "z": model.z, prefix + "d": model.d, prefix + "g": model.g}


def save_checkpoint(path, result, cfg):
    """Solver state as a ``checkpoint`` container."""
    key = "W" if result.method == "ilrma" else "R"
    tensors = {key: result.R, "nll": np.asarray(result.trace.nll)}
    tensors.update(_model_tensors(result.model))
    warm = getattr(result, "snapshots", {}).get(cfg.separate.warm_iter)
    if warm is not None:
        tensors["warm/R"] = warm.R
        tensors.update(_model_tensors(warm.model, "warm/"))
    meta = {"method": result.method, "seed": cfg.seed, "n_iter": len(result.trace.nll) - 1,
            "warm_iter": cfg.separate.warm_iter if warm is not None else None}
    container.save(path, tensors, "checkpoint", meta=meta)


def load_warm_start(path, warm_iter):
    """MNMF2 state to start GMVAE from.

    Uses the embedded ``warm/`` snapshot when its iteration count matches,
    otherwise the checkpoint's final state.
    """
    tensors, _, meta = container.load(path, kind="checkpoint")
    if meta.get("method") != "mnmf2":
        raise ConfigError(f"{path}: warm start must come from an mnmf2 run, got {meta.get('method')!r}")
    prefix = "warm/" if meta.get("warm_iter") == warm_iter and "warm/R" in tensors else ""
    model = NmfShared(tensors[prefix + "b"], tensors[prefix + "h"], tensors[prefix + "u"])
    return FitResult(tensors[prefix + "R"], model, SolverTrace(), "mnmf2")


def _trace_doc(result, cfg):
    nll = [float(v) for v in result.trace.nll]
    rel = [(b - a) / max(abs(a), 1e-300) for a, b in zip(nll, nll[1:])]
    doc = {
        "method": result.method, "seed": cfg.seed, "nll": nll,
        "blocks": [[name, float(v)] for name, v in result.trace.block_nll],
        "monotone": all(r <= MONOTONE_TOL for r in rel),
        "max_relative_increase": max(rel) if rel else 0.0,
        "invariant_checks": result.trace.checks, "events": result.trace.events,
    }
    if result.trace.majorizer:
        doc["majorizer"] = [[float(a), float(b)] for a, b in result.trace.majorizer]
    return doc


def cmd_separate(cfg):
    s = cfg.separate
    frame_len, hop = _stft_params(cfg)
    wave = _read_checked(s.mixture, cfg)
    spec = signal_io.stft(wave, frame_len, hop, cfg.stft.window)
    obs = MixtureObservation(spec.values)
    I = obs.shape[2]
    n_iter = s.iterations()
    if s.method == "ilrma":
        if s.n_sources != I:
            raise ConfigError(f"ilrma needs as many sources as channels: n_sources={s.n_sources}, "
                              f"mixture has {I} channel(s); use mnmf1, mnmf2 or gmvae instead")
        res = fit_ilrma(obs, "nmf1", IlrmaConfig(n_bases=s.n_bases, n_iter=n_iter, seed=cfg.seed,
                                                 ref_channel=s.ref_channel))
        images = source_images(obs, res.W)
    elif s.method in ("mnmf1", "mnmf2"):
        kind = "nmf1" if s.method == "mnmf1" else "nmf2"
        snaps = (s.warm_iter,) if kind == "nmf2" and s.warm_iter <= n_iter else ()
        res = fit_mnmf(obs, kind, MnmfConfig(n_sources=s.n_sources, n_bases=s.n_bases,
                                             n_shared_bases=s.n_shared_bases, n_iter=n_iter,
                                             seed=cfg.seed), snapshots=snaps)
        images = reconstruct_sources(obs, res.R, res.model.variance())
    else:
        if not s.weights:
            raise ConfigError("gmvae needs separate.weights (a trained CVAE weight file)")
        weights = neural.CvaeWeights.load(s.weights)
        if weights.n_freq != obs.shape[0]:
            raise ConfigError(f"weights expect {weights.n_freq} bins, mixture STFT has {obs.shape[0]}")
        warm = load_warm_start(s.warm_start, s.warm_iter) if s.warm_start else None
        if warm is not None and warm.R.shape[0] != s.n_sources:
            raise ConfigError(f"warm start has {warm.R.shape[0]} sources, n_sources={s.n_sources}")
        res = fit_gmvae(obs, weights, GmvaeConfig(
            n_sources=s.n_sources, warm_iter=s.warm_iter, n_iter=n_iter,
            latent_steps=s.latent_steps, lr=s.lr, n_bases=s.n_bases, seed=cfg.seed),
            warm_start=warm)
        images = reconstruct_sources(obs, res.R, res.variance(weights))

    outputs = []
    for j, im in enumerate(images):
        path = _out_path(cfg, f"est{j}.wav")
        signal_io.write_wav(path, signal_io.istft(spec.with_values(im)))
        outputs.append(path)
    save_checkpoint(_out_path(cfg, "checkpoint.bin"), res, cfg)
    doc = _trace_doc(res, cfg)
    doc["estimates"] = outputs
    if s.method == "gmvae":
        doc["class_posteriors"] = res.model.classes().tolist()
    _write_json(_out_path(cfg, "trace.json"), doc)
    return outputs


# ----------------------------------------------------------------------- eval

def _wav_list(spec, pattern):
    if isinstance(spec, str):
        if not os.path.isdir(spec):
            raise ConfigError(f"{spec!r} is not a directory")
        files = [os.path.join(spec, f) for f in os.listdir(spec) if re.fullmatch(pattern, f)]
        if not files:
            raise ConfigError(f"no files matching {pattern} in {spec}")
        return sorted(files, key=_natural_key)
    if isinstance(spec, list) and spec:
        return list(spec)
    raise ConfigError("eval items need 'estimates' and 'references' (directory or file list)")


def _load_stack(paths, cfg):
    waves = [_read_checked(p, cfg).samples for p in paths]
    if len({w.shape[0] for w in waves}) != 1:
        raise ConfigError("files within one item have different channel counts")
    T = min(w.shape[1] for w in waves)
    return np.stack([w[:, :T].T for w in waves])


def _eval_item(item, cfg):
    est = _load_stack(_wav_list(item.estimates, r"est\d+\.wav"), cfg)
    ref = _load_stack(_wav_list(item.references, r"ref\d+\.wav"), cfg)
    T = min(est.shape[1], ref.shape[1])
    if est.shape[0] != ref.shape[0]:
        raise ConfigError(f"{est.shape[0]} estimates but {ref.shape[0]} references")
    return evalkit.bss_eval(est[:, :T], ref[:, :T])


def cmd_eval(cfg):
    e = cfg.eval
    if not e.items:
        raise ConfigError("eval.items is empty")
    names = [it.name or f"item{i}" for i, it in enumerate(e.items)]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        reports = list(pool.map(lambda it: _eval_item(it, cfg), e.items))
    label = e.label or cfg.separate.method
    evalkit.write_table(_out_path(cfg, e.table), reports, names)
    evalkit.write_json(_out_path(cfg, e.report), reports, names,
                       extra={"label": label, "seed": cfg.seed})
    evalkit.write_bar_data(_out_path(cfg, e.bars), {label: evalkit.summarize(reports)["average"]})
    return reports


# ----------------------------------------------------------------------- main

COMMANDS = {"train": cmd_train, "mix": cmd_mix, "separate": cmd_separate, "eval": cmd_eval}


def build_parser():
    p = argparse.ArgumentParser(prog="lgmsep", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--method", choices=config_mod.METHODS)
    p.add_argument("--iters", type=int, help="solver iterations (training epochs for train)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = config_mod.load(args.config)
        cfg = config_mod.apply_overrides(cfg, args.seed, args.method, args.iters, args.out,
                                         args.workers)
        os.makedirs(cfg.out, exist_ok=True)
        COMMANDS[args.command](cfg)
    except (ConfigError, InvalidInputError) as exc:
        print(f"lgmsep: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IllConditionedError, SolverDivergenceError, TrainingDivergenceError,
            InvariantViolation, FloatingPointError) as exc:
        print(f"lgmsep: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FormatError) as exc:
        print(f"lgmsep: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
