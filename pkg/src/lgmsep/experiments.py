"""Desk-scale separation benchmarks on synthetic ground truth.

Two scenarios are provided:

* ``determined``: 2x2 instantaneous mixtures of random-NMF sources,
  separated by ILRMA and MNMF1; scored by SI-SDR improvement.
* ``underdetermined``: 3 sources of distinct spectral classes on 2
  microphones with inter-microphone delays; a CVAE is trained on the
  classes, MNMF2 is the baseline and GMVAE is warm-started from the
  baseline's 200-iteration state.

Both return JSON-ready documents containing only seed-determined values
(no timings), so two runs with the same arguments serialize to identical
bytes.  Run ``python3 -m lgmsep.experiments determined`` to print a report.
"""
import json
import sys
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import evalkit, mixsim, neural, signal_io
from .ilrma_solver import IlrmaConfig, fit_ilrma, source_images
from .mnmf_solver import (
    GmvaeConfig, MixtureObservation, MnmfConfig, fit_gmvae, fit_mnmf, reconstruct_sources,
)

FRAME_LEN = 256
HOP = 128


def to_waveform(values, frame_len=FRAME_LEN, hop=HOP):
    """Channel-0 waveform of an (F, N, I) one-sided spectrogram."""
    N = values.shape[1]
    S = signal_io.Spectrogram(values, frame_len, hop, "sqrt_hann", hop * (N - 1))
    return signal_io.istft(S).samples[0]


def score_images(est_images, ref_images, mixture=None):
    """SI-SDR per reference after permutation resolution.

    Returns ``(scores, permutation, improvements)``; improvements are
    relative to the mixture's SI-SDR and are ``None`` without a mixture.
    """
    est = [to_waveform(im) for im in est_images]
    ref = [to_waveform(im) for im in ref_images]
    perm = evalkit.resolve_permutation(est, ref)
    scores = [evalkit.si_sdr(est[perm[j]], ref[j]) for j in range(len(ref))]
    if mixture is None:
        return scores, perm, None
    mix_w = to_waveform(mixture)
    gains = [scores[j] - evalkit.si_sdr(mix_w, ref[j]) for j in range(len(ref))]
    return scores, perm, gains


def partition_error(images, mixture):
    """Largest deviation of the summed source images from the mixture."""
    return float(np.max(np.abs(np.sum(images, axis=0) - mixture)))


def dumps(doc):
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- determined

@dataclass
class DeterminedSetup:
    n_freq: int = 129
    n_frames: int = 200
    n_true_bases: int = 4
    n_bases: int = 8
    ilrma_iter: int = 100
    mnmf_iter: int = 300


def determined_mixture(seed, setup):
    s, _ = mixsim.synth_nmf_sources(setup.n_true_bases, setup.n_freq, setup.n_frames, seed,
                                    n_sources=2)
    A, _ = mixsim.gen_mixing(mixsim.MixSpec(2, 2, "instantaneous", seed), setup.n_freq)
    return mixsim.mix(s, A)


def run_determined(seeds=range(10), setup=None, log=None):
    """ILRMA and MNMF1 on 2x2 instantaneous mixtures, one per seed."""
    setup = setup or DeterminedSetup()
    items, checks, partition = [], 0, 0.0
    for seed in seeds:
        t0 = time.perf_counter()
        x, images = determined_mixture(seed, setup)
        obs = MixtureObservation(x)
        ilrma = fit_ilrma(obs, "nmf1", IlrmaConfig(n_bases=setup.n_bases, n_iter=setup.ilrma_iter,
                                                    seed=seed))
        sep_i = source_images(obs, ilrma.W)
        _, perm_i, gain_i = score_images(sep_i, images, x)
        mnmf = fit_mnmf(obs, "nmf1", MnmfConfig(n_sources=2, n_bases=setup.n_bases,
                                                n_iter=setup.mnmf_iter, seed=seed))
        parts = reconstruct_sources(obs, mnmf.R, mnmf.model.variance())
        _, perm_m, gain_m = score_images(parts, images, x)
        checks += ilrma.trace.checks + mnmf.trace.checks
        partition = max(partition, partition_error(sep_i, x), partition_error(parts, x))
        items.append({
            "seed": int(seed),
            "ilrma": {"improvement": gain_i, "mean": float(np.mean(gain_i)), "permutation": perm_i,
                      "final_nll": ilrma.trace.nll[-1]},
            "mnmf1": {"improvement": gain_m, "mean": float(np.mean(gain_m)), "permutation": perm_m,
                      "final_nll": mnmf.trace.nll[-1]},
        })
        if log:
            log(f"seed {seed}: ilrma {np.mean(gain_i):+.2f} dB, mnmf1 {np.mean(gain_m):+.2f} dB "
                f"({time.perf_counter() - t0:.1f} s)")
    return {"scenario": "determined", "setup": asdict(setup), "items": items,
            "invariant_checks": checks, "max_partition_error": partition}


# ----------------------------------------------------------- underdetermined

@dataclass
class UnderdeterminedSetup:
    n_classes: int = 3
    n_frames: int = 100
    train_utterances: int = 30
    train_frames: int = 100
    train_epochs: int = 200
    train_seed: int = 0
    baseline_iter: int = 300
    warm_iter: int = 200
    gmvae_iter: int = 100
    mix_seed: int = 5000


def class_training_set(bank, setup):
    data = []
    for c in range(bank.n_classes):
        for u in range(setup.train_utterances):
            s, _ = mixsim.synth_class_sources(bank, [c], setup.train_frames, seed=1000 * c + u)
            data.append(neural.TrainExample(neural.normalize_power(np.abs(s[0]) ** 2),
                                            np.eye(bank.n_classes)[c]))
    return data


def underdetermined_mixture(bank, seed, n_frames):
    classes = list(range(bank.n_classes))[:3]
    s, _ = mixsim.synth_class_sources(bank, classes, n_frames, seed)
    A, _ = mixsim.gen_mixing(mixsim.MixSpec(len(classes), 2, "anechoic", seed), bank.n_freq)
    x, images = mixsim.mix(s, A)
    return x, images, classes


def train_class_cvae(setup, log=None):
    bank = mixsim.ClassBank().restrict(setup.n_classes)
    data = class_training_set(bank, setup)
    weights, elbo_log = neural.train_cvae(
        data, neural.TrainConfig(epochs=setup.train_epochs, seed=setup.train_seed))
    if log:
        log(f"cvae: ELBO/frame {elbo_log[0]:.2f} -> {elbo_log[-1]:.2f}")
    return weights, elbo_log


def run_underdetermined(n_mixtures=10, setup=None, weights=None, log=None):
    """MNMF2 baseline against GMVAE warm-started from it."""
    setup = setup or UnderdeterminedSetup()
    bank = mixsim.ClassBank().restrict(setup.n_classes)
    elbo_log = None
    if weights is None:
        weights, elbo_log = train_class_cvae(setup, log)
    items, checks, partition = [], 0, 0.0
    for m in range(n_mixtures):
        t0 = time.perf_counter()
        seed = setup.mix_seed + m
        x, images, classes = underdetermined_mixture(bank, seed, setup.n_frames)
        obs = MixtureObservation(x)
        J = len(classes)
        base = fit_mnmf(obs, "nmf2", MnmfConfig(n_sources=J, n_iter=setup.baseline_iter, seed=seed),
                        snapshots=(setup.warm_iter,))
        parts_b = reconstruct_sources(obs, base.R, base.model.variance())
        s_base, perm_b, _ = score_images(parts_b, images)
        warm = base.snapshots[setup.warm_iter]
        res = fit_gmvae(obs, weights, GmvaeConfig(n_sources=J, n_iter=setup.gmvae_iter, seed=seed),
                        warm_start=warm)
        parts_g = reconstruct_sources(obs, res.R, res.variance(weights))
        s_gm, perm_g, _ = score_images(parts_g, images)
        partition = max(partition, partition_error(parts_b, x), partition_error(parts_g, x))
        post = res.model.classes()
        predicted = [int(np.argmax(post[perm_g[j]])) for j in range(J)]
        checks += base.trace.checks + res.trace.checks
        items.append({
            "seed": seed, "classes": classes, "predicted": predicted,
            "posteriors": [post[perm_g[j]].tolist() for j in range(J)],
            "mnmf2": {"si_sdr": s_base, "mean": float(np.mean(s_base)), "permutation": perm_b},
            "gmvae": {"si_sdr": s_gm, "mean": float(np.mean(s_gm)), "permutation": perm_g,
                      "final_nll": res.trace.nll[-1]},
        })
        if log:
            log(f"mixture {m}: mnmf2 {np.mean(s_base):+.2f} dB, gmvae {np.mean(s_gm):+.2f} dB, "
                f"classes {predicted} ({time.perf_counter() - t0:.1f} s)")
    n_src = sum(len(it["classes"]) for it in items)
    hits = sum(int(a == b) for it in items for a, b in zip(it["classes"], it["predicted"]))
    doc = {
        "scenario": "underdetermined", "setup": asdict(setup), "items": items,
        "mnmf2_mean": float(np.mean([it["mnmf2"]["mean"] for it in items])),
        "gmvae_mean": float(np.mean([it["gmvae"]["mean"] for it in items])),
        "class_accuracy": hits / n_src, "invariant_checks": checks,
        "max_partition_error": partition,
    }
    if elbo_log is not None:
        doc["train_elbo"] = [float(e) for e in elbo_log]
    return doc


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    which = argv[0] if argv else "determined"
    n = int(argv[1]) if len(argv) > 1 else 10
    if which == "determined":
        doc = run_determined(range(n))
    elif which == "underdetermined":
        doc = run_underdetermined(n)
    else:
        print(f"unknown scenario {which!r}", file=sys.stderr)
        return 2
    sys.stdout.write(dumps(doc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
