"""End-to-end runs of the command-line pipeline at a tiny scale."""
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from lgmsep import cli, container, signal_io

SMALL = {"frame_ms": 16, "hop_ms": 8}


def write_cfg(path, doc):
    doc = dict(doc)
    doc.setdefault("stft", SMALL)
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    mixdir = root / "mix"
    cfg = write_cfg(root / "run.json", {
        "seed": 5, "out": str(mixdir),
        "mix": {"n_frames": 60, "classes": [0, 1, 1],
                "corpus": {"n_classes": 2, "n_utterances": 3, "n_frames": 30}},
        "train": {"corpus": str(mixdir / "corpus"), "epochs": 3, "hidden": 8, "latent_dim": 2,
                  "checkpoint": "train_ckpt.bin"},
        "separate": {"mixture": str(mixdir / "mixture.wav"), "n_bases": 2, "n_iter": 6,
                     "warm_iter": 4, "latent_steps": 2},
    })
    assert cli.main(["mix", "--config", cfg]) == 0
    assert cli.main(["train", "--config", cfg, "--out", str(root / "model")]) == 0
    assert cli.main(["separate", "--config", cfg, "--method", "mnmf2", "--out", str(root / "sep2")]) == 0
    return root, cfg


def test_mix_outputs(pipeline):
    root, _ = pipeline
    man = json.loads((root / "mix" / "manifest.json").read_text())
    assert man["seed"] == 5 and man["classes"] == [0, 1, 1] and man["spec"]["n_channels"] == 2
    mixture = signal_io.read_wav(root / "mix" / "mixture.wav")
    refs = [signal_io.read_wav(root / "mix" / f"ref{j}.wav").samples for j in range(3)]
    assert mixture.channels == 2
    np.testing.assert_allclose(sum(refs), mixture.samples, atol=1e-6)
    assert sorted(os.listdir(root / "mix" / "corpus")) == ["class0", "class1"]


def test_mix_is_seed_deterministic(pipeline, tmp_path):
    root, cfg = pipeline
    assert cli.main(["mix", "--config", cfg, "--out", str(tmp_path / "again")]) == 0
    for name in ("mixture.wav", "ref0.wav", "manifest.json"):
        a = (root / "mix" / name).read_bytes()
        b = (tmp_path / "again" / name).read_bytes()
        if name == "manifest.json":
            a = a.replace(str(root / "mix").encode(), b"")
            b = b.replace(str(tmp_path / "again").encode(), b"")
        assert a == b
    assert cli.main(["mix", "--config", cfg, "--seed", "6", "--out", str(tmp_path / "other")]) == 0
    assert (tmp_path / "other" / "mixture.wav").read_bytes() != (root / "mix" / "mixture.wav").read_bytes()


def test_determined_scenario_and_ilrma(pipeline, tmp_path):
    root, cfg = pipeline
    det = write_cfg(tmp_path / "det.json", {
        "seed": 2, "out": str(tmp_path),
        "mix": {"n_sources": 2, "n_channels": 2, "kind": "instantaneous", "n_frames": 50},
        "separate": {"mixture": str(tmp_path / "mixture.wav"), "method": "ilrma", "n_sources": 2,
                     "n_bases": 2, "n_iter": 5},
    })
    assert cli.main(["mix", "--config", det]) == 0
    assert cli.main(["separate", "--config", det, "--out", str(tmp_path / "sep")]) == 0
    trace = json.loads((tmp_path / "sep" / "trace.json").read_text())
    assert trace["method"] == "ilrma" and trace["monotone"]
    tensors, _, meta = container.load(tmp_path / "sep" / "checkpoint.bin", kind="checkpoint")
    assert "W" in tensors and meta["method"] == "ilrma"


def test_train_outputs_and_resume(pipeline, tmp_path):
    root, cfg = pipeline
    log = json.loads((root / "model" / "train_log.json").read_text())
    assert log["classes"] == ["class0", "class1"] and len(log["elbo_per_frame"]) == 3
    # an interrupted run (2 epochs) resumed to 3 epochs matches the straight run
    doc = json.loads(open(cfg).read())
    doc["train"]["resume"] = True
    resumed = write_cfg(tmp_path / "resume.json", doc)
    assert cli.main(["train", "--config", cfg, "--iters", "2", "--out", str(tmp_path)]) == 0
    assert cli.main(["train", "--config", resumed, "--out", str(tmp_path)]) == 0
    a = container.load(root / "model" / "cvae.bin")[0]
    b = container.load(tmp_path / "cvae.bin")[0]
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def test_train_rejects_unlabelled_files(pipeline, tmp_path):
    root, _ = pipeline
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    signal_io.write_wav(corpus / "loose.wav", signal_io.Waveform(np.zeros(800), 16000))
    cfg = write_cfg(tmp_path / "c.json", {"train": {"corpus": str(corpus)}, "out": str(tmp_path)})
    assert cli.main(["train", "--config", cfg]) == 2
    cfg = write_cfg(tmp_path / "d.json", {"train": {"corpus": str(root / "mix" / "corpus"),
                                                    "classes": ["class0", "class7"]},
                                          "out": str(tmp_path)})
    assert cli.main(["train", "--config", cfg]) == 2


def test_separate_mnmf2_outputs(pipeline):
    root, _ = pipeline
    trace = json.loads((root / "sep2" / "trace.json").read_text())
    assert trace["monotone"] and len(trace["nll"]) == 7 and trace["seed"] == 5
    assert all(b <= a * (1 + 1e-7) for a, b in zip(trace["nll"], trace["nll"][1:]))
    tensors, _, meta = container.load(root / "sep2" / "checkpoint.bin", kind="checkpoint")
    assert meta["warm_iter"] == 4 and "warm/R" in tensors and "b" in tensors
    est = [signal_io.read_wav(root / "sep2" / f"est{j}.wav").samples for j in range(3)]
    mixture = signal_io.read_wav(root / "mix" / "mixture.wav").samples
    np.testing.assert_allclose(sum(est), mixture, atol=1e-5)


def test_gmvae_uses_mnmf2_checkpoint(pipeline, tmp_path):
    root, cfg = pipeline
    doc = json.loads(open(cfg).read())
    doc["separate"].update(weights=str(root / "model" / "cvae.bin"),
                           warm_start=str(root / "sep2" / "checkpoint.bin"))
    gm = write_cfg(tmp_path / "gm.json", doc)
    assert cli.main(["separate", "--config", gm, "--method", "gmvae", "--iters", "2",
                     "--out", str(tmp_path)]) == 0
    trace = json.loads((tmp_path / "trace.json").read_text())
    assert trace["method"] == "gmvae" and trace["monotone"]
    post = np.array(trace["class_posteriors"])
    np.testing.assert_allclose(post.sum(axis=1), 1.0)
    assert all(b <= a for a, b in trace["majorizer"])
    # a gmvae checkpoint cannot be used as a warm start
    doc["separate"]["warm_start"] = str(tmp_path / "checkpoint.bin")
    bad = write_cfg(tmp_path / "bad.json", doc)
    assert cli.main(["separate", "--config", bad, "--method", "gmvae", "--out", str(tmp_path / "x")]) == 2


def test_gmvae_needs_weights(pipeline, tmp_path):
    _, cfg = pipeline
    assert cli.main(["separate", "--config", cfg, "--method", "gmvae", "--out", str(tmp_path)]) == 2


def test_ilrma_rejected_for_underdetermined(pipeline, tmp_path, capsys):
    _, cfg = pipeline
    assert cli.main(["separate", "--config", cfg, "--method", "ilrma", "--out", str(tmp_path)]) == 2
    assert "as many sources as channels" in capsys.readouterr().err


def test_eval_reports(pipeline, tmp_path):
    root, _ = pipeline
    cfg = write_cfg(tmp_path / "e.json", {
        "out": str(tmp_path), "eval": {"label": "mnmf2", "items": [
            {"name": "ideal", "estimates": [str(root / "mix" / f"ref{j}.wav") for j in range(3)],
             "references": str(root / "mix")},
            {"name": "sep", "estimates": str(root / "sep2"), "references": str(root / "mix")}]},
    })
    assert cli.main(["eval", "--config", cfg, "--workers", "2"]) == 0
    doc = json.loads((tmp_path / "metrics.json").read_text())
    ideal = doc["items"][0]
    assert ideal["sdr"] == [60.0, 60.0, 60.0] and ideal["permutation"] == [0, 1, 2]
    means = [np.mean(it["sdr"]) for it in doc["items"]]
    assert doc["average"]["sdr"] == pytest.approx(np.mean(means))
    first = (tmp_path / "metrics.json").read_bytes()
    assert cli.main(["eval", "--config", cfg]) == 0
    assert (tmp_path / "metrics.json").read_bytes() == first
    assert (tmp_path / "bars.tsv").read_text().splitlines()[1].startswith("mnmf2\t")
    assert len((tmp_path / "metrics.tsv").read_text().splitlines()) == 7


def test_exit_codes(tmp_path):
    signal_io.write_wav(tmp_path / "zero.wav", signal_io.Waveform(np.zeros((2, 1600)), 16000))
    cfg = write_cfg(tmp_path / "z.json", {"out": str(tmp_path),
                                          "separate": {"mixture": str(tmp_path / "zero.wav"), "n_iter": 2}})
    assert cli.main(["separate", "--config", cfg]) == 3
    cfg = write_cfg(tmp_path / "m.json", {"out": str(tmp_path),
                                          "separate": {"mixture": str(tmp_path / "missing.wav")}})
    assert cli.main(["separate", "--config", cfg]) == 4
    (tmp_path / "bad.json").write_text('{"unknown": 1}')
    assert cli.main(["mix", "--config", str(tmp_path / "bad.json")]) == 2
    (tmp_path / "broken.wav").write_bytes(b"RIFF\x00\x00")
    cfg = write_cfg(tmp_path / "b.json", {"out": str(tmp_path),
                                          "separate": {"mixture": str(tmp_path / "broken.wav")}})
    assert cli.main(["separate", "--config", cfg]) == 4
    cfg = write_cfg(tmp_path / "r.json", {"out": str(tmp_path), "stft": {"frame_ms": 16, "hop_ms": 8,
                                                                          "sample_rate": 8000},
                                          "separate": {"mixture": str(tmp_path / "zero.wav")}})
    assert cli.main(["separate", "--config", cfg]) == 2


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "lgmsep.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "separate" in out.stdout
