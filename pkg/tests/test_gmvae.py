import numpy as np
import pytest

from lgmsep import mixsim, neural
from lgmsep import mnmf_solver as ms
from lgmsep.errors import InvalidInputError
from lgmsep.evalkit import best_permutation
from lgmsep.mnmf_solver import GmvaeConfig, MixtureObservation, MnmfConfig


@pytest.fixture(scope="module")
def small_case():
    rng = np.random.default_rng(0)
    w = neural.CvaeWeights.init(8, 2, 3, 8, rng)
    X = rng.standard_normal((8, 12, 2)) + 1j * rng.standard_normal((8, 12, 2))
    obs = MixtureObservation(X)
    warm = ms.fit_mnmf(obs, "nmf2", MnmfConfig(n_sources=3, n_bases=2, n_iter=5, seed=1))
    return w, obs, warm


def run(small_case, **kw):
    w, obs, warm = small_case
    cfg = GmvaeConfig(n_sources=3, n_iter=kw.pop("n_iter", 8), seed=2, **kw)
    return ms.fit_gmvae(obs, w, cfg, warm_start=warm)


def test_majorizer_and_nll_never_increase(small_case):
    res = run(small_case)
    for before, after in res.trace.majorizer:
        assert after <= before
    nll = np.array(res.trace.nll)
    assert np.all(np.diff(nll) <= 1e-7 * np.abs(nll[:-1]))
    blocks = np.array([v for _, v in res.trace.block_nll])
    assert np.all(np.diff(blocks) <= 1e-7 * np.abs(blocks[:-1]))


def test_invariants_checked_every_iteration(small_case):
    res = run(small_case, n_iter=4)
    assert res.trace.checks == 4
    np.testing.assert_allclose(res.model.classes().sum(axis=1), 1.0, atol=1e-12)
    assert np.all(res.model.g > 0)
    assert np.all(res.variance(small_case[0]) > 0)


def test_deterministic(small_case):
    a, b = run(small_case, n_iter=3), run(small_case, n_iter=3)
    assert a.trace.nll == b.trace.nll
    np.testing.assert_array_equal(a.model.z, b.model.z)


def test_initialization(small_case):
    w, obs, warm = small_case
    p = ms.init_vae_params(obs, warm.R, warm.variance(), w)
    assert p.z.shape == (3, 3, 12)
    np.testing.assert_array_equal(p.d, 0.0)
    np.testing.assert_array_equal(p.g, 1.0)


def test_runs_its_own_warm_start(small_case):
    w, obs, _ = small_case
    res = ms.fit_gmvae(obs, w, GmvaeConfig(n_sources=2, warm_iter=3, n_iter=2, n_bases=2))
    assert res.warm_start.method == "mnmf2" and len(res.warm_start.trace.nll) == 4


def test_rejects_mismatched_decoder(small_case):
    _, obs, warm = small_case
    w = neural.CvaeWeights.init(5, 2, 3, 8, np.random.default_rng(0))
    with pytest.raises(InvalidInputError):
        ms.fit_gmvae(obs, w, GmvaeConfig(n_sources=3, n_iter=1), warm_start=warm)


def test_wiener_images_sum_to_mixture(small_case):
    w, obs, _ = small_case
    res = run(small_case, n_iter=2)
    images = ms.reconstruct_sources(obs, res.R, res.variance(w))
    assert np.max(np.abs(images.sum(axis=0) - obs.X)) <= 1e-9


def test_two_class_identification():
    """Class posteriors on 3-source mixtures drawn from two trained classes.

    Over five mixtures, at least 80% of sources put >= 0.8 posterior mass
    on their true class.
    """
    bank = mixsim.ClassBank(n_freq=65).restrict(2)
    data = []
    for c in range(2):
        for u in range(20):
            s, _ = mixsim.synth_class_sources(bank, [c], 60, seed=100 * c + u)
            data.append(neural.TrainExample(neural.normalize_power(np.abs(s[0]) ** 2), np.eye(2)[c]))
    w, _ = neural.train_cvae(data, neural.TrainConfig(epochs=200, lr=2e-3, hidden=64, latent_dim=4))
    classes = [0, 1, 1]
    confident = []
    for seed in range(5):
        s, _ = mixsim.synth_class_sources(bank, classes, 100, seed=seed)
        A, _ = mixsim.gen_mixing(mixsim.MixSpec(3, 2, "anechoic", seed), 65)
        x, images = mixsim.mix(s, A)
        obs = MixtureObservation(x)
        res = ms.fit_gmvae(obs, w, GmvaeConfig(n_sources=3, warm_iter=100, n_iter=60, seed=seed))
        est = ms.reconstruct_sources(obs, res.R, res.variance(w))
        err = np.array([[np.sum(np.abs(est[i] - images[j]) ** 2) for i in range(3)] for j in range(3)])
        perm = best_permutation(-err)
        post = res.model.classes()
        confident += [post[perm[j], c] >= 0.8 for j, c in enumerate(classes)]
    assert np.mean(confident) >= 0.8
