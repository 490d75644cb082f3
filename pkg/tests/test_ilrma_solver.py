import numpy as np
import pytest

from lgmsep import ilrma_solver as il, mixsim
from lgmsep.ilrma_solver import IlrmaConfig
from lgmsep.mnmf_solver import MixtureObservation

LOG_PI = np.log(np.pi)


def random_obs(seed, F=4, N=20, I=2):
    rng = np.random.default_rng(seed)
    return rng, MixtureObservation(rng.standard_normal((F, N, I)) + 1j * rng.standard_normal((F, N, I)))


def test_nll_constant_only():
    obs = MixtureObservation(np.zeros((2, 3, 2)))
    W = np.tile(np.eye(2, dtype=complex), (2, 1, 1))
    assert il.neg_log_likelihood_det(obs, W, np.ones((2, 2, 3))) == pytest.approx(12 * LOG_PI)


def test_nll_scalar():
    obs = MixtureObservation(np.full((1, 1, 1), 2.0 + 0j))
    W = np.full((1, 1, 1), 0.5 + 0j)
    v = np.full((1, 1, 1), 4.0)
    expect = -2 * np.log(0.5) + np.log(4.0) + 1.0 / 4.0 + LOG_PI
    assert il.neg_log_likelihood_det(obs, W, v) == pytest.approx(expect)


def test_nll_dense_oracle():
    rng, obs = random_obs(0, I=3)
    W = rng.standard_normal((4, 3, 3)) + 1j * rng.standard_normal((4, 3, 3))
    v = rng.uniform(0.5, 2, (3, 4, 20))
    total = 0.0
    for f in range(4):
        total -= 2 * 20 * np.log(abs(np.linalg.det(W[f])))
        for n in range(20):
            y = np.conj(W[f]).T @ obs.X[f, n]
            total += np.sum(np.log(v[:, f, n]) + np.abs(y) ** 2 / v[:, f, n]) + 3 * LOG_PI
    assert il.neg_log_likelihood_det(obs, W, v) == pytest.approx(total, rel=1e-12)


def test_ip_normalization_and_monotone():
    rng, obs = random_obs(1, I=3)
    W = rng.standard_normal((4, 3, 3)) + 1j * rng.standard_normal((4, 3, 3))
    v = rng.uniform(0.5, 2, (3, 4, 20))
    for j in range(3):
        before = il.neg_log_likelihood_det(obs, W, v)
        W = il.ip_update(obs, W, v, j)
        after = il.neg_log_likelihood_det(obs, W, v)
        assert after <= before + 1e-9 * abs(before)
        U = il.weighted_covariance(obs, v[j])
        norm = np.einsum("fa,fab,fb->f", np.conj(W[:, :, j]), U, W[:, :, j]).real
        np.testing.assert_allclose(norm, 1.0, atol=1e-10)


def test_ip_single_frequency_only_touches_that_bin():
    rng, obs = random_obs(2)
    W = np.tile(np.eye(2, dtype=complex), (4, 1, 1))
    v = np.ones((2, 4, 20))
    W2 = il.ip_update(obs, W, v, 0, f=2)
    np.testing.assert_array_equal(np.delete(W2, 2, axis=0), np.delete(W, 2, axis=0))
    assert not np.allclose(W2[2], W[2])


def test_ip_scalar():
    rng, obs = random_obs(3, I=1)
    v = rng.uniform(0.5, 2, (1, 4, 20))
    W = il.ip_update(obs, np.ones((4, 1, 1), complex), v, 0)
    expect = 1.0 / np.sqrt(np.mean(np.abs(obs.X[..., 0]) ** 2 / v[0], axis=1))
    np.testing.assert_allclose(np.abs(W[:, 0, 0]), expect)


def test_ip_fixed_point_on_separable_instance():
    rng = np.random.default_rng(4)
    F, N = 3, 400
    v = rng.uniform(0.2, 3.0, size=(2, F, N))
    s = np.sqrt(v / 2) * (rng.standard_normal((2, F, N)) + 1j * rng.standard_normal((2, F, N)))
    A = rng.standard_normal((F, 2, 2)) + 1j * rng.standard_normal((F, 2, 2))
    obs = MixtureObservation(np.einsum("fij,jfn->fni", A, s))
    # start at the true demixing and let IP settle on the sample optimum
    W = np.conj(np.swapaxes(np.linalg.inv(A), 1, 2))
    for _ in range(100):
        for j in range(2):
            W = il.ip_update(obs, W, v, j)
    W2 = W
    for j in range(2):
        W2 = il.ip_update(obs, W2, v, j)
    ratio = np.einsum("fij,fij->fj", np.conj(W), W2) / np.linalg.norm(W, axis=1) / np.linalg.norm(W2, axis=1)
    np.testing.assert_allclose(np.abs(ratio), 1.0, atol=1e-10)
    # and that optimum still separates: W^H A is close to diagonal
    G = np.abs(np.conj(np.swapaxes(W, 1, 2)) @ A)
    assert np.all(G[:, 0, 1] < 0.2 * G[:, 0, 0]) and np.all(G[:, 1, 0] < 0.2 * G[:, 1, 1])


def test_project_back_reconstructs_reference():
    rng, obs = random_obs(5, I=3)
    W = rng.standard_normal((4, 3, 3)) + 1j * rng.standard_normal((4, 3, 3))
    y = il.demix(obs, W)
    for ref in range(3):
        proj = il.project_back(y, W, ref)
        assert np.max(np.abs(proj.sum(axis=0) - obs.X[..., ref])) <= 1e-9
    images = il.source_images(obs, W)
    assert np.max(np.abs(images.sum(axis=0) - obs.X)) <= 1e-9


def test_project_back_trivial_cases():
    rng, obs = random_obs(6, I=1)
    y = il.demix(obs, np.ones((4, 1, 1), complex))
    np.testing.assert_allclose(il.project_back(y, np.ones((4, 1, 1), complex)), y)
    W = np.tile(np.diag([2.0, 4.0]).astype(complex), (4, 1, 1))
    y = np.ones((2, 4, 5), complex)
    np.testing.assert_allclose(il.project_back(y, W, 0)[0], 0.5)
    np.testing.assert_allclose(il.project_back(y, W, 0)[1], 0.0)


@pytest.mark.parametrize("kind", ["nmf1", "nmf2"])
def test_fit_monotone_and_deterministic(kind):
    _, obs = random_obs(7, F=8, N=16)
    cfg = IlrmaConfig(n_bases=2, n_iter=25, seed=3)
    a = il.fit_ilrma(obs, kind, cfg)
    b = il.fit_ilrma(obs, kind, cfg)
    nll = np.array(a.trace.nll)
    assert np.all(np.diff(nll) <= 1e-7 * np.abs(nll[:-1]))
    blocks = np.array([v for _, v in a.trace.block_nll])
    assert np.all(np.diff(blocks) <= 1e-7 * np.abs(blocks[:-1]))
    assert a.trace.nll == b.trace.nll


def test_fit_separates_instantaneous_mixture():
    s, _ = mixsim.synth_nmf_sources(3, 33, 150, 0, n_sources=2)
    A, _ = mixsim.gen_mixing(mixsim.MixSpec(2, 2, "instantaneous", 0), 33)
    x, images = mixsim.mix(s, A)
    res = il.fit_ilrma(x, "nmf1", IlrmaConfig(n_bases=3, n_iter=60))
    est = il.source_images(MixtureObservation(x), res.W)
    # match estimates to references by energy of the error
    err = [[np.sum(np.abs(est[i] - images[j]) ** 2) for i in range(2)] for j in range(2)]
    perm = [0, 1] if err[0][0] + err[1][1] < err[0][1] + err[1][0] else [1, 0]
    sdr = [10 * np.log10(np.sum(np.abs(images[j]) ** 2) / err[j][perm[j]]) for j in range(2)]
    assert min(sdr) > 10.0
