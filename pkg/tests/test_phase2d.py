import numpy as np
import pytest

from mtdetect.acc import AccumulatorState, accumulate_2d, finalize
from mtdetect.core import AutocorrSet, MixtureModel, Signal
from mtdetect.forward import signal_ac
from mtdetect.phase2d import (align_2d, extract_image_ac2, fourier_magnitudes, image_ac2, occupancy_density,
                              rrr_multi, rrr_phase_retrieval, symmetrize)
from mtdetect.synth import synth_2d


def mean_zero_image(W, seed):
    img = np.random.default_rng(seed).standard_normal((W, W))
    return img - img.mean()


def test_extract_identity_and_delta():
    img = mean_zero_image(5, 0)
    ac = signal_ac(img, order=2)
    np.testing.assert_array_equal(extract_image_ac2(ac, 1.0, 0.0), ac.a2)
    delta = np.zeros((5, 5))
    delta[2, 2] = 1.0
    grid = extract_image_ac2(signal_ac(delta, order=2), 1.0, 0.0)
    expect = np.zeros((9, 9))
    expect[4, 4] = 1 / 25
    np.testing.assert_allclose(grid, expect, atol=1e-15)
    with pytest.raises(ValueError):
        extract_image_ac2(signal_ac(np.ones(3)), 1.0, 0.0)


def test_image_autocorrelation_is_centrosymmetric():
    g = image_ac2(mean_zero_image(7, 1))
    np.testing.assert_allclose(g, g[::-1, ::-1], atol=1e-13)
    np.testing.assert_array_equal(symmetrize(g), symmetrize(g)[::-1, ::-1])


def test_sampled_extraction_matches_oracle():
    L, H, n_obs, sigma, M = 20, 200, 1000, 1.0, 5
    img = mean_zero_image(L, 2)
    model = MixtureModel.from_pi([Signal(img)], occupancy_density(M, L, (H, H)), noise_sigma=sigma)
    grids = []
    for j in range(n_obs):
        obs = synth_2d(model, H, H, M, seed=[3, j], fixed_count=True)
        ac = finalize(accumulate_2d(AccumulatorState.empty(L, order=2, dim=2), obs.image()))
        grids.append(extract_image_ac2(ac, occupancy_density(M, L, (H, H)), sigma))
    grids = np.array(grids)
    se = grids.std(axis=0, ddof=1) / np.sqrt(n_obs)
    assert np.all(np.abs(grids.mean(axis=0) - image_ac2(img)) <= 5 * se)


def test_power_spectrum_nonnegative_and_clamped():
    W = 6
    g = image_ac2(mean_zero_image(W, 3))
    mag, clamped = fourier_magnitudes(g, W)
    assert clamped == 0 and mag[0, 0] == 0 and np.all(mag >= 0)
    noisy = g.copy()
    noisy[W - 1, W - 1] *= 0.9  # lowers every power bin, pushing the empty ones negative
    mag, clamped = fourier_magnitudes(noisy, W)
    assert clamped > 0 and np.all(mag >= 0)
    with pytest.raises(ValueError):
        fourier_magnitudes(g, W + 1)


def test_align_2d_examples():
    x = mean_zero_image(6, 4)
    assert align_2d(x, x) == (0.0, (1, False))
    err, sym = align_2d(-x[::-1, ::-1], x)
    assert err == 0.0 and sym == (-1, True)
    eps = 1e-4 * np.random.default_rng(1).standard_normal(x.shape)
    assert align_2d(x + eps, x)[0] == pytest.approx(np.linalg.norm(eps) / np.linalg.norm(x), rel=1e-10)
    with pytest.raises(ValueError):
        align_2d(x, x[:5, :5])


def test_rrr_recovers_delta():
    d = np.zeros((4, 4))
    d[0, 0] = 1.0
    res = rrr_phase_retrieval(image_ac2(d), 4, mean_zero=False, max_iter=5000)
    assert res.residual < 1e-4
    # a point mass is only fixed up to position inside the window
    assert np.sum(np.abs(res.image) > 0.5) == 1 and np.abs(res.image).max() == pytest.approx(1.0, abs=1e-2)


def test_rrr_exact_20x20():
    W = 20
    x = mean_zero_image(W, 5)
    target = image_ac2(x)
    res = rrr_multi(target, W, range(10), max_iter=10_000)
    err, _ = align_2d(res.image, x)
    assert err < 1e-3
    assert res.converged and res.warning is None
    # a reported fixed point reproduces the target autocorrelation
    rel = np.linalg.norm(image_ac2(res.image) - target) / np.linalg.norm(target)
    assert rel <= 10 * max(res.residual, 1e-9)


def test_rrr_is_reflection_equivariant():
    W = 12
    x = mean_zero_image(W, 6)
    res = rrr_multi(image_ac2(x[::-1, ::-1]), W, range(10), max_iter=10_000)
    assert align_2d(res.image, x)[0] < 1e-3


def test_rrr_warns_without_convergence():
    res = rrr_phase_retrieval(image_ac2(mean_zero_image(10, 7)), 10, max_iter=5, seed=1)
    assert not res.converged and "no convergence" in res.warning
    assert res.trace.shape[1] == 2
    with pytest.raises(ValueError):
        rrr_phase_retrieval(image_ac2(mean_zero_image(4, 0)), 4, beta=0.0)


def test_rrr_deterministic():
    g = image_ac2(mean_zero_image(8, 8))
    a = rrr_phase_retrieval(g, 8, seed=3, max_iter=300)
    b = rrr_phase_retrieval(g, 8, seed=3, max_iter=300)
    np.testing.assert_array_equal(a.image, b.image)
