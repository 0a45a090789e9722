import numpy as np
import pytest
from hypothesis import given, strategies as st

from mtdetect.acc import accumulate_checkpoints
from mtdetect.core import POISSON, SEPARATED, AutocorrSet, MixtureModel, Signal
from mtdetect.eval import aligned_error, loglog_slope
from mtdetect.forward import forward, signal_ac
from mtdetect.homo import (DegenerateMoments, gamma_from_sigma, poisson_gamma_terms, recover_signal_direct,
                           solve_gamma_sigma_separated, solve_homo_separated, solve_poisson_explicit)
from mtdetect.synth import synth_poisson, synth_well_separated


def bounded_signal(rng, L, low=0.1):
    x = rng.standard_normal(L)
    for i in (0, L - 1):
        while abs(x[i]) <= low:
            x[i] = rng.standard_normal()
    return x


def observed(x, gamma, sigma, kind=SEPARATED):
    return forward(signal_ac(x), gamma, sigma, kind).ac


def test_direct_hand_example():
    ac = signal_ac([1.0, 2.0, 3.0])
    assert ac.a2[2] == pytest.approx(1.0)
    np.testing.assert_allclose([ac.a3_at(2, k) for k in range(3)], [1.0, 2.0, 3.0])
    np.testing.assert_allclose(recover_signal_direct(ac).values, [1.0, 2.0, 3.0], rtol=1e-14)


def test_direct_shrinks_on_vanishing_endpoint():
    c = 2.5
    ac = signal_ac([0.0, 0.0, 0.0, c])
    assert ac.a2[3] == 0
    np.testing.assert_allclose(recover_signal_direct(ac).values, [c])
    ac = signal_ac([0.0, 1.0, -2.0, 0.0, 0.0])
    np.testing.assert_allclose(recover_signal_direct(ac).values, [1.0, -2.0], rtol=1e-14)
    with pytest.raises(DegenerateMoments):
        recover_signal_direct(signal_ac(np.zeros(4)))


def test_direct_random_signal_l10(rng):
    x = bounded_signal(rng, 10)
    np.testing.assert_allclose(recover_signal_direct(signal_ac(x)).values, x, rtol=1e-10, atol=1e-12)


@given(st.integers(0, 10**6), st.floats(0.1, 10))
def test_direct_is_scale_equivariant(seed, c):
    x = bounded_signal(np.random.default_rng(seed), 6)
    ac = signal_ac(c * x)
    np.testing.assert_allclose(recover_signal_direct(ac).values, c * x, rtol=1e-9)
    # a common positive factor on both inputs cancels as well
    np.testing.assert_allclose(recover_signal_direct(0.3 * ac.a2, 0.3 * ac.a3).values, c * x, rtol=1e-9)


def test_gamma_from_sigma_hand_example():
    ac = AutocorrSet(a1=0.4, a2=[1.4, 0.2])
    assert gamma_from_sigma(ac, 1.0) == pytest.approx(2 * 0.16 / (1.4 + 0.4 - 1))
    assert gamma_from_sigma(ac, 1.0) == pytest.approx(0.4)
    with pytest.raises(DegenerateMoments):
        gamma_from_sigma(AutocorrSet(a1=0.0, a2=[1.0, 0.0]), 1.0)


@given(st.integers(0, 10**6), st.floats(0.05, 0.5))
def test_gamma_from_sigma_noiseless(seed, gamma):
    x = np.random.default_rng(seed).standard_normal(7) + 0.5
    if abs(x.sum()) < 0.1:
        return
    assert gamma_from_sigma(observed(x, gamma, 0.0), 0.0) == pytest.approx(gamma, rel=1e-12)


def test_quadratic_intersection_example(rng):
    x = bounded_signal(rng, 11) + 0.3
    g, s2 = solve_gamma_sigma_separated(observed(x, 0.3, 2.0))
    assert g == pytest.approx(0.3, rel=1e-8)
    assert s2 == pytest.approx(4.0, rel=1e-8)


def test_quadratic_intersection_dense_regime():
    """Above density 1/4 every nonzero-mean signal is solvable."""
    rng = np.random.default_rng(77)
    for _ in range(100):
        L = int(rng.integers(3, 16))
        x = rng.standard_normal(L)
        gamma = rng.uniform(0.26, L / (2 * L - 1))
        sigma = rng.uniform(0, 3)
        g, s2 = solve_gamma_sigma_separated(observed(x, gamma, sigma))
        assert g == pytest.approx(gamma, rel=1e-8)
        assert s2 == pytest.approx(sigma**2, rel=1e-8, abs=1e-8)


def test_quadratic_intersection_noiseless_clamps_sigma(rng):
    x = rng.standard_normal(8) + 1.0
    g, s2 = solve_gamma_sigma_separated(observed(x, 0.2, 0.0))
    assert g == pytest.approx(0.2, rel=1e-8)
    assert s2 == 0.0 or abs(s2) < 1e-8


def test_quadratic_and_known_sigma_agree(rng):
    x = rng.standard_normal(9) + 0.4
    ac = observed(x, 0.35, 1.2)
    g, _ = solve_gamma_sigma_separated(ac)
    assert g == pytest.approx(gamma_from_sigma(ac, 1.2), rel=1e-8)


def test_quadratic_rejects_bad_inputs():
    with pytest.raises(ValueError):
        solve_gamma_sigma_separated(observed([1.0, 2.0], 0.3, 1.0))
    x = np.array([1.0, -2.0, 1.0])
    with pytest.raises(DegenerateMoments):
        solve_gamma_sigma_separated(observed(x, 0.3, 1.0))


def test_solve_homo_separated_both_paths(rng):
    x = bounded_signal(rng, 7) + 0.2
    ac = observed(x, 0.3, 1.5)
    for est in (solve_homo_separated(ac), solve_homo_separated(ac, sigma=1.5)):
        np.testing.assert_allclose(est.x_hat.values, x, rtol=1e-7, atol=1e-9)
        assert est.gamma_hat == pytest.approx(0.3, rel=1e-8)


def test_poisson_explicit_example():
    x = bounded_signal(np.random.default_rng(9), 9)
    est = solve_poisson_explicit(observed(x, 0.7, 1.5, POISSON))
    np.testing.assert_allclose(est.x_hat.values, x, rtol=1e-8, atol=1e-10)
    assert est.gamma_hat == pytest.approx(0.7, rel=1e-8)
    assert est.sigma2_hat == pytest.approx(2.25, rel=1e-8)


@pytest.mark.parametrize("L,c,gamma", [(3, 2.0, 0.4), (6, -1.5, 1.3), (10, 0.7, 0.05)])
def test_poisson_constant_signal_denominator(L, c, gamma):
    ac = observed(np.full(L, c), gamma, 0.5, POISSON)
    num, den = poisson_gamma_terms(ac)
    # gamma a1 = gamma c, gamma a2[1] = gamma c^2 (L-1)/L, every a3 entry with a
    # unit shift equals c^3 (L - span)/L; the two sums add up to c^3 (L - 1)
    assert num == pytest.approx(L * gamma * c * gamma * c**2 * (L - 1) / L, rel=1e-12)
    assert den == pytest.approx(gamma * c**3 * (L - 1), rel=1e-12)
    assert solve_poisson_explicit(ac).gamma_hat == pytest.approx(gamma, rel=1e-12)


def test_poisson_explicit_random_instances():
    rng = np.random.default_rng(123)
    for _ in range(30):
        L = int(rng.integers(3, 13))
        x = bounded_signal(rng, L)
        gamma, sigma = rng.uniform(0.05, 1.5), rng.uniform(0, 2)
        try:
            est = solve_poisson_explicit(observed(x, gamma, sigma, POISSON))
        except DegenerateMoments:
            continue  # the denominator can vanish for particular signals
        assert est.gamma_hat == pytest.approx(gamma, rel=1e-8)
        np.testing.assert_allclose(est.x_hat.values, x, rtol=1e-7, atol=1e-8)


@pytest.mark.slow
@pytest.mark.parametrize("kind", [SEPARATED, POISSON])
def test_end_to_end_error_scaling(kind):
    L, sigma = 5, 1.0
    x = np.array([1.0, 0.6, -0.4, 0.9, 1.2])
    model = MixtureModel.from_pi([Signal(x)], 0.3, noise_sigma=sigma)
    checkpoints = [10**6, 10**7, 10**8]
    errs = []
    for seed in range(3):
        make = synth_well_separated if kind == SEPARATED else synth_poisson
        stream = make(model, checkpoints[-1], seed=seed, segment_length=10**6)
        row = []
        for ac in accumulate_checkpoints(stream.segments(), L, checkpoints):
            est = solve_homo_separated(ac, sigma=sigma) if kind == SEPARATED else solve_poisson_explicit(ac)
            v = np.zeros(L)
            v[:est.x_hat.L] = est.x_hat.values
            row.append(aligned_error([v], [x], allow_shift=True).errors[0])
        errs.append(row)
    med = np.median(errs, axis=0)
    assert np.all(np.diff(med) < 0)
    assert -0.7 <= loglog_slope(checkpoints, med) <= -0.3
