"""Image recovery from its second-order autocorrelation.

The observation autocorrelation is debiased to the image autocorrelation,
the power spectrum follows by a Fourier transform on the (2W-1)^2 grid of
shifts, and relaxed-reflect-reflect (RRR) iterations alternate between the
Fourier-magnitude set and the set of real images supported on W x W.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import AutocorrSet, Signal
from .forward import signal_ac

CLAMP_REL = 1e-8


def occupancy_density(occurrences: float, L: int, shape) -> float:
    """Fraction of an observation of ``shape`` covered by ``occurrences`` L x L images."""
    return occurrences * L * L / (shape[0] * shape[1])


def extract_image_ac2(ac_obs: AutocorrSet, gamma: float, sigma: float) -> np.ndarray:
    """Image autocorrelation grid ``(a_y^2 - sigma^2 delta) / gamma``."""
    if ac_obs.dim != 2:
        raise ValueError("expected a 2-D autocorrelation set")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    g = np.array(ac_obs.a2, dtype=float)
    m = ac_obs.L - 1
    g[m, m] -= sigma**2
    return g / gamma


def symmetrize(ac2: np.ndarray) -> np.ndarray:
    """Average a grid with its point reflection (removes odd estimation noise)."""
    return 0.5 * (ac2 + ac2[::-1, ::-1])


def fourier_magnitudes(ac2: np.ndarray, W: int, mean_zero: bool = True) -> tuple[np.ndarray, int]:
    """Fourier magnitudes implied by ``ac2`` and the number of clamped bins.

    ``ac2`` uses the normalization of :func:`signal_ac` (sums divided by
    W^2) with zero shift at the centre of a (2W-1)^2 grid.
    """
    n = 2 * W - 1
    if ac2.shape != (n, n):
        raise ValueError(f"autocorrelation grid {ac2.shape} does not match W = {W}")
    power = np.fft.fft2(np.fft.ifftshift(symmetrize(ac2) * W * W)).real
    floor = -CLAMP_REL * max(np.max(np.abs(power)), np.finfo(float).tiny)
    clamped = int(np.sum(power < floor))
    mag = np.sqrt(np.maximum(power, 0.0))
    if mean_zero:
        mag[0, 0] = 0.0
    return mag, clamped


@dataclass
class PhaseResult:
    image: np.ndarray
    residual: float
    trace: np.ndarray
    iterations: int
    restarts: int
    converged: bool
    warning: str | None = None
    extras: dict = field(default_factory=dict)


def _project_magnitude(x: np.ndarray, mag: np.ndarray) -> np.ndarray:
    X = np.fft.fft2(x)
    a = np.abs(X)
    phase = np.where(a > 0, X / np.where(a > 0, a, 1.0), 1.0)
    return np.fft.ifft2(mag * phase).real


def _project_support(x: np.ndarray, W: int) -> np.ndarray:
    out = np.zeros_like(x)
    out[:W, :W] = x[:W, :W]
    return out


def magnitude_residual(image: np.ndarray, mag: np.ndarray) -> float:
    """Relative distance of a W x W image to the Fourier-magnitude set."""
    n = mag.shape[0]
    pad = np.zeros((n, n))
    pad[:image.shape[0], :image.shape[1]] = image
    return float(np.linalg.norm(np.abs(np.fft.fft2(pad)) - mag) / max(np.linalg.norm(mag), np.finfo(float).tiny))


def rrr_phase_retrieval(ac2: np.ndarray, W: int, beta: float = 0.5, max_iter: int = 100_000,
                        seed=0, tol: float = 1e-9, stagnation: int = 1000,
                        mean_zero: bool = True, trace_every: int = 10) -> PhaseResult:
    """RRR iterations ``x <- x + beta (P_B(2 P_A x - x) - P_A x)``.

    The candidate image at each step is ``P_B(P_A x)``; the one closest to
    the magnitude set is returned. When the best distance has not improved
    for ``stagnation`` iterations the iterate is reseeded. Stopping at
    ``max_iter`` without reaching ``tol`` sets ``warning`` rather than
    raising.
    """
    if not 0 < beta <= 1:
        raise ValueError("beta must lie in (0, 1]")
    mag, clamped = fourier_magnitudes(np.asarray(ac2, float), W, mean_zero)
    n = 2 * W - 1
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 2]))

    def fresh():
        x = np.zeros((n, n))
        x[:W, :W] = rng.standard_normal((W, W))
        return x

    x = fresh()
    best_img, best_res = np.zeros((W, W)), np.inf
    run_best, since = np.inf, 0
    trace, restarts, it = [], 0, 0
    for it in range(1, int(max_iter) + 1):
        pa = _project_magnitude(x, mag)
        pb = _project_support(2 * pa - x, W)
        x = x + beta * (pb - pa)
        cand = _project_support(pa, W)[:W, :W]
        res = magnitude_residual(cand, mag)
        if res < best_res:
            best_img, best_res = cand.copy(), res
        if res < run_best * (1 - 1e-3):
            run_best, since = res, 0
        else:
            since += 1
        if it % trace_every == 0:
            trace.append((it, res))
        if best_res < tol:
            break
        if since >= stagnation:
            x, run_best, since = fresh(), np.inf, 0
            restarts += 1
    converged = best_res < tol
    warning = None if converged else f"no convergence within {it} iterations (best residual {best_res:.3g})"
    return PhaseResult(best_img, best_res, np.array(trace).reshape(-1, 2), it, restarts, converged,
                       warning, {"clamped_bins": clamped, "seed": seed, "beta": beta})


def rrr_multi(ac2: np.ndarray, W: int, seeds, **kw) -> PhaseResult:
    """Best of several independent RRR runs (lowest seed index on ties)."""
    best = None
    for s in seeds:
        r = rrr_phase_retrieval(ac2, W, seed=s, **kw)
        if best is None or r.residual < best.residual:
            best = r
        if r.converged:
            break
    return best


_SYMMETRIES = [(1, False), (-1, False), (1, True), (-1, True)]


def align_2d(estimate, truth) -> tuple[float, tuple[int, bool]]:
    """Relative error after the best of sign flip and point reflection.

    Returns the error and ``(sign, reflected)``.
    """
    est = estimate.values if isinstance(estimate, Signal) else np.asarray(estimate, float)
    tru = truth.values if isinstance(truth, Signal) else np.asarray(truth, float)
    if est.shape != tru.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {tru.shape}")
    nt = max(np.linalg.norm(tru), np.finfo(float).tiny)
    best = (np.inf, (1, False))
    for sign, refl in _SYMMETRIES:
        cand = sign * (est[::-1, ::-1] if refl else est)
        e = float(np.linalg.norm(cand - tru) / nt)
        if e < best[0]:
            best = (e, (sign, refl))
    return best


def image_ac2(image) -> np.ndarray:
    """Exact second-order autocorrelation grid of an image."""
    return signal_ac(image, order=2).a2


def observations_ac2(images, L: int) -> AutocorrSet:
    """Average second-order autocorrelation of independent 2-D observations."""
    from .acc import AccumulatorState, accumulate_2d, finalize

    state = AccumulatorState.empty(L, order=2, dim=2)
    for img in images:
        state = accumulate_2d(state, img)
    return finalize(state)


def sampled_image_ac2(model, counts, shape, mean_occurrences: float, seed=0,
                      fixed_count: bool = False) -> list[np.ndarray]:
    """Debiased image autocorrelations after growing numbers of observations.

    Observation ``j`` is drawn with seed ``[seed, j]``. The total number of
    planted occurrences and the noise level are treated as known.
    """
    from .acc import AccumulatorState, accumulate_2d, finalize
    from .synth import synth_2d

    L = model.L
    targets = sorted(int(c) for c in counts)
    state = AccumulatorState.empty(L, order=2, dim=2)
    occ, out = 0, []
    for j in range(targets[-1]):
        obs = synth_2d(model, shape[0], shape[1], mean_occurrences, seed=[int(seed), j],
                       fixed_count=fixed_count)
        state = accumulate_2d(state, obs.image())
        occ += len(obs.positions)
        if j + 1 in targets:
            gamma = occupancy_density(occ, L, shape) / (j + 1)
            out.append(extract_image_ac2(finalize(state), gamma, model.noise_sigma))
    return out
