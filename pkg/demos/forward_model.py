"""Observed autocorrelations versus the forward model.

A single signal of length 11 is planted at density 0.3 in ten million noisy
samples, once with well-separated placements and once with Poisson counts.
The streamed estimates are compared with the predictions, and the debiased
moments are checked against gamma times the signal's own autocorrelations.
"""

import time

import numpy as np

from mtdetect.acc import empirical_ac
from mtdetect.core import POISSON, SEPARATED, MixtureModel, Signal
from mtdetect.forward import debias, forward, signal_ac
from mtdetect.synth import synth_poisson, synth_well_separated

L, gamma, sigma, N = 11, 0.3, 1.0, 10**7
x = np.random.default_rng(2024).standard_normal(L)
model = MixtureModel.from_pi([Signal(x)], gamma, noise_sigma=sigma)
ax = signal_ac(x)

for kind, make in [(SEPARATED, synth_well_separated), (POISSON, synth_poisson)]:
    t0 = time.perf_counter()
    stream = make(model, N, seed=0)
    ac = empirical_ac(stream.segments(), L)
    pred = forward(ax, gamma, sigma, kind).ac
    print(f"{kind}: {stream.positions.size} occurrences, {time.perf_counter() - t0:.1f} s")
    print(f"  a1   observed {ac.a1:+.5f}  predicted {pred.a1:+.5f}")
    for l in range(3):
        print(f"  a2[{l}] observed {ac.a2[l]:+.5f}  predicted {pred.a2[l]:+.5f}")
    dev = np.max(np.abs(ac.a3 - pred.a3))
    print(f"  largest a3 deviation {dev:.2e} over {ac.a3.size} triangle entries")

    clean = debias(ac, sigma, kind)
    rel = np.linalg.norm(clean.a3 - gamma * ax.a3) / np.linalg.norm(gamma * ax.a3)
    print(f"  debiased a3 vs gamma * a_x^3: relative deviation {rel:.3f}\n")
