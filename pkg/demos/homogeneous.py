"""Closed-form recovery of one signal from growing stretches of data.

The well-separated path uses the known noise level to get the density and
then reads the signal off the debiased moments. The Poisson path needs
nothing but the moments. Errors should fall roughly like N^(-1/2).
"""

import numpy as np

from mtdetect.acc import accumulate_checkpoints
from mtdetect.core import MixtureModel, Signal
from mtdetect.eval import aligned_error, loglog_slope
from mtdetect.homo import solve_homo_separated, solve_poisson_explicit
from mtdetect.synth import synth_poisson, synth_well_separated

x = np.array([1.0, 0.6, -0.4, 0.9, 1.2])
L, sigma = x.size, 1.0
model = MixtureModel.from_pi([Signal(x)], 0.3, noise_sigma=sigma)
checkpoints = [10**5, 10**6, 10**7]


def error(est):
    v = np.zeros(L)
    v[:est.x_hat.L] = est.x_hat.values
    return aligned_error([v], [x], allow_shift=True).errors[0]


for name, make, solve in [
    ("separated, sigma known", synth_well_separated, lambda ac: solve_homo_separated(ac, sigma=sigma)),
    ("poisson, closed form", synth_poisson, solve_poisson_explicit),
]:
    stream = make(model, checkpoints[-1], seed=3, segment_length=10**5)
    errs = []
    for ac in accumulate_checkpoints(stream.segments(), L, checkpoints):
        est = solve(ac)
        errs.append(error(est))
        print(f"{name:24s} N={ac.n_samples:.0e}  gamma_hat={est.gamma_hat:.4f}  "
              f"sigma2_hat={est.sigma2_hat:.4f}  error={errs[-1]:.4f}")
    print(f"{'':24s} log-log slope {loglog_slope(checkpoints, errs):.2f}\n")
