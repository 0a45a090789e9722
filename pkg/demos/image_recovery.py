"""An image from its second-order autocorrelation by RRR phase retrieval.

With the exact autocorrelation of a mean-zero 20 x 20 image the iteration
converges to the image up to sign and point reflection. With estimated
autocorrelations from noisy observations the error shrinks as more
observations are averaged.
"""

import numpy as np

from mtdetect.core import MixtureModel, Signal
from mtdetect.phase2d import align_2d, image_ac2, rrr_multi, sampled_image_ac2

W = 20
img = np.random.default_rng(2020).standard_normal((W, W))
img -= img.mean()

res = rrr_multi(image_ac2(img), W, seeds=range(10), max_iter=20_000)
err, (sign, reflected) = align_2d(res.image, img)
print(f"exact autocorrelation: error {err:.1e} after {res.iterations} iterations "
      f"({res.restarts} restarts); sign {sign:+d}, reflected {reflected}")

counts = [100, 1000, 4000]
model = MixtureModel.from_pi([Signal(img)], 0.1, noise_sigma=1.0)
grids = sampled_image_ac2(model, counts, (200, 200), 5, seed=0, fixed_count=True)
for n, g in zip(counts, grids):
    r = rrr_multi(g, W, seeds=range(2), max_iter=3_000)
    print(f"{n:>4} noisy observations: aligned error {align_2d(r.image, img)[0]:.3f}")
