"""Recovery error against observation length for a two-signal mixture.

A reduced version of the standard harness: two signals of length 8 at
total density 0.3, noise level 0.5, two seeds and three stream lengths.
Densities and weights are estimated along with the signals. The
two-stage least-squares solver is rerun at every checkpoint and the median
aligned error per signal is printed along with its log-log slope.
"""

from mtdetect.eval import HarnessConfig, experiment1_harness, loglog_slope, median_by_checkpoint

cfg = HarnessConfig(L=8, K=2, gamma=0.3, sigma=0.5, checkpoints=[10**5, 10**6, 10**7],
                    seeds=[0, 1], starts=10, segment_length=10**6)
rows = experiment1_harness(cfg, csv_path=None)
med = median_by_checkpoint(rows, cfg.K)
for n in cfg.checkpoints:
    print(f"N={n:.0e}  median errors " + "  ".join(f"{e:.4f}" for e in med[n]))
for k in range(cfg.K):
    print(f"signal {k}: slope {loglog_slope(cfg.checkpoints, [med[n][k] for n in cfg.checkpoints]):.2f}")
