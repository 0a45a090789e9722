"""Error metrics up to the model's symmetries, equation counts and harnesses."""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import POISSON, SEPARATED, MixtureModel, PlacementModel, Signal, tri_pairs

EXHAUSTIVE_MAX_K = 8


def _values(s) -> np.ndarray:
    return s.values if isinstance(s, Signal) else np.asarray(s, dtype=float)


@dataclass(frozen=True)
class ErrorReport:
    """Per-signal errors after alignment.

    ``permutation[k]`` is the estimate matched to true signal ``k`` and
    ``shifts[k]`` the translation applied to that true signal.
    """

    errors: tuple
    permutation: tuple
    shifts: tuple
    joint_error: float = 0.0

    def __post_init__(self):
        if any(not e >= 0 for e in self.errors):
            raise ValueError("errors must be non-negative")
        if sorted(self.permutation) != list(range(len(self.permutation))):
            raise ValueError("permutation must be a bijection")

    def to_dict(self) -> dict:
        return {"errors": list(self.errors), "permutation": list(self.permutation),
                "shifts": list(self.shifts), "joint_error": self.joint_error}


def support_shifts(truth: np.ndarray) -> range:
    """Translations that keep the nonzero support of ``truth`` inside its window."""
    nz = np.flatnonzero(truth)
    if nz.size == 0:
        return range(0, 1)
    return range(-int(nz[0]), truth.size - int(nz[-1]))


def _shifted(x: np.ndarray, s: int) -> np.ndarray:
    out = np.zeros_like(x)
    if s >= 0:
        out[s:] = x[:x.size - s]
    else:
        out[:s] = x[-s:]
    return out


def _pair_cost(est: np.ndarray, truth: np.ndarray, allow_shift: bool) -> tuple[float, int]:
    shifts = support_shifts(truth) if allow_shift else (0,)
    best = (np.inf, 0)
    for s in shifts:
        d = float(np.sum((est - _shifted(truth, s)) ** 2))
        if d < best[0]:
            best = (d, s)
    return best


def aligned_error(est, truth, allow_shift: bool = False) -> ErrorReport:
    """Relative RMSE per signal, minimized over relabelings and (optionally) shifts.

    Pairwise costs use the best shift for each (estimate, truth) pair; the
    assignment is exhaustive for K up to 8 and Hungarian beyond.
    """
    est = [_values(e) for e in est]
    truth = [_values(t) for t in truth]
    K = len(truth)
    if len(est) != K:
        raise ValueError(f"got {len(est)} estimates for {K} true signals")
    if len({x.shape for x in est + truth}) != 1:
        raise ValueError("all signals must share the same length")
    C = np.zeros((K, K))
    S = np.zeros((K, K), dtype=int)
    for i, e in enumerate(est):
        for j, t in enumerate(truth):
            C[i, j], S[i, j] = _pair_cost(e, t, allow_shift)
    if K <= EXHAUSTIVE_MAX_K:
        perms = np.array(list(itertools.permutations(range(K))))
        totals = C[perms, np.arange(K)].sum(axis=1)
        perm = perms[int(np.argmin(totals))]
    else:
        rows, cols = linear_sum_assignment(C)
        perm = np.empty(K, dtype=int)
        perm[cols] = rows
    norms = np.array([np.linalg.norm(t) for t in truth])
    d = C[perm, np.arange(K)]
    errs = np.sqrt(d) / np.where(norms > 0, norms, 1.0)
    joint = float(np.sqrt(d.sum()) / max(np.sqrt((norms**2).sum()), np.finfo(float).tiny))
    return ErrorReport(tuple(float(e) for e in errs), tuple(int(p) for p in perm),
                       tuple(int(S[perm[k], k]) for k in range(K)), joint)


# ---------------------------------------------------------------------------
# identifiability counts


def count_equations(L: int, sigma_known: bool) -> tuple[int, int]:
    """Equation count of the first three autocorrelations and the implied bound on K.

    Each signal brings L + 1 unknowns (its samples and its density).
    """
    if L < 1:
        raise ValueError("L must be at least 1")
    if sigma_known:
        eq = L * (L + 5) // 2
        return eq, (L * (L + 5)) // (2 * (L + 1))
    eq = L * (L - 1) // 2 + 1
    return eq, (L * (L - 1) + 1) // (2 * (L + 1))


def sigma_free_entries(L: int) -> list[tuple]:
    """Moment entries unaffected by the noise: the mean, a2[1..L-1], a3 off the edges."""
    out = [("a1",)]
    out += [("a2", l) for l in range(1, L)]
    out += [("a3", int(a), int(b)) for a, b in tri_pairs(L) if 0 < b < a]
    return out


def sigma_contaminated_entries(L: int) -> list[tuple]:
    """Entries carrying a sigma^2 term: a2[0] and a3 with a zero or repeated shift."""
    out = [("a2", 0)]
    out += [("a3", int(a), int(b)) for a, b in tri_pairs(L) if b == 0 or a == b]
    return out


def enumerate_equations(L: int, sigma_known: bool) -> int:
    n = len(sigma_free_entries(L))
    return n + len(sigma_contaminated_entries(L)) if sigma_known else n


# ---------------------------------------------------------------------------
# experiment harness


@dataclass
class HarnessConfig:
    """Settings for an error-versus-length run (serializable as JSON)."""

    L: int = 21
    K: int = 3
    gamma: float = 0.3
    pi: list | None = None
    sigma: float = 3.0
    model: str = SEPARATED
    checkpoints: list = field(default_factory=lambda: [10**6, 10**7])
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    signal_seed: int = 2024
    signals: list | None = None
    starts: int = 10
    gamma_mode: str = "solve"
    segment_length: int = 1 << 22
    threads: int = 1

    @classmethod
    def from_json(cls, text: str) -> "HarnessConfig":
        d = json.loads(text)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown harness config keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def mixture(self) -> MixtureModel:
        if self.signals is not None:
            sigs = [Signal(np.asarray(s, dtype=float)) for s in self.signals]
        else:
            rng = np.random.default_rng(self.signal_seed)
            sigs = [Signal(rng.standard_normal(self.L)) for _ in range(self.K)]
        return MixtureModel.from_pi(sigs, self.gamma, self.pi, self.sigma)


def experiment1_harness(config: HarnessConfig, csv_path=None) -> list[dict]:
    """Synthesize, accumulate growing prefixes and solve at each checkpoint.

    Returns one row per (seed, checkpoint) with per-signal aligned errors;
    if ``csv_path`` is given the rows are also written there with header
    ``seed,N,err_0,...,err_{K-1},cost``.
    """
    from .acc import accumulate_checkpoints
    from .hetero import two_stage_solve
    from .synth import synth_poisson, synth_well_separated

    model = config.mixture()
    PlacementModel(config.model)
    N = max(config.checkpoints)
    gamma_known = config.gamma_mode != "solve"
    rows = []
    for seed in config.seeds:
        seg = checkpoint_segment_length(config.checkpoints, config.segment_length, model.L)
        if config.model == POISSON:
            stream = synth_poisson(model, N, seed=seed, segment_length=seg)
        else:
            stream = synth_well_separated(model, N, seed=seed, segment_length=seg)
        acs = accumulate_checkpoints(stream.segments(), model.L, config.checkpoints)
        for ac in acs:
            rep = two_stage_solve(ac, model.K, model.L, starts=config.starts, seed=seed,
                                  kind=config.model, pi=config.pi if gamma_known or config.pi else None,
                                  gamma=config.gamma if gamma_known else None,
                                  threads=config.threads, truth=model.signals)
            errs = rep.aligned_errors if rep.aligned_errors is not None else [math.nan] * model.K
            row = {"seed": seed, "N": ac.n_samples}
            row.update({f"err_{k}": e for k, e in enumerate(errs)})
            row["cost"] = rep.best_cost
            rows.append(row)
    if csv_path is not None:
        write_rows(rows, csv_path)
    return rows


def checkpoint_segment_length(checkpoints, cap: int, L: int) -> int:
    """Largest segment length not above ``cap`` that divides every checkpoint."""
    g = 0
    for c in checkpoints:
        g = math.gcd(g, int(c))
    d = max(1, -(-g // cap))
    while g % d:
        d += 1
    seg = g // d
    if seg < L:
        raise ValueError(f"checkpoints {list(checkpoints)} share no segment length >= L = {L}")
    return seg


def write_rows(rows: list[dict], path) -> None:
    if not rows:
        raise ValueError("nothing to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def median_by_checkpoint(rows: list[dict], K: int) -> dict:
    """Median over seeds of each signal's error, keyed by N."""
    out = {}
    for n in sorted({r["N"] for r in rows}):
        sel = [r for r in rows if r["N"] == n]
        out[n] = [float(np.median([r[f"err_{k}"] for r in sel])) for k in range(K)]
    return out


def loglog_slope(ns, errs) -> float:
    """Least-squares slope of log(err) against log(N)."""
    return float(np.polyfit(np.log(np.asarray(ns, float)), np.log(np.asarray(errs, float)), 1)[0])
