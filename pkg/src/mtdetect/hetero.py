"""Heterogeneous recovery by nonlinear least squares on mixed autocorrelations.

The unknowns are K signals of window length W >= L and their coefficients
``gamma_k``. The model moments are ``sum_k gamma_k a_{x_k}^q`` with every
autocorrelation normalized by the declared length L and evaluated at shifts
0..L-1, so a zero-padded copy of the true signal in a wider window predicts
the same moments. By default only entries free of the noise bias enter:
the mean, ``a2[1..L-1]`` and ``a3[l1, l2]`` with ``1 <= l2 < l1``.

Coefficients are parameterized as ``gamma_k = exp(t_k)``. Three modes:

``free``
    one ``t_k`` per class;
``shared``
    the mixing weights ``pi`` are known, ``gamma_k = pi_k exp(t)``;
``fixed``
    ``gamma_k = gamma pi_k`` is given and never updated.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .core import SEPARATED, AutocorrSet, MixtureModel, Signal, StartTrace, SolveReport, tri_pairs
from .eval import aligned_error, count_equations
from .forward import debias, mix_ac

FREE, SHARED, FIXED = "free", "shared", "fixed"
SUCCESS_COST = 1e-16


@dataclass(frozen=True)
class SolverOptions:
    gtol: float = 1e-10
    ftol: float = 1e-15
    xtol: float = 1e-15
    max_nfev: int = 5000


class NlsProblem:
    """Fitting problem for K signals in a window of length ``W``.

    ``target`` holds debiased moments ``gamma a_x^q``; entries that are not
    used may be NaN. With ``include_contaminated`` the zero and repeated
    shifts are fitted too, which requires a target debiased with known sigma.
    """

    def __init__(self, target: AutocorrSet, K: int, W: int | None = None, pi=None,
                 gamma: float | None = None, include_contaminated: bool = False,
                 weights: tuple | None = None):
        if target.dim != 1 or target.a3 is None:
            raise ValueError("the NLS fit needs 1-D moments up to order 3")
        L = target.L
        W = L if W is None else int(W)
        if W < L:
            raise ValueError(f"window W = {W} shorter than L = {L}")
        if K < 1:
            raise ValueError("K must be at least 1")
        self.target, self.K, self.L, self.W = target, int(K), L, W
        self.include_contaminated = bool(include_contaminated)
        if gamma is not None:
            self.mode = FIXED
        elif pi is not None:
            self.mode = SHARED
        else:
            self.mode = FREE
        self.pi = np.full(K, 1.0 / K) if pi is None else np.asarray(pi, dtype=float)
        if self.pi.shape != (K,) or np.any(self.pi <= 0) or not np.isclose(self.pi.sum(), 1.0):
            raise ValueError(f"pi must be K = {K} positive weights summing to 1")
        self.gamma = None if gamma is None else float(gamma)
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")

        p = tri_pairs(L)
        lo = 0 if self.include_contaminated else 1
        self.l2 = np.arange(lo, L)
        keep = np.ones(len(p), bool) if self.include_contaminated else (p[:, 1] > 0) & (p[:, 1] < p[:, 0])
        self.p3 = p[keep]
        n2, n3 = self.l2.size, len(self.p3)
        if weights is None:
            weights = (0.5, 0.5 / n2 if n2 else 0.0, 0.5 / n3 if n3 else 0.0)
        self.weights = tuple(float(w) for w in weights)
        self.t_vec = np.concatenate([[target.a1], target.a2[self.l2], target.a3[keep]])
        if not np.all(np.isfinite(self.t_vec)):
            raise ValueError("target has non-finite values on the fitted entries "
                             "(contaminated entries need a known sigma)")
        w1, w2, w3 = self.weights
        self.sqrt_w = np.sqrt(2.0 * np.concatenate([[w1], np.full(n2, w2), np.full(n3, w3)]))
        self._build_indices()

    def _build_indices(self):
        o, W = self.L - 1, self.W
        m = np.arange(W)[:, None]
        l2 = self.l2[None, :]
        a, b = self.p3[:, 0][None, :], self.p3[:, 1][None, :]
        self._base = o + np.arange(W)
        self._i2p, self._i2m = o + m + l2, o + m - l2
        self._i3a, self._i3b = o + m + a, o + m + b
        self._i3c, self._i3d = o + m - a, o + m - a + b
        self._i3e, self._i3f = o + m - b, o + m - b + a

    @property
    def n_coef_params(self) -> int:
        return {FREE: self.K, SHARED: 1, FIXED: 0}[self.mode]

    @property
    def n_params(self) -> int:
        return self.K * self.W + self.n_coef_params

    @property
    def n_residuals(self) -> int:
        return self.t_vec.size

    def coefficients(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``gamma_k`` and their derivatives with respect to ``t`` (K x n_t)."""
        if self.mode == FREE:
            c = np.exp(t)
            return c, np.diag(c)
        if self.mode == SHARED:
            c = self.pi * np.exp(t[0])
            return c, c[:, None]
        return self.gamma * self.pi, np.zeros((self.K, 0))

    def _pad(self, X: np.ndarray) -> np.ndarray:
        o = self.L - 1
        return np.pad(X, ((0, 0), (o, o)))

    def moments(self, X: np.ndarray) -> np.ndarray:
        """Fitted moment entries of each signal, shape (K, n_residuals)."""
        xp = self._pad(X)
        base = xp[:, self._base]
        a1 = base.sum(axis=1)
        a2 = np.einsum("kw,kwj->kj", base, xp[:, self._i2p])
        a3 = np.einsum("kw,kwj->kj", base, xp[:, self._i3a] * xp[:, self._i3b])
        return np.concatenate([a1[:, None], a2, a3], axis=1) / self.L

    def moment_jacobian(self, X: np.ndarray) -> np.ndarray:
        """d moments / d x, shape (K, n_residuals, W)."""
        xp = self._pad(X)
        K, W = X.shape
        d1 = np.ones((K, W, 1))
        d2 = xp[:, self._i2p] + xp[:, self._i2m]
        d3 = (xp[:, self._i3a] * xp[:, self._i3b] + xp[:, self._i3c] * xp[:, self._i3d]
              + xp[:, self._i3e] * xp[:, self._i3f])
        return np.concatenate([d1, d2, d3], axis=2).transpose(0, 2, 1) / self.L

    def unpack(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = self.K * self.W
        return theta[:n].reshape(self.K, self.W), theta[n:]

    def pack(self, X: np.ndarray, t: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(X, float).ravel(), np.asarray(t, float).ravel()])

    def residuals(self, theta: np.ndarray) -> np.ndarray:
        X, t = self.unpack(theta)
        c, _ = self.coefficients(t)
        return self.sqrt_w * (c @ self.moments(X) - self.t_vec)

    def jacobian(self, theta: np.ndarray) -> np.ndarray:
        X, t = self.unpack(theta)
        c, dc = self.coefficients(t)
        M = self.moments(X)
        D = self.moment_jacobian(X)
        Jx = (c[:, None, None] * D).transpose(1, 0, 2).reshape(self.n_residuals, -1)
        Jt = M.T @ dc
        return self.sqrt_w[:, None] * np.hstack([Jx, Jt])


@dataclass(frozen=True, eq=False)
class NlsIterate:
    """Signals (K x W), log-coefficient parameters and the cost there."""

    signals: np.ndarray
    t: np.ndarray
    cost: float = np.nan
    grad_norm: float = np.nan

    def theta(self) -> np.ndarray:
        return np.concatenate([self.signals.ravel(), self.t.ravel()])


def cost_and_gradient(p: NlsIterate, prob: NlsProblem) -> tuple[float, np.ndarray]:
    """Weighted squared moment mismatch and its gradient in (x, t)."""
    theta = p.theta()
    if theta.size != prob.n_params:
        raise ValueError(f"iterate has {theta.size} parameters, problem expects {prob.n_params}")
    f = prob.residuals(theta)
    J = prob.jacobian(theta)
    return 0.5 * float(f @ f), J.T @ f


def evaluate(prob: NlsProblem, signals, t) -> NlsIterate:
    p = NlsIterate(np.asarray(signals, float), np.asarray(t, float))
    c, g = cost_and_gradient(p, prob)
    return NlsIterate(p.signals, p.t, c, float(np.linalg.norm(g)))


_STATUS = {-1: "improper input", 0: "max_nfev", 1: "gtol", 2: "ftol", 3: "xtol", 4: "ftol+xtol"}


class _NonFinite(ArithmeticError):
    pass


def solve_stage(prob: NlsProblem, init: NlsIterate, opts: SolverOptions = SolverOptions()
                ) -> tuple[NlsIterate, StartTrace]:
    """Trust-region least squares from ``init``; returns the final iterate and a trace."""
    def fun(theta):
        f = prob.residuals(theta)
        if not np.all(np.isfinite(f)):
            raise _NonFinite("non-finite cost")
        return f

    theta0 = prob.pack(init.signals, init.t)
    try:
        res = least_squares(fun, theta0, jac=prob.jacobian, method="trf", gtol=opts.gtol,
                            ftol=opts.ftol, xtol=opts.xtol, max_nfev=opts.max_nfev)
    except (_NonFinite, FloatingPointError, OverflowError) as exc:
        return init, StartTrace(float("inf"), float("nan"), 0, f"aborted: {exc}")
    X, t = prob.unpack(res.x)
    cost = float(res.cost)
    gnorm = float(np.linalg.norm(res.grad))
    status = _STATUS.get(res.status, str(res.status))
    return NlsIterate(X.copy(), t.copy(), cost, gnorm), StartTrace(cost, gnorm, max(int(res.njev) - 1, 0), status)


def max_norm_window(x: np.ndarray, L: int) -> np.ndarray:
    """Contiguous length-L piece of largest 2-norm (earliest on ties)."""
    c = np.concatenate([[0.0], np.cumsum(x**2)])
    e = c[L:] - c[:-L]
    return x[int(np.argmax(e)):][:L].copy()


def random_start(prob: NlsProblem, seed, start: int) -> NlsIterate:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(start)]))
    X = rng.standard_normal((prob.K, prob.W))
    t = rng.standard_normal(prob.n_coef_params)
    return NlsIterate(X, t)


@dataclass
class StartResult:
    iterate: NlsIterate
    trace: StartTrace
    stage1: StartTrace
    seconds: float


def prepare_target(ac_y: AutocorrSet, kind: str = SEPARATED, sigma: float | None = None) -> AutocorrSet:
    """Moments in the separated ``gamma a_x^q`` form, NaN where sigma would be needed."""
    return debias(ac_y, sigma, kind, exclude=sigma is None)


def _run_start(target, K, L, seed, s, pi, gamma, include, opts) -> StartResult:
    t0 = time.perf_counter()
    p1 = NlsProblem(target, K, 2 * L - 1, pi, gamma, include)
    it1, tr1 = solve_stage(p1, random_start(p1, seed, s), opts)
    if not np.isfinite(tr1.cost):
        return StartResult(it1, tr1, tr1, time.perf_counter() - t0)
    p2 = NlsProblem(target, K, L, pi, gamma, include)
    X2 = np.array([max_norm_window(x, L) for x in it1.signals])
    it2, tr2 = solve_stage(p2, NlsIterate(X2, it1.t), opts)
    return StartResult(it2, tr2, tr1, time.perf_counter() - t0)


def multi_start(target: AutocorrSet, K: int, L: int, starts: int = 10, seed=0, pi=None,
                gamma=None, include_contaminated: bool = False, threads: int = 1,
                opts: SolverOptions = SolverOptions()) -> list[StartResult]:
    """Independent two-stage runs; results are ordered by start index."""
    if starts < 1:
        raise ValueError("starts must be at least 1")
    args = [(target, K, L, seed, s, pi, gamma, include_contaminated, opts) for s in range(starts)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(lambda a: _run_start(*a), args))
    return [_run_start(*a) for a in args]


def two_stage_solve(targets: AutocorrSet, K: int, L: int | None = None, starts: int = 10, seed=0,
                    kind: str = SEPARATED, sigma: float | None = None, pi=None,
                    gamma: float | None = None, include_contaminated: bool = False,
                    threads: int = 1, opts: SolverOptions = SolverOptions(),
                    truth=None) -> SolveReport:
    """Fit at ``W = 2L - 1``, cut the max-norm length-L window, refit at ``W = L``.

    ``targets`` are observation moments of the given placement ``kind``;
    they are debiased first. The best final cost wins (lowest start index
    on ties). If ``truth`` is given the report carries aligned errors.
    """
    L = targets.L if L is None else int(L)
    if L != targets.L:
        raise ValueError(f"targets have L = {targets.L}, requested L = {L}")
    if include_contaminated and sigma is None:
        raise ValueError("fitting contaminated entries requires a known sigma")
    target = prepare_target(targets, kind, sigma)
    results = multi_start(target, K, L, starts, seed, pi, gamma, include_contaminated, threads, opts)
    costs = np.array([r.trace.cost for r in results])
    extras = {"seed": seed, "starts": starts, "kind": kind,
              "mode": NlsProblem(target, K, L, pi, gamma, include_contaminated).mode,
              "stage1_costs": [r.stage1.cost for r in results]}
    if not np.any(np.isfinite(costs)):
        return SolveReport(None, tuple(r.trace for r in results), None, None, extras)
    best = int(np.nanargmin(np.where(np.isfinite(costs), costs, np.nan)))
    prob = NlsProblem(target, K, L, pi, gamma, include_contaminated)
    coef, _ = prob.coefficients(results[best].iterate.t)
    est = MixtureModel(tuple(Signal(x) for x in results[best].iterate.signals), tuple(coef),
                       0.0 if sigma is None else sigma)
    errs = None
    if truth is not None:
        rep = aligned_error(est.signals, truth, allow_shift=True)
        errs = rep.errors
        extras["permutation"] = list(rep.permutation)
        extras["shifts"] = list(rep.shifts)
    return SolveReport(est, tuple(r.trace for r in results), errs, best, extras)


# ---------------------------------------------------------------------------
# phase diagram


def exact_mixed_target(signals, gamma: float = 1.0, pi=None) -> AutocorrSet:
    """Noise-free ``gamma`` times the mixed autocorrelations of ``signals``."""
    K = len(signals)
    pi = np.full(K, 1.0 / K) if pi is None else np.asarray(pi, float)
    mixed = mix_ac(list(zip(pi, signals)))
    return mixed.replace(a1=gamma * mixed.a1, a2=gamma * mixed.a2, a3=gamma * mixed.a3)


@dataclass(frozen=True)
class PhaseCell:
    K: int
    L: int
    success_fraction: float
    worst_error: float
    median_log10_time: float
    over_bound: bool
    best_cost: float = field(default=np.inf)

    def row(self) -> dict:
        return {"K": self.K, "L": self.L, "success_fraction": self.success_fraction,
                "worst_error": self.worst_error, "median_log10_time": self.median_log10_time,
                "over_bound": int(self.over_bound), "best_cost": self.best_cost}


def phase_cell(K: int, L: int, starts: int = 50, seed=0, threads: int = 1,
               success_cost: float = SUCCESS_COST, opts: SolverOptions = SolverOptions()) -> PhaseCell:
    """One cell: fresh normal signals, exact moments, uniform known pi and gamma."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), K, L]))
    truth = [Signal(rng.standard_normal(L)) for _ in range(K)]
    target = exact_mixed_target(truth)
    pi = np.full(K, 1.0 / K)
    results = multi_start(target, K, L, starts, seed, pi, 1.0, False, threads, opts)
    ok = [r for r in results if r.trace.cost < success_cost]
    worst = max((max(aligned_error(r.iterate.signals, truth).errors) for r in ok), default=1.0)
    times = np.log10([max(r.seconds, 1e-9) for r in results])
    # gamma_k are known here, so each signal brings L unknowns
    over = K * L > count_equations(L, sigma_known=False)[0]
    return PhaseCell(K, L, len(ok) / starts, float(worst), float(np.median(times)), over,
                     float(min(r.trace.cost for r in results)))


def phase_diagram(L_grid, K_grid, starts: int = 50, seed=0, threads: int = 1,
                  success_cost: float = SUCCESS_COST) -> list[PhaseCell]:
    """Success fraction, worst aligned error and median time over a (K, L) grid.

    Cells without a successful start report a worst error of 1.0.
    """
    return [phase_cell(K, L, starts, seed, threads, success_cost) for K in K_grid for L in L_grid]
