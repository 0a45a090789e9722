"""Closed-form recovery for a single signal class (K = 1).

* :func:`recover_signal_direct` reads the signal off its second- and
  third-order autocorrelations, ``x[k] = a3[k, L-1] / a2[L-1]``.
* :func:`gamma_from_sigma` / :func:`sigma2_from_gamma` trade density for
  noise level through the first two moments (well-separated model).
* :func:`solve_gamma_sigma_separated` finds both from two quadratics in
  ``beta = gamma / L`` built from observable moments.
* :func:`solve_poisson_explicit` recovers everything in closed form under
  the Poisson model.

These formulas are exact on population moments but amplify estimation
noise, especially when the signal endpoints are small.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import POISSON, SEPARATED, AutocorrSet, Signal, expand_symmetries, tri_index, tri_size
from .forward import debias, forward, signal_ac

DIRECT = "direct"
QUADRATIC = "quadratic_intersection"
POISSON_EXPLICIT = "poisson_explicit"

SHRINK_REL = 1e-10
DEPENDENCE_REL = 1e-10
ROOT_TOL = 1e-6
SIGMA2_CLAMP_REL = 1e-8


class DegenerateMoments(ValueError):
    """The moments do not determine the requested quantity."""


@dataclass(frozen=True, eq=False)
class HomoEstimate:
    x_hat: Signal
    gamma_hat: float
    sigma2_hat: float
    method: str
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": "mtdetect.homo_estimate",
            "x_hat": self.x_hat.to_dict(),
            "gamma_hat": self.gamma_hat,
            "sigma2_hat": self.sigma2_hat,
            "method": self.method,
            "diagnostics": self.diagnostics,
        }


def _a3_triangle(a3) -> np.ndarray:
    return a3.a3 if isinstance(a3, AutocorrSet) else np.asarray(a3, dtype=float)


def recover_signal_direct(a2, a3=None, threshold: float = SHRINK_REL) -> Signal:
    """Signal from its autocorrelations via ``x[k] = a3[k, L-1] / a2[L-1]``.

    ``a2`` holds shifts 0..L-1 and ``a3`` the canonical triangle (or both
    come from one :class:`AutocorrSet`). Any common positive scaling of
    the two inputs cancels, so ``gamma * a_x`` works as well as ``a_x``.

    When ``|a2[L-1]|`` is negligible an endpoint of the signal vanishes;
    the window is shrunk by one and the recovery retried. The result is
    then the support of the signal, defined up to a shift.
    """
    if isinstance(a2, AutocorrSet):
        a2, a3 = a2.a2, a2.a3
    a2 = np.asarray(a2, dtype=float)
    tri = _a3_triangle(a3)
    L = a2.size
    if tri.size != tri_size(L):
        raise ValueError(f"a3 triangle has {tri.size} entries, expected {tri_size(L)} for L = {L}")
    scale = np.max(np.abs(a2)) if L else 0.0
    shrunk = 0
    while L >= 1:
        pivot = a2[L - 1]
        if abs(pivot) > threshold * scale and scale > 0:
            row = tri[tri_index(L - 1, 0):tri_index(L - 1, 0) + L]
            return Signal(row / pivot)
        L -= 1
        shrunk += 1
    raise DegenerateMoments("a2 vanishes at every shift down to L = 1; no signal to recover")


def _E3(ac_y: AutocorrSet) -> float:
    return ac_y.a2[0] + 2.0 * ac_y.a2[1:].sum()


def gamma_from_sigma(ac_y: AutocorrSet, sigma: float) -> float:
    """Density from a known noise level (well-separated, K = 1)."""
    L = ac_y.L
    a1 = ac_y.a1
    denom = _E3(ac_y) - sigma**2
    scale = max(abs(ac_y.a2[0]), np.finfo(float).tiny)
    if a1 == 0 or abs(denom) <= 1e-14 * scale:
        raise DegenerateMoments("signal mean zero or inconsistent moments")
    return L * a1**2 / denom


def sigma2_from_gamma(ac_y: AutocorrSet, gamma: float) -> float:
    """Noise variance from a known density (well-separated, K = 1)."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return _E3(ac_y) - ac_y.L * ac_y.a1**2 / gamma


def _observables(ac_y: AutocorrSet) -> dict:
    L = ac_y.L
    a1 = ac_y.a1
    t = ac_y.a3
    d = np.array([t[tri_index(j, j)] for j in range(1, L)])
    e = np.array([t[tri_index(j, 0)] for j in range(1, L)])
    off = sum(t[tri_index(j, i)] for j in range(2, L) for i in range(1, j))
    E1 = a1 * ac_y.a2[0]
    E2 = t[0] + d.sum() + e.sum()
    E3 = _E3(ac_y)
    E4 = a1**3 / L
    E5 = t[0] + 3 * (d.sum() + e.sum()) + 6 * off
    return {"E1": E1, "E2": E2, "E3": E3, "E4": E4, "E5": E5}


def _quad_roots(a: float, b: float, c: float) -> np.ndarray:
    scale = max(abs(a), abs(b), abs(c))
    if scale == 0:
        return np.zeros(0)
    if abs(a) <= 1e-14 * scale:
        return np.array([-c / b]) if b != 0 else np.zeros(0)
    r = np.roots([a, b, c])
    real = r[np.abs(r.imag) <= 1e-9 * np.maximum(1.0, np.abs(r.real))].real
    return np.sort(real)


def quadratic_coefficients(ac_y: AutocorrSet) -> tuple[np.ndarray, np.ndarray, dict]:
    """Coefficients of the two quadratics in beta = gamma / L."""
    L = ac_y.L
    a1 = ac_y.a1
    E = _observables(ac_y)
    q1 = np.array([E["E2"] - (2 * L + 1) * a1 * E["E3"],
                   -E["E1"] + (2 * L + 1) * a1**3 + a1 * E["E3"],
                   -a1**3])
    q2 = np.array([E["E3"] - E["E5"] / (a1 * (6 * L - 3)),
                   -a1**2,
                   L * E["E4"] / (a1 * (6 * L - 3))])
    return q1, q2, E


def _moment_residual(ac_y: AutocorrSet, gamma: float, sigma2: float) -> float:
    """Mismatch between observed moments and those implied by (gamma, sigma^2)."""
    try:
        x = _signal_from_observation(ac_y, max(sigma2, 0.0), SEPARATED)
    except DegenerateMoments:
        return np.inf
    if x.L != ac_y.L:
        x = Signal(np.concatenate([x.values, np.zeros(ac_y.L - x.L)]))
    pred = forward(signal_ac(x), gamma, np.sqrt(max(sigma2, 0.0)), SEPARATED).ac
    return float(np.sum((pred.a2 - ac_y.a2) ** 2) + np.sum((pred.a3 - ac_y.a3) ** 2)
                 + (pred.a1 - ac_y.a1) ** 2)


def _clamp_sigma2(sigma2: float, ac_y: AutocorrSet) -> float:
    tol = SIGMA2_CLAMP_REL * abs(ac_y.a2[0])
    if sigma2 < -tol:
        raise DegenerateMoments(f"model mismatch: estimated sigma^2 = {sigma2:.3g} is negative")
    return max(sigma2, 0.0)


def solve_gamma_sigma_separated(ac_y: AutocorrSet, root_tol: float = ROOT_TOL,
                                fallback: bool = False) -> tuple[float, float]:
    """Density and noise variance from the first three moments (K = 1).

    Both quadratics vanish at the true beta; the common root is taken as the
    pair of roots (one from each) closest to each other. Ties within
    ``root_tol`` are broken by the moment residual of the implied model.

    On sampled moments the second quadratic is far noisier than the first.
    With ``fallback=True`` a failed match falls back to the unique positive
    root of the first quadratic, when there is one.
    """
    gamma, sigma2, _ = _solve_separated(ac_y, root_tol, fallback)
    return gamma, sigma2


def _solve_separated(ac_y: AutocorrSet, root_tol: float, fallback: bool):
    L = ac_y.L
    if L < 3:
        raise ValueError("joint density/noise recovery needs L >= 3")
    if ac_y.a3 is None:
        raise ValueError("third-order moments are required")
    a1 = ac_y.a1
    if a1 == 0:
        raise DegenerateMoments("signal mean zero or inconsistent moments")
    q1, q2, _ = quadratic_coefficients(ac_y)
    cross = np.linalg.norm(np.cross(q1, q2))
    if cross <= DEPENDENCE_REL * np.linalg.norm(q1) * np.linalg.norm(q2):
        raise DegenerateMoments("non-generic signal: the two quadratics are dependent; "
                                "use gamma_from_sigma or the Poisson path")
    r1, r2 = _quad_roots(*q1), _quad_roots(*q2)
    pairs = [(abs(u - v), 0.5 * (u + v)) for u in r1 for v in r2]
    matched = [(gap, b) for gap, b in pairs if gap < root_tol * max(1.0, abs(b)) and b > 0]
    info = {"roots_first": r1.tolist(), "roots_second": r2.tolist(), "fallback": False}
    if not matched:
        pos = r1[r1 > 0]
        if not (fallback and pos.size == 1):
            raise DegenerateMoments(f"no common root within tolerance: roots {r1.tolist()} "
                                    f"and {r2.tolist()}")
        beta = float(pos[0])
        info["fallback"] = True
    elif len(matched) > 1:
        scored = []
        for _, b in matched:
            s2 = _E3(ac_y) - a1**2 / b
            scored.append((_moment_residual(ac_y, L * b, s2), b))
        beta = min(scored)[1]
    else:
        beta = matched[0][1]
    sigma2 = _E3(ac_y) - a1**2 / beta
    return L * beta, _clamp_sigma2(sigma2, ac_y), info


def _signal_from_observation(ac_y: AutocorrSet, sigma2: float, kind: str) -> Signal:
    g = debias(ac_y, float(np.sqrt(sigma2)), kind)
    return recover_signal_direct(g.a2, g.a3)


def solve_homo_separated(ac_y: AutocorrSet, sigma: float | None = None,
                         root_tol: float = ROOT_TOL, fallback: bool = False) -> HomoEstimate:
    """Full K = 1 recovery under the well-separated model.

    With ``sigma`` given, gamma follows from the first two moments; without
    it, both come from the quadratic intersection.
    """
    info = {}
    if sigma is None:
        gamma, sigma2, info = _solve_separated(ac_y, root_tol, fallback)
        method = QUADRATIC
    else:
        gamma, sigma2 = gamma_from_sigma(ac_y, sigma), float(sigma) ** 2
        method = DIRECT
    x = _signal_from_observation(ac_y, sigma2, SEPARATED)
    return HomoEstimate(x, gamma, sigma2, method, {"support_length": x.L, **info})


def poisson_gamma_terms(ac_y: AutocorrSet) -> tuple[float, float]:
    """Numerator ``L (gamma a1)(gamma a2[1])`` and the third-order denominator."""
    L = ac_y.L
    if L < 2:
        raise ValueError("the Poisson closed form needs L >= 2")
    g = debias(ac_y, None, POISSON, exclude=True)
    num = L * g.a1 * g.a2[1]
    den = sum(expand_symmetries(g, 1, l) for l in range(L))
    den += sum(expand_symmetries(g, l, l + 1) for l in range(1, L - 1))
    return num, den


def solve_poisson_explicit(ac_y: AutocorrSet) -> HomoEstimate:
    """Closed-form (x, gamma, sigma^2) under the homogeneous Poisson model."""
    if ac_y.a3 is None:
        raise ValueError("third-order moments are required")
    num, den = poisson_gamma_terms(ac_y)
    scale = np.max(np.abs(ac_y.a3)) if ac_y.a3.size else 0.0
    if abs(den) <= 1e-14 * max(scale, np.finfo(float).tiny):
        raise DegenerateMoments("zero third-order denominator; gamma is not identifiable this way")
    gamma = num / den
    if not gamma > 0:
        raise DegenerateMoments(f"model mismatch: estimated gamma = {gamma:.3g} is not positive")
    L, a1 = ac_y.L, ac_y.a1
    sigma2 = _E3(ac_y) - L * a1**2 / gamma - (2 * L - 1) * a1**2
    sigma2 = _clamp_sigma2(sigma2, ac_y)
    x = _signal_from_observation(ac_y, sigma2, POISSON)
    return HomoEstimate(x, gamma, sigma2, POISSON_EXPLICIT,
                        {"numerator": num, "denominator": den, "support_length": x.L})
