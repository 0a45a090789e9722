"""Population autocorrelations and the forward maps to observation moments.

Forward maps work on the products ``gamma * a_x^q`` jointly, which is what
the observation moments actually expose; nothing here divides by gamma.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sp_fft

from .core import POISSON, SEPARATED, AutocorrSet, Signal, tri_pairs, tri_size

# ---------------------------------------------------------------------------
# signal autocorrelations


def _as_array(x) -> np.ndarray:
    return x.values if isinstance(x, Signal) else np.asarray(x, dtype=np.float64)


def raw_ac2(x: np.ndarray, max_shift: int) -> np.ndarray:
    """Unnormalized sums ``sum_i x[i] x[i+l]`` for l = 0..max_shift."""
    n = x.size
    out = np.zeros(max_shift + 1)
    for l in range(min(max_shift, n - 1) + 1):
        out[l] = np.dot(x[: n - l], x[l:])
    return out


def raw_ac3(x: np.ndarray, max_shift: int) -> np.ndarray:
    """Unnormalized sums ``sum_i x[i] x[i+l1] x[i+l2]`` on the canonical triangle."""
    n = x.size
    out = np.zeros(tri_size(max_shift + 1))
    pos = 0
    for l1 in range(max_shift + 1):
        if l1 >= n:
            pos += l1 + 1
            continue
        prod = x[: n - l1] * x[l1:]
        m = n - l1
        for l2 in range(l1 + 1):
            out[pos] = np.dot(prod, x[l2:l2 + m])
            pos += 1
    return out


def raw_ac2_2d(img: np.ndarray, max_shift: int) -> np.ndarray:
    """Unnormalized 2-D autocorrelation sums on shifts [-max_shift, max_shift]^2.

    The returned grid has the zero shift at index ``[max_shift, max_shift]``
    and entry ``[max_shift + d0, max_shift + d1] = sum_i img[i] img[i + d]``.
    Padding each axis to at least its length plus ``max_shift`` keeps the
    circular correlation free of wrap-around at the shifts returned.
    """
    img = np.asarray(img, dtype=np.float64)
    m = max_shift
    shape = [sp_fft.next_fast_len(n + m, real=True) for n in img.shape]
    F = sp_fft.rfft2(img, s=shape)
    R = sp_fft.irfft2(F * F.conj(), s=shape)
    rows = np.arange(-m, m + 1) % shape[0]
    cols = np.arange(-m, m + 1) % shape[1]
    grid = R[np.ix_(rows, cols)]
    # shifts at least as long as an axis have no overlapping samples
    far0 = np.abs(np.arange(-m, m + 1)) >= img.shape[0]
    far1 = np.abs(np.arange(-m, m + 1)) >= img.shape[1]
    grid[far0, :] = 0.0
    grid[:, far1] = 0.0
    return grid


def signal_ac(x, order: int = 3, L: int | None = None) -> AutocorrSet:
    """Autocorrelations of a deterministic signal up to ``order``.

    ``L`` sets both the normalization and the largest shift (L - 1). It
    defaults to the signal length; passing a larger window length for a
    zero-padded estimate keeps the moments of the padded signal equal to
    those of the original.
    """
    x = _as_array(x)
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    if x.ndim == 2:
        if order == 3:
            raise NotImplementedError("third-order autocorrelations are not implemented in 2-D")
        L = x.shape[0] if L is None else L
        a1 = x.sum() / L**2
        a2 = raw_ac2_2d(x, L - 1) / L**2 if order >= 2 else np.zeros((2 * L - 1, 2 * L - 1))
        return AutocorrSet(a1=a1, a2=a2, dim=2)
    L = x.size if L is None else L
    a1 = x.sum() / L
    a2 = raw_ac2(x, L - 1) / L if order >= 2 else np.zeros(L)
    a3 = raw_ac3(x, L - 1) / L if order >= 3 else None
    return AutocorrSet(a1=a1, a2=a2, a3=a3)


def mix_ac(models) -> AutocorrSet:
    """Mixture autocorrelations ``sum_k pi_k a_{x_k}^q``.

    ``models`` is a sequence of ``(pi_k, signal)`` pairs.
    """
    models = list(models)
    pis = np.array([p for p, _ in models], dtype=float)
    if np.any(pis < 0) or not np.isclose(pis.sum(), 1.0, rtol=0, atol=1e-12):
        raise ValueError(f"mixture weights must be non-negative and sum to 1, got {pis.tolist()}")
    acs = [signal_ac(s) if not isinstance(s, AutocorrSet) else s for _, s in models]
    dims = {a.dim for a in acs}
    if len(dims) != 1 or len({a.a2.shape for a in acs}) != 1:
        raise ValueError("all mixture components must share length and dimension")
    return combine_linear(acs, pis)


def combine_linear(acs, weights) -> AutocorrSet:
    """Weighted sum of autocorrelation sets with matching shapes."""
    a1 = sum(w * a.a1 for w, a in zip(weights, acs))
    a2 = sum(w * a.a2 for w, a in zip(weights, acs))
    has3 = all(a.a3 is not None for a in acs)
    a3 = sum(w * a.a3 for w, a in zip(weights, acs)) if has3 else None
    return AutocorrSet(a1=a1, a2=a2, a3=a3, dim=acs[0].dim)


# ---------------------------------------------------------------------------
# contamination flags


def a2_flags(L: int) -> np.ndarray:
    """True where a second-order entry (shift 0..L-1) carries a sigma^2 term."""
    flags = np.zeros(L, dtype=bool)
    flags[0] = True
    return flags


def a3_flags(L: int) -> np.ndarray:
    """True on triangle entries with l1 = 0, l2 = 0 or l1 = l2."""
    p = tri_pairs(L)
    return (p[:, 0] == 0) | (p[:, 1] == 0) | (p[:, 0] == p[:, 1])


def a3_flags_square(L: int) -> np.ndarray:
    """Contamination mask over the full square 0 <= l1, l2 <= L-1."""
    l1, l2 = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
    return (l1 == 0) | (l2 == 0) | (l1 == l2)


@dataclass(frozen=True, eq=False)
class ForwardPrediction:
    """Predicted observation autocorrelations with sigma-contamination flags."""

    ac: AutocorrSet
    kind: str
    a2_flags: np.ndarray
    a3_flags: np.ndarray | None

    def n_contaminated_square(self) -> int:
        """Flag count with a3 counted over the full square of shifts."""
        n = int(self.a2_flags.sum())
        if self.a3_flags is not None:
            n += int(a3_flags_square(self.ac.L).sum())
        return n


def _delta3(L: int) -> np.ndarray:
    """delta[l1] + delta[l2] + delta[l1 - l2] on the triangle."""
    p = tri_pairs(L)
    return (p[:, 0] == 0).astype(float) + (p[:, 1] == 0) + (p[:, 0] == p[:, 1])


def _flags_for(ac: AutocorrSet):
    if ac.dim == 2:
        f2 = np.zeros(ac.a2.shape, dtype=bool)
        m = ac.L - 1
        f2[m, m] = True
        return f2, None
    return a2_flags(ac.L), (a3_flags(ac.L) if ac.a3 is not None else None)


def _noise_a2(ac: AutocorrSet, sigma: float) -> np.ndarray:
    bias = np.zeros(ac.a2.shape)
    if ac.dim == 2:
        m = ac.L - 1
        bias[m, m] = sigma**2
    else:
        bias[0] = sigma**2
    return bias


def forward_separated(ax: AutocorrSet, gamma: float, sigma: float) -> ForwardPrediction:
    """Observation moments under the well-separated placement model."""
    L = ax.L
    if ax.dim == 1:
        cap = L / (2 * L - 1)
    else:
        cap = 1.0
    if not 0 < gamma <= cap * (1 + 1e-12):
        raise ValueError(f"gamma = {gamma} outside (0, L/(2L-1)] = (0, {cap:.6g}]")
    g1 = gamma * ax.a1
    a2 = gamma * ax.a2 + _noise_a2(ax, sigma)
    a3 = None
    if ax.a3 is not None:
        a3 = gamma * ax.a3 + sigma**2 * g1 * _delta3(L)
    f2, f3 = _flags_for(ax)
    return ForwardPrediction(AutocorrSet(a1=g1, a2=a2, a3=a3, dim=ax.dim), SEPARATED, f2, f3)


def _a2_lookup(a2: np.ndarray):
    """Vectorized access to a2 at signed shifts through a2[l] = a2[-l]."""
    return lambda l: a2[np.abs(l)]


def forward_poisson(ax: AutocorrSet, gamma: float, sigma: float) -> ForwardPrediction:
    """Observation moments under the Poisson placement model (1-D)."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if ax.dim != 1:
        raise NotImplementedError("the Poisson forward model is implemented in 1-D only")
    L = ax.L
    g1 = gamma * ax.a1
    g2 = gamma * ax.a2
    a2 = g2 + _noise_a2(ax, sigma) + g1**2
    a3 = None
    if ax.a3 is not None:
        p = tri_pairs(L)
        at = _a2_lookup(g2)
        cross = at(p[:, 0]) + at(p[:, 1]) + at(p[:, 1] - p[:, 0])
        a3 = gamma * ax.a3 + sigma**2 * g1 * _delta3(L) + g1**3 + g1 * cross
    f2, f3 = _flags_for(ax)
    return ForwardPrediction(AutocorrSet(a1=g1, a2=a2, a3=a3), POISSON, f2, f3)


def forward(ax: AutocorrSet, gamma: float, sigma: float, kind: str = SEPARATED) -> ForwardPrediction:
    if kind == SEPARATED:
        return forward_separated(ax, gamma, sigma)
    if kind == POISSON:
        return forward_poisson(ax, gamma, sigma)
    raise ValueError(f"unknown placement model {kind!r}")


# ---------------------------------------------------------------------------
# debiasing


def debias(ac_y: AutocorrSet, sigma: float | None, kind: str = SEPARATED,
           exclude: bool = False) -> AutocorrSet:
    """Strip noise and low-order product terms, exposing ``gamma * a_x^q``.

    With ``sigma=None`` the caller must pass ``exclude=True``; entries whose
    correction needs sigma are then returned as NaN. Under the Poisson
    model the third-order correction is sigma-free, so only ``a2[0]`` is
    excluded there.
    """
    if sigma is None and not exclude:
        raise ValueError("sigma unknown: pass sigma or request exclusion of contaminated entries")
    L = ac_y.L
    s2 = 0.0 if sigma is None else sigma**2
    g1 = ac_y.a1
    g2 = np.array(ac_y.a2, dtype=float)
    f2, f3 = _flags_for(ac_y)
    g2 = g2 - _noise_a2(ac_y, np.sqrt(s2))
    if kind == POISSON:
        if ac_y.dim != 1:
            raise NotImplementedError("the Poisson model is implemented in 1-D only")
        g2 = g2 - g1**2
    elif kind != SEPARATED:
        raise ValueError(f"unknown placement model {kind!r}")
    if sigma is None:
        g2[f2] = np.nan

    g3 = None
    if ac_y.a3 is not None:
        if kind == SEPARATED:
            g3 = ac_y.a3 - s2 * g1 * _delta3(L)
            if sigma is None:
                g3 = np.where(f3, np.nan, g3)
        else:
            p = tri_pairs(L)
            at = _a2_lookup(np.asarray(ac_y.a2))
            cross = at(p[:, 0]) + at(p[:, 1]) + at(p[:, 0] - p[:, 1])
            g3 = ac_y.a3 - g1**3 - g1 * (cross - 3 * g1**2)
    return AutocorrSet(a1=g1, a2=g2, a3=g3, n_samples=ac_y.n_samples,
                       n_segments=ac_y.n_segments, dim=ac_y.dim)
