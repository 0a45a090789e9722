"""Streaming, combinable estimation of empirical autocorrelations.

An :class:`AccumulatorState` is a value. Workers may each own one, feed it
disjoint segments and reduce with :func:`combine`. Running sums are kept
with Neumaier compensation so that long streams (1e9+ samples) do not lose
precision when many block results are added up.

Two junction policies decide what happens to products that straddle the
boundary between consecutive segments:

``exact``
    each state carries its first and last L-1 samples, and :func:`combine`
    adds the cross-junction products, so any split of a stream gives the
    single-pass result.
``paper``
    cross-junction products are dropped, as when segments are processed
    independently and simply added up.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import AutocorrSet, tri_size
from .forward import raw_ac2_2d

EXACT = "exact"
PAPER = "paper"

BLOCK = 1 << 15


def _two_sum(s: np.ndarray, c: np.ndarray, v) -> tuple[np.ndarray, np.ndarray]:
    """Neumaier-compensated ``s + v`` with running correction ``c``."""
    t = s + v
    big = np.abs(s) >= np.abs(v)
    c = c + np.where(big, (s - t) + v, (v - t) + s)
    return t, c


@dataclass(frozen=True, eq=False)
class CompensatedArray:
    """An array-valued running sum with a separate compensation term."""

    total: np.ndarray
    comp: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "CompensatedArray":
        return cls(np.zeros(shape), np.zeros(shape))

    def add(self, v) -> "CompensatedArray":
        t, c = _two_sum(self.total, self.comp, np.asarray(v, dtype=np.float64))
        return CompensatedArray(t, c)

    def merge(self, other: "CompensatedArray") -> "CompensatedArray":
        t, c = _two_sum(self.total, self.comp, other.total)
        t, c = _two_sum(t, c, other.comp)
        return CompensatedArray(t, c)

    def value(self) -> np.ndarray:
        return self.total + self.comp


@dataclass(frozen=True, eq=False)
class AccumulatorState:
    """Partial autocorrelation sums over the samples seen so far."""

    L: int
    order: int
    dim: int
    junction: str
    s1: CompensatedArray
    s2: CompensatedArray
    s3: CompensatedArray | None
    n_samples: int = 0
    n_segments: int = 0
    head: np.ndarray | None = None
    tail: np.ndarray | None = None

    @classmethod
    def empty(cls, L: int, order: int = 3, dim: int = 1, junction: str = EXACT) -> "AccumulatorState":
        if L < 1:
            raise ValueError("L must be at least 1")
        if order not in (1, 2, 3):
            raise ValueError("order must be 1, 2 or 3")
        if dim == 2 and order == 3:
            raise NotImplementedError("third-order accumulation is unimplemented in 2-D")
        if dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if junction not in (EXACT, PAPER):
            raise ValueError(f"unknown junction policy {junction!r}")
        shape2 = (L,) if dim == 1 else (2 * L - 1, 2 * L - 1)
        s3 = CompensatedArray.zeros(tri_size(L)) if order == 3 else None
        return cls(L, order, dim, junction, CompensatedArray.zeros(()),
                   CompensatedArray.zeros(shape2), s3)

    @property
    def max_shift(self) -> int:
        return self.L - 1

    def _check_compatible(self, other: "AccumulatorState") -> None:
        mine = (self.L, self.order, self.dim, self.junction)
        theirs = (other.L, other.order, other.dim, other.junction)
        if mine != theirs:
            raise ValueError(f"cannot combine accumulators with (L, order, dim, junction) {mine} and {theirs}")


def _triangle(m: np.ndarray) -> np.ndarray:
    """Lower triangle (l2 <= l1) of a square array in canonical storage order."""
    r, c = np.tril_indices(m.shape[0])
    return m[r, c]


def _segment_sums(y: np.ndarray, L: int, order: int):
    """Within-segment sums; products reaching past the segment end are zero."""
    n = y.size
    ypad = np.concatenate([y, np.zeros(L - 1)])
    windows = sliding_window_view(ypad, L)
    s1 = CompensatedArray.zeros(())
    s2 = CompensatedArray.zeros(L)
    s3 = CompensatedArray.zeros(tri_size(L)) if order == 3 else None
    for b in range(0, n, BLOCK):
        Y = np.ascontiguousarray(windows[b:b + BLOCK])
        w = Y[:, 0]
        s1 = s1.add(w.sum())
        if order >= 2:
            s2 = s2.add(w @ Y)
        if order == 3:
            s3 = s3.add(_triangle((Y * w[:, None]).T @ Y))
    return s1, s2, s3


def _cross_sums(tail: np.ndarray, head: np.ndarray, L: int, order: int):
    """Products with the first factor in ``tail`` and the farthest in ``head``."""
    nt = tail.size
    t = np.concatenate([tail, head, np.zeros(L - 1)])
    W = sliding_window_view(t, L)[:nt]
    i = np.arange(nt)[:, None]
    lag = np.arange(L)[None, :]
    crosses = (i + lag) >= nt
    w = W[:, 0]
    s2 = w @ (W * crosses)
    s3 = None
    if order == 3:
        m = np.zeros((L, L))
        reach = np.maximum.outer(np.arange(L), np.arange(L))
        for r in range(nt):
            mask = (r + reach) >= nt
            m += w[r] * np.outer(W[r], W[r]) * mask
        s3 = _triangle(m)
    return s2, s3


def combine(a: AccumulatorState, b: AccumulatorState) -> AccumulatorState:
    """Merge states over consecutive sample ranges (``a`` before ``b``)."""
    a._check_compatible(b)
    if a.n_samples == 0 and a.n_segments == 0:
        return b
    if b.n_samples == 0 and b.n_segments == 0:
        return a
    s1 = a.s1.merge(b.s1)
    s2 = a.s2.merge(b.s2)
    s3 = a.s3.merge(b.s3) if a.s3 is not None else None
    head, tail = a.head, b.tail
    if a.junction == EXACT and a.dim == 1 and a.L > 1 and a.order >= 2:
        c2, c3 = _cross_sums(a.tail, b.head, a.L, a.order)
        s2 = s2.add(c2)
        if s3 is not None:
            s3 = s3.add(c3)
    return replace(a, s1=s1, s2=s2, s3=s3, n_samples=a.n_samples + b.n_samples,
                   n_segments=a.n_segments + b.n_segments, head=head, tail=tail)


def accumulate_segment(state: AccumulatorState, segment) -> AccumulatorState:
    """Fold one 1-D segment into ``state``."""
    if state.dim != 1:
        raise ValueError("use accumulate_2d for 2-D accumulators")
    y = np.asarray(segment, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError(f"segments must be 1-D, got shape {y.shape}")
    if y.size < state.L:
        raise ValueError(f"segment of length {y.size} is shorter than L = {state.L}")
    s1, s2, s3 = _segment_sums(y, state.L, state.order)
    k = state.L - 1
    local = replace(state, s1=s1, s2=s2, s3=s3, n_samples=y.size, n_segments=1,
                    head=y[:k].copy(), tail=y[y.size - k:].copy())
    return combine(state, local)


def accumulate_2d(state: AccumulatorState, image) -> AccumulatorState:
    """Fold one 2-D observation into a second-order 2-D accumulator.

    Observations are independent images, so there are no junctions.
    """
    if state.dim != 2:
        raise ValueError("accumulate_2d needs a 2-D accumulator")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D observation, got shape {img.shape}")
    if min(img.shape) < state.L:
        raise ValueError(f"observation {img.shape} smaller than L = {state.L} along an axis")
    s2 = state.s2.add(raw_ac2_2d(img, state.L - 1)) if state.order >= 2 else state.s2
    return replace(state, s1=state.s1.add(img.sum()), s2=s2,
                   n_samples=state.n_samples + img.size, n_segments=state.n_segments + 1)


def finalize(state: AccumulatorState) -> AutocorrSet:
    """Divide the running sums by the total number of samples."""
    if state.n_samples <= 0:
        raise ValueError("empty stream: no samples accumulated")
    N = state.n_samples
    a3 = state.s3.value() / N if state.s3 is not None else None
    a2 = state.s2.value() / N
    if state.order < 2:
        a2 = np.full(a2.shape, np.nan)
    return AutocorrSet(a1=float(state.s1.value()) / N, a2=a2, a3=a3, n_samples=N,
                       n_segments=state.n_segments, dim=state.dim)


finalize_2d = finalize


def accumulate(segments: Iterable, L: int, order: int = 3, junction: str = EXACT) -> AccumulatorState:
    """Convenience fold of an iterable of 1-D segments."""
    state = AccumulatorState.empty(L, order, 1, junction)
    for seg in segments:
        state = accumulate_segment(state, seg)
    return state


def parallel_accumulate(segments: Iterable, L: int, order: int = 3, junction: str = EXACT,
                        threads: int = 1) -> AccumulatorState:
    """Accumulate segments on a thread pool and reduce in stream order.

    At most ``threads`` segments are in flight; ``combine`` is associative,
    so the result matches the serial fold.
    """
    if threads <= 1:
        return accumulate(segments, L, order, junction)
    from concurrent.futures import ThreadPoolExecutor

    empty = AccumulatorState.empty(L, order, 1, junction)
    state = empty
    it = iter(segments)
    with ThreadPoolExecutor(max_workers=threads) as ex:
        while True:
            batch = [seg for _, seg in zip(range(threads), it)]
            if not batch:
                break
            for part in ex.map(lambda seg: accumulate_segment(empty, seg), batch):
                state = combine(state, part)
    return state


def empirical_ac(segments: Iterable, L: int, order: int = 3, junction: str = EXACT) -> AutocorrSet:
    return finalize(accumulate(segments, L, order, junction))


def accumulate_checkpoints(segments: Iterable, L: int, checkpoints, order: int = 3,
                           junction: str = EXACT) -> list[AutocorrSet]:
    """Finalized autocorrelations of growing prefixes of a stream.

    Each checkpoint must fall on a segment boundary of ``segments``.
    """
    targets = sorted(int(c) for c in checkpoints)
    out = []
    state = AccumulatorState.empty(L, order, 1, junction)
    for seg in segments:
        state = accumulate_segment(state, seg)
        while targets and state.n_samples >= targets[0]:
            if state.n_samples != targets[0]:
                raise ValueError(f"checkpoint {targets[0]} is not on a segment boundary")
            out.append(finalize(state))
            targets.pop(0)
        if not targets:
            break
    if targets:
        raise ValueError(f"stream ended before checkpoints {targets}")
    return out
