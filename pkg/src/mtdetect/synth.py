"""Synthetic observations: signal occurrences at random starts plus white noise.

Placements are drawn up front from one generator; the observation itself is
rendered lazily, one segment at a time, each segment with its own noise
generator. Random streams come from numpy's ``PCG64`` seeded through
``SeedSequence``:

* placements and class labels: ``SeedSequence([seed, 0])``
* noise of segment ``j``: ``SeedSequence([seed, 1, j])``

so any segment can be regenerated independently of the others.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .core import FORMAT_VERSION, POISSON, SEPARATED, FormatError, MixtureModel, PlacementModel, validate

PRNG_NAME = "numpy.PCG64 via SeedSequence([seed, stream, segment])"
DEFAULT_SEGMENT = 10_000_000
MAX_REJECTION_FACTOR = 100

EITHER_AXIS = "either"
BOTH_AXES = "both"


class PlacementError(RuntimeError):
    """Accept/reject placement could not reach the requested count."""


def _entropy(seed) -> list[int]:
    return [int(s) for s in np.atleast_1d(seed)]


def _rng(seed, *tags) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(_entropy(seed) + list(tags))))


@dataclass(frozen=True, eq=False)
class ObservationStream:
    """A long noisy observation, rendered on demand, with its placements.

    ``positions`` holds occurrence starts (shape ``(M,)`` in 1-D, ``(M, 2)``
    in 2-D) sorted by position, ``classes`` the signal index of each.
    """

    model: MixtureModel
    placement: str
    shape: tuple
    positions: np.ndarray
    classes: np.ndarray
    seed: object
    segment_length: int = DEFAULT_SEGMENT
    extras: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return int(np.prod(self.shape))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_segments(self) -> int:
        if self.dim == 2:
            return 1
        return len(self.segment_bounds())

    def segment_bounds(self) -> list[tuple[int, int]]:
        """Segment ranges; a final remainder shorter than L joins its predecessor."""
        n, s = self.N, self.segment_length
        bounds = [(a, min(a + s, n)) for a in range(0, n, s)]
        if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < self.model.L:
            last = bounds.pop()
            bounds[-1] = (bounds[-1][0], last[1])
        return bounds

    def render(self, start: int, stop: int, segment_index: int = 0) -> np.ndarray:
        """Observation samples ``start:stop`` of a 1-D stream."""
        if self.dim != 1:
            raise ValueError("render() is for 1-D streams; use image() in 2-D")
        L = self.model.L
        n = stop - start
        sigma = self.model.noise_sigma
        if sigma > 0:
            y = sigma * _rng(self.seed, 1, segment_index).standard_normal(n)
        else:
            y = np.zeros(n)
        lo = np.searchsorted(self.positions, start - L + 1, side="left")
        hi = np.searchsorted(self.positions, stop, side="left")
        if hi > lo:
            pos = self.positions[lo:hi] - (start - L + 1)
            cls = self.classes[lo:hi]
            for k, sig in enumerate(self.model.signals):
                sel = pos[cls == k]
                if sel.size == 0:
                    continue
                counts = np.bincount(sel, minlength=n + L - 1).astype(np.float64)
                y += np.convolve(counts, sig.values)[L - 1:L - 1 + n]
        return y

    def segments(self) -> Iterator[np.ndarray]:
        """Yield segments in order; only one resides in memory at a time."""
        if self.dim == 2:
            yield self.image()
            return
        for j, (a, b) in enumerate(self.segment_bounds()):
            yield self.render(a, b, j)

    def to_array(self) -> np.ndarray:
        if self.dim == 2:
            return self.image()
        return np.concatenate(list(self.segments())) if self.N else np.zeros(0)

    def image(self) -> np.ndarray:
        """The full 2-D observation."""
        if self.dim != 2:
            raise ValueError("image() is for 2-D observations")
        H, W = self.shape
        sigma = self.model.noise_sigma
        if sigma > 0:
            img = sigma * _rng(self.seed, 1, 0).standard_normal((H, W))
        else:
            img = np.zeros((H, W))
        L = self.model.L
        for (r, c), k in zip(self.positions, self.classes):
            img[r:r + L, c:c + L] += self.model.signals[k].values
        return img

    def manifest_records(self) -> list[dict]:
        if self.dim == 1:
            return [{"position": int(p), "class": int(k)} for p, k in zip(self.positions, self.classes)]
        return [{"position": [int(p[0]), int(p[1])], "class": int(k)}
                for p, k in zip(self.positions, self.classes)]

    def header(self, payload_name: str | None = None) -> dict:
        return {
            "format": "mtdetect.stream",
            "format_version": FORMAT_VERSION,
            "dtype": "<f8",
            "N": self.N,
            "shape": list(self.shape),
            "segment_length": self.segment_length,
            "seed": _entropy(self.seed),
            "prng": PRNG_NAME,
            "placement": self.placement,
            "model_hash": self.model.digest(),
            "model": self.model.to_dict(),
            "n_occurrences": int(self.classes.size),
            "payload": payload_name,
        }


def _check_model(model: MixtureModel, placement: str) -> None:
    problems = validate(model, PlacementModel(placement))
    if problems:
        raise ValueError("; ".join(problems))


def _draw_classes(rng: np.random.Generator, model: MixtureModel, n: int) -> np.ndarray:
    if model.K == 1:
        return np.zeros(n, dtype=np.int64)
    return rng.choice(model.K, size=n, p=model.pi).astype(np.int64)


def occurrences_for(model: MixtureModel, N: int) -> int:
    """Occurrence count giving density ``model.gamma`` in a length-N stream."""
    return int(round(model.gamma * N / model.L))


def synth_well_separated(model: MixtureModel, N: int, target_occurrences: int | None = None,
                         seed=0, segment_length: int = DEFAULT_SEGMENT,
                         max_rejections: int | None = None) -> ObservationStream:
    """Place exactly ``target_occurrences`` well-separated occurrences.

    Starts are proposed uniformly, one at a time, and rejected if closer than
    2L-1 to an accepted start. The last occurrence is followed by at least
    L-1 signal-free samples. Class labels are i.i.d. from ``model.pi``.
    """
    if model.dim != 1:
        raise ValueError("synth_well_separated is 1-D; use synth_2d for images")
    _check_model(model, SEPARATED)
    L = model.L
    N = int(N)
    gap = 2 * L - 1
    M = occurrences_for(model, N) if target_occurrences is None else int(target_occurrences)
    if M < 0:
        raise ValueError("target_occurrences must be non-negative")
    if M * gap > N:
        raise ValueError(f"infeasible density: {M} occurrences of length {L} need N >= {M * gap} "
                         f"(cap gamma <= L/(2L-1) = {L / gap:.6g}), got N = {N}")
    n_starts = N - gap + 1
    cap = MAX_REJECTION_FACTOR * max(M, 1) if max_rejections is None else int(max_rejections)
    rng = _rng(seed, 0)
    blocked = bytearray(n_starts)
    ones = b"\x01" * (2 * gap)
    placed: list[int] = []
    rejections = 0
    need = M
    while need > 0:
        batch = rng.integers(0, n_starts, size=max(1024, 2 * need)).tolist()
        for c in batch:
            if blocked[c]:
                rejections += 1
                if rejections > cap:
                    raise PlacementError(
                        f"accept/reject stalled after {rejections} rejections with {len(placed)}/{M} "
                        f"placed; lower the density gamma")
                continue
            placed.append(c)
            a, b = max(0, c - gap + 1), min(n_starts, c + gap)
            blocked[a:b] = ones[:b - a]
            need -= 1
            if need == 0:
                break
    classes = _draw_classes(rng, model, M)
    positions = np.asarray(placed, dtype=np.int64)
    order = np.argsort(positions, kind="stable")
    return ObservationStream(model, SEPARATED, (N,), positions[order], classes[order], seed,
                             int(segment_length), {"rejections": rejections})


def synth_poisson(model: MixtureModel, N: int, seed=0, segment_length: int = DEFAULT_SEGMENT,
                  chunk: int = 1 << 22) -> ObservationStream:
    """Draw i.i.d. Poisson(gamma / L) occurrence counts at starts 0..N-L."""
    if model.dim != 1:
        raise ValueError("synth_poisson is 1-D")
    _check_model(model, POISSON)
    L = model.L
    N = int(N)
    rate = PlacementModel.rate(model.gamma, L)
    rng = _rng(seed, 0)
    n_starts = max(N - L + 1, 0)
    pos_parts = []
    for a in range(0, n_starts, chunk):
        counts = rng.poisson(rate, size=min(chunk, n_starts - a))
        nz = np.flatnonzero(counts)
        pos_parts.append(np.repeat(nz + a, counts[nz]))
    positions = np.concatenate(pos_parts) if pos_parts else np.zeros(0, dtype=np.int64)
    classes = _draw_classes(rng, model, positions.size)
    return ObservationStream(model, POISSON, (N,), positions.astype(np.int64), classes, seed,
                             int(segment_length))


def synth_2d(model: MixtureModel, H: int, W: int, mean_occurrences: float, seed=0,
             rule: str = EITHER_AXIS, max_rejections: int | None = None,
             fixed_count: bool = False) -> ObservationStream:
    """One H x W observation with a Poisson(mean_occurrences) number of images.

    With ``fixed_count`` exactly ``round(mean_occurrences)`` images are placed.

    ``rule="either"`` (default) rejects a start whose row and column offsets
    to some accepted start are both below 2L-1, i.e. the L-1 margins around
    two occurrences never overlap. ``rule="both"`` is stricter and demands
    both offsets be at least 2L-1 for every pair.
    """
    if model.dim != 2:
        raise ValueError("synth_2d needs 2-D signals")
    if rule not in (EITHER_AXIS, BOTH_AXES):
        raise ValueError(f"unknown separation rule {rule!r}")
    _check_model(model, SEPARATED)
    L = model.L
    gap = 2 * L - 1
    nr, nc = H - gap + 1, W - gap + 1
    if nr < 1 or nc < 1:
        raise ValueError(f"observation {H}x{W} too small for {L}x{L} images with margin")
    rng = _rng(seed, 0)
    M = int(round(mean_occurrences)) if fixed_count else int(rng.poisson(mean_occurrences))
    per_axis = (nr + gap - 1) // gap, (nc + gap - 1) // gap
    capacity = per_axis[0] * per_axis[1] if rule == EITHER_AXIS else min(per_axis)
    if M > capacity:
        raise ValueError(f"infeasible density: {M} occurrences exceed the packing bound {capacity} "
                         f"for gaps of 2L-1 = {gap} (cap L/(2L-1) per axis)")
    cap = MAX_REJECTION_FACTOR * max(M, 1) if max_rejections is None else int(max_rejections)
    placed = np.zeros((0, 2), dtype=np.int64)
    rejections = 0
    while placed.shape[0] < M:
        cand = np.array([rng.integers(0, nr), rng.integers(0, nc)])
        close = np.abs(placed - cand) < gap
        clash = close.all(axis=1) if rule == EITHER_AXIS else close.any(axis=1)
        if clash.any():
            rejections += 1
            if rejections > cap:
                raise PlacementError(f"accept/reject stalled with {placed.shape[0]}/{M} placed; "
                                     f"lower the density")
            continue
        placed = np.vstack([placed, cand])
    classes = _draw_classes(rng, model, M)
    order = np.lexsort((placed[:, 1], placed[:, 0])) if M else np.zeros(0, dtype=np.int64)
    return ObservationStream(model, SEPARATED, (int(H), int(W)), placed[order], classes[order], seed,
                             int(H) * int(W), {"rejections": rejections, "rule": rule})


# ---------------------------------------------------------------------------
# persistence


def write_stream(stream: ObservationStream, path: str | os.PathLike) -> dict:
    """Write raw little-endian float64 samples, a JSON sidecar and the manifest.

    Files: ``path`` (payload), ``path + ".json"`` (header) and
    ``path + ".manifest.jsonl"`` (one placement per line).
    """
    path = os.fspath(path)
    with open(path, "wb") as fh:
        for seg in stream.segments():
            fh.write(np.ascontiguousarray(seg, dtype="<f8").tobytes())
    head = stream.header(os.path.basename(path))
    with open(path + ".json", "w") as fh:
        json.dump(head, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(stream, path + ".manifest.jsonl")
    return head


def write_manifest(stream: ObservationStream, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        for rec in stream.manifest_records():
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    pos, cls = [], []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                pos.append(rec["position"])
                cls.append(rec["class"])
    return np.asarray(pos, dtype=np.int64), np.asarray(cls, dtype=np.int64)


def read_header(path: str | os.PathLike) -> dict | None:
    """Sidecar header of a raw stream, or None when there is none."""
    side = os.fspath(path) + ".json"
    if not os.path.exists(side):
        return None
    try:
        with open(side) as fh:
            head = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{side}: malformed header ({exc})") from exc
    if head.get("format") != "mtdetect.stream":
        raise FormatError(f"{side}: not a stream header")
    if head.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{side}: unsupported format version {head.get('format_version')}")
    return head


def read_stream_segments(path: str | os.PathLike, segment_length: int = DEFAULT_SEGMENT,
                         min_length: int = 1) -> Iterator[np.ndarray]:
    """Memory-map a raw float64 stream and yield it in segments.

    A final remainder shorter than ``min_length`` is folded into the
    previous segment.
    """
    path = os.fspath(path)
    if os.path.getsize(path) % 8:
        raise FormatError(f"{path}: size is not a multiple of 8 bytes")
    if os.path.getsize(path) == 0:
        return
    data = np.memmap(path, dtype="<f8", mode="r")
    n = data.size
    starts = list(range(0, n, segment_length))
    if len(starts) > 1 and n - starts[-1] < min_length:
        starts.pop()
    ends = starts[1:] + [n]
    for a, b in zip(starts, ends):
        yield np.array(data[a:b], dtype=np.float64)


def write_frames(streams, path: str | os.PathLike) -> dict:
    """Write independent 2-D observations as one raw file plus a JSON sidecar."""
    path = os.fspath(path)
    streams = list(streams)
    if not streams:
        raise ValueError("no observations to write")
    shape = streams[0].shape
    if any(s.shape != shape for s in streams):
        raise ValueError("all observations must share one shape")
    with open(path, "wb") as fh:
        for s in streams:
            fh.write(np.ascontiguousarray(s.image(), dtype="<f8").tobytes())
    head = streams[0].header(os.path.basename(path))
    head.update({"N": sum(s.N for s in streams), "n_frames": len(streams),
                 "n_occurrences": int(sum(s.classes.size for s in streams)),
                 "seed": _entropy(streams[0].seed)[:-1]})
    with open(path + ".json", "w") as fh:
        json.dump(head, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return head


def read_frames(path: str | os.PathLike, shape) -> Iterator[np.ndarray]:
    """Yield the 2-D observations stored by :func:`write_frames`."""
    path = os.fspath(path)
    H, W = (int(v) for v in shape)
    size = os.path.getsize(path)
    if size % (8 * H * W):
        raise FormatError(f"{path}: size is not a whole number of {H}x{W} frames")
    if size == 0:
        return
    data = np.memmap(path, dtype="<f8", mode="r").reshape(-1, H, W)
    for frame in data:
        yield np.array(frame, dtype=np.float64)
