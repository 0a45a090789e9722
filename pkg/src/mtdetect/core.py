"""Domain types shared across the package.

All types are immutable after construction. Arrays are copied on the way in
and flagged read-only, so instances can be shared freely between threads.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

FORMAT_VERSION = 1

SEPARATED = "separated"
POISSON = "poisson"


class FormatError(ValueError):
    """Raised when a persisted artifact is malformed or has an unknown version."""


def _frozen(values, ndim=None) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def tri_size(L: int) -> int:
    """Number of entries of the canonical triangle 0 <= l2 <= l1 <= L-1."""
    return L * (L + 1) // 2


def tri_index(l1: int, l2: int) -> int:
    """Flat offset of (l1, l2) in the canonical triangle, row-major in l1."""
    return l1 * (l1 + 1) // 2 + l2


def tri_pairs(L: int) -> np.ndarray:
    """All canonical (l1, l2) pairs in storage order, shape (L(L+1)/2, 2)."""
    return np.array([(l1, l2) for l1 in range(L) for l2 in range(l1 + 1)], dtype=np.int64).reshape(-1, 2)


def canonical_pair(l1: int, l2: int) -> tuple[int, int]:
    """Map any signed shift pair onto the canonical triangle.

    The third-order autocorrelation only depends on the set of points
    ``{0, l1, l2}`` up to translation, so sorting the points and measuring
    from the smallest gives the canonical representative.
    """
    p0, p1, p2 = sorted((0, int(l1), int(l2)))
    return p2 - p0, p1 - p0


@dataclass(frozen=True, eq=False)
class Signal:
    """A deterministic 1-D signal of length L or a 2-D L x L image."""

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.values)
        if arr.ndim not in (1, 2):
            raise ValueError(f"signal must be 1-D or 2-D, got shape {arr.shape}")
        if arr.ndim == 2 and arr.shape[0] != arr.shape[1]:
            raise ValueError(f"2-D signals must be square, got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError("signal length must be at least 1")
        if not np.all(np.isfinite(arr)):
            raise ValueError("signal values must be finite")
        object.__setattr__(self, "values", arr)

    @property
    def L(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.ndim

    def __eq__(self, other):
        return isinstance(other, Signal) and np.array_equal(self.values, other.values)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Signal":
        sig = cls(np.asarray(d["values"], dtype=np.float64))
        if sig.dim != d.get("dim", sig.dim):
            raise FormatError("signal dim does not match its values")
        return sig


@dataclass(frozen=True)
class PlacementModel:
    """How occurrence start positions are drawn.

    ``kind`` is ``"separated"`` (starts at least 2L-1 apart) or ``"poisson"``
    (i.i.d. Poisson(gamma / L) counts per position).
    """

    kind: str = SEPARATED

    def __post_init__(self):
        if self.kind not in (SEPARATED, POISSON):
            raise ValueError(f"unknown placement model {self.kind!r}")

    @staticmethod
    def rate(gamma: float, L: int) -> float:
        """Per-position Poisson rate for density ``gamma``."""
        return gamma / L


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """K signals with per-class densities gamma_k and a noise level."""

    signals: tuple
    densities: tuple
    noise_sigma: float = 0.0

    def __post_init__(self):
        sigs = tuple(s if isinstance(s, Signal) else Signal(s) for s in self.signals)
        dens = tuple(float(g) for g in self.densities)
        object.__setattr__(self, "signals", sigs)
        object.__setattr__(self, "densities", dens)
        object.__setattr__(self, "noise_sigma", float(self.noise_sigma))
        if len(sigs) < 1:
            raise ValueError("a mixture needs at least one signal")
        if len(sigs) != len(dens):
            raise ValueError("one density per signal is required")
        if len({(s.L, s.dim) for s in sigs}) != 1:
            raise ValueError("all signals must share length and dimension")

    @classmethod
    def from_pi(cls, signals: Sequence, gamma: float, pi: Sequence[float] | None = None,
                noise_sigma: float = 0.0) -> "MixtureModel":
        K = len(signals)
        pi = np.full(K, 1.0 / K) if pi is None else np.asarray(pi, dtype=float)
        return cls(tuple(signals), tuple(gamma * pi), noise_sigma)

    @property
    def K(self) -> int:
        return len(self.signals)

    @property
    def L(self) -> int:
        return self.signals[0].L

    @property
    def dim(self) -> int:
        return self.signals[0].dim

    @property
    def gamma(self) -> float:
        return float(sum(self.densities))

    @property
    def pi(self) -> np.ndarray:
        g = np.asarray(self.densities)
        return g / g.sum()

    def __eq__(self, other):
        return (isinstance(other, MixtureModel) and self.signals == other.signals
                and self.densities == other.densities and self.noise_sigma == other.noise_sigma)

    def to_dict(self) -> dict:
        return {
            "signals": [s.to_dict() for s in self.signals],
            "densities": list(self.densities),
            "noise_sigma": self.noise_sigma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureModel":
        return cls(tuple(Signal.from_dict(s) for s in d["signals"]), tuple(d["densities"]),
                   d.get("noise_sigma", 0.0))

    def digest(self) -> str:
        """Short content hash, recorded in stream headers."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def validate(model: MixtureModel, placement: PlacementModel) -> list[str]:
    """Return every violated model invariant; an empty list means ok."""
    problems = []
    for k, g in enumerate(model.densities):
        if not g > 0:
            problems.append(f"density of signal {k} must be positive, got {g}")
    if not model.noise_sigma >= 0:
        problems.append(f"noise sigma must be non-negative, got {model.noise_sigma}")
    if placement.kind == SEPARATED:
        L = model.L
        cap = (L / (2 * L - 1)) ** model.dim
        if model.gamma > cap:
            name = "L/(2L-1)" if model.dim == 1 else "(L/(2L-1))^2"
            problems.append(f"density exceeds {name} = {cap:.6g} (got gamma = {model.gamma:.6g})")
    return problems


@dataclass(frozen=True, eq=False)
class AutocorrSet:
    """First-, second- and third-order autocorrelations up to shift L-1.

    In 1-D, ``a2[l]`` holds shifts 0..L-1 and ``a3`` holds the canonical
    triangle 0 <= l2 <= l1 <= L-1 flattened by :func:`tri_index`. In 2-D,
    ``a2`` is the full (2L-1) x (2L-1) grid of shifts with zero shift at the
    centre and ``a3`` is absent.
    """

    a1: float
    a2: np.ndarray
    a3: np.ndarray | None = None
    n_samples: int = 0
    n_segments: int = 1
    dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "a1", float(self.a1))
        a2 = _frozen(self.a2)
        object.__setattr__(self, "a2", a2)
        if self.dim == 1:
            if a2.ndim != 1:
                raise ValueError("1-D a2 must be a vector")
            if self.a3 is not None:
                a3 = _frozen(self.a3, ndim=1)
                if a3.size != tri_size(a2.size):
                    raise ValueError(f"a3 must hold {tri_size(a2.size)} triangle entries, got {a3.size}")
                object.__setattr__(self, "a3", a3)
        elif self.dim == 2:
            if a2.ndim != 2 or a2.shape[0] != a2.shape[1] or a2.shape[0] % 2 != 1:
                raise ValueError("2-D a2 must be a square grid of odd size 2L-1")
            if self.a3 is not None:
                raise NotImplementedError("third-order autocorrelations are not implemented in 2-D")
        else:
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")

    @property
    def L(self) -> int:
        return self.a2.size if self.dim == 1 else (self.a2.shape[0] + 1) // 2

    @property
    def max_order(self) -> int:
        return 2 if self.a3 is None else 3

    def a3_at(self, l1: int, l2: int) -> float:
        return expand_symmetries(self, l1, l2)

    def a2_at(self, l: int) -> float:
        l = abs(int(l))
        if l >= self.L:
            raise IndexError(f"shift {l} outside stored range 0..{self.L - 1}")
        return float(self.a2[l])

    def a3_matrix(self) -> np.ndarray:
        """a3[l1, l2] for all 0 <= l1, l2 <= L-1 as a symmetric L x L array."""
        if self.a3 is None:
            raise ValueError("no third-order autocorrelation stored")
        L = self.L
        out = np.empty((L, L))
        for l1 in range(L):
            for l2 in range(l1 + 1):
                out[l1, l2] = out[l2, l1] = self.a3[tri_index(l1, l2)]
        return out

    def replace(self, **kw) -> "AutocorrSet":
        d = dict(a1=self.a1, a2=self.a2, a3=self.a3, n_samples=self.n_samples,
                 n_segments=self.n_segments, dim=self.dim)
        d.update(kw)
        return AutocorrSet(**d)

    def __eq__(self, other):
        if not isinstance(other, AutocorrSet):
            return False
        same_a3 = (self.a3 is None and other.a3 is None) or (
            self.a3 is not None and other.a3 is not None and np.array_equal(self.a3, other.a3))
        return (self.a1 == other.a1 and np.array_equal(self.a2, other.a2) and same_a3
                and self.n_samples == other.n_samples and self.n_segments == other.n_segments
                and self.dim == other.dim)

    # -- persistence ------------------------------------------------------

    def offsets(self) -> dict:
        """Offset table (in float64 elements) of each block in the payload."""
        table = {"a1": [0, 1], "a2": [1, int(self.a2.size)]}
        if self.a3 is not None:
            table["a3"] = [1 + int(self.a2.size), int(self.a3.size)]
        return table

    def payload(self) -> bytes:
        parts = [np.array([self.a1]), self.a2.ravel()]
        if self.a3 is not None:
            parts.append(self.a3)
        return np.concatenate(parts).astype("<f8").tobytes()

    def header(self, payload_name: str) -> dict:
        return {
            "format": "mtdetect.autocorr",
            "format_version": FORMAT_VERSION,
            "dim": self.dim,
            "L": self.L,
            "max_order": self.max_order,
            "n_samples": int(self.n_samples),
            "n_segments": int(self.n_segments),
            "a2_shape": list(self.a2.shape),
            "dtype": "<f8",
            "payload": payload_name,
            "offsets": self.offsets(),
        }

    def save(self, path: str | os.PathLike) -> None:
        """Write ``path`` (JSON header) and ``path`` + ``.bin`` (payload)."""
        path = os.fspath(path)
        bin_path = path + ".bin"
        with open(bin_path, "wb") as fh:
            fh.write(self.payload())
        with open(path, "w") as fh:
            json.dump(self.header(os.path.basename(bin_path)), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "AutocorrSet":
        path = os.fspath(path)
        try:
            with open(path) as fh:
                head = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not a JSON header ({exc})") from exc
        if head.get("format") != "mtdetect.autocorr":
            raise FormatError(f"{path}: not an autocorrelation artifact")
        if head.get("format_version") != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format version {head.get('format_version')}")
        bin_path = os.path.join(os.path.dirname(path), head["payload"])
        flat = np.fromfile(bin_path, dtype="<f8")
        off = head["offsets"]
        expected = sum(n for _, n in off.values())
        if flat.size != expected:
            raise FormatError(f"{bin_path}: payload holds {flat.size} values, header expects {expected}")

        def block(name):
            start, n = off[name]
            return flat[start:start + n].astype(np.float64)

        a3 = block("a3") if "a3" in off else None
        return cls(a1=block("a1")[0], a2=block("a2").reshape(head["a2_shape"]), a3=a3,
                   n_samples=head["n_samples"], n_segments=head["n_segments"], dim=head["dim"])


def expand_symmetries(ac: AutocorrSet, l1: int, l2: int) -> float:
    """Third-order autocorrelation at any signed pair of shifts.

    Uses ``a3[l1, l2] = a3[l2, l1] = a3[-l1, l2 - l1]`` to reduce the query
    to the stored triangle.
    """
    if ac.a3 is None:
        raise ValueError("no third-order autocorrelation stored")
    L = ac.L
    if abs(l1) > L - 1 or abs(l2) > L - 1:
        raise IndexError(f"shifts ({l1}, {l2}) outside [-(L-1), L-1] for L = {L}")
    c1, c2 = canonical_pair(l1, l2)
    if c1 > L - 1:
        raise IndexError(f"shifts ({l1}, {l2}) span {c1} > L-1, which is not stored")
    return float(ac.a3[tri_index(c1, c2)])


@dataclass(frozen=True)
class StartTrace:
    """Outcome of one optimizer start."""

    cost: float
    grad_norm: float
    iterations: int
    status: str = "ok"

    def to_dict(self) -> dict:
        return {"cost": self.cost, "grad_norm": self.grad_norm, "iterations": self.iterations,
                "status": self.status}


@dataclass(frozen=True, eq=False)
class SolveReport:
    """Estimated mixture plus per-start optimizer diagnostics."""

    estimates: MixtureModel | None
    per_start: tuple = ()
    aligned_errors: tuple | None = None
    best_index: int | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "per_start", tuple(self.per_start))
        if self.aligned_errors is not None:
            errs = tuple(float(e) for e in self.aligned_errors)
            if any(not e >= 0 for e in errs):
                raise ValueError("aligned errors must be non-negative")
            object.__setattr__(self, "aligned_errors", errs)

    @property
    def best_cost(self) -> float:
        costs = [t.cost for t in self.per_start if np.isfinite(t.cost)]
        return min(costs) if costs else float("inf")

    def to_dict(self) -> dict:
        return {
            "format": "mtdetect.solve_report",
            "format_version": FORMAT_VERSION,
            "estimates": None if self.estimates is None else self.estimates.to_dict(),
            "per_start": [t.to_dict() for t in self.per_start],
            "best_cost": self.best_cost,
            "best_index": self.best_index,
            "aligned_errors": None if self.aligned_errors is None else list(self.aligned_errors),
            "extras": self.extras,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolveReport":
        if d.get("format_version") != FORMAT_VERSION:
            raise FormatError(f"unsupported solve report version {d.get('format_version')}")
        est = None if d["estimates"] is None else MixtureModel.from_dict(d["estimates"])
        return cls(est, tuple(StartTrace(**t) for t in d["per_start"]), d["aligned_errors"],
                   d.get("best_index"), d.get("extras", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
