"""Geometric and chain data types shared by every other module.

Points are plain ``numpy`` arrays of shape ``(d,)``; batches of points are
arrays of shape ``(n, d)``.  The two chain notions live here as value types:
:class:`Curve` (a sampled, piecewise continuous curve) and
:class:`ConleyChain` (points plus hop times).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


class ChainrecError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(ChainrecError, ValueError):
    """Raised when an operation is called outside its preconditions."""


class DomainEscapeError(ChainrecError):
    """A trajectory left the phase-space domain."""

    def __init__(self, exit_time: float, point=None):
        self.exit_time = float(exit_time)
        self.point = None if point is None else np.asarray(point, dtype=float)
        super().__init__(f"trajectory left the domain at t={self.exit_time:.6g}")


def as_point(x, dim: int | None = None) -> np.ndarray:
    p = np.asarray(x, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise UsageError(f"a point must be a non-empty 1-d coordinate list, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise UsageError("point coordinates must be finite")
    if dim is not None and p.size != dim:
        raise UsageError(f"point has dimension {p.size}, expected {dim}")
    return p


@dataclass(frozen=True)
class Metric:
    """Euclidean metric, optionally periodic along some axes.

    ``periods[i]`` is ``None`` for an ordinary axis and the period for a
    wrapped one.  An empty ``periods`` tuple means no axis wraps.
    """

    kind: str = "euclidean"
    periods: tuple = ()

    def __post_init__(self):
        if self.kind not in ("euclidean", "torus"):
            raise UsageError(f"unknown metric kind {self.kind!r}")
        if self.kind == "torus" and not any(p is not None for p in self.periods):
            raise UsageError("torus metric needs at least one period")
        for p in self.periods:
            if p is not None and not p > 0:
                raise UsageError("periods must be positive")

    @classmethod
    def torus(cls, *periods) -> "Metric":
        return cls("torus", tuple(None if p is None else float(p) for p in periods))

    def period(self, axis: int):
        if axis < len(self.periods):
            return self.periods[axis]
        return None

    def delta(self, a, b) -> np.ndarray:
        """Shortest displacement from ``a`` to ``b`` (axis-wise, wrap-aware)."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        d = b - a
        if self.kind == "torus":
            d = np.array(d, dtype=float, copy=True)
            for i, p in enumerate(self.periods):
                if p is not None:
                    d[..., i] = (d[..., i] + 0.5 * p) % p - 0.5 * p
        return d

    def dist(self, a, b) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        diff = np.abs(a - b)
        if self.kind == "torus":
            diff = np.array(diff, dtype=float, copy=True)
            for i, p in enumerate(self.periods):
                if p is not None:
                    r = diff[..., i] % p
                    diff[..., i] = np.minimum(r, p - r)
        return np.sqrt(np.sum(diff * diff, axis=-1))

    def wrap(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind != "torus":
            return x
        x = np.array(x, dtype=float, copy=True)
        for i, p in enumerate(self.periods):
            if p is not None:
                x[..., i] = x[..., i] % p
                # x % p can round up to p itself for tiny negative inputs
                x[..., i] = np.where(x[..., i] >= p, 0.0, x[..., i])
        return x

    def to_json(self) -> dict:
        if self.kind == "euclidean":
            return {"kind": "euclidean"}
        return {"kind": "torus", "periods": list(self.periods)}

    @classmethod
    def from_json(cls, data: dict) -> "Metric":
        if data.get("kind", "euclidean") == "euclidean":
            return cls()
        return cls.torus(*data["periods"])


EUCLIDEAN = Metric()


def metric_distance(m: Metric, a, b) -> float:
    a = as_point(a)
    b = as_point(b)
    if a.size != b.size:
        raise UsageError(f"dimension mismatch: {a.size} vs {b.size}")
    return float(m.dist(a, b))


@dataclass(frozen=True)
class ChainParams:
    epsilon: float
    T_min: float = 0.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise UsageError("epsilon must be positive")
        if not self.T_min >= 0:
            raise UsageError("T_min must be non-negative")


def _fmt(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise UsageError("cannot serialize a non-finite number")
    s = format(x, ".17g")
    if "e" not in s and "." not in s and "n" not in s:
        s += ".0"
    return s


def _fmt_vec(v) -> str:
    return "[" + ",".join(_fmt(c) for c in v) + "]"


# Samples closer than this (relative to max(1, T)) are treated as the same time.
_SNAP = 1e-11


@dataclass(frozen=True, eq=False)
class Curve:
    """Time-stamped samples of a piecewise continuous curve ``γ:[0,T]→X``.

    A jump mark ``j`` declares a discontinuity between samples ``j-1`` and
    ``j``; on the open interval ``(t[j-1], t[j])`` the curve takes the
    right-limit value ``points[j]``.  Elsewhere the curve is the linear
    (wrap-aware) interpolation of its samples.

    ``h_max`` and ``continuity_budget`` are optional; when given, sample
    spacing and the size of undeclared steps are checked on construction.
    """

    times: np.ndarray
    points: np.ndarray
    jumps: frozenset = field(default_factory=frozenset)
    h_max: float | None = None
    continuity_budget: float | None = None
    metric: Metric = EUCLIDEAN

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        p = np.array(self.points, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if t.ndim != 1 or t.size < 2:
            raise UsageError("a curve needs at least two samples")
        if p.shape[0] != t.size:
            raise UsageError("times and points differ in length")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(p))):
            raise UsageError("curve samples must be finite")
        if t[0] != 0.0:
            raise UsageError("curve must start at t=0")
        if np.any(np.diff(t) <= 0):
            raise UsageError("curve times must be strictly increasing")
        if t[-1] < 1.0 - 1e-12:
            raise UsageError(f"curve duration {t[-1]:.6g} < 1")
        jumps = frozenset(int(j) for j in self.jumps)
        if any(j < 1 or j >= t.size for j in jumps):
            raise UsageError("jump marks must index samples 1..n-1")
        if self.h_max is not None and np.max(np.diff(t)) > self.h_max * (1 + 1e-9):
            raise UsageError("sample spacing exceeds h_max")
        if self.continuity_budget is not None:
            steps = self.metric.dist(p[:-1], p[1:])
            ok = steps <= self.continuity_budget
            for j in jumps:
                ok[j - 1] = True
            if not np.all(ok):
                k = int(np.argmin(ok))
                raise UsageError(
                    f"undeclared discontinuity of size {steps[k]:.3g} between samples {k} and {k + 1}"
                )
        t.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "jumps", jumps)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.times.size

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    def at(self, s) -> np.ndarray:
        """Evaluate the curve at time(s) ``s`` (clipped to ``[0, T]``)."""
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        t = self.times
        tol = _SNAP * max(1.0, self.T)
        s_arr = np.clip(s_arr, 0.0, self.T)
        hi = np.searchsorted(t, s_arr, side="left")
        hi = np.clip(hi, 1, t.size - 1)
        lo = hi - 1
        out = np.empty((s_arr.size, self.dim))
        snap_hi = np.abs(t[hi] - s_arr) <= tol
        snap_lo = np.abs(t[lo] - s_arr) <= tol
        if self.jumps:
            is_jump = np.zeros(t.size, dtype=bool)
            is_jump[list(self.jumps)] = True
            jump_iv = is_jump[hi]
        else:
            jump_iv = np.zeros(s_arr.size, dtype=bool)
        frac = (s_arr - t[lo]) / (t[hi] - t[lo])
        p0 = self.points[lo]
        step = self.metric.delta(p0, self.points[hi])
        interp = self.metric.wrap(p0 + frac[:, None] * step)
        out[:] = interp
        out[jump_iv] = self.points[hi[jump_iv]]
        out[snap_lo] = self.points[lo[snap_lo]]
        out[snap_hi] = self.points[hi[snap_hi]]
        if np.ndim(s) == 0:
            return out[0]
        return out

    def left_value(self, s: float) -> np.ndarray:
        """Value approached from the left at ``s`` (jump intervals hold the left sample)."""
        t = self.times
        hi = int(np.clip(np.searchsorted(t, s, side="left"), 1, t.size - 1))
        lo = hi - 1
        tol = _SNAP * max(1.0, self.T)
        if abs(t[lo] - s) <= tol:
            return np.array(self.points[lo])
        if hi in self.jumps:
            return np.array(self.points[lo])
        frac = (s - t[lo]) / (t[hi] - t[lo])
        p0 = self.points[lo]
        return self.metric.wrap(p0 + frac * self.metric.delta(p0, self.points[hi]))

    def to_json(self) -> str:
        samples = ",".join(f"[{_fmt(t)},{_fmt_vec(p)}]" for t, p in zip(self.times, self.points))
        jumps = ",".join(str(j) for j in sorted(self.jumps))
        return f'{{"samples":[{samples}],"jumps":[{jumps}]}}'

    @classmethod
    def from_json(cls, text: str | dict, **kwargs) -> "Curve":
        data = json.loads(text) if isinstance(text, str) else text
        extra = set(data) - {"samples", "jumps"}
        if extra:
            raise UsageError(f"unknown curve keys: {sorted(extra)}")
        times = [s[0] for s in data["samples"]]
        points = [s[1] for s in data["samples"]]
        return cls(np.array(times), np.array(points), frozenset(data.get("jumps", [])), **kwargs)


@dataclass(frozen=True, eq=False)
class ConleyChain:
    """Points ``c_0..c_n`` and hop times ``t_0..t_{n-1}``."""

    points: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        p = np.array(self.points, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        t = np.array(self.times, dtype=float).reshape(-1)
        if p.shape[0] < 2:
            raise UsageError("a Conley chain needs at least two points")
        if t.size != p.shape[0] - 1:
            raise UsageError("a chain with n+1 points needs n hop times")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(t))):
            raise UsageError("chain entries must be finite")
        if np.any(t <= 0):
            raise UsageError("hop times must be positive")
        p.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "times", t)

    @property
    def n_hops(self) -> int:
        return self.times.size

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    @property
    def total_time(self) -> float:
        return float(np.sum(self.times))

    def to_json(self) -> str:
        pts = ",".join(_fmt_vec(p) for p in self.points)
        ts = ",".join(_fmt(t) for t in self.times)
        return f'{{"points":[{pts}],"times":[{ts}]}}'

    @classmethod
    def from_json(cls, text: str | dict) -> "ConleyChain":
        data = json.loads(text) if isinstance(text, str) else text
        extra = set(data) - {"points", "times"}
        if extra:
            raise UsageError(f"unknown chain keys: {sorted(extra)}")
        return cls(np.array(data["points"], dtype=float), np.array(data["times"], dtype=float))
