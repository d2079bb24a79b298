"""Shadow chains generated by control-perturbed differential equations.

A solution of ``dz/dt = g(z) + u(t)`` is an ``eps``-shadow chain of the flow
of ``g`` whenever every unit window of ``‖u‖`` integrates to less than
``eps·e^{-L}``; this module builds such solutions and certifies them.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Curve, DomainEscapeError, UsageError
from .semiflow import DOMAIN_TOL, SemiflowSpec, lipschitz_spot_check

WINDOW_GRID = 0.01
QUAD_STEP = 1e-3
SIGNAL_KINDS = ("constant", "piecewise_constant", "sinusoidal")


def _abs_sin_antiderivative(x):
    """An antiderivative of ``|sin x|`` valid on the whole real line."""
    x = np.asarray(x, dtype=float)
    k = np.floor(x / math.pi)
    return 2.0 * k + 1.0 - np.cos(x - k * math.pi)


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """A deterministic control ``u: [0, duration] -> R^d``.

    ``constant`` holds ``vectors[0]``; ``piecewise_constant`` holds
    ``vectors[i]`` on ``[breakpoints[i-1], breakpoints[i])``;
    ``sinusoidal`` is ``amplitude·sin(2π·frequency·t + phase)``.
    """

    kind: str
    duration: float
    vectors: np.ndarray = None
    breakpoints: np.ndarray = field(default_factory=lambda: np.zeros(0))
    amplitude: np.ndarray = None
    frequency: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in SIGNAL_KINDS:
            raise UsageError(f"unknown signal kind {self.kind!r}")
        if not self.duration > 0:
            raise UsageError("signal duration must be positive")
        bp = np.asarray(self.breakpoints, dtype=float).reshape(-1)
        object.__setattr__(self, "breakpoints", bp)
        if self.kind == "sinusoidal":
            amp = np.asarray(self.amplitude, dtype=float).reshape(-1)
            if amp.size == 0 or not np.all(np.isfinite(amp)):
                raise UsageError("sinusoidal signal needs a finite amplitude vector")
            object.__setattr__(self, "amplitude", amp)
            return
        vec = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if self.kind == "constant" and vec.shape[0] != 1:
            raise UsageError("constant signal takes exactly one vector")
        if self.kind == "piecewise_constant":
            if vec.shape[0] != bp.size + 1:
                raise UsageError("piecewise signal needs one more vector than breakpoints")
            if bp.size and (np.any(np.diff(bp) <= 0) or bp[0] <= 0 or bp[-1] >= self.duration):
                raise UsageError("breakpoints must increase strictly inside (0, duration)")
        if not np.all(np.isfinite(vec)):
            raise UsageError("signal vectors must be finite")
        object.__setattr__(self, "vectors", vec)

    # constructors ---------------------------------------------------------------
    @classmethod
    def constant(cls, vector, duration: float) -> "ControlSignal":
        return cls("constant", float(duration), vectors=np.atleast_1d(np.asarray(vector, float))[None, :])

    @classmethod
    def piecewise(cls, breakpoints, vectors, duration: float) -> "ControlSignal":
        return cls("piecewise_constant", float(duration), vectors=vectors, breakpoints=breakpoints)

    @classmethod
    def sinusoidal(cls, amplitude, frequency: float, duration: float,
                   phase: float = 0.0) -> "ControlSignal":
        return cls("sinusoidal", float(duration), amplitude=amplitude,
                   frequency=float(frequency), phase=float(phase))

    @property
    def dim(self) -> int:
        return (self.amplitude if self.kind == "sinusoidal" else self.vectors).shape[-1]

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.kind == "sinusoidal":
            s = np.sin(2 * math.pi * self.frequency * t + self.phase)
            return s[..., None] * self.amplitude
        idx = np.searchsorted(self.breakpoints, t, side="right")
        return self.vectors[idx]

    def sup_norm(self) -> float:
        if self.kind == "sinusoidal":
            return float(np.linalg.norm(self.amplitude))
        return float(np.linalg.norm(self.vectors, axis=1).max())

    def norm(self, t) -> np.ndarray:
        return np.linalg.norm(self(t), axis=-1)

    def scaled(self, factor: float) -> "ControlSignal":
        if self.kind == "sinusoidal":
            return ControlSignal.sinusoidal(self.amplitude * factor, self.frequency,
                                            self.duration, self.phase)
        return ControlSignal(self.kind, self.duration, vectors=self.vectors * factor,
                             breakpoints=self.breakpoints)

    # integrals ------------------------------------------------------------------
    def integral_norm(self, a, b) -> np.ndarray:
        """Exact ``∫_a^b ‖u(s)‖ ds`` (vectorised over ``a``, ``b``)."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.kind == "sinusoidal":
            w = 2 * math.pi * self.frequency
            amp = float(np.linalg.norm(self.amplitude))
            if w == 0:
                return amp * abs(math.sin(self.phase)) * (b - a)
            G = _abs_sin_antiderivative
            return amp * (G(w * b + self.phase) - G(w * a + self.phase)) / w
        norms = np.linalg.norm(self.vectors, axis=1)
        knots = np.concatenate([[0.0], self.breakpoints])
        # cumulative integral at each knot, then linear inside a piece
        cum = np.concatenate([[0.0], np.cumsum(np.diff(knots) * norms[:-1])])

        def F(s):
            i = np.searchsorted(self.breakpoints, s, side="right")
            return cum[i] + (s - knots[i]) * norms[i]

        return F(b) - F(a)

    def window_integrals(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit-window integrals of ``‖u‖`` on the 0.01 start grid (trapezoid, step 1e-3)."""
        if self.duration < 1.0:
            raise UsageError("unit-window budget needs duration >= 1")
        n_starts = int(math.floor((self.duration - 1.0) / WINDOW_GRID + 1e-9)) + 1
        starts = WINDOW_GRID * np.arange(n_starts)
        n_quad = int(round(self.duration / QUAD_STEP))
        grid = np.linspace(0.0, n_quad * QUAD_STEP, n_quad + 1)
        vals = self.norm(grid)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * QUAD_STEP)])
        per_start = int(round(WINDOW_GRID / QUAD_STEP))
        per_window = int(round(1.0 / QUAD_STEP))
        i0 = per_start * np.arange(n_starts)
        return starts, cum[i0 + per_window] - cum[i0]

    def worst_window_integral(self) -> float:
        return float(self.window_integrals()[1].max())

    # serialisation ------------------------------------------------------------
    def to_json(self) -> dict:
        out = {"kind": self.kind, "duration": self.duration}
        if self.kind == "sinusoidal":
            out.update(amplitude=self.amplitude.tolist(), frequency=self.frequency, phase=self.phase)
        else:
            out["vectors"] = self.vectors.tolist()
            if self.kind == "piecewise_constant":
                out["breakpoints"] = self.breakpoints.tolist()
        return out

    @classmethod
    def from_json(cls, data) -> "ControlSignal":
        if isinstance(data, str):
            data = json.loads(data)
        allowed = {
            "constant": {"kind", "duration", "vectors"},
            "piecewise_constant": {"kind", "duration", "vectors", "breakpoints"},
            "sinusoidal": {"kind", "duration", "amplitude", "frequency", "phase"},
        }
        kind = data.get("kind")
        if kind not in allowed:
            raise UsageError(f"unknown signal kind {kind!r}")
        extra = set(data) - allowed[kind]
        if extra:
            raise UsageError(f"unknown signal keys: {sorted(extra)}")
        if "duration" not in data:
            raise UsageError("signal needs a duration")
        kwargs = {k: v for k, v in data.items() if k != "kind"}
        return cls(kind, **kwargs)


def gronwall_budget(eps: float, L: float) -> float:
    """Per-unit-window control budget ``eps·e^{-L}``."""
    if not eps > 0 or L < 0:
        raise UsageError("need eps > 0 and L >= 0")
    return eps * math.exp(-L)


def gronwall_deviation_bound(u: ControlSignal, L: float, tau, t) -> np.ndarray:
    """``e^{L·τ}·∫_t^{t+τ} ‖u‖``, the bound on ``d(γ(t+τ), F^τ(γ(t)))``."""
    tau = np.asarray(tau, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(tau < 0) or np.any(tau > 1 + 1e-12):
        raise UsageError("tau must lie in [0, 1]")
    if np.any(t + tau > u.duration + 1e-9):
        raise UsageError("window runs past the signal duration")
    return np.exp(L * tau) * u.integral_norm(t, t + tau)


@dataclass(frozen=True)
class PerturbedOrbit:
    curve: Curve
    budget: float | None
    worst_window_integral: float
    budget_violated: bool | None


def _knot_times(u: ControlSignal, T: float, h: float) -> np.ndarray:
    n = int(math.floor(T / h + 1e-9))
    grid = h * np.arange(n + 1)
    if T - grid[-1] > 1e-12 * max(1.0, T):
        grid = np.append(grid, T)
    else:
        grid[-1] = T
    extra = u.breakpoints[(u.breakpoints > 0) & (u.breakpoints < T)]
    times = np.union1d(grid, extra)
    # drop near-duplicates so the curve stays strictly increasing
    keep = np.concatenate([[True], np.diff(times) > 1e-12])
    return times[keep]


def perturbed_orbit(spec: SemiflowSpec, u: ControlSignal, x0, T: float, h: float,
                    eps: float | None = None) -> PerturbedOrbit:
    """RK4 solution of ``dz/dt = g(z) + u(t)`` on ``[0, T]`` sampled at step ``h``.

    Integration steps are split at the signal's breakpoints so that each
    step sees a smooth right-hand side.
    """
    if spec.field is None or spec.lipschitz_L is None:
        raise UsageError("perturbed_orbit needs a system with a vector field and a Lipschitz constant")
    if T < 1.0 or T > u.duration + 1e-9:
        raise UsageError("need 1 <= T <= signal duration")
    if not h > 0:
        raise UsageError("step must be positive")
    if u.dim != spec.dim:
        raise UsageError("signal dimension does not match the system")
    x = np.asarray(x0, dtype=float).reshape(1, -1)
    if not spec.contains(x)[0]:
        raise UsageError("initial point outside the domain")
    times = _knot_times(u, T, h)
    dts = np.diff(times)
    # control values at the RK4 stage times; breakpoints are knots, so a piecewise
    # signal is constant on each step and takes the piece that starts the step
    if u.kind == "sinusoidal":
        U_a, U_m, U_b = u(times[:-1]), u(times[:-1] + 0.5 * dts), u(times[1:])
    else:
        U_a = U_m = U_b = u.vectors[np.searchsorted(u.breakpoints, times[:-1], side="right")]
    lo, hi = spec.lo, spec.hi
    bounded = np.array([spec.metric.period(i) is None for i in range(spec.dim)])
    pts = np.empty((times.size, spec.dim))
    pts[0] = x[0]
    g = spec.field
    for k in range(times.size - 1):
        dt = dts[k]
        um = U_m[k]
        k1 = g(x) + U_a[k]
        k2 = g(x + 0.5 * dt * k1) + um
        k3 = g(x + 0.5 * dt * k2) + um
        k4 = g(x + dt * k3) + U_b[k]
        x = spec.metric.wrap(x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
        row = x[0]
        if np.any(bounded & ((row < lo - DOMAIN_TOL) | (row > hi + DOMAIN_TOL))):
            raise DomainEscapeError(float(times[k + 1]), row)
        x[0] = np.where(bounded, np.clip(row, lo, hi), row)
        pts[k + 1] = x[0]
    worst = u.worst_window_integral()
    budget = None if eps is None else gronwall_budget(eps, spec.lipschitz_L)
    violated = None if eps is None else not worst < budget
    speed = spec.speed_bound + u.sup_norm()
    curve = Curve(times, pts, frozenset(), h_max=h + 1e-12,
                  continuity_budget=10.0 * h * speed, metric=spec.metric)
    return PerturbedOrbit(curve, budget, worst, violated)


def bound_vs_measured(orbit: PerturbedOrbit, spec: SemiflowSpec, u: ControlSignal,
                      tau_step: float = 1.0 / 16.0) -> list[dict]:
    """Probe table comparing measured defects against the Gronwall bound."""
    from .chains import shadow_defects

    t, tau, measured = shadow_defects(orbit.curve, spec, tau_step)
    bound = gronwall_deviation_bound(u, spec.lipschitz_L, tau, np.minimum(t, u.duration - tau))
    return [
        {"t": float(a), "tau": float(b), "bound": float(c), "measured": float(d)}
        for a, b, c, d in zip(t, tau, bound, measured)
    ]


def certificate(orbit: PerturbedOrbit, spec: SemiflowSpec, u: ControlSignal,
                tau_step: float = 1.0 / 16.0, max_rows: int = 64) -> dict:
    """Summary certificate for a perturbed orbit.

    The probe table is thinned to the ``max_rows`` probes with the smallest
    bound-minus-measured slack.
    """
    table = bound_vs_measured(orbit, spec, u, tau_step)
    slack = np.array([r["bound"] - r["measured"] for r in table])
    order = np.argsort(slack, kind="stable")[:max_rows]
    return {
        "budget": orbit.budget,
        "worst_window_integral": orbit.worst_window_integral,
        "budget_violated": orbit.budget_violated,
        "min_slack": float(slack.min()),
        "bound_vs_measured": [table[i] for i in sorted(order)],
    }


def lipschitz_check(spec: SemiflowSpec, n: int = 10_000, seed: int = 0) -> dict:
    """Compare the declared Lipschitz constant with the sampled field ratio."""
    observed = lipschitz_spot_check(spec, n=n, seed=seed)
    declared = spec.lipschitz_L
    return {"declared": declared, "observed": observed,
            "consistent": declared is not None and observed <= declared * (1 + 1e-9)}
