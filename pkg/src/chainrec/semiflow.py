"""Evaluable semiflows ``F^t(x)``.

Built-in systems carry a closed-form flow together with their vector
field, so every analytic system has an ODE twin integrated by fixed-step
classical RK4.  Custom systems are polynomial vector fields read from data.
"""
from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import EUCLIDEAN, DomainEscapeError, Metric, UsageError

# Allowed overshoot past the domain boundary before a trajectory counts as escaped.
DOMAIN_TOL = 1e-9
DEFAULT_STEP = 1e-3


@dataclass(frozen=True, eq=False)
class SemiflowSpec:
    name: str
    kind: str
    domain: tuple
    metric: Metric
    field: Callable
    speed_bound: float
    closed_form: Callable | None = None
    lipschitz_L: float | None = None
    step: float = DEFAULT_STEP
    fixed_points: tuple = ()
    # closed axis-aligned boxes whose union is the global attractor
    attractor: tuple = ()
    forward_invariant: bool = True

    def __post_init__(self):
        if self.kind not in ("analytic", "ode"):
            raise UsageError(f"unknown semiflow kind {self.kind!r}")
        if self.kind == "analytic" and self.closed_form is None:
            raise UsageError("analytic kind needs a closed-form flow")
        dom = tuple((float(lo), float(hi)) for lo, hi in self.domain)
        for lo, hi in dom:
            if not lo < hi:
                raise UsageError("degenerate domain axis")
        object.__setattr__(self, "domain", dom)
        if not self.step > 0:
            raise UsageError("integration step must be positive")

    @property
    def dim(self) -> int:
        return len(self.domain)

    @property
    def lo(self) -> np.ndarray:
        return np.array([a for a, _ in self.domain])

    @property
    def hi(self) -> np.ndarray:
        return np.array([b for _, b in self.domain])

    def periodic_axes(self) -> list:
        return [i for i in range(self.dim) if self.metric.period(i) is not None]

    def ode_twin(self, step: float | None = None) -> "SemiflowSpec":
        return dataclasses.replace(self, kind="ode", step=self.step if step is None else step)

    def contains(self, X, tol: float = DOMAIN_TOL) -> np.ndarray:
        X = np.atleast_2d(X)
        ok = np.ones(X.shape[0], dtype=bool)
        for i, (lo, hi) in enumerate(self.domain):
            if self.metric.period(i) is None:
                ok &= (X[:, i] >= lo - tol) & (X[:, i] <= hi + tol)
        return ok

    def sample_uniform(self, rng: np.random.Generator, n: int, region=None) -> np.ndarray:
        box = self.domain if region is None else region
        lo = np.array([a for a, _ in box])
        hi = np.array([b for _, b in box])
        return lo + (hi - lo) * rng.random((n, self.dim))


def make_rng(seed: int = 0) -> np.random.Generator:
    """Counter-based generator; streams depend only on the seed."""
    return np.random.Generator(np.random.Philox(int(seed)))


# --- built-in systems -----------------------------------------------------

TWO_PI = 2.0 * math.pi


def _rightward_flow(t, X):
    return 1.0 - (1.0 - X) * np.exp(-t)


def _circle_flow(t, X):
    return X + t


def _circle_rest_flow(t, X):
    # cot(θ/2) decreases at unit rate; atan2 form keeps θ=0 fixed exactly.
    half = 0.5 * X
    s, c = np.sin(half), np.cos(half)
    return 2.0 * np.arctan2(s, c - t * s)


def _doublewell_scalar(t, x):
    e = np.exp(-2.0 * t)
    return x / np.sqrt(x * x + (1.0 - x * x) * e)


def _doublewell_flow(t, X):
    return _doublewell_scalar(t, X)


def _gradwell_flow(t, X):
    out = np.empty_like(X)
    out[:, 0] = _doublewell_scalar(t if np.ndim(t) == 0 else t.reshape(-1), X[:, 0])
    out[:, 1] = X[:, 1] * np.exp(-t if np.ndim(t) == 0 else -t.reshape(-1))
    return out


def _field_1d(f):
    def g(X):
        return f(X)
    return g


def _gradwell_field(X):
    x, y = X[:, 0], X[:, 1]
    return np.stack([x - x ** 3, -y], axis=1)


def _builtin_table():
    return {
        "rightward": dict(
            domain=((0.0, 1.0),),
            metric=EUCLIDEAN,
            field=_field_1d(lambda X: 1.0 - X),
            closed_form=_rightward_flow,
            speed_bound=1.0,
            lipschitz_L=1.0,
            fixed_points=((1.0,),),
            attractor=(((1.0, 1.0),),),
        ),
        "circle": dict(
            domain=((0.0, TWO_PI),),
            metric=Metric.torus(TWO_PI),
            field=_field_1d(lambda X: np.ones_like(X)),
            closed_form=_circle_flow,
            speed_bound=1.0,
            lipschitz_L=0.0,
            attractor=(((0.0, TWO_PI),),),
        ),
        "circle_rest": dict(
            domain=((0.0, TWO_PI),),
            metric=Metric.torus(TWO_PI),
            field=_field_1d(lambda X: 1.0 - np.cos(X)),
            closed_form=_circle_rest_flow,
            speed_bound=2.0,
            lipschitz_L=1.0,
            fixed_points=((0.0,),),
            attractor=(((0.0, TWO_PI),),),
        ),
        "doublewell1d": dict(
            domain=((-2.0, 2.0),),
            metric=EUCLIDEAN,
            field=_field_1d(lambda X: X - X ** 3),
            closed_form=_doublewell_flow,
            speed_bound=6.0,
            lipschitz_L=11.0,
            fixed_points=((-1.0,), (0.0,), (1.0,)),
            attractor=(((-1.0, 1.0),),),
        ),
        "gradwell2d": dict(
            domain=((-2.0, 2.0), (-2.0, 2.0)),
            metric=EUCLIDEAN,
            field=_gradwell_field,
            closed_form=_gradwell_flow,
            speed_bound=math.sqrt(40.0),
            lipschitz_L=11.0,
            fixed_points=((-1.0, 0.0), (0.0, 0.0), (1.0, 0.0)),
            attractor=(((-1.0, 1.0), (0.0, 0.0)),),
        ),
        # auxiliary linear systems used by the modulus and control checks
        "contraction": dict(
            domain=((-1.0, 1.0),),
            metric=EUCLIDEAN,
            field=_field_1d(lambda X: -X),
            closed_form=lambda t, X: X * np.exp(-t),
            speed_bound=1.0,
            lipschitz_L=1.0,
            fixed_points=((0.0,),),
            attractor=(((0.0, 0.0),),),
        ),
        "expanding": dict(
            domain=((-1.0, 1.0),),
            metric=EUCLIDEAN,
            field=_field_1d(lambda X: X),
            closed_form=lambda t, X: X * np.exp(t),
            speed_bound=1.0,
            lipschitz_L=1.0,
            fixed_points=((0.0,),),
            forward_invariant=False,
        ),
    }


BUILTIN_NAMES = ("rightward", "circle", "circle_rest", "doublewell1d", "gradwell2d")
AUXILIARY_NAMES = ("contraction", "expanding")


@functools.lru_cache(maxsize=None)
def builtin(name: str, kind: str = "analytic", step: float = DEFAULT_STEP) -> SemiflowSpec:
    table = _builtin_table()
    if name not in table:
        raise UsageError(f"unknown built-in system {name!r}")
    return SemiflowSpec(name=name, kind=kind, step=step, **table[name])


# --- polynomial vector fields ----------------------------------------------

MAX_DEGREE = 4


def polynomial_field(dim: int, terms) -> Callable:
    """Vector field from ``[component, coefficient, [powers...]]`` terms."""
    parsed = []
    for term in terms:
        if len(term) != 3:
            raise UsageError("polynomial term must be [component, coefficient, powers]")
        comp, coef, powers = int(term[0]), float(term[1]), [int(p) for p in term[2]]
        if not 0 <= comp < dim:
            raise UsageError(f"term component {comp} out of range")
        if len(powers) != dim or any(p < 0 for p in powers):
            raise UsageError("term powers must be non-negative, one per axis")
        if sum(powers) > MAX_DEGREE:
            raise UsageError(f"term degree exceeds {MAX_DEGREE}")
        parsed.append((comp, coef, tuple(powers)))

    def g(X):
        out = np.zeros_like(X)
        for comp, coef, powers in parsed:
            mono = np.full(X.shape[0], coef)
            for axis, p in enumerate(powers):
                if p:
                    mono = mono * X[:, axis] ** p
            out[:, comp] += mono
        return out

    return g


_SYSTEM_KEYS = {
    "kind", "name", "field", "coeffs", "step", "domain", "periods",
    "lipschitz", "speed_bound", "fixed_points", "attractor",
}


def system_from_config(cfg: dict) -> SemiflowSpec:
    extra = set(cfg) - _SYSTEM_KEYS
    if extra:
        raise UsageError(f"unknown system keys: {sorted(extra)}")
    kind = cfg.get("kind", "analytic")
    step = float(cfg.get("step", DEFAULT_STEP))
    if kind == "analytic":
        return builtin(cfg["name"], "analytic", step)
    if kind != "ode":
        raise UsageError(f"unknown system kind {kind!r}")
    field_id = cfg.get("field", "custom")
    if field_id != "custom":
        return builtin(field_id, "ode", step)
    if "domain" not in cfg or "coeffs" not in cfg:
        raise UsageError("custom ODE systems need 'domain' and 'coeffs'")
    domain = tuple(tuple(ax) for ax in cfg["domain"])
    periods = cfg.get("periods")
    metric = Metric.torus(*periods) if periods and any(p is not None for p in periods) else EUCLIDEAN
    g = polynomial_field(len(domain), cfg["coeffs"])
    speed = cfg.get("speed_bound")
    if speed is None:
        lo = np.array([a for a, _ in domain])
        hi = np.array([b for _, b in domain])
        X = lo + (hi - lo) * make_rng(0).random((20000, len(domain)))
        speed = 1.05 * float(np.max(np.linalg.norm(g(X), axis=1)))
    return SemiflowSpec(
        name="custom",
        kind="ode",
        domain=domain,
        metric=metric,
        field=g,
        speed_bound=float(speed),
        lipschitz_L=cfg.get("lipschitz"),
        step=step,
        fixed_points=tuple(tuple(p) for p in cfg.get("fixed_points", ())),
        attractor=tuple(tuple(tuple(ax) for ax in piece) for piece in cfg.get("attractor", ())),
    )


# --- integration ------------------------------------------------------------

def _rk4_step(g, X, h):
    if np.ndim(h) == 1:
        h = h[:, None]
    k1 = g(X)
    k2 = g(X + 0.5 * h * k1)
    k3 = g(X + 0.5 * h * k2)
    k4 = g(X + h * k3)
    return X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _confine(spec: SemiflowSpec, X, ok, elapsed, strict):
    """Wrap periodic axes, clamp tiny overshoot, flag (or raise on) escapes."""
    X = spec.metric.wrap(X)
    for i, (lo, hi) in enumerate(spec.domain):
        if spec.metric.period(i) is not None:
            continue
        col = X[:, i]
        bad = (col < lo - DOMAIN_TOL) | (col > hi + DOMAIN_TOL)
        bad &= ok
        if np.any(bad):
            if strict:
                k = int(np.argmax(bad))
                t_exit = elapsed if np.ndim(elapsed) == 0 else elapsed[k]
                raise DomainEscapeError(t_exit, X[k])
            ok &= ~bad
        X[:, i] = np.where(ok, np.clip(col, lo, hi), col)
    return X, ok


def _integrate(spec: SemiflowSpec, X, t, strict: bool):
    """Fixed-step RK4 from time 0 to ``t`` (scalar or per-row)."""
    X = np.array(X, dtype=float, copy=True)
    n = X.shape[0]
    h = spec.step
    ok = np.ones(n, dtype=bool)
    t_arr = np.broadcast_to(np.asarray(t, dtype=float), (n,))
    steps = np.floor(t_arr / h + 1e-9).astype(np.int64)
    rem = t_arr - steps * h
    rem = np.where(rem < 1e-12, 0.0, rem)
    uniform = n == 0 or bool(np.all(steps == steps[0]))
    max_steps = int(steps.max()) if n else 0
    for k in range(max_steps):
        if uniform:
            X = _rk4_step(spec.field, X, h)
            X, ok = _confine(spec, X, ok, (k + 1) * h, strict)
        else:
            act = k < steps
            Y = X[act]
            Y = _rk4_step(spec.field, Y, h)
            sub_ok = ok[act]
            Y, sub_ok = _confine(spec, Y, sub_ok, (k + 1) * h, strict)
            X[act] = Y
            ok[act] = sub_ok
    if np.any(rem > 0):
        act = rem > 0
        Y = _rk4_step(spec.field, X[act], rem[act])
        sub_ok = ok[act]
        Y, sub_ok = _confine(spec, Y, sub_ok, t_arr[act], strict)
        X[act] = Y
        ok[act] = sub_ok
    return X, ok


def _prepare(spec: SemiflowSpec, t, x):
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != spec.dim:
        raise UsageError(f"point dimension {X.shape[1]} does not match system dimension {spec.dim}")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise UsageError("semiflows are only defined for t >= 0")
    if t_arr.ndim > 0 and t_arr.shape != (X.shape[0],):
        raise UsageError("per-point times must match the number of points")
    return X, t_arr, single


def flow_batch(spec: SemiflowSpec, t, X):
    """``F^t`` on rows of ``X`` without raising; returns ``(Y, ok)``.

    Rows that start outside the domain or escape during integration have
    ``ok`` false and unspecified values.
    """
    X, t_arr, _ = _prepare(spec, t, X)
    X = spec.metric.wrap(X)
    ok0 = spec.contains(X)
    if spec.kind == "analytic":
        tt = t_arr if t_arr.ndim == 0 else t_arr[:, None]
        Y = spec.closed_form(tt, X)
        Y = spec.metric.wrap(Y)
        ok = ok0 & spec.contains(Y)
        for i, (lo, hi) in enumerate(spec.domain):
            if spec.metric.period(i) is None:
                Y[:, i] = np.clip(Y[:, i], lo, hi)
        return Y, ok
    Y, ok = _integrate(spec, X, t_arr, strict=False)
    return Y, ok & ok0


def evaluate(spec: SemiflowSpec, t, x) -> np.ndarray:
    """``F^t(x)`` for a point (shape ``(d,)``) or a batch (shape ``(n, d)``).

    ``t`` is a scalar or one time per row.  Starting outside the domain is a
    usage error; leaving it raises :class:`DomainEscapeError`.
    """
    X, t_arr, single = _prepare(spec, t, x)
    X = spec.metric.wrap(X)
    if not np.all(spec.contains(X)):
        raise UsageError("initial point outside the domain")
    if spec.kind == "analytic":
        tt = t_arr if t_arr.ndim == 0 else t_arr[:, None]
        Y = spec.metric.wrap(spec.closed_form(tt, X))
        inside = spec.contains(Y)
        if not np.all(inside):
            k = int(np.argmin(inside))
            t_exit = float(t_arr) if t_arr.ndim == 0 else float(t_arr[k])
            raise DomainEscapeError(t_exit, Y[k])
        for i, (lo, hi) in enumerate(spec.domain):
            if spec.metric.period(i) is None:
                Y[:, i] = np.clip(Y[:, i], lo, hi)
    else:
        Y, _ = _integrate(spec, X, t_arr, strict=True)
    return Y[0] if single else Y


def flow_times(spec: SemiflowSpec, X, times):
    """Images of every row of ``X`` at each of the increasing ``times``.

    Returns ``(Y, ok)`` with shapes ``(len(times), n, d)`` and
    ``(len(times), n)``.  ODE systems integrate incrementally between times.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0):
        raise UsageError("times must be non-decreasing")
    Ys = np.empty((times.size,) + X.shape)
    oks = np.empty((times.size, X.shape[0]), dtype=bool)
    if spec.kind == "analytic":
        for k, t in enumerate(times):
            Ys[k], oks[k] = flow_batch(spec, t, X)
        return Ys, oks
    cur, ok = X, spec.contains(X)
    prev = 0.0
    for k, t in enumerate(times):
        if t > prev:
            cur, step_ok = _integrate(spec, cur, t - prev, strict=False)
            ok = ok & step_ok
            prev = t
        Ys[k], oks[k] = cur, ok
    return Ys, oks


# --- uniform-continuity modulus ---------------------------------------------

TAU_GRID = np.linspace(0.0, 1.0, 17)
_CANDIDATE_RATIO = 2.0 ** (-1.0 / 8.0)
_N_CANDIDATES = 160


@dataclass(frozen=True)
class ModulusTable:
    """Sampled map ``η ↦ δ(η)`` for the family ``F^τ``, ``τ ∈ [0,1]``.

    ``worst_ratios[i]`` is the largest observed ``d(F^τ z, F^τ w)/d(z, w)``
    among the pairs used to accept ``deltas[i]``.
    """

    etas: tuple
    deltas: tuple
    worst_ratios: tuple
    n_samples: int

    def delta(self, eta: float) -> float:
        for e, d in zip(self.etas, self.deltas):
            if math.isclose(e, eta, rel_tol=1e-12):
                return d
        raise KeyError(eta)


def _random_pairs(spec: SemiflowSpec, rng, n: int, region):
    Z = spec.sample_uniform(rng, n, region)
    U = rng.normal(size=(n, spec.dim))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    frac = rng.random(n)
    # half the pairs sit just below the distance bound, where violations show first
    half = n // 2
    frac[:half] = 1.0 - 1e-3 * frac[:half]
    return Z, U, frac


def _place_partner(spec: SemiflowSpec, Z, U, r):
    W = Z + r[:, None] * U
    bad = ~spec.contains(W, tol=0.0)
    W[bad] = Z[bad] - r[bad, None] * U[bad]
    for i, (lo, hi) in enumerate(spec.domain):
        if spec.metric.period(i) is None:
            W[:, i] = np.clip(W[:, i], lo, hi)
    return spec.metric.wrap(W)


def _image_spread(spec: SemiflowSpec, Z, W, horizon: float = 1.0):
    """Max over the τ grid on ``[0, horizon]`` of ``d(F^τ Z, F^τ W)``, escaped rows dropped."""
    taus = TAU_GRID if horizon == 1.0 else np.arange(int(round(16 * horizon)) + 1) / 16.0
    YZ, okz = flow_times(spec, Z, taus)
    YW, okw = flow_times(spec, W, taus)
    d = spec.metric.dist(YZ, YW)
    ok = np.all(okz & okw, axis=0)
    return np.max(d, axis=0), ok


@functools.lru_cache(maxsize=512)
def _modulus_one(spec: SemiflowSpec, eta: float, n_samples: int, seed: int, region,
                 horizon: float = 1.0):
    rng = make_rng(seed)
    Z, U, frac = _random_pairs(spec, rng, n_samples, region)
    for k in range(_N_CANDIDATES):
        delta = eta * _CANDIDATE_RATIO ** k
        W = _place_partner(spec, Z, U, frac * delta)
        spread, ok = _image_spread(spec, Z, W, horizon)
        d0 = spec.metric.dist(Z, W)
        keep = ok & (d0 < delta)
        if not np.any(keep):
            continue
        if np.all(spread[keep] < eta):
            ratio = float(np.max(spread[keep] / np.maximum(d0[keep], 1e-300)))
            return delta, ratio
    return 0.0, math.inf


def estimate_modulus(spec: SemiflowSpec, etas, n_samples: int = 2000, seed: int = 0,
                     region=None, horizon: float = 1.0) -> ModulusTable:
    """Empirical uniform-continuity modulus of ``(τ, z) ↦ F^τ(z)`` on ``[0,horizon]×X``.

    For each η the largest δ from the geometric list ``η·2^{-k/8}`` is kept
    such that all sampled pairs at distance ``< δ`` have images closer than η
    at every τ on a 1/16 grid.  ``region`` restricts where pairs are drawn;
    ``horizon`` (a multiple of 1/16, default 1) extends the time range.
    """
    if not horizon > 0 or abs(16 * horizon - round(16 * horizon)) > 1e-9:
        raise UsageError("horizon must be a positive multiple of 1/16")
    etas = [float(e) for e in etas]
    if any(e <= 0 for e in etas) or etas != sorted(etas):
        raise UsageError("etas must be positive and sorted")
    reg = None if region is None else tuple(tuple(float(v) for v in ax) for ax in region)
    deltas, ratios = [], []
    best = 0.0
    for eta in etas:
        d, r = _modulus_one(spec, eta, int(n_samples), int(seed), reg, float(horizon))
        # a δ valid for a smaller η is valid for every larger one
        if d < best:
            d = best
        best = d
        deltas.append(d)
        ratios.append(r)
    return ModulusTable(tuple(etas), tuple(deltas), tuple(ratios), int(n_samples))


def lipschitz_spot_check(spec: SemiflowSpec, n: int = 10000, seed: int = 0) -> float:
    """Largest observed ``|g(x)-g(y)|/|x-y|`` over random pairs in the domain."""
    rng = make_rng(seed)
    X = spec.sample_uniform(rng, n)
    Y = spec.sample_uniform(rng, n)
    # half the pairs close together, where the local slope dominates
    Y[: n // 2] = X[: n // 2] + 1e-3 * (Y[: n // 2] - X[: n // 2])
    num = np.linalg.norm(spec.field(X) - spec.field(Y), axis=1)
    den = np.linalg.norm(X - Y, axis=1)
    keep = den > 0
    return float(np.max(num[keep] / den[keep]))
