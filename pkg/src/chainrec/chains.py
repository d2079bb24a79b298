"""Validators for Conley and shadow chains, and the conversions between them.

The conversions follow the constructive arguments: concatenating exact flow
segments turns a Conley chain into a shadow chain; unit-time sampling,
loop wrapping and blocking turn a shadow chain into a Conley chain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import ChainrecError, ConleyChain, Curve, UsageError
from .semiflow import SemiflowSpec, estimate_modulus, evaluate

DEFAULT_TAU_STEP = 1.0 / 16.0
MAX_WRAPS = 10_000
# width of the sub-interval that carries the left limit before a declared jump
LEFT_LIMIT_GAP = 1e-7


class ModulusError(ChainrecError):
    """The sampled continuity modulus came back as zero."""


class ShorteningError(ChainrecError):
    """No admissible shortening window exists at the end of a loop."""


class WrapBudgetError(ChainrecError):
    """Wrapping around the loop never landed close enough to its base point."""


@dataclass(frozen=True)
class DefectReport:
    max_defect: float
    argmax: tuple
    passed: bool
    checked_pairs: int
    note: str = ""

    def to_json(self) -> dict:
        return {
            "max_defect": self.max_defect if math.isfinite(self.max_defect) else None,
            "argmax": list(self.argmax),
            "passed": self.passed,
            "checked_pairs": self.checked_pairs,
            "note": self.note,
        }


def _tau_grid(tau_step: float) -> np.ndarray:
    if not 0 < tau_step <= 1:
        raise UsageError("tau_step must lie in (0, 1]")
    k = int(math.floor(1.0 / tau_step + 1e-9))
    taus = tau_step * np.arange(k + 1)
    if taus[-1] < 1.0 - 1e-12:
        taus = np.append(taus, 1.0)
    return np.minimum(taus, 1.0)


def shadow_defects(curve: Curve, spec: SemiflowSpec, tau_step: float = DEFAULT_TAU_STEP):
    """All probed defects ``d(γ(t+τ), F^τ(γ(t)))`` as arrays ``(t, τ, defect)``.

    ``t`` ranges over the sample times, ``τ`` over the grid ``0, tau_step, …, 1``.
    """
    if curve.T < 1.0 - 1e-12:
        raise UsageError("shadow chains need duration T >= 1")
    tol = 1e-11 * max(1.0, curve.T)
    ts, taus, defects = [], [], []
    for tau in _tau_grid(tau_step):
        mask = curve.times + tau <= curve.T + tol
        if not np.any(mask):
            continue
        t = curve.times[mask]
        target = curve.at(t + tau)
        image = evaluate(spec, tau, curve.points[mask])
        ts.append(t)
        taus.append(np.full(t.size, tau))
        defects.append(spec.metric.dist(target, image))
    return np.concatenate(ts), np.concatenate(taus), np.concatenate(defects)


def validate_shadow(curve: Curve, spec: SemiflowSpec, eps: float,
                    tau_step: float = DEFAULT_TAU_STEP) -> DefectReport:
    t, tau, d = shadow_defects(curve, spec, tau_step)
    k = int(np.argmax(d))
    worst = float(d[k])
    return DefectReport(worst, (float(t[k]), float(tau[k])), worst < eps, int(d.size))


def conley_defects(chain: ConleyChain, spec: SemiflowSpec) -> np.ndarray:
    """Hop defects ``d(F^{t_k}(c_k), c_{k+1})``."""
    images = evaluate(spec, chain.times, chain.points[:-1])
    return spec.metric.dist(images, chain.points[1:])


def validate_conley(chain: ConleyChain, spec: SemiflowSpec, eps: float,
                    T_min: float = 0.0) -> DefectReport:
    defects = conley_defects(chain, spec)
    short = np.nonzero(chain.times < T_min)[0]
    if short.size:
        k = int(short[0])
        note = f"hop {k} has time {chain.times[k]:.6g} < T_min {T_min:.6g}"
        return DefectReport(math.inf, (k,), False, int(defects.size), note)
    k = int(np.argmax(defects))
    worst = float(defects[k])
    return DefectReport(worst, (k,), worst < eps, int(defects.size))


def _continuity_budget(spec: SemiflowSpec, h: float) -> float:
    return 10.0 * h * spec.speed_bound


def orbit_curve(spec: SemiflowSpec, x0, T: float, h: float) -> Curve:
    """The exact orbit of ``x0`` on ``[0, T]`` sampled at step ``h``."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    n = int(math.floor(T / h + 1e-9))
    times = h * np.arange(n + 1)
    if T - times[-1] > 1e-12 * max(1.0, T):
        times = np.append(times, T)
    else:
        times[-1] = T
    pts = evaluate(spec, times, np.repeat(x0[None, :], times.size, axis=0))
    return Curve(times, pts, frozenset(), h_max=h,
                 continuity_budget=_continuity_budget(spec, h), metric=spec.metric)


def conley_to_shadow(chain: ConleyChain, spec: SemiflowSpec, h: float) -> Curve:
    """Concatenate the exact flow segments ``F^{t-T_i}(c_i)`` into one curve.

    Each segment is sampled at step ``h`` from its start; a sample
    ``LEFT_LIMIT_GAP`` before the next start records the left limit, and
    the next start carries a jump mark.
    """
    if np.any(chain.times < 1.0):
        raise UsageError("conversion needs every hop time >= 1")
    if not h > 0:
        raise UsageError("sampling step must be positive")
    gap = min(LEFT_LIMIT_GAP, 0.25 * h)
    times, starts, offsets, jumps = [], [], [], []
    T_i = 0.0
    for i, t_i in enumerate(chain.times):
        n = int(math.floor(t_i / h - 1e-9))
        local = h * np.arange(n + 1)
        local = local[local < t_i - 2 * gap]
        if t_i - local[-1] > 2 * gap:
            local = np.append(local, t_i - gap)
        if i > 0:
            jumps.append(len(times))
        times.extend(T_i + local)
        starts.extend([i] * local.size)
        offsets.extend(local)
        T_i += float(t_i)
    starts = np.array(starts)
    pts = evaluate(spec, np.array(offsets), chain.points[starts])
    times = np.array(times + [T_i])
    pts = np.vstack([pts, chain.points[-1]])
    jumps.append(times.size - 1)
    return Curve(times, pts, frozenset(jumps), h_max=h,
                 continuity_budget=_continuity_budget(spec, h), metric=spec.metric)


def block_unit_chain(points, spec: SemiflowSpec, eta: float) -> DefectReport:
    """Endpoint error ``e_m = d(F^m(x_0), x_m)`` of a unit-time chain."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] < 2:
        raise UsageError("need at least two points")
    m = pts.shape[0] - 1
    e_m = float(spec.metric.dist(evaluate(spec, float(m), pts[0]), pts[-1]))
    return DefectReport(e_m, (m,), e_m < eta, 1)


def blocking_delta(spec: SemiflowSpec, m: int, eta: float, n_samples: int = 2000,
                   seed: int = 0) -> float:
    """``min(δ(η/m), η/(2m))`` with ``δ`` the sampled continuity modulus.

    The modulus is taken over ``F^τ`` for ``τ ∈ [0, max(1, m-1)]``: writing
    ``e_m`` as a telescoping sum, the error made at hop ``k`` is carried by
    ``F^{m-k}``, so each of those maps must keep ``δ``-close points within
    ``η/m``.  For ``m <= 2`` this is the modulus on ``[0, 1]``.
    """
    if m < 1 or not eta > 0:
        raise UsageError("need m >= 1 and eta > 0")
    d = estimate_modulus(spec, [eta / m], n_samples=n_samples, seed=seed,
                         horizon=float(max(1, m - 1))).deltas[0]
    if d <= 0:
        raise ModulusError(f"no continuity modulus found for eta/m={eta / m:.3g}")
    return min(d, eta / (2 * m))


# --- loops -------------------------------------------------------------------

def _left_limit_at_end(curve: Curve) -> np.ndarray:
    n = len(curve)
    if (n - 1) in curve.jumps:
        return np.array(curve.points[n - 2])
    return np.array(curve.points[n - 1])


def loop_window(curve: Curve, spec: SemiflowSpec, eps: float) -> float:
    """Length ``τ*`` of the terminal window admissible for shortening.

    Scanning backwards from ``T``: the window stops at the latest declared
    jump and at the latest sample farther than ``eps`` from the left limit
    ``y = γ(T⁻)``.
    """
    n = len(curve)
    y = _left_limit_at_end(curve)
    last = n - 2 if (n - 1) in curve.jumps else n - 1
    start = 0
    inner_jumps = [j for j in curve.jumps if j <= last]
    if inner_jumps:
        start = max(inner_jumps)
    d = spec.metric.dist(curve.points[start:last + 1], y)
    bad = np.nonzero(d >= eps)[0]
    first_good = start if bad.size == 0 else start + int(bad[-1]) + 1
    if first_good > last:
        return 0.0
    return curve.T - float(curve.times[first_good])


def shorten_loop(curve: Curve, spec: SemiflowSpec, eps: float,
                 target_T: float | None = None) -> Curve:
    """Truncate an ``eps``-loop at ``target_T`` and reset the endpoint to ``x``.

    The result is a ``4·eps``-loop at the same base point.  When
    ``target_T`` is omitted the midpoint of the admissible window is used.
    """
    x = curve.start
    if spec.metric.dist(x, curve.end) > 1e-9:
        raise UsageError("curve is not a loop: endpoints differ")
    tau_star = loop_window(curve, spec, eps)
    if tau_star <= 0:
        raise ShorteningError("the loop oscillates at scale >= eps right up to its end")
    if target_T is None:
        target_T = curve.T - 0.5 * tau_star
    if not (curve.T - tau_star < target_T < curve.T):
        raise UsageError(
            f"target_T={target_T:.6g} outside the admissible window "
            f"({curve.T - tau_star:.6g}, {curve.T:.6g})"
        )
    if target_T < 1.0:
        raise UsageError("shortened loop would last less than 1")
    keep = curve.times < target_T - 2 * LEFT_LIMIT_GAP
    times = list(curve.times[keep])
    pts = list(curve.points[keep])
    jumps = {j for j in curve.jumps if j < len(times)}
    left_t = target_T - LEFT_LIMIT_GAP
    if left_t > times[-1]:
        times.append(left_t)
        pts.append(curve.left_value(left_t))
    times.append(target_T)
    pts.append(np.array(x))
    jumps.add(len(times) - 1)
    return Curve(np.array(times), np.array(pts), frozenset(jumps), h_max=curve.h_max,
                 metric=curve.metric)


def _near_small_rational(T: float, max_den: int = 32, tol: float = 1e-9) -> bool:
    frac = Fraction(T).limit_denominator(max_den)
    return abs(T - float(frac)) <= tol


# 1/golden ratio: a window fraction whose endpoint is far from small-denominator rationals
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _irrationalize(loop: Curve, spec: SemiflowSpec) -> Curve:
    if not _near_small_rational(loop.T):
        return loop
    eps_loop = validate_shadow(loop, spec, math.inf).max_defect
    eps_loop = max(eps_loop * (1 + 1e-9), 1e-12)
    tau_star = loop_window(loop, spec, eps_loop)
    for frac in (_GOLDEN, _GOLDEN / 2, _GOLDEN / 3):
        target = loop.T - frac * tau_star
        if target >= 1.0 and not _near_small_rational(target):
            return shorten_loop(loop, spec, eps_loop, target)
    return loop


def wrap_landing_index(loop: Curve, spec: SemiflowSpec, eps: float, max_n: int,
                       min_n: int = 1) -> int:
    """First ``n >= min_n`` with ``d(γ̂(n), γ(0)) < eps``, γ̂ the periodic extension."""
    y = loop.start
    chunk = 4096
    for lo in range(min_n, max_n + 1, chunk):
        n = np.arange(lo, min(lo + chunk, max_n + 1))
        phase = np.fmod(n.astype(float), loop.T)
        d = spec.metric.dist(loop.at(phase), y)
        hit = np.nonzero(d < eps)[0]
        if hit.size:
            return int(n[hit[0]])
    raise WrapBudgetError(f"no landing within {max_n} unit steps around the loop")


def extend_via_loop(partial: ConleyChain, theta: float, loop: Curve, spec: SemiflowSpec,
                    eps: float, max_wraps: int = MAX_WRAPS, min_legs: int = 1) -> ConleyChain:
    """Pay off a fractional remainder ``θ`` by running around a loop at ``y``.

    The last point of ``partial`` hops for time ``1+θ`` to ``γ̂(1)``; unit hops
    then follow ``γ̂(j)`` until a sample lands within ``eps`` of ``y`` (and the
    chain has at least ``min_legs`` hops).
    """
    if loop.T < 1.0:
        raise UsageError("loop duration must be at least 1")
    if spec.metric.dist(loop.start, loop.end) > 1e-9:
        raise UsageError("loop endpoints differ")
    loop = _irrationalize(loop, spec)
    max_n = max_wraps * int(math.ceil(loop.T))
    min_n = max(1, min_legs - partial.n_hops)
    n = wrap_landing_index(loop, spec, eps, max_n, min_n)
    j = np.arange(1, n + 1)
    appended = loop.at(np.fmod(j.astype(float), loop.T))
    points = np.vstack([partial.points, appended])
    times = np.concatenate([partial.times, [1.0 + theta], np.ones(n - 1)])
    return ConleyChain(points, times)


def _block(points: np.ndarray, times: np.ndarray, m: int) -> ConleyChain:
    legs = times.size
    bounds = list(range(0, legs + 1, m))
    if bounds[-1] != legs:
        # fold the short tail into the previous block
        bounds[-1] = legs
    idx = np.array(bounds)
    block_times = np.array([times[a:b].sum() for a, b in zip(idx[:-1], idx[1:])])
    return ConleyChain(points[idx], block_times)


def shadow_to_conley(curve: Curve, loop_at_y: Curve | None, spec: SemiflowSpec, eps: float,
                     T_min: float, max_wraps: int = MAX_WRAPS) -> ConleyChain:
    """Turn a shadow chain into a Conley chain with hop times ``>= T_min``.

    Samples ``p_i = γ(i)``; a fractional remainder is bridged through
    ``loop_at_y``; consecutive unit legs are then grouped into blocks of
    ``m = ⌈T_min⌉`` legs (a short tail joins the previous block).  A block
    can therefore hold up to ``2m - 1`` legs, and the curve's tolerance should
    come from ``blocking_delta(spec, 2m - 1, ...)``.
    """
    T = curve.T
    M = int(math.floor(T + 1e-9))
    theta = T - M
    if theta < 1e-9:
        theta = 0.0
    m = max(1, int(math.ceil(T_min - 1e-12)))
    unit = curve.at(np.arange(M + 1, dtype=float))
    head = ConleyChain(unit, np.ones(M))
    if theta > 0:
        if loop_at_y is None:
            raise UsageError("a loop at the endpoint is required when the duration is not an integer")
        chain = extend_via_loop(head, theta, loop_at_y, spec, eps, max_wraps, min_legs=m)
    elif head.n_hops < m:
        if loop_at_y is None:
            raise UsageError(f"curve has {head.n_hops} unit legs, fewer than m={m}; supply a loop")
        chain = _wrap_integer(head, loop_at_y, spec, eps, max_wraps, m)
    else:
        chain = head
    return _block(chain.points, chain.times, m)


def _wrap_integer(head: ConleyChain, loop: Curve, spec: SemiflowSpec, eps: float,
                  max_wraps: int, m: int) -> ConleyChain:
    """Extend an integer-duration chain ending at ``y`` with unit hops around the loop."""
    loop = _irrationalize(loop, spec)
    max_n = max_wraps * int(math.ceil(loop.T))
    n = wrap_landing_index(loop, spec, eps, max_n, max(1, m - head.n_hops))
    j = np.arange(1, n + 1)
    appended = loop.at(np.fmod(j.astype(float), loop.T))
    return ConleyChain(np.vstack([head.points, appended]),
                       np.concatenate([head.times, np.ones(n)]))
