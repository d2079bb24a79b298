"""Random generators for chains, signals and loops used by the property tests."""
import math

import numpy as np

from chainrec.chains import validate_shadow
from chainrec.control import ControlSignal, gronwall_budget, perturbed_orbit
from chainrec.core import ConleyChain, Curve
from chainrec.semiflow import evaluate

H = 1.0 / 128.0


def confine(spec, y):
    y = spec.metric.wrap(np.atleast_2d(y))
    for i in range(spec.dim):
        if spec.metric.period(i) is None:
            y[:, i] = np.clip(y[:, i], spec.lo[i], spec.hi[i])
    return y[0]


def nudge(spec, rng, y, radius):
    """A point strictly within ``radius`` of ``y`` (projection onto the box only shrinks the step)."""
    direction = rng.normal(size=spec.dim)
    direction /= np.linalg.norm(direction)
    r = radius * rng.uniform(0.0, 0.999)
    return confine(spec, y + r * direction)


def random_conley_chain(spec, rng, n_hops, delta, t_lo=1.0, t_hi=3.0):
    pts = [spec.sample_uniform(rng, 1)[0]]
    times = rng.uniform(t_lo, t_hi, size=n_hops)
    for t in times:
        pts.append(nudge(spec, rng, evaluate(spec, float(t), pts[-1]), delta))
    return ConleyChain(np.array(pts), times)


def random_unit_chain(spec, rng, m, delta):
    pts = [spec.sample_uniform(rng, 1)[0]]
    for _ in range(m):
        pts.append(nudge(spec, rng, evaluate(spec, 1.0, pts[-1]), delta))
    return np.array(pts)


def random_signal(rng, dim, duration, budget, fill=0.9):
    """A random signal whose worst unit window uses ``fill`` of ``budget``."""
    kind = rng.choice(["constant", "piecewise_constant", "sinusoidal"])
    if kind == "constant":
        u = ControlSignal.constant(rng.normal(size=dim), duration)
    elif kind == "piecewise_constant":
        k = int(rng.integers(1, 6))
        # breakpoints on the 1/64 grid so that validator probes hit samples
        grid = np.arange(1, int(duration * 64)) / 64.0
        bp = np.sort(rng.choice(grid, size=k, replace=False))
        u = ControlSignal.piecewise(bp, rng.normal(size=(k + 1, dim)), duration)
    else:
        u = ControlSignal.sinusoidal(rng.normal(size=dim), float(rng.uniform(0.1, 3.0)), duration,
                                     float(rng.uniform(0, 2 * math.pi)))
    worst = u.worst_window_integral()
    if worst == 0:
        return u
    return u.scaled(fill * budget / worst)


def random_shadow_curve(spec, rng, T, delta, fill=0.9):
    """Perturbed orbit whose control budget certifies a ``delta`` shadow chain."""
    budget = gronwall_budget(delta, spec.lipschitz_L)
    while True:
        u = random_signal(rng, spec.dim, T, budget, fill)
        x0 = spec.sample_uniform(rng, 1)[0]
        try:
            return perturbed_orbit(spec, u, x0, T, H, eps=delta).curve
        except Exception:  # escaped the domain: draw again
            continue


def periodic_loop(spec, rng, eps):
    """An eps-loop of the rotation: constant control changes the period exactly."""
    c = float(rng.uniform(-0.9, 0.9)) * eps
    x0 = spec.sample_uniform(rng, 1)[0]
    laps = int(rng.integers(1, 3))
    T = laps * 2 * math.pi / (1 + c)
    u = ControlSignal.constant([c], T)
    curve = perturbed_orbit(spec, u, x0, T, H).curve
    pts = np.array(curve.points)
    pts[-1] = x0
    return Curve(curve.times, pts, frozenset(), h_max=curve.h_max, metric=spec.metric)


def fixed_point_loop(spec, rng, eps, point):
    """A loop at a fixed point: a small perturbed orbit closed by a final jump back."""
    for _ in range(200):
        T = float(rng.uniform(1.5, 6.0))
        u = random_signal(rng, spec.dim, T, gronwall_budget(eps, spec.lipschitz_L), fill=0.3)
        try:
            curve = perturbed_orbit(spec, u, point, T, H).curve
        except Exception:
            continue
        pts = np.array(curve.points)
        pts[-1] = point
        times = np.array(curve.times)
        loop = Curve(times, pts, frozenset({len(times) - 1}), metric=spec.metric)
        if validate_shadow(loop, spec, eps).passed:
            return loop
    raise RuntimeError("could not build a loop")
