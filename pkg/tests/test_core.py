import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainrec.core import ConleyChain, Curve, Metric, UsageError, metric_distance

TWO_PI = 2 * math.pi
finite = st.floats(-50, 50, allow_nan=False)
vec2 = st.tuples(finite, finite).map(np.array)


@pytest.mark.parametrize("metric", [Metric(), Metric.torus(TWO_PI, TWO_PI)])
@given(a=vec2, b=vec2, c=vec2)
@settings(max_examples=200, deadline=None)
def test_metric_axioms(metric, a, b, c):
    dab = metric.dist(a, b)
    assert dab >= 0
    assert metric.dist(a, a) == 0
    assert dab == metric.dist(b, a)
    assert metric.dist(a, c) <= dab + metric.dist(b, c) + 1e-9


def test_torus_distance_wraps():
    m = Metric.torus(TWO_PI)
    assert m.dist([0.1], [TWO_PI - 0.1]) == pytest.approx(0.2)
    assert m.dist([0.0], [math.pi]) == pytest.approx(math.pi)
    assert m.dist([0.0], [3 * TWO_PI + 0.5]) == pytest.approx(0.5)


def test_euclidean_examples():
    assert metric_distance(Metric(), [0, 0], [3, 4]) == pytest.approx(5.0)
    with pytest.raises(UsageError):
        metric_distance(Metric(), [0, 0], [1, 2, 3])


def test_curve_interpolation_and_jump_convention():
    t = np.array([0.0, 0.5, 1.0, 1.5])
    p = np.array([[0.0], [1.0], [5.0], [6.0]])
    c = Curve(t, p, frozenset({2}))
    assert c.at(0.25)[0] == pytest.approx(0.5)
    # inside the jump interval the curve holds the right-limit value
    assert c.at(0.75)[0] == pytest.approx(5.0)
    assert c.at(1.25)[0] == pytest.approx(5.5)
    assert c.at(1.0)[0] == pytest.approx(5.0)


def test_curve_on_torus_interpolates_the_short_way():
    m = Metric.torus(TWO_PI)
    c = Curve([0.0, 1.0], [[TWO_PI - 0.1], [0.1]], metric=m)
    mid = c.at(0.5)[0]
    assert m.dist([mid], [0.0]) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("times,points", [
    ([0.0], [[0.0]]),
    ([0.1, 1.2], [[0.0], [0.0]]),
    ([0.0, 0.5], [[0.0], [0.0]]),
    ([0.0, 1.0, 0.9], [[0.0], [0.0], [0.0]]),
    ([0.0, 1.0], [[0.0], [np.nan]]),
])
def test_curve_rejects_bad_input(times, points):
    with pytest.raises(UsageError):
        Curve(times, points)


def test_curve_rejects_undeclared_jump_and_wide_spacing():
    with pytest.raises(UsageError):
        Curve([0.0, 0.5, 1.0], [[0.0], [1.0], [1.0]], continuity_budget=0.1)
    with pytest.raises(UsageError):
        Curve([0.0, 1.0], [[0.0], [0.0]], h_max=0.5)
    Curve([0.0, 0.5, 1.0], [[0.0], [1.0], [1.0]], frozenset({1}), continuity_budget=0.1)


def test_curve_json_round_trip():
    c = Curve([0.0, 0.3, 1.0], [[0.1, 0.2], [0.3, 0.4], [0.5, 1 / 3]], frozenset({2}))
    back = Curve.from_json(c.to_json())
    assert np.array_equal(back.times, c.times)
    assert np.array_equal(back.points, c.points)
    assert back.jumps == c.jumps
    with pytest.raises(UsageError):
        Curve.from_json(json.dumps({"samples": [[0, [0]], [1, [0]]], "extra": 1}))


def test_conley_chain_checks_and_json():
    ch = ConleyChain([[0.0], [0.5], [1.0]], [1.0, 2.5])
    assert ch.n_hops == 2 and ch.total_time == pytest.approx(3.5)
    back = ConleyChain.from_json(ch.to_json())
    assert np.array_equal(back.points, ch.points) and np.array_equal(back.times, ch.times)
    with pytest.raises(UsageError):
        ConleyChain([[0.0], [1.0]], [1.0, 1.0])
    with pytest.raises(UsageError):
        ConleyChain([[0.0], [1.0]], [0.0])
    with pytest.raises(UsageError):
        ConleyChain([[0.0]], [])
