import math

import numpy as np
import pytest

from chainrec.core import Metric, UsageError
from chainrec.discretization import (
    attractor_cover,
    boxes_near,
    build_boxes,
    conley_transition_graph,
    epsilon_neighborhood,
    forward_hull,
    grid_for,
    shadow_transition_graph,
)
from chainrec.recurrence import reachable_from, recurrent_boxes
from chainrec.semiflow import builtin

TWO_PI = 2 * math.pi


def test_build_boxes_1d():
    g = build_boxes([[0, 1]], [4])
    lo, hi = g.bounds(np.arange(4))
    assert np.allclose(lo[:, 0], [0, 0.25, 0.5, 0.75])
    assert np.allclose(hi[:, 0], [0.25, 0.5, 0.75, 1.0])
    assert g.box_of([[1.0]])[0] == 3 and g.box_of([[0.25]])[0] == 1


def test_build_boxes_2d():
    g = build_boxes([[-2, 2], [-2, 2]], [8, 8])
    assert g.n_boxes == 64 and np.allclose(g.width, 0.5)
    assert g.diam == pytest.approx(math.sqrt(0.5))
    for i in (0, 9, 63):
        assert g.flat_index(g.multi_index(i)) == i


def test_torus_adjacency():
    g = build_boxes([[0, TWO_PI]], [6], Metric.torus(TWO_PI))
    d = g.box_distance(g.centers([0]), [5])[0]
    assert d == pytest.approx(TWO_PI / 12)


def test_degenerate_axis():
    with pytest.raises(UsageError):
        build_boxes([[1, 1]], [4])
    with pytest.raises(UsageError):
        build_boxes([[0, 1]], [0])


def test_boxes_near_matches_brute_force(rng):
    g = build_boxes([[-1, 1], [0, 3]], [7, 5])
    Y = rng.uniform([-1.2, -0.2], [1.2, 3.2], size=(300, 2))
    for radius in (0.05, 0.3, 1.0):
        rows, boxes = boxes_near(g, Y, radius)
        got = set(zip(rows.tolist(), boxes.tolist()))
        want = set()
        for i, y in enumerate(Y):
            d = g.box_distance(np.repeat(y[None], g.n_boxes, 0), np.arange(g.n_boxes))
            want |= {(i, b) for b in np.nonzero(d < radius)[0].tolist()}
        assert got == want


def test_boxes_near_on_torus(rng):
    g = build_boxes([[0, TWO_PI]], [16], Metric.torus(TWO_PI))
    rows, boxes = boxes_near(g, [[0.01]], 0.5)
    assert 15 in boxes.tolist() and 0 in boxes.tolist()


def test_epsilon_neighborhood():
    g = build_boxes([[0, 1]], [21])
    w = float(g.width[0])
    assert epsilon_neighborhood(g, [10], 0.0).tolist() == [10]
    assert epsilon_neighborhood(g, [10], 2 * w).tolist() == [8, 9, 10, 11, 12]
    t = build_boxes([[0, TWO_PI]], [12], Metric.torus(TWO_PI))
    assert 11 in epsilon_neighborhood(t, [0], 0.1).tolist()


def test_rightward_shadow_edges_point_right():
    spec = builtin("rightward")
    g = grid_for(spec, 64)
    w = float(g.width[0])
    graph = shadow_transition_graph(spec, g, w)
    e = graph.edges
    # leftward edges may only reach as far back as the fattening radius allows
    reach_back = (e[:, 0] - e[:, 1]) * w
    assert np.all(reach_back <= graph.provenance["radius"] + w)
    assert np.all(np.diff(e[:, 0] * 64 + e[:, 1]) > 0)


def test_rotation_graph_steps_about_one_radian():
    spec = builtin("circle")
    g = grid_for(spec, 64)
    graph = shadow_transition_graph(spec, g, float(g.width[0]))
    ahead = g.box_of(np.mod(g.centers() + 1.0, TWO_PI))
    for b in range(64):
        assert graph.has_edge(b, int(ahead[b]))
    assert recurrent_boxes(graph).size == 64


def test_fixed_point_self_edges():
    spec = builtin("doublewell1d")
    g = grid_for(spec, 64)
    b = int(g.box_of([[1.0]])[0])
    eps = float(g.width[0])
    assert shadow_transition_graph(spec, g, eps).has_edge(b, b)
    r = builtin("rightward")
    gr = grid_for(r, 64)
    for T in (1, 3, 8):
        assert conley_transition_graph(r, gr, float(gr.width[0]), T).has_edge(63, 63)


def test_rightward_conley_image_bound():
    spec = builtin("rightward")
    g = grid_for(spec, 64)
    w = float(g.width[0])
    graph = conley_transition_graph(spec, g, w, 8.0)
    targets = graph.successors(0)
    # closed form: F^8 of box 0 sits within e^{-8} of 1, fattened by eps + diam/2
    nearest_allowed = 1 - math.exp(-8) - graph.provenance["radius"]
    lo, _ = g.bounds(targets)
    _, hi = g.bounds(targets)
    assert np.all(hi[:, 0] > nearest_allowed)


def test_rotation_conley_strongly_connected():
    spec = builtin("circle")
    g = grid_for(spec, 64)
    graph = conley_transition_graph(spec, g, float(g.width[0]), 2.0)
    assert reachable_from(graph, [0]).size == 64


@pytest.mark.parametrize("semantics", ["shadow", "conley"])
def test_edges_monotone_in_eps(semantics):
    spec = builtin("doublewell1d")
    g = grid_for(spec, 128)
    w = float(g.width[0])

    def build(eps):
        if semantics == "shadow":
            return shadow_transition_graph(spec, g, eps)
        return conley_transition_graph(spec, g, eps, 2.0)

    small, big = build(w), build(2.5 * w)
    key = lambda e: set(map(tuple, e.tolist()))
    assert key(small.edges) <= key(big.edges)


def test_conley_reachability_shrinks_with_T_min():
    spec = builtin("rightward")
    g = grid_for(spec, 128)
    w = float(g.width[0])
    g1 = conley_transition_graph(spec, g, w, 1.0)
    g2 = conley_transition_graph(spec, g, w, 2.0)
    for b in range(0, 128, 7):
        assert set(reachable_from(g2, [b]).tolist()) <= set(reachable_from(g1, [b]).tolist())


@pytest.mark.parametrize("name,subs", [("doublewell1d", 128), ("circle_rest", 64), ("rightward", 64)])
def test_refinement_consistency(name, subs):
    spec = builtin(name)
    coarse = grid_for(spec, subs)
    fine = grid_for(spec, 2 * subs)
    eps = 2 * float(coarse.width[0])
    rc = recurrent_boxes(conley_transition_graph(spec, coarse, eps, 2.0))
    rf = recurrent_boxes(conley_transition_graph(spec, fine, eps / 2, 2.0))
    allowed = set(epsilon_neighborhood(coarse, rc, eps).tolist())
    assert set(coarse.box_of(fine.centers(rf)).tolist()) <= allowed


def test_worker_count_does_not_change_edges():
    spec = builtin("gradwell2d")
    g = grid_for(spec, [24, 24])
    a = conley_transition_graph(spec, g, 0.3, 2.0, workers=1)
    b = conley_transition_graph(spec, g, 0.3, 2.0, workers=3)
    assert np.array_equal(a.edges, b.edges)


def test_escaped_samples_are_counted():
    spec = builtin("expanding", "ode", 1e-2)
    g = grid_for(spec, 16)
    graph = shadow_transition_graph(spec, g, 0.1)
    assert graph.provenance["escaped_samples"] > 0


def test_graph_exports():
    spec = builtin("rightward")
    g = grid_for(spec, 8)
    graph = shadow_transition_graph(spec, g, 0.1)
    js = graph.to_json()
    assert js["n"] == 8 and js["edges"] == sorted(js["edges"])
    assert graph.to_dot().startswith("digraph") and "shadow" in graph.to_dot()


def test_forward_hull_examples():
    dw = builtin("doublewell1d")
    g = grid_for(dw, 64)
    cover = attractor_cover(g, dw.attractor)
    res = forward_hull(dw, g, cover, 5.0, 0.25)
    assert res.closed and np.array_equal(res.boxes, cover)
    rw = builtin("rightward")
    gr = grid_for(rw, 64)
    res = forward_hull(rw, gr, [0], 20.0, 0.1)
    assert res.closed and res.boxes.tolist() == list(range(64))
    assert forward_hull(rw, gr, [], 1.0, 0.1).boxes.size == 0


def test_attractor_cover_closed_intersection():
    spec = builtin("gradwell2d")
    g = grid_for(spec, [8, 8])
    cover = attractor_cover(g, spec.attractor)
    lo, hi = g.bounds(cover)
    assert np.all(lo[:, 1] <= 0) and np.all(hi[:, 1] >= 0)
    # boxes meeting x in [-1, 1]: columns 2..5, closed-box contact adds columns 1 and 6
    assert cover.size == 2 * 6
