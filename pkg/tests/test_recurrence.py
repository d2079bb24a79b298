import json

import numpy as np
import pytest
from scipy import sparse

from chainrec.discretization import attractor_cover, conley_transition_graph, grid_for, shadow_transition_graph
from chainrec.recurrence import (
    attractor_invariance_check,
    chain_graph,
    compare_semantics,
    downstream,
    reachable_from,
    recurrent_boxes,
    restriction_check,
    strongly_connected_components,
)
from chainrec.semiflow import builtin


def closure(adj: np.ndarray) -> np.ndarray:
    """Transitive closure (paths of length >= 1) by Floyd-Warshall."""
    R = adj.astype(bool).copy()
    for k in range(R.shape[0]):
        R |= R[:, k:k + 1] & R[k:k + 1, :]
    return R


def oracle_partition(adj):
    R = closure(adj)
    n = adj.shape[0]
    mutual = (R & R.T) | np.eye(n, dtype=bool)
    seen, parts = set(), []
    for i in range(n):
        if i not in seen:
            part = frozenset(np.nonzero(mutual[i])[0].tolist())
            seen |= part
            parts.append(part)
    return set(parts), R


def random_digraph(rng, n, density):
    return (rng.random((n, n)) < density).astype(np.int8)


def test_cycle_and_dag():
    cyc = np.zeros((5, 5), int)
    for i in range(5):
        cyc[i, (i + 1) % 5] = 1
    assert [c.tolist() for c in strongly_connected_components(cyc)] == [[0, 1, 2, 3, 4]]
    dag = np.array([[0, 1, 1], [0, 0, 1], [0, 0, 0]])
    assert [c.tolist() for c in strongly_connected_components(dag)] == [[0], [1], [2]]
    assert recurrent_boxes(dag).size == 0


@pytest.mark.parametrize("seed", range(5))
def test_scc_matches_floyd_warshall(rng, seed):
    n = int(rng.integers(20, 200))
    adj = random_digraph(rng, n, rng.uniform(0.005, 0.05))
    parts, R = oracle_partition(adj)
    got = strongly_connected_components(adj)
    assert {frozenset(c.tolist()) for c in got} == parts
    assert [int(c[0]) for c in got] == sorted(int(c[0]) for c in got)
    rec = set(recurrent_boxes(adj).tolist())
    assert rec == {i for i in range(n) if R[i, i]}


def test_downstream_and_transitivity(rng):
    adj = random_digraph(rng, 60, 0.04)
    _, R = oracle_partition(adj)
    A = sparse.csr_matrix(adj)
    for _ in range(200):
        a, b = rng.integers(0, 60, size=2)
        assert downstream(A, int(a), int(b)) == bool(R[a, b])
    for _ in range(100):
        a, b, c = rng.integers(0, 60, size=3)
        if downstream(A, int(a), int(b)) and downstream(A, int(b), int(c)):
            assert downstream(A, int(a), int(c))


def test_chain_graph_is_acyclic_and_well_posed():
    spec = builtin("doublewell1d")
    g = grid_for(spec, 256)
    graph = shadow_transition_graph(spec, g, 2 * float(g.width[0]))
    cg = chain_graph(graph)
    A = graph.adjacency()
    edges = set(cg.edges)
    for i, j in edges:
        assert (j, i) not in edges
        for b in cg.nodes[i]:
            assert np.isin(cg.nodes[j], reachable_from(A, [b])).any()
    nodes = [set(n.tolist()) for n in cg.nodes]
    assert all(a.isdisjoint(b) for k, a in enumerate(nodes) for b in nodes[k + 1:])


def test_doublewell_conley_chain_graph():
    spec = builtin("doublewell1d")
    g = grid_for(spec, 1024)
    cg = chain_graph(conley_transition_graph(spec, g, 2 * float(g.width[0]), 2.0))
    centers = [float(np.mean(g.centers(n)[:, 0])) for n in cg.nodes]
    assert np.allclose(centers, [-1, 0, 1], atol=0.01)
    assert cg.edges == [(1, 0), (1, 2)]
    js = json.loads(json.dumps(cg.to_json()))
    assert len(js["nodes"]) == 3 and "->" in cg.to_dot()


def test_rotation_single_node():
    spec = builtin("circle")
    g = grid_for(spec, 64)
    cg = chain_graph(shadow_transition_graph(spec, g, 2 * float(g.width[0])))
    assert cg.n_nodes == 1 and cg.edges == [] and cg.nodes[0].size == 64


def test_recurrent_set_grows_with_eps():
    spec = builtin("doublewell1d")
    g = grid_for(spec, 256)
    w = float(g.width[0])
    sets = [set(recurrent_boxes(shadow_transition_graph(spec, g, k * w)).tolist()) for k in (1, 2, 4)]
    assert sets[0] <= sets[1] <= sets[2]


def test_rightward_downstream_examples():
    spec = builtin("rightward")
    g = grid_for(spec, 64)
    w = float(g.width[0])
    gs = shadow_transition_graph(spec, g, w)
    target = int(g.box_of([[1 - np.exp(-1)]])[0])
    assert downstream(gs, 0, target)
    gc = conley_transition_graph(spec, g, w, 8.0)
    assert not downstream(gc, 0, 32)
    assert downstream(gc, 63, 63)


def test_flagged_mode_reports_mismatch():
    spec = builtin("doublewell1d")
    g = grid_for(spec, 256)
    w = float(g.width[0])
    rep = compare_semantics(spec, g, 2 * w, 2.0, eps_conley=8 * w, check_refinement=False)
    assert not rep.recurrent_match and rep.sym_diff
    assert rep.to_json()["params"]["eps_conley"] == 8 * w


def test_rotation_semantics_agree():
    spec = builtin("circle")
    g = grid_for(spec, 64)
    rep = compare_semantics(spec, g, 2 * float(g.width[0]), 2.0)
    assert rep.all_match and rep.downstream_match and rep.sym_diff == []


@pytest.mark.parametrize("name,subs", [("doublewell1d", 256), ("rightward", 64)])
def test_attractor_checks(name, subs):
    spec = builtin(name)
    g = grid_for(spec, subs)
    eps = 2 * float(g.width[0])
    cover = attractor_cover(g, spec.attractor)
    assert attractor_invariance_check(spec, g, eps, cover).passed
    assert restriction_check(spec, g, eps, 2.0, cover).passed


def test_restriction_trivial_on_rotation():
    spec = builtin("circle")
    g = grid_for(spec, 64)
    cover = attractor_cover(g, spec.attractor)
    assert cover.size == 64
    assert restriction_check(spec, g, 0.2, 2.0, cover).passed
