"""Chain-recurrent boxes, chain graphs and the comparison of the two semantics."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .discretization import (
    BoxGrid,
    Semantics,
    TransitionGraph,
    conley_transition_graph,
    epsilon_neighborhood,
    shadow_transition_graph,
)
from .semiflow import SemiflowSpec


def _as_csr(graph) -> sparse.csr_matrix:
    if isinstance(graph, TransitionGraph):
        return graph.adjacency()
    return sparse.csr_matrix(graph)


def strongly_connected_components(graph) -> list[np.ndarray]:
    """SCC partition, each component sorted, components ordered by smallest member."""
    A = _as_csr(graph)
    n = A.shape[0]
    if n == 0:
        return []
    _, labels = csgraph.connected_components(A, directed=True, connection="strong")
    order = np.argsort(labels, kind="stable")
    cuts = np.nonzero(np.diff(labels[order]))[0] + 1
    comps = np.split(order, cuts)
    comps.sort(key=lambda c: int(c[0]))
    return comps


def _recurrent_components(A: sparse.csr_matrix, comps) -> list[np.ndarray]:
    diag = A.diagonal() != 0
    return [c for c in comps if c.size > 1 or diag[c[0]]]


def recurrent_boxes(graph) -> np.ndarray:
    """Boxes in a nontrivial SCC or carrying a self-edge."""
    A = _as_csr(graph)
    rec = _recurrent_components(A, strongly_connected_components(A))
    if not rec:
        return np.zeros(0, dtype=np.int64)
    return np.sort(np.concatenate(rec)).astype(np.int64)


def reachable_from(graph, sources) -> np.ndarray:
    """Boxes reachable from ``sources`` by paths of length >= 1."""
    A = _as_csr(graph)
    n = A.shape[0]
    sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    if sources.size == 0:
        return np.zeros(0, dtype=np.int64)
    seen = np.zeros(n, dtype=bool)
    frontier = np.zeros(n, dtype=bool)
    frontier[sources] = True
    At = A.T.tocsr().astype(np.int32)
    while True:
        nxt = (At @ frontier.astype(np.int32)) > 0
        nxt &= ~seen
        if not nxt.any():
            break
        seen |= nxt
        frontier = nxt
    return np.nonzero(seen)[0]


def downstream(graph, from_box: int, to_box: int) -> bool:
    """Whether a path of length >= 1 leads from ``from_box`` to ``to_box``."""
    A = _as_csr(graph)
    n = A.shape[0]
    if not (0 <= from_box < n and 0 <= to_box < n):
        raise IndexError("box index out of range")
    if from_box == to_box:
        if A[from_box, from_box]:
            return True
        _, labels = csgraph.connected_components(A, directed=True, connection="strong")
        return int(np.sum(labels == labels[from_box])) > 1
    order = csgraph.breadth_first_order(A, from_box, directed=True, return_predecessors=False)
    return bool(np.any(order == to_box))


def condensation(A: sparse.csr_matrix):
    """SCC labels and the condensation DAG as a sparse matrix over labels."""
    n_comp, labels = csgraph.connected_components(A, directed=True, connection="strong")
    C = A.tocoo()
    keep = labels[C.row] != labels[C.col]
    D = sparse.csr_matrix((np.ones(int(keep.sum()), np.int8), (labels[C.row[keep]], labels[C.col[keep]])),
                          shape=(n_comp, n_comp))
    return labels, D


@dataclass(frozen=True, eq=False)
class ChainGraph:
    """Condensation of a transition graph restricted to its recurrent nodes."""

    nodes: list                 # list of sorted box-index arrays
    edges: list                 # sorted (i, j) node-id pairs
    semantics: Semantics | None
    grid: BoxGrid | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def node_of(self) -> dict:
        return {int(b): k for k, node in enumerate(self.nodes) for b in node}

    def node_sets(self) -> list[frozenset]:
        return [frozenset(int(b) for b in node) for node in self.nodes]

    def edge_sets(self) -> set:
        sets = self.node_sets()
        return {(sets[i], sets[j]) for i, j in self.edges}

    def to_json(self) -> dict:
        return {
            "semantics": None if self.semantics is None else self.semantics.to_json(),
            "nodes": [[int(b) for b in node] for node in self.nodes],
            "edges": [[int(i), int(j)] for i, j in self.edges],
        }

    def to_dot(self) -> str:
        label = "" if self.semantics is None else self.semantics.label()
        lines = ["digraph chaingraph {", f'  label="{label}";', "  node [shape=ellipse];"]
        for k, node in enumerate(self.nodes):
            rep = int(node[len(node) // 2])
            if self.grid is not None:
                c = self.grid.centers([rep])[0]
                text = "(" + ", ".join(f"{x:.4g}" for x in c) + ")"
            else:
                text = f"box {rep}"
            lines.append(f'  n{k} [label="{text} [{len(node)} boxes]"];')
        lines += [f"  n{i} -> n{j};" for i, j in self.edges]
        lines.append("}")
        return "\n".join(lines) + "\n"


def chain_graph(graph) -> ChainGraph:
    """Recurrent nodes and their reachability edges in the full transition graph."""
    A = _as_csr(graph)
    nodes = _recurrent_components(A, strongly_connected_components(A))
    edges = []
    if nodes:
        labels, D = condensation(A)
        label_to_node = {int(labels[node[0]]): k for k, node in enumerate(nodes)}
        for k, node in enumerate(nodes):
            order = csgraph.breadth_first_order(D, int(labels[node[0]]), directed=True,
                                                return_predecessors=False)
            targets = sorted(label_to_node[int(l)] for l in order if int(l) in label_to_node)
            edges += [(k, j) for j in targets if j != k]
    edges.sort()
    sem = graph.semantics if isinstance(graph, TransitionGraph) else None
    grid = graph.grid if isinstance(graph, TransitionGraph) else None
    return ChainGraph([np.asarray(n, dtype=np.int64) for n in nodes], edges, sem, grid)


# --- equivalence of the two semantics --------------------------------------------------

@dataclass(frozen=True)
class EquivalenceReport:
    recurrent_match: bool
    sym_diff: list
    node_match: bool
    edge_match: bool
    downstream_match: bool | None
    discretization_scale: bool | None
    params: dict
    sym_diff_offset: float | None = None

    @property
    def all_match(self) -> bool:
        return self.recurrent_match and self.node_match and self.edge_match

    def to_json(self) -> dict:
        return {
            "recurrent_match": self.recurrent_match,
            "sym_diff": self.sym_diff,
            "node_match": self.node_match,
            "edge_match": self.edge_match,
            "downstream_match": self.downstream_match,
            "discretization_scale": self.discretization_scale,
            "sym_diff_offset": self.sym_diff_offset,
            "params": self.params,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def _pairwise_downstream_match(gc: TransitionGraph, gs: TransitionGraph, boxes) -> bool:
    boxes = np.asarray(boxes, dtype=np.int64)
    if boxes.size == 0:
        return True
    Ac, As = gc.adjacency(), gs.adjacency()
    for b in boxes:
        rc = np.isin(boxes, reachable_from(Ac, [b]))
        rs = np.isin(boxes, reachable_from(As, [b]))
        if not np.array_equal(rc, rs):
            return False
    return True


def _offset_in_eps(grid: BoxGrid, sym, common, eps: float) -> float | None:
    """Largest distance from a disputed box center to the common recurrent set, in units of eps."""
    if sym.size == 0:
        return 0.0
    if common.size == 0:
        return None
    C = grid.centers(sym)
    worst = 0.0
    for c in C:
        d = grid.box_distance(np.repeat(c[None, :], common.size, axis=0), common)
        worst = max(worst, float(d.min()))
    return worst / eps


def _compare_graphs(gc: TransitionGraph, gs: TransitionGraph, check_pairs: bool):
    rc, rs = recurrent_boxes(gc), recurrent_boxes(gs)
    sym = np.setxor1d(rc, rs)
    cc, cs = chain_graph(gc), chain_graph(gs)
    node_match = set(cc.node_sets()) == set(cs.node_sets())
    edge_match = cc.edge_sets() == cs.edge_sets()
    pairs = None
    if check_pairs:
        pairs = _pairwise_downstream_match(gc, gs, np.intersect1d(rc, rs))
    return sym, node_match, edge_match, pairs, cc, cs


def compare_semantics(spec: SemiflowSpec, grid: BoxGrid, eps: float, T_min: float,
                      samples_per_box=None, time_samples: int = 9, eps_conley: float | None = None,
                      check_refinement: bool = True, check_pairs: bool = True,
                      workers: int = 1) -> EquivalenceReport:
    return compare_semantics_graphs(spec, grid, eps, T_min, samples_per_box, time_samples,
                                    eps_conley, check_refinement, check_pairs, workers)[0]


def compare_semantics_graphs(spec: SemiflowSpec, grid: BoxGrid, eps: float, T_min: float,
                             samples_per_box=None, time_samples: int = 9,
                             eps_conley: float | None = None, check_refinement: bool = True,
                             check_pairs: bool = True, workers: int = 1):
    """Build both transition graphs and compare recurrence, nodes and edges.

    ``eps_conley`` (flagged mode) uses a different tolerance for the
    Conley graph; it exists to exercise mismatch reporting.  When the two
    semantics disagree and ``check_refinement`` is set, the comparison is
    repeated with halved eps and doubled subdivisions; a mismatch that
    vanishes there is marked as discretization-scale.
    """
    eps_c = eps if eps_conley is None else eps_conley

    def build():
        if workers > 1:
            with ThreadPoolExecutor(max_workers=2) as pool:
                fc = pool.submit(conley_transition_graph, spec, grid, eps_c, T_min, time_samples,
                                 samples_per_box, workers)
                fs = pool.submit(shadow_transition_graph, spec, grid, eps, samples_per_box,
                                 time_samples, workers)
                return fc.result(), fs.result()
        return (conley_transition_graph(spec, grid, eps_c, T_min, time_samples, samples_per_box),
                shadow_transition_graph(spec, grid, eps, samples_per_box, time_samples))

    gc, gs = build()
    sym, node_match, edge_match, pairs, cc, cs = _compare_graphs(gc, gs, check_pairs)
    recurrent_match = sym.size == 0
    scale = None
    if check_refinement and not (recurrent_match and node_match and edge_match):
        fine = BoxGrid(grid.domain, tuple(2 * s for s in grid.subdivisions), grid.metric)
        sub = compare_semantics(spec, fine, eps / 2, T_min, samples_per_box, time_samples,
                                None if eps_conley is None else eps_conley / 2,
                                check_refinement=False, check_pairs=False, workers=workers)
        scale = sub.all_match
    params = {
        "system": spec.name,
        "grid": grid.to_json(),
        "eps": eps,
        "eps_conley": eps_c,
        "T_min": T_min,
        "time_samples": time_samples,
        "samples_per_box": gc.provenance["samples_per_box"],
        "conley_edges": int(gc.edges.shape[0]),
        "shadow_edges": int(gs.edges.shape[0]),
        "conley_nodes": cc.n_nodes,
        "shadow_nodes": cs.n_nodes,
    }
    common = np.intersect1d(recurrent_boxes(gc), recurrent_boxes(gs))
    offset = _offset_in_eps(grid, sym, common, eps)
    report = EquivalenceReport(recurrent_match, [int(b) for b in sym], node_match, edge_match,
                               pairs, scale, params, offset)
    return report, gc, gs


# --- attractor checks --------------------------------------------------------------------

@dataclass(frozen=True)
class CheckReport:
    passed: bool
    details: dict

    def to_json(self) -> dict:
        return {"passed": self.passed, **self.details}


def attractor_invariance_check(spec: SemiflowSpec, grid: BoxGrid, eps: float, cover,
                               samples_per_box=None, graph: TransitionGraph | None = None) -> CheckReport:
    """Shadow-reachable boxes from the cover must stay within one fattening layer of it."""
    cover = np.asarray(cover, dtype=np.int64)
    gs = graph if graph is not None else shadow_transition_graph(spec, grid, eps, samples_per_box)
    reach = np.union1d(reachable_from(gs, cover), cover)
    allowed = epsilon_neighborhood(grid, cover, eps + grid.diam)
    outside = np.setdiff1d(reach, allowed)
    return CheckReport(outside.size == 0, {
        "cover_size": int(cover.size),
        "reachable_size": int(reach.size),
        "allowed_size": int(allowed.size),
        "outside": [int(b) for b in outside],
    })


def restriction_check(spec: SemiflowSpec, grid: BoxGrid, eps: float, T_min: float, cover,
                      samples_per_box=None, time_samples: int = 9,
                      graph: TransitionGraph | None = None) -> CheckReport:
    """Conley recurrence on the full grid agrees with that on the cover fattened by one layer."""
    cover = np.asarray(cover, dtype=np.int64)
    full = graph if graph is not None else conley_transition_graph(
        spec, grid, eps, T_min, time_samples, samples_per_box)
    # one fattening layer (eps plus a box diameter), matching the invariance check
    region = epsilon_neighborhood(grid, cover, eps + grid.diam)
    sub = full.induced(region)
    r_full, r_sub = recurrent_boxes(full), recurrent_boxes(sub)
    c_full, c_sub = chain_graph(full), chain_graph(sub)
    rec_ok = np.array_equal(r_full, r_sub)
    nodes_ok = set(c_full.node_sets()) == set(c_sub.node_sets())
    edges_ok = c_full.edge_sets() == c_sub.edge_sets()
    return CheckReport(rec_ok and nodes_ok and edges_ok, {
        "region_size": int(region.size),
        "recurrent_full": int(r_full.size),
        "recurrent_restricted": int(r_sub.size),
        "recurrent_outside_region": [int(b) for b in np.setdiff1d(r_full, region)],
        "recurrent_match": rec_ok,
        "node_match": nodes_ok,
        "edge_match": edges_ok,
    })
