"""Box grids over the phase space and transition digraphs between boxes.

Edges outer-approximate fattened flow images at box scale: a box ``b``
points at ``b'`` when some sample of ``b`` is carried, for an allowed hop
time, to within ``eps + diam/2`` of ``b'``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy import sparse

from .core import EUCLIDEAN, Metric, UsageError
from .semiflow import SemiflowSpec, flow_batch, flow_times

# relative slack on strict "< radius" comparisons, in units of the smallest box width
RADIUS_TOL = 1e-9
# refine hop windows until consecutive images are at most this many box widths apart
REFINE_GAP = 0.5
MAX_REFINE = 512
CHUNK = 100_000
DEFAULT_TIME_SAMPLES = 9


@dataclass(frozen=True, eq=False)
class BoxGrid:
    """A product grid of congruent boxes over a rectangular domain.

    Boxes are numbered in C order of their multi-index, so the last axis
    varies fastest.
    """

    domain: tuple
    subdivisions: tuple
    metric: Metric = EUCLIDEAN

    def __post_init__(self):
        dom = tuple((float(a), float(b)) for a, b in self.domain)
        subs = tuple(int(s) for s in np.atleast_1d(self.subdivisions))
        if len(subs) == 1 and len(dom) > 1:
            subs = subs * len(dom)
        if len(subs) != len(dom):
            raise UsageError("need one subdivision count per axis")
        if any(s < 1 for s in subs):
            raise UsageError("subdivisions must be >= 1 on every axis")
        if any(not a < b for a, b in dom):
            raise UsageError("degenerate axis: need lo < hi")
        object.__setattr__(self, "domain", dom)
        object.__setattr__(self, "subdivisions", subs)

    @property
    def dim(self) -> int:
        return len(self.domain)

    @property
    def shape(self) -> tuple:
        return self.subdivisions

    @property
    def n_boxes(self) -> int:
        return int(np.prod(self.subdivisions))

    @property
    def lo(self) -> np.ndarray:
        return np.array([a for a, _ in self.domain])

    @property
    def hi(self) -> np.ndarray:
        return np.array([b for _, b in self.domain])

    @property
    def width(self) -> np.ndarray:
        return (self.hi - self.lo) / np.array(self.subdivisions)

    @property
    def diam(self) -> float:
        """Metric diameter of one box (a periodic axis contributes at most half its period)."""
        ext = self.width.copy()
        for i in range(self.dim):
            p = self.metric.period(i)
            if p is not None:
                ext[i] = min(ext[i], p / 2)
        return float(np.sqrt(np.sum(ext ** 2)))

    def multi_index(self, idx) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(idx), self.subdivisions), axis=-1)

    def flat_index(self, multi) -> np.ndarray:
        multi = np.asarray(multi)
        return np.ravel_multi_index(tuple(multi[..., i] for i in range(self.dim)), self.subdivisions)

    def centers(self, idx=None) -> np.ndarray:
        idx = np.arange(self.n_boxes) if idx is None else np.asarray(idx)
        return self.lo + (self.multi_index(idx) + 0.5) * self.width

    def bounds(self, idx):
        m = self.multi_index(idx)
        return self.lo + m * self.width, self.lo + (m + 1) * self.width

    def corners(self, idx) -> np.ndarray:
        m = self.multi_index(idx)
        offs = np.array(list(product((0, 1), repeat=self.dim)))
        return self.lo + (m[..., None, :] + offs) * self.width

    def box_of(self, X) -> np.ndarray:
        """Index of the box containing each point; a shared face belongs to the box above it."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        rel = (X - self.lo) / self.width
        m = np.floor(rel).astype(np.int64)
        n = np.array(self.subdivisions)
        for i in range(self.dim):
            if self.metric.period(i) is not None:
                m[:, i] = np.mod(m[:, i], n[i])
        m = np.clip(m, 0, n - 1)
        return self.flat_index(m)

    def box_distance(self, X, idx) -> np.ndarray:
        """Metric distance from points to (closed) boxes, paired elementwise."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        c = self.centers(idx)
        delta = np.abs(self.metric.delta(c, X))
        gap = np.maximum(delta - self.width / 2, 0.0)
        return np.sqrt(np.sum(gap ** 2, axis=-1))

    def to_json(self) -> dict:
        return {"domain": [list(a) for a in self.domain], "subdivisions": list(self.subdivisions)}


def build_boxes(domain, subdivisions, metric: Metric = EUCLIDEAN) -> BoxGrid:
    return BoxGrid(tuple(tuple(a) for a in domain), tuple(np.atleast_1d(subdivisions)), metric)


def grid_for(spec: SemiflowSpec, subdivisions) -> BoxGrid:
    return build_boxes(spec.domain, subdivisions, spec.metric)


# --- near-box search ------------------------------------------------------------

def boxes_near(grid: BoxGrid, Y, radius: float):
    """All pairs ``(row, box)`` with ``dist(Y[row], box) < radius`` (up to a tiny slack).

    Returns two equally long integer arrays.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n_pts = Y.shape[0]
    if n_pts == 0 or radius <= 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    w = grid.width
    n = np.array(grid.subdivisions)
    tol = RADIUS_TOL * float(w.min())
    axes_c, axes_g = [], []
    for i in range(grid.dim):
        t = (Y[:, i] - grid.lo[i]) / w[i]
        r = radius / w[i]
        base = np.floor(t - r).astype(np.int64)
        K = int(math.ceil(2 * r)) + 2
        c = base[:, None] + np.arange(K)[None, :]
        gap = np.maximum(np.maximum(c - t[:, None], t[:, None] - (c + 1)), 0.0) * w[i]
        if grid.metric.period(i) is not None:
            valid = np.ones_like(c, dtype=bool)
            c = np.mod(c, n[i])
        else:
            valid = (c >= 0) & (c < n[i])
        gap = np.where(valid, gap, np.inf)
        axes_c.append(c)
        axes_g.append(gap)
    # combine axes by broadcasting: shape (n_pts, K_0, K_1, ...)
    d = grid.dim
    sq = np.zeros((n_pts,) + (1,) * d)
    flat = np.zeros((n_pts,) + (1,) * d, dtype=np.int64)
    stride = 1
    for i in reversed(range(d)):
        shape = [n_pts] + [1] * d
        shape[i + 1] = axes_c[i].shape[1]
        sq = sq + axes_g[i].reshape(shape) ** 2
        flat = flat + axes_c[i].reshape(shape) * stride
        stride *= int(n[i])
    hit = np.sqrt(sq) < radius - tol
    rows, *_ = np.nonzero(hit)
    boxes = np.broadcast_to(flat, hit.shape)[hit]
    return rows.astype(np.int64), boxes.astype(np.int64)


# --- sampling -------------------------------------------------------------------

def _sample_offsets(samples_per_box, dim: int):
    """Sample offsets inside a box, in half-integer lattice units, plus the lattice scale."""
    if samples_per_box in (None, "corners+center", "default"):
        offs = [np.array(c) * 2 for c in product((0, 1), repeat=dim)] + [np.ones(dim, int)]
        return np.array(offs, dtype=np.int64), 2
    if samples_per_box == "center":
        return np.ones((1, dim), dtype=np.int64), 2
    k = int(samples_per_box)
    if k < 1:
        raise UsageError("samples_per_box must be >= 1")
    ax = 2 * np.arange(k) + 1
    return np.array(list(product(ax, repeat=dim)), dtype=np.int64), 2 * k


def describe_samples(samples_per_box) -> str:
    if samples_per_box in (None, "default"):
        return "corners+center"
    return str(samples_per_box)


@dataclass(frozen=True)
class SampleLattice:
    points: np.ndarray          # (P, d) unique sample points
    owner_box: np.ndarray       # incidence rows: box index
    owner_point: np.ndarray     # incidence cols: point index


def sample_lattice(grid: BoxGrid, samples_per_box=None, boxes=None) -> SampleLattice:
    """Unique sample points of the given boxes, with box/point incidence."""
    offs, scale = _sample_offsets(samples_per_box, grid.dim)
    boxes = np.arange(grid.n_boxes) if boxes is None else np.asarray(boxes, dtype=np.int64)
    if boxes.size == 0:
        return SampleLattice(np.zeros((0, grid.dim)), np.zeros(0, np.int64), np.zeros(0, np.int64))
    m = grid.multi_index(boxes)
    keys = (m[:, None, :] * scale + offs[None, :, :]).reshape(-1, grid.dim)
    n = np.array(grid.subdivisions) * scale
    for i in range(grid.dim):
        if grid.metric.period(i) is not None:
            keys[:, i] = np.mod(keys[:, i], n[i])
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    pts = grid.lo + uniq * (grid.width / scale)
    owner_box = np.repeat(boxes, offs.shape[0])
    return SampleLattice(pts, owner_box, inv.reshape(-1))


def hop_times(semantics: "Semantics") -> np.ndarray:
    if semantics.kind == "shadow":
        lo, hi = 1.0, 2.0
    else:
        lo, hi = semantics.T_min, 2.0 * semantics.T_min
    return np.linspace(lo, hi, semantics.time_samples)


def _refined_images(spec: SemiflowSpec, X, times, max_gap: float):
    """Flow images of ``X`` over ``times`` plus extra images filling large gaps.

    Returns ``(source_row, image)`` arrays for all images that stayed in the
    domain, and the number of (point, time) evaluations that escaped.
    """
    Y, ok = flow_times(spec, X, times)
    k, n, _ = Y.shape
    rows = [np.repeat(np.arange(n)[None, :], k, axis=0)[ok]]
    imgs = [Y[ok]]
    escaped = int((~ok).sum())
    for j in range(k - 1):
        both = ok[j] & ok[j + 1]
        gap = np.where(both, spec.metric.dist(Y[j], Y[j + 1]), 0.0)
        m = np.minimum(np.ceil(gap / max_gap).astype(np.int64) - 1, MAX_REFINE)
        need = np.nonzero(m > 0)[0]
        if need.size == 0:
            continue
        counts = m[need]
        src = np.repeat(need, counts)
        # fractions (1..m)/(m+1) for each refined point
        starts = np.cumsum(counts) - counts
        local = np.arange(src.size) - np.repeat(starts, counts) + 1
        frac = local / np.repeat(counts + 1, counts)
        t = times[j] + frac * (times[j + 1] - times[j])
        Z, zok = flow_batch(spec, t, X[src])
        rows.append(src[zok])
        imgs.append(Z[zok])
        escaped += int((~zok).sum())
    return np.concatenate(rows), np.vstack(imgs), escaped


# --- transition graphs ----------------------------------------------------------------

@dataclass(frozen=True)
class Semantics:
    kind: str                   # "conley" or "shadow"
    eps: float
    T_min: float | None = None
    time_samples: int = DEFAULT_TIME_SAMPLES

    def __post_init__(self):
        if self.kind not in ("conley", "shadow"):
            raise UsageError(f"unknown semantics {self.kind!r}")
        if not self.eps > 0:
            raise UsageError("eps must be positive")
        if self.time_samples < 2:
            raise UsageError("time_samples must be >= 2")
        if self.kind == "conley" and (self.T_min is None or self.T_min < 1):
            raise UsageError("Conley semantics needs T_min >= 1")

    def to_json(self) -> dict:
        out = {"kind": self.kind, "eps": self.eps, "time_samples": self.time_samples}
        if self.kind == "conley":
            out["T_min"] = self.T_min
        return out

    def label(self) -> str:
        if self.kind == "conley":
            return f"conley eps={self.eps:.6g} T_min={self.T_min:.6g}"
        return f"shadow eps={self.eps:.6g}"


@dataclass(frozen=True, eq=False)
class TransitionGraph:
    grid: BoxGrid
    semantics: Semantics
    edges: np.ndarray               # (k, 2) sorted, unique
    provenance: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.grid.n_boxes

    def adjacency(self) -> sparse.csr_matrix:
        k = self.edges.shape[0]
        return sparse.csr_matrix((np.ones(k, dtype=np.int8), (self.edges[:, 0], self.edges[:, 1])),
                                 shape=(self.n, self.n))

    def has_edge(self, u: int, v: int) -> bool:
        e = self.edges
        i = np.searchsorted(e[:, 0] * self.n + e[:, 1], u * self.n + v)
        return bool(i < len(e) and e[i, 0] == u and e[i, 1] == v)

    def self_loops(self) -> np.ndarray:
        return self.edges[self.edges[:, 0] == self.edges[:, 1], 0]

    def successors(self, u: int) -> np.ndarray:
        lo, hi = np.searchsorted(self.edges[:, 0], [u, u + 1])
        return self.edges[lo:hi, 1]

    def induced(self, boxes) -> "TransitionGraph":
        """Same grid, keeping only edges with both ends in ``boxes``."""
        keep = np.zeros(self.n, dtype=bool)
        keep[np.asarray(boxes, dtype=np.int64)] = True
        e = self.edges[keep[self.edges[:, 0]] & keep[self.edges[:, 1]]]
        prov = dict(self.provenance, restricted_to=int(keep.sum()))
        return TransitionGraph(self.grid, self.semantics, e, prov)

    def to_json(self) -> dict:
        return {"n": self.n, "edges": self.edges.tolist()}

    def to_dot(self) -> str:
        lines = ['digraph transition {', f'  label="{self.semantics.label()}";']
        lines += [f"  {u} -> {v};" for u, v in self.edges]
        lines.append("}")
        return "\n".join(lines) + "\n"


def _sorted_edges(u, v, n) -> np.ndarray:
    key = np.unique(np.asarray(u, np.int64) * n + np.asarray(v, np.int64))
    return np.stack([key // n, key % n], axis=1) if key.size else np.zeros((0, 2), np.int64)


def fixed_point_boxes(spec: SemiflowSpec, grid: BoxGrid, eps: float) -> np.ndarray:
    """Boxes whose center moves less than ``eps`` under ``F^1``, plus boxes holding declared fixed points."""
    C = grid.centers()
    Y, ok = flow_batch(spec, 1.0, C)
    moved = spec.metric.dist(Y, C)
    idx = np.nonzero(ok & (moved < eps))[0]
    if spec.fixed_points:
        fp = np.array(spec.fixed_points, dtype=float).reshape(-1, grid.dim)
        idx = np.union1d(idx, grid.box_of(fp))
    return idx.astype(np.int64)


def _edges_for_chunk(spec, grid, X, times, radius, max_gap):
    rows, imgs, escaped = _refined_images(spec, X, times, max_gap)
    pairs_r, pairs_b = [], []
    for s in range(0, rows.size, CHUNK):
        r, b = boxes_near(grid, imgs[s:s + CHUNK], radius)
        pairs_r.append(rows[s:s + CHUNK][r])
        pairs_b.append(b)
    r = np.concatenate(pairs_r) if pairs_r else np.zeros(0, np.int64)
    b = np.concatenate(pairs_b) if pairs_b else np.zeros(0, np.int64)
    key = np.unique(r * grid.n_boxes + b)
    return key // grid.n_boxes, key % grid.n_boxes, escaped, int(rows.size)


def transition_graph(spec: SemiflowSpec, grid: BoxGrid, semantics: Semantics,
                     samples_per_box=None, workers: int = 1) -> TransitionGraph:
    """Build the transition digraph of ``grid`` under the given semantics."""
    if grid.dim != spec.dim:
        raise UsageError("grid and system dimensions differ")
    lat = sample_lattice(grid, samples_per_box)
    times = hop_times(semantics)
    radius = semantics.eps + grid.diam / 2
    max_gap = REFINE_GAP * float(grid.width.min())
    P = lat.points.shape[0]
    # chunk boundaries depend only on the problem, never on the worker count
    step = max(1, min(P, 4096))
    bounds = [(a, min(a + step, P)) for a in range(0, P, step)]

    def job(ab):
        a, b = ab
        src, tgt, esc, n_img = _edges_for_chunk(spec, grid, lat.points[a:b], times, radius, max_gap)
        return src + a, tgt, esc, n_img

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, bounds))
    else:
        results = [job(ab) for ab in bounds]
    p_src = np.concatenate([r[0] for r in results])
    p_tgt = np.concatenate([r[1] for r in results])
    escaped = sum(r[2] for r in results)
    n_images = sum(r[3] for r in results)
    # incidence (box x point) times targets (point x box)
    A = sparse.csr_matrix((np.ones(lat.owner_box.size, np.int32), (lat.owner_box, lat.owner_point)),
                          shape=(grid.n_boxes, P))
    B = sparse.csr_matrix((np.ones(p_src.size, np.int32), (p_src, p_tgt)), shape=(P, grid.n_boxes))
    E = (A @ B).tocoo()
    fixed = fixed_point_boxes(spec, grid, semantics.eps)
    u = np.concatenate([E.row, fixed])
    v = np.concatenate([E.col, fixed])
    edges = _sorted_edges(u, v, grid.n_boxes)
    prov = {
        "samples_per_box": describe_samples(samples_per_box),
        "sample_points": int(P),
        "image_points": int(n_images),
        "escaped_samples": int(escaped),
        "flow_step": None if spec.kind == "analytic" else spec.step,
        "flow_kind": spec.kind,
        "hop_times": [float(t) for t in times],
        "radius": float(radius),
        "self_edge_boxes": int(fixed.size),
    }
    return TransitionGraph(grid, semantics, edges, prov)


def shadow_transition_graph(spec: SemiflowSpec, grid: BoxGrid, eps: float, samples_per_box=None,
                            time_samples: int = DEFAULT_TIME_SAMPLES,
                            workers: int = 1) -> TransitionGraph:
    """Shadow-semantics graph: hop durations from ``[1, 2]``."""
    return transition_graph(spec, grid, Semantics("shadow", eps, None, time_samples),
                            samples_per_box, workers)


def conley_transition_graph(spec: SemiflowSpec, grid: BoxGrid, eps: float, T_min: float,
                            time_samples: int = DEFAULT_TIME_SAMPLES, samples_per_box=None,
                            workers: int = 1) -> TransitionGraph:
    """Conley-semantics graph: hop durations from ``[T_min, 2·T_min]``."""
    return transition_graph(spec, grid, Semantics("conley", eps, T_min, time_samples),
                            samples_per_box, workers)


# --- box-set operations ------------------------------------------------------------------

def epsilon_neighborhood(grid: BoxGrid, boxset, eps: float) -> np.ndarray:
    """Boxes whose center lies within ``eps + diam/2`` of some box of ``boxset``."""
    boxset = np.asarray(sorted(set(int(b) for b in boxset)), dtype=np.int64)
    if eps < 0:
        raise UsageError("eps must be >= 0")
    if boxset.size == 0:
        return boxset
    C = grid.centers()
    mask = np.zeros(grid.n_boxes, dtype=bool)
    mask[boxset] = True
    # a center is close to a box of the set iff some set box lies near the center
    rows, boxes = boxes_near(grid, C, eps + grid.diam / 2)
    hit = np.unique(rows[mask[boxes]])
    return np.union1d(hit, boxset).astype(np.int64)


@dataclass(frozen=True)
class HullResult:
    boxes: np.ndarray
    closed: bool
    passes: int


def forward_hull(spec: SemiflowSpec, grid: BoxGrid, boxset, horizon: float, step: float,
                 samples_per_box=None, max_passes: int = 64) -> HullResult:
    """Boxes visited by orbits of box samples over ``[0, horizon]``, iterated to closure."""
    if not horizon > 0 or not step > 0:
        raise UsageError("horizon and step must be positive")
    current = np.zeros(grid.n_boxes, dtype=bool)
    current[np.asarray(list(boxset), dtype=np.int64)] = True
    frontier = np.nonzero(current)[0]
    # the t = 0 images are dropped: the input boxes are already in the hull, and corner
    # samples lying on a shared face would otherwise leak into the neighbouring box.
    # t = 0 still anchors the gap refinement on the first step.
    n_t = int(math.floor(horizon / step + 1e-9))
    times = step * np.arange(0, n_t + 1)
    if horizon - times[-1] > 1e-12:
        times = np.append(times, horizon)
    max_gap = REFINE_GAP * float(grid.width.min())
    passes = 0
    while frontier.size and passes < max_passes:
        passes += 1
        lat = sample_lattice(grid, samples_per_box, frontier)
        _, imgs, _ = _refined_images(spec, lat.points, times, max_gap)
        imgs = imgs[lat.points.shape[0]:]
        hit = np.unique(grid.box_of(imgs)) if imgs.size else np.zeros(0, np.int64)
        new = hit[~current[hit]]
        current[new] = True
        frontier = new
    return HullResult(np.nonzero(current)[0], frontier.size == 0, passes)


def attractor_cover(grid: BoxGrid, regions) -> np.ndarray:
    """Boxes whose closed box meets one of the closed axis-aligned ``regions``."""
    hit = np.zeros(grid.n_boxes, dtype=bool)
    lo_b, hi_b = grid.bounds(np.arange(grid.n_boxes))
    tol = 1e-12 * max(1.0, float(np.abs(grid.hi).max()))
    for region in regions:
        region = np.asarray(region, dtype=float).reshape(grid.dim, 2)
        inside = np.ones(grid.n_boxes, dtype=bool)
        for i in range(grid.dim):
            a, b = region[i]
            p = grid.metric.period(i)
            if p is not None and b - a >= p - tol:
                continue
            inside &= (hi_b[:, i] >= a - tol) & (lo_b[:, i] <= b + tol)
        hit |= inside
    return np.nonzero(hit)[0]
