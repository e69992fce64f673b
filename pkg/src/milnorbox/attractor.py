"""Finite-resolution attractor decomposition.

Orbits are recorded on a box grid. Omega-limit estimates that contain a
delta-ball are grouped by shared interior boxes, and every group is audited for
basin size, transitivity, strong transitivity, sensitivity, punctured points and
invariance of its interior.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import networkx as nx
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .maps import MapSpec, angle_from_digits, apply_array, fiber_apply_weighted, image_boxes, schedule_weights
from .phase import (CIRCLE, DISK, INTERVAL, PRODUCT, BoxCover, Grid, Point, ball_contained,
                    ball_probes, key_to_point, pairwise_distance)
from .symbolic import encode, generic_expansion, rich_sequence

CHUNK = 16


@dataclass(frozen=True)
class AnalysisParams:
    delta: float = 0.1
    depth: int = 10
    n_transient: int = 100
    n_tail: int = 5000
    grid_per_axis: int = 50
    bloat: float = 0.0
    seed: int = 0
    probe_count: int = 64
    samples_per_axis: int = 4
    workers: int = 1
    bits: tuple | None = None
    closure_threshold: float = 0.95
    transitivity_budget: int = 64
    sensitivity_steps: int = 20
    sensitivity_samples: int = 32
    sensitivity_eps: tuple = (1e-2, 1e-3, 1e-4)

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.n_tail < 1:
            raise ValueError("n_tail must be at least 1")
        for name in ("grid_per_axis", "probe_count", "samples_per_axis", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.n_transient < 0 or self.depth < 0 or self.bloat < 0:
            raise ValueError("n_transient, depth and bloat must be nonnegative")

    def grid(self, space) -> Grid:
        if self.bits is not None:
            return Grid(space, tuple(self.bits))
        return Grid.from_depth(space, self.depth)

    def to_json(self) -> dict:
        out = {}
        for k in self.__dataclass_fields__:
            v = getattr(self, k)
            out[k] = list(v) if isinstance(v, tuple) else v
        return out


# --------------------------------------------------------------------------
# parallel helpers (chunking is fixed, so results do not depend on workers)


def _chunks(n: int, size: int = CHUNK):
    return [(i, min(i + size, n)) for i in range(0, n, size)]


def pmap(fn, items, workers: int = 1):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# --------------------------------------------------------------------------
# orbits


def _digit_windows(expansion, count: int, base: int) -> np.ndarray:
    """Angles of the first ``count`` shifts of a digit expansion."""
    J = int(math.ceil(54 / math.log2(base)))
    d = np.asarray(expansion, dtype=float)
    if len(d) < count + J - 1:
        raise ValueError(f"expansion of length {len(d)} is too short for {count} orbit steps")
    weights = float(base) ** -np.arange(1, J + 1)
    return np.mod(sliding_window_view(d[:count + J - 1], J) @ weights, 1.0)


def orbit_batch(spec: MapSpec, points, n_transient: int, n_tail: int) -> np.ndarray:
    """Recorded orbit segments: array ``(len(points), n_tail, dim)`` of iterates
    ``n_transient .. n_transient + n_tail - 1``."""
    points = list(points)
    if not points:
        return np.zeros((0, n_tail, spec.space.dim))
    for p in points:
        if p.space != spec.space:
            raise ValueError("orbit start lies in a different space")
    base = spec.digit_base
    has = [p.expansion is not None for p in points]
    if base is not None and any(has) and not all(has):
        # mixed batch: digit-driven and float-driven orbits run separately
        out = np.empty((len(points), n_tail, spec.space.dim))
        for flag in (True, False):
            idx = [i for i, h in enumerate(has) if h == flag]
            out[idx] = orbit_batch(spec, [points[i] for i in idx], n_transient, n_tail)
        return out
    total = n_transient + n_tail
    X = np.array([p.coords for p in points], dtype=float)
    symbolic = base is not None and all(has)
    angles = W = None
    if symbolic:
        angles = np.stack([_digit_windows(p.expansion, total, base) for p in points])
        if spec.rule == "skew":
            W = schedule_weights(angles.ravel()).reshape(len(points), total, 5)
    out = np.empty((len(points), n_tail, spec.space.dim))
    for n in range(total):
        if n >= n_transient:
            out[:, n - n_transient] = X
        if n == total - 1:
            break
        if symbolic and spec.rule == "skew":
            fib = fiber_apply_weighted(W[:, n], X[:, 1:], spec.fiber)
            X = np.column_stack([angles[:, n + 1], fib])
        elif symbolic:
            X = angles[:, n + 1][:, None]
        else:
            X = apply_array(spec, X)
        if n + 1 < n_transient and not spec.space.contains(X).all():
            raise RuntimeError(f"orbit left the space at step {n + 1}")
    inside = spec.space.contains(out.reshape(-1, spec.space.dim)).reshape(len(points), n_tail)
    if not inside.all():
        step = int(np.argmin(inside.all(axis=0)))
        raise RuntimeError(f"orbit left the space at step {n_transient + step}")
    return out


@dataclass(frozen=True)
class OmegaEstimate:
    source: Point
    cover: BoxCover
    params: AnalysisParams = field(compare=False)


def _omega_chunk(args):
    spec, points, params = args
    seg = orbit_batch(spec, points, params.n_transient, params.n_tail)
    grid = params.grid(spec.space)
    return [BoxCover.from_points(grid, s) for s in seg]


def omega_estimates(spec: MapSpec, points, params: AnalysisParams) -> list:
    points = list(points)
    jobs = [(spec, points[a:b], params) for a, b in _chunks(len(points))]
    covers = [c for part in pmap(_omega_chunk, jobs, params.workers) for c in part]
    return [OmegaEstimate(p, c, params) for p, c in zip(points, covers)]


def omega_limit(spec: MapSpec, x: Point, params: AnalysisParams) -> OmegaEstimate:
    """Boxes visited by iterates ``n_transient .. n_transient + n_tail - 1`` of ``x``."""
    return omega_estimates(spec, [x], params)[0]


def initial_points(spec: MapSpec, params: AnalysisParams) -> list:
    """The initial-condition grid.

    Circle coordinates of maps with a base-8 coding carry digit expansions: the
    grid angle's leading digits followed by a generic tail, so that orbits do not
    collapse in floating point.
    """
    space = spec.space
    G = params.grid_per_axis
    needed = params.n_transient + params.n_tail + 24
    if space.kind == INTERVAL:
        xs = np.linspace(space.lo, space.hi, G)
        pts = [Point(space, (float(x),)) for x in xs]
        return pts + [Point(space, (a,)) for a in space.atoms]
    if space.kind == DISK:
        g = np.linspace(-space.radius, space.radius, G)
        return [Point(space, (x, y)) for x in g for y in g if x * x + y * y <= space.radius ** 2]
    angles = [k / G for k in range(G)]
    tails = _generic_tails(spec, params, G, needed)
    if space.kind == CIRCLE:
        return [_angle_point(space, a, t, ()) for a, t in zip(angles, tails)]
    g = np.linspace(-space.radius, space.radius, G)
    fib = [(x, y) for x in g for y in g if x * x + y * y <= space.radius ** 2]
    return [_angle_point(space, a, t, f) for a, t in zip(angles, tails) for f in fib]


def _generic_tails(spec, params, G, needed):
    if spec.digit_base != 8:
        return [None] * G
    if spec.rule == "mtupling":
        L = max(1, math.ceil(params.grid(spec.space).bits[0] / 3))
        period = 8 ** L
        rich = rich_sequence(L, math.ceil(needed / period) + 2)
        stride = max(1, period // G)
        return [rich[(k * stride) % period:][:needed] for k in range(G)]
    return [generic_expansion((), needed, params.seed + k) for k in range(G)]


def _angle_point(space, angle, tail, fiber):
    if tail is None:
        return Point(space, (angle,) + tuple(fiber))
    expansion = encode(angle, 4) + tuple(tail)
    return Point(space, (angle_from_digits(expansion),) + tuple(fiber), expansion=expansion)


# --------------------------------------------------------------------------
# delta balls and classes


def _quick_reject(cover: BoxCover, key, delta: float) -> bool:
    """Exact 1-d necessary condition: all cells within delta of the center are present."""
    if cover.space.dim != 1 or key[0] < 0:
        return False
    grid = cover.grid
    n = grid.shape[0]
    w = grid.widths[0]
    k = int(math.ceil(delta / w - 0.5 - 1e-12))
    if cover.space.kind == CIRCLE:
        if 2 * k + 1 >= n:
            return len(cover) < n
        return any(((key[0] + j) % n,) not in cover for j in range(-k, k + 1))
    return any((key[0] + j,) not in cover for j in range(-k, k + 1) if 0 <= key[0] + j < n)


def delta_ball_check(est, delta: float, probe_count: int = 64):
    """Center of a delta-ball inside the estimate's cover, or ``None``."""
    cover = est.cover if isinstance(est, OmegaEstimate) else est
    for key in cover.sorted_keys():
        if _quick_reject(cover, key, delta):
            continue
        c = key_to_point(cover.grid, key)
        if ball_contained(cover, c, delta, probe_count):
            return c
    return None


class UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


@dataclass(frozen=True)
class MergedClass:
    members: tuple
    cover: BoxCover


def merge_classes(estimates, params: AnalysisParams | None = None) -> list:
    """Group estimates sharing a box that is interior to both; classes ordered by first member."""
    estimates = list(estimates)
    uf = UnionFind(len(estimates))
    owner = {}
    for i, est in enumerate(estimates):
        for key in est.cover.interior_keys():
            if key in owner:
                uf.union(owner[key], i)
            else:
                owner[key] = i
    groups = {}
    for i in range(len(estimates)):
        groups.setdefault(uf.find(i), []).append(i)
    out = []
    for members in sorted(groups.values()):
        cover = estimates[members[0]].cover
        for i in members[1:]:
            cover = cover.union(estimates[i].cover)
        out.append(MergedClass(tuple(members), cover))
    return out


# --------------------------------------------------------------------------
# transition graph and the claim checks


@dataclass
class TransitionGraph:
    grid: Grid
    graph: nx.DiGraph

    def images(self, key) -> set:
        return set(self.graph.successors(key))

    def restricted(self, cover: BoxCover) -> nx.DiGraph:
        return self.graph.subgraph(cover.keys)


def _image_chunk(args):
    spec, grid, keys, samples, bloat = args
    return image_boxes(spec, grid, keys, samples, bloat)


def transition_graph(spec: MapSpec, cover: BoxCover, params: AnalysisParams) -> TransitionGraph:
    keys = cover.sorted_keys()
    jobs = [(spec, cover.grid, keys[a:b], params.samples_per_axis, params.bloat)
            for a, b in _chunks(len(keys), 256)]
    g = nx.DiGraph()
    g.add_nodes_from(keys)
    for part in pmap(_image_chunk, jobs, params.workers):
        for k in sorted(part):
            g.add_edges_from((k, t) for t in sorted(part[k]))
    return TransitionGraph(cover.grid, g)


def is_transitive(tg: TransitionGraph, cover: BoxCover) -> bool:
    sub = tg.restricted(cover)
    return len(sub) > 0 and nx.is_strongly_connected(sub)


def strong_transitivity_check(spec: MapSpec, attractor: BoxCover, U, params: AnalysisParams,
                              graph: TransitionGraph | None = None):
    """Grow the union of box images of ``U`` until it covers the attractor.

    Returns ``(covered, count)`` where ``count`` is the number of iterates
    ``U, f(U), ..., f^(count-1)(U)`` in the union when it first covers.
    """
    start = {tuple(U)} if not isinstance(U, (set, frozenset, list)) else {tuple(k) for k in U}
    reached = set(start)
    frontier = set(start)
    count = 1
    while not attractor.keys <= reached:
        if count >= params.transitivity_budget or not frontier:
            return False, count
        if graph is not None:
            nxt = set()
            for k in sorted(frontier):
                nxt |= graph.images(k) if k in graph.graph else set()
        else:
            imgs = image_boxes(spec, attractor.grid, sorted(frontier), params.samples_per_axis, params.bloat)
            nxt = set().union(*imgs.values())
        frontier = nxt - reached
        reached |= nxt
        count += 1
    return True, count


def check_nonwandering_outside(spec: MapSpec, attractors, params: AnalysisParams,
                               graph: TransitionGraph | None = None):
    """Boxes outside every attractor that lie on a cycle of the transition graph.

    Returns ``(remainder_cover, no_ball)`` where ``no_ball`` holds when the
    remainder contains no ball of radius twice the box diameter.
    """
    grid = params.grid(spec.space)
    if graph is None:
        graph = transition_graph(spec, BoxCover.whole(grid), params)
    inside = set()
    for a in attractors:
        inside |= set(a.keys)
    keep = set()
    for scc in nx.strongly_connected_components(graph.graph):
        if len(scc) > 1 or any(graph.graph.has_edge(k, k) for k in scc):
            keep |= {k for k in scc if k not in inside}
    remainder = BoxCover(grid, frozenset(keep))
    radius = 2 * grid.diameter
    no_ball = delta_ball_check(remainder, radius, params.probe_count) is None if keep else True
    return remainder, no_ball


def sensitivity_estimate(spec: MapSpec, cover: BoxCover, eps: float, N: int, sample_count: int,
                         axes=None, ball_points: int = 17) -> float:
    """min over sampled x of max over n <= N of diam f^n(sample of cover near x).

    ``axes`` restricts the diameter to a coordinate projection, e.g. ``(0,)``
    for the base circle of a product.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    keys = cover.sorted_keys()
    if not keys:
        return 0.0
    idx = np.unique(np.linspace(0, len(keys) - 1, min(sample_count, len(keys))).astype(int))
    space = spec.space
    r_hat = math.inf
    for i in idx:
        c = key_to_point(cover.grid, keys[i])
        P = ball_probes(space, c, eps, ball_points)
        P = P[cover.contains_points(P)]
        best = 0.0
        for _ in range(N + 1):
            best = max(best, _diameter(space, P, axes))
            P = apply_array(spec, P)
        r_hat = min(r_hat, best)
    return float(r_hat)


def _diameter(space, P, axes=None) -> float:
    if len(P) < 2:
        return 0.0
    i, j = np.triu_indices(len(P), 1)
    if axes is None:
        return float(pairwise_distance(space, P[i], P[j]).max())
    if tuple(axes) == (0,) and space.kind in (CIRCLE, PRODUCT):
        d = np.abs(P[i, 0] - P[j, 0]) % 1.0
        return float(np.minimum(d, 1 - d).max())
    Q = P[:, list(axes)]
    return float(np.linalg.norm(Q[i] - Q[j], axis=1).max())


def _ball_keys(grid: Grid, key, r: float, within: set) -> set:
    """Keys of ``within`` whose centers lie within ``r`` of the center of ``key``."""
    if key[0] < 0:
        return {key} if key in within else set()
    c = grid.center(key)
    w = grid.widths
    spans = [int(math.ceil(r / wk)) for wk in w]
    cand = []
    for k, (n, per) in enumerate(zip(grid.shape, grid.space.periodic)):
        vals = range(key[k] - spans[k], key[k] + spans[k] + 1)
        cand.append(sorted({v % n for v in vals} if per else {v for v in vals if 0 <= v < n}))
    out = set()
    for combo in np.array(np.meshgrid(*cand, indexing="ij")).reshape(len(cand), -1).T:
        k2 = tuple(int(v) for v in combo)
        if k2 in within:
            d = pairwise_distance(grid.space, c[None, :], grid.center(k2)[None, :])[0]
            if d < r:
                out.add(k2)
    if grid.space.kind == INTERVAL:
        for a_id, a in enumerate(grid.space.atoms):
            ak = (-(a_id + 1),)
            if ak in within and abs(a - c[0]) < r:
                out.add(ak)
    return out


def punctured_points(spec: MapSpec, attractor: BoxCover, estimates, r: float, basin_cover=None) -> list:
    """Basin points whose estimate misses the ``r``-ball (inside the attractor) around some box center.

    Returns ``[(source point, missed center point)]``, at most one hit per point.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    within = set(attractor.keys)
    basin = basin_cover if basin_cover is not None else attractor.dilate()
    keys = attractor.sorted_keys()
    balls = {}
    hits = []
    for est in estimates:
        if not est.cover.keys <= basin.keys:
            continue
        for key in keys:
            if key not in balls:
                balls[key] = _ball_keys(attractor.grid, key, r, within)
            ball = balls[key]
            if ball and not (ball & est.cover.keys):
                hits.append((est.source, key_to_point(attractor.grid, key)))
                break
    return hits


@dataclass(frozen=True)
class Violation:
    source: tuple
    target: tuple
    target_kind: str


def interior_invariance_audit(spec: MapSpec, attractor: BoxCover, params: AnalysisParams,
                              graph: TransitionGraph | None = None, sources=None) -> list:
    """Interior attractor boxes whose image reaches a boundary or exterior box."""
    interior = set(attractor.interior_keys())
    src = sorted(interior if sources is None else set(sources) & interior)
    if graph is not None and all(k in graph.graph for k in src):
        images = {k: graph.images(k) for k in src}
    else:
        images = {}
        for a, b in _chunks(len(src), 256):
            images.update(image_boxes(spec, attractor.grid, src[a:b], params.samples_per_axis, params.bloat))
    out = []
    for k in src:
        for t in sorted(images[k]):
            if t not in interior:
                kind = "boundary" if t in attractor.keys else "exterior"
                out.append(Violation(k, t, kind))
    return out


# --------------------------------------------------------------------------
# the decomposition


@dataclass
class AttractorReport:
    cover: BoxCover
    basin_fraction: float
    flags: dict
    violations: list
    merged_from: int
    delta_center: Point | None
    members: tuple = ()


@dataclass
class Decomposition:
    map: MapSpec
    params: AnalysisParams
    attractors: list
    outliers: list
    outlier_groups: list
    estimates: list
    remainder: BoxCover
    remainder_no_ball: bool
    remainder_no_delta_ball: bool
    class_bound: int


def packing_bound(space, delta: float) -> int:
    """Upper bound on the number of disjoint delta-balls."""
    if space.kind == CIRCLE:
        return max(1, int(1.0 / (2 * delta)))
    if space.kind == INTERVAL:
        return int((space.hi - space.lo) / (2 * delta)) + 1 + len(space.atoms)
    if space.kind == DISK:
        return int((space.radius / delta + 1) ** 2)
    return int((1.0 / (2 * delta)) * (space.radius / delta + 1) ** 2) + 1


def closure_of_interior_fraction(cover: BoxCover) -> float:
    interior = set(cover.interior_keys())
    if not cover.keys:
        return 0.0
    near = 0
    for k in cover.keys:
        if k in interior or any(nb in interior for nb in cover.grid.neighbors(k)):
            near += 1
    return near / len(cover)


def decompose_attractors(spec: MapSpec, params: AnalysisParams, points=None) -> Decomposition:
    points = initial_points(spec, params) if points is None else list(points)
    estimates = omega_estimates(spec, points, params)
    grid = params.grid(spec.space)

    passing, outliers = [], []
    for i, est in enumerate(estimates):
        c = delta_ball_check(est, params.delta, params.probe_count)
        (passing if c is not None else outliers).append(i)
    classes = merge_classes([estimates[i] for i in passing], params)
    bound = packing_bound(spec.space, params.delta)
    if len(classes) > bound:
        raise RuntimeError(f"{len(classes)} classes exceed the packing bound {bound}")

    graph = transition_graph(spec, BoxCover.whole(grid), params)
    reports = []
    for cls in classes:
        cover = cls.cover
        basin = cover.dilate()
        attracted = [e for e in estimates if e.cover.keys <= basin.keys]
        center = delta_ball_check(cover, params.delta, params.probe_count)
        closure = closure_of_interior_fraction(cover)
        transitive = is_transitive(graph, cover)
        u_key = grid.key_of(center) if center is not None else cover.sorted_keys()[0]
        strong, iters = strong_transitivity_check(spec, cover, u_key, params, graph)
        punct = punctured_points(spec, cover, attracted, params.delta / 3, basin)
        r_hat = min(sensitivity_estimate(spec, cover, eps, params.sensitivity_steps,
                                         params.sensitivity_samples) for eps in params.sensitivity_eps)
        flags = {
            "has_delta_ball": center is not None,
            "closure_of_interior": closure >= params.closure_threshold,
            "closure_fraction": closure,
            "transitive": transitive,
            "strongly_transitive": strong,
            "strong_transitivity_iterations": iters,
            "sensitive": r_hat >= params.delta / 3,
            "sensitivity_r": r_hat,
            "punctured_count": len(punct),
            "dichotomy": "dense-orbit" if not punct else "sensitive",
        }
        violations = interior_invariance_audit(spec, cover, params, graph)
        reports.append(AttractorReport(cover, len(attracted) / len(estimates), flags, violations,
                                       len(cls.members), center,
                                       tuple(passing[m] for m in cls.members)))
    remainder, no_ball = check_nonwandering_outside(spec, [r.cover for r in reports], params, graph)
    no_delta = delta_ball_check(remainder, params.delta, params.probe_count) is None if remainder.keys else True

    groups = {}
    for i in outliers:
        groups.setdefault(estimates[i].cover.keys, []).append(i)
    outlier_groups = sorted(groups.values())
    return Decomposition(spec, params, reports, [estimates[i].source for i in outliers], outlier_groups,
                         estimates, remainder, no_ball, no_delta, bound)
