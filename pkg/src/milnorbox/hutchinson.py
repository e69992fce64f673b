"""Iterated function systems: property checks, box attractors and steering words."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.stats import qmc

from .maps import (DEFAULT_FIBER, GEOMETRY, FiberParams, MapSpec, apply_array,
                   fiber_member_inverse_on_D, ifs_member)
from .phase import INTERVAL, BoxCover, Grid, SpaceDescriptor, disk, subdivide
from .maps import image_boxes


class BudgetExhausted(RuntimeError):
    """An iterative search ran out of its iteration or length budget."""


class WordSearchError(BudgetExhausted):
    def __init__(self, message, best_distance):
        super().__init__(message)
        self.best_distance = best_distance


# --------------------------------------------------------------------------
# regions given by signed depth functions


def _halfdisk_depth(P, cut, radius):
    P = np.atleast_2d(P)
    return np.minimum(cut - P[:, 0], radius - np.hypot(P[:, 0], P[:, 1]))


def _outside_cut_depth(P, cut, radius):
    P = np.atleast_2d(P)
    return np.minimum(P[:, 0] - cut, radius - np.hypot(P[:, 0], P[:, 1]))


def _cut_depth(P, cut, sign):
    return sign * (cut - np.atleast_2d(P)[:, 0])


def _segment_depth(P, lo, hi):
    x = np.atleast_2d(P)[:, 0]
    return np.minimum(x - lo, hi - x)


@dataclass(frozen=True)
class Region:
    """A compact set given by a signed depth function (nonnegative inside)."""

    name: str
    depth: object
    lo: tuple
    hi: tuple
    center: tuple
    radius: float
    diam: float
    cut_depth: object = None

    def relative_depth(self, P) -> np.ndarray:
        """Depth measured against the cuts only, for points already known to lie in M."""
        return (self.cut_depth or self.depth)(P)

    def sample(self, n: int, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        lo = np.array(self.lo)
        hi = np.array(self.hi)
        out = []
        got = 0
        while got < n:
            X = lo + (hi - lo) * rng.random((max(2 * (n - got), 64), len(lo)))
            X = X[self.depth(X) >= 0]
            out.append(X)
            got += len(X)
        return np.vstack(out)[:n]

    def contains(self, P) -> np.ndarray:
        return self.depth(P) >= 0


def fiber_regions(geom=GEOMETRY):
    R = geom.radius
    zx = math.sqrt(R * R - geom.z_cut ** 2)
    zone = Region("Z", partial(_halfdisk_depth, cut=geom.z_cut, radius=R), (-R, -R), (geom.z_cut, R),
                  (0.0, 0.0), R, 2 * R, partial(_cut_depth, cut=geom.z_cut, sign=1.0))
    base = Region("D", partial(_halfdisk_depth, cut=geom.d_cut, radius=R), (-R, -R), (geom.d_cut, R),
                  (-R / 2, 0.0), math.hypot(R / 2, R), 2 * R, partial(_cut_depth, cut=geom.d_cut, sign=1.0))
    outside = Region("M-Z", partial(_outside_cut_depth, cut=geom.z_cut, radius=R), (geom.z_cut, -zx),
                     (R, zx), (0.5 * (geom.z_cut + R), 0.0), math.hypot(0.5 * (R - geom.z_cut), zx),
                     2 * zx, partial(_cut_depth, cut=geom.z_cut, sign=-1.0))
    return zone, base, outside


def segment_region(lo: float, hi: float, name="Z") -> Region:
    return Region(name, partial(_segment_depth, lo=lo, hi=hi), (lo,), (hi,), (0.5 * (lo + hi),),
                  0.5 * (hi - lo), hi - lo)


@dataclass(frozen=True)
class IFS:
    members: tuple
    labels: tuple
    lam: float
    zone: Region
    base: Region
    outside: Region | None = None
    space: SpaceDescriptor | None = None
    inverses: tuple | None = None
    fiber: FiberParams = field(default=DEFAULT_FIBER, compare=False)

    def __post_init__(self):
        if not 0 < self.lam < 1:
            raise ValueError("contraction factor must lie in (0, 1)")
        if len(self.members) != len(self.labels):
            raise ValueError("one label per member map")

    def apply(self, label, P) -> np.ndarray:
        return apply_array(self.members[self.labels.index(label)], P)


def fiber_ifs(fp: FiberParams = DEFAULT_FIBER, lam: float = 0.87) -> IFS:
    """The three contracting fiber maps with the disk geometry."""
    zone, base, outside = fiber_regions()
    members = tuple(ifs_member(L, fp) for L in fp.labels)
    inverses = tuple(partial(fiber_member_inverse_on_D, L, fp=fp) for L in fp.labels)
    return IFS(members, tuple(fp.labels), lam, zone, base, outside, disk(fp.radius), inverses, fp)


def affine_ifs(pairs, lo=0.0, hi=1.0, lam=None) -> IFS:
    """1-d IFS of maps ``x -> a x + b`` on ``[lo, hi]`` with Z = D = the segment."""
    space = SpaceDescriptor(INTERVAL, lo=lo, hi=hi)
    members = tuple(MapSpec(f"affine:{a}:{b}", space, "generic1d", (b, a), abs(a)) for a, b in pairs)
    lam = lam if lam is not None else max(abs(a) for a, _ in pairs)
    seg = segment_region(lo, hi)
    inverses = tuple(partial(_affine_inverse, a=a, b=b) for a, b in pairs)
    return IFS(members, tuple(range(len(pairs))), lam, seg, seg, None, space, inverses)


def _affine_inverse(P, a, b):
    return (np.atleast_2d(P) - b) / a


# --------------------------------------------------------------------------
# property verification


@dataclass(frozen=True)
class PropertyReport:
    passed: tuple
    margins: tuple
    witnesses: tuple

    def __post_init__(self):
        for ok, w in zip(self.passed, self.witnesses):
            if not ok and w is None:
                raise ValueError("a failed property needs a witness")

    @property
    def all_passed(self) -> bool:
        return all(self.passed)

    def to_json(self) -> dict:
        return {
            "pass": [bool(p) for p in self.passed],
            "margin": [float(m) for m in self.margins],
            "witness": [None if w is None else [float(c) for c in w] for w in self.witnesses],
        }


def _halton(n, dim, seed):
    return qmc.Halton(d=dim, scramble=True, seed=seed).random(n)


def _fill(region: Region, n: int, seed: int) -> np.ndarray:
    """Random plus low-discrepancy points of a region."""
    half = n // 2
    lo = np.array(region.lo)
    hi = np.array(region.hi)
    H = lo + (hi - lo) * _halton(4 * n, len(lo), seed)
    H = H[region.contains(H)][: n - half]
    return np.vstack([region.sample(half, seed), H])


def verify_fiber_properties(ifs: IFS, sample_count: int = 10_000, seed: int = 0) -> PropertyReport:
    """Sampled check of contraction on Z, covering of D, and the Z / D mapping properties.

    Margins are signed distances to the boundary that would be violated;
    property 1's margin is ``lam`` minus the worst observed Lipschitz ratio.
    Covering of D is decided by pulling every sample back through each member.
    """
    if sample_count < 10_000:
        raise ValueError("sample_count must be at least 10**4")
    n = sample_count
    in_space = ifs.space.contains if ifs.space is not None else (lambda P: np.ones(len(P), bool))
    Z = _fill(ifs.zone, n, seed)
    Z2 = ifs.zone.sample(n, seed + 1)
    D = _fill(ifs.base, n, seed + 2)
    passed, margins, witnesses = [], [], []

    # 1) contraction on Z
    worst, wit = -np.inf, None
    for f in ifs.members:
        diff = np.linalg.norm(apply_array(f, Z) - apply_array(f, Z2), axis=1)
        base = np.linalg.norm(Z - Z2, axis=1)
        ok = base > 1e-12
        ratio = diff[ok] / base[ok]
        i = int(np.argmax(ratio))
        if ratio[i] > worst:
            worst, wit = ratio[i], Z[ok][i]
    m1 = ifs.lam - worst
    passed.append(m1 >= 0)
    margins.append(m1)
    witnesses.append(None if m1 >= 0 else tuple(wit))

    # 2) D inside the union of images of D, and the images inside Z
    if ifs.inverses is not None:
        cover_depth = np.full(len(D), -np.inf)
        for inv in ifs.inverses:
            cover_depth = np.maximum(cover_depth, ifs.base.depth(inv(D)))
    else:
        from scipy.spatial import cKDTree
        imgs = np.vstack([apply_array(f, _fill(ifs.base, 4 * n, seed + 9)) for f in ifs.members])
        dist, _ = cKDTree(imgs).query(D)
        cover_depth = 1e-2 - dist
    i = int(np.argmin(cover_depth))
    m2, wit2 = float(cover_depth[i]), D[i]
    for f in ifs.members:
        img = apply_array(f, D)
        dep = np.where(in_space(img), ifs.zone.relative_depth(img), -np.inf)
        j = int(np.argmin(dep))
        if dep[j] < m2:
            m2, wit2 = float(dep[j]), D[j]
    passed.append(m2 >= 0)
    margins.append(m2)
    witnesses.append(None if m2 >= 0 else tuple(wit2))

    # 3) M \ Z into D
    if ifs.outside is None:
        passed.append(True)
        margins.append(math.inf)
        witnesses.append(None)
    else:
        X = _fill(ifs.outside, n, seed + 3)
        m3, wit3 = math.inf, None
        for f in ifs.members:
            img = apply_array(f, X)
            dep = np.where(in_space(img), ifs.base.relative_depth(img), -np.inf)
            j = int(np.argmin(dep))
            if dep[j] < m3:
                m3, wit3 = float(dep[j]), X[j]
        passed.append(m3 >= 0)
        margins.append(m3)
        witnesses.append(None if m3 >= 0 else tuple(wit3))

    # 4) Z into Z
    m4, wit4 = math.inf, None
    for f in ifs.members:
        img = apply_array(f, Z)
        dep = np.where(in_space(img), ifs.zone.relative_depth(img), -np.inf)
        j = int(np.argmin(dep))
        if dep[j] < m4:
            m4, wit4 = float(dep[j]), Z[j]
    passed.append(m4 >= 0)
    margins.append(m4)
    witnesses.append(None if m4 >= 0 else tuple(wit4))

    return PropertyReport(tuple(bool(p) for p in passed), tuple(float(m) for m in margins),
                          tuple(None if w is None else tuple(float(c) for c in w) for w in witnesses))


# --------------------------------------------------------------------------
# box attractor


def _zone_cover(ifs: IFS, grid: Grid) -> BoxCover:
    keys = []
    for key in grid.all_keys():
        b = grid.box(key)
        lo, hi = np.array(b.lo), np.array(b.hi)
        t = np.linspace(0, 1, 5)
        pts = np.stack(np.meshgrid(*[l + (h - l) * t for l, h in zip(lo, hi)], indexing="ij"),
                       axis=-1).reshape(-1, len(lo))
        if ifs.zone.contains(pts).any():
            keys.append(key)
    return BoxCover(grid, frozenset(keys))


def hutchinson_step(ifs: IFS, cover: BoxCover, samples_per_axis: int = 4, bloat: float = 0.0) -> BoxCover:
    """Boxes of ``cover`` hit by the outer image of ``cover`` under every member."""
    hit = set()
    keys = cover.sorted_keys()
    for f in ifs.members:
        for img in image_boxes(f, cover.grid, keys, samples_per_axis, bloat).values():
            hit |= img
    return BoxCover(cover.grid, frozenset(k for k in cover.keys if k in hit))


def ifs_attractor(ifs: IFS, depth: int, samples_per_axis: int = 4, bloat: float = 0.0,
                  max_iter: int = 500, start_depth: int = 0) -> BoxCover:
    """Outer box cover of the IFS attractor by subdivision and selection.

    Starting from the boxes meeting Z, every level is subdivided and then
    reduced to the boxes hit by the Hutchinson image until it stops changing.
    """
    space = ifs.space or SpaceDescriptor(INTERVAL, lo=ifs.zone.lo[0], hi=ifs.zone.hi[0])
    cover = _zone_cover(ifs, Grid.from_depth(space, start_depth))
    for level in range(start_depth, depth + 1):
        if level > start_depth:
            cover = subdivide(cover)
        for _ in range(max_iter):
            nxt = hutchinson_step(ifs, cover, samples_per_axis, bloat)
            if nxt.keys == cover.keys:
                break
            cover = nxt
        else:
            raise BudgetExhausted(f"Hutchinson iteration did not settle at depth {level}")
        if not cover.keys:
            raise BudgetExhausted("Hutchinson iteration emptied the cover")
    return cover


# --------------------------------------------------------------------------
# steering words


def apply_word(ifs: IFS, word, P) -> np.ndarray:
    """Apply the members of ``word`` in order: ``word[0]`` acts first."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    for label in word:
        P = ifs.apply(label, P)
    return P


def _eval_outer_first(ifs: IFS, words: np.ndarray, start: np.ndarray) -> np.ndarray:
    """Evaluate compositions whose first column is the outermost map."""
    n, k = words.shape
    P = np.repeat(start[None, :], n, axis=0)
    for pos in range(k - 1, -1, -1):
        col = words[:, pos]
        for idx, label in enumerate(ifs.labels):
            m = col == idx
            if m.any():
                P[m] = ifs.apply(label, P[m])
    return P


@dataclass(frozen=True)
class WordCertificate:
    word: tuple
    distance: float
    bound: float
    radius: float

    @property
    def holds(self) -> bool:
        return self.distance + self.bound <= self.radius


def certify_word(ifs: IFS, word, center, radius: float, start=None) -> WordCertificate:
    """Forward-evaluate ``word`` and compare with the contraction bound.

    Without ``start`` the tracked point is the center of Z and the bound is
    ``lam**len(word)`` times the radius of Z about it, which encloses the whole
    image of Z. With ``start`` only that point is claimed.
    """
    c = np.asarray(getattr(center, "coords", center), dtype=float)
    z = np.asarray(ifs.zone.center if start is None else start, dtype=float)
    img = apply_word(ifs, word, z)[0]
    bound = 0.0 if start is not None else ifs.lam ** len(word) * ifs.zone.radius
    return WordCertificate(tuple(word), float(np.linalg.norm(img - c)), float(bound), float(radius))


def hutchinson_word_search(ifs: IFS, target_center, target_radius: float, max_len: int = 64,
                           beam: int = 256, start=None) -> tuple:
    """Find a word sending Z (or the point ``start``) into the target ball.

    Breadth-first over compositions built from the outermost map inward; a
    prefix survives only while its image ball, of radius ``lam**k`` times the
    radius of Z, still reaches the target. The returned word is in application
    order, first map first.
    """
    if target_radius <= 0:
        raise ValueError("target radius must be positive")
    c = np.asarray(getattr(target_center, "coords", target_center), dtype=float)
    zc = np.asarray(ifs.zone.center, dtype=float)
    track = zc if start is None else np.asarray(start, dtype=float)
    Rz = ifs.zone.radius

    def certified(dist, k):
        if start is None:
            return dist + ifs.lam ** k * Rz <= target_radius
        return dist < target_radius

    d0 = float(np.linalg.norm(track - c))
    if certified(d0, 0):
        return ()
    m = len(ifs.labels)
    frontier = np.zeros((1, 0), dtype=np.int64)
    best = d0
    for k in range(1, max_len + 1):
        words = np.vstack([np.column_stack([frontier, np.full(len(frontier), j)]) for j in range(m)])
        imgs = _eval_outer_first(ifs, words, zc)
        dist = np.linalg.norm(imgs - c, axis=1)
        if start is not None:
            tracked = _eval_outer_first(ifs, words, track)
            tdist = np.linalg.norm(tracked - c, axis=1)
        else:
            tdist = dist
        best = min(best, float(tdist.min()))
        hits = np.flatnonzero([certified(d, k) for d in tdist])
        if hits.size:
            order = sorted(hits, key=lambda i: (tdist[i], tuple(words[i])))
            w = words[order[0]]
            return tuple(ifs.labels[i] for i in w[::-1])
        reach = dist <= ifs.lam ** k * Rz + target_radius
        words, dist = words[reach], dist[reach]
        if not len(words):
            break
        order = np.lexsort(tuple(words[:, j] for j in range(words.shape[1] - 1, -1, -1)) + (dist,))
        frontier = words[order[:beam]]
    raise WordSearchError(f"no word of length <= {max_len} reaches the target; best distance {best:.4g}",
                          best)
