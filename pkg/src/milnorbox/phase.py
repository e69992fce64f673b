"""Phase spaces, points, boxes and uniform box covers.

Every supported space is a product of at most three coordinate axes inside a
root box. Continuous cells of a cover live on a dyadic grid over that root box
and are addressed by integer index tuples. Isolated points of an
interval-with-atoms space are zero-extent atom cells addressed by ``(-(k+1),)``.
"""

from __future__ import annotations

import csv
import io
import math
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import qmc

INTERVAL = "interval-with-atoms"
CIRCLE = "circle"
DISK = "disk"
PRODUCT = "product"

Key = tuple


@dataclass(frozen=True)
class SpaceDescriptor:
    kind: str
    lo: float = 0.0
    hi: float = 1.0
    atoms: tuple = ()
    circumference: float = 1.0
    radius: float = 3.0

    def __post_init__(self):
        if self.kind not in (INTERVAL, CIRCLE, DISK, PRODUCT):
            raise ValueError(f"unknown space kind {self.kind!r}")
        if self.kind == INTERVAL:
            if not self.lo < self.hi:
                raise ValueError("interval endpoints must satisfy lo < hi")
            for a in self.atoms:
                if self.lo <= a <= self.hi:
                    raise ValueError(f"atom {a} lies inside [{self.lo}, {self.hi}]")
        if self.radius <= 0 or self.circumference <= 0:
            raise ValueError("radius and circumference must be positive")

    @property
    def dim(self) -> int:
        return {INTERVAL: 1, CIRCLE: 1, DISK: 2, PRODUCT: 3}[self.kind]

    @property
    def root(self) -> tuple:
        """Per-axis (lo, hi) bounds of the root box."""
        R = self.radius
        if self.kind == INTERVAL:
            return ((self.lo, self.hi),)
        if self.kind == CIRCLE:
            return ((0.0, 1.0),)
        if self.kind == DISK:
            return ((-R, R), (-R, R))
        return ((0.0, 1.0), (-R, R), (-R, R))

    @property
    def periodic(self) -> tuple:
        return {INTERVAL: (False,), CIRCLE: (True,), DISK: (False, False),
                PRODUCT: (True, False, False)}[self.kind]

    def contains(self, X) -> np.ndarray:
        """Vectorized membership test for an ``(n, dim)`` array of coordinates."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == INTERVAL:
            x = X[:, 0]
            ok = (x >= self.lo) & (x <= self.hi)
            for a in self.atoms:
                ok |= x == a
            return ok
        if self.kind == CIRCLE:
            return (X[:, 0] >= 0.0) & (X[:, 0] < 1.0)
        fib = X[:, -2:]
        ok = np.einsum("ij,ij->i", fib, fib) <= self.radius ** 2 * (1 + 1e-12)
        if self.kind == PRODUCT:
            ok &= (X[:, 0] >= 0.0) & (X[:, 0] < 1.0)
        return ok

    def atom_index(self, value: float):
        for k, a in enumerate(self.atoms):
            if value == a:
                return k
        return None


def interval_with_atoms(lo=-1.0, hi=1.0, atoms=(2.0,)) -> SpaceDescriptor:
    return SpaceDescriptor(INTERVAL, lo=float(lo), hi=float(hi), atoms=tuple(float(a) for a in atoms))


def circle() -> SpaceDescriptor:
    return SpaceDescriptor(CIRCLE)


def disk(radius=3.0) -> SpaceDescriptor:
    return SpaceDescriptor(DISK, radius=float(radius))


def solid_torus(radius=3.0) -> SpaceDescriptor:
    return SpaceDescriptor(PRODUCT, radius=float(radius))


@dataclass(frozen=True)
class Point:
    """A point of a space.

    ``expansion`` optionally carries the exact base-8 digits of the circle
    coordinate. Float angles are dyadic rationals and collapse under the
    octupling map after about 18 steps; orbits that must stay generic are
    driven from the digits instead.
    """

    space: SpaceDescriptor
    coords: tuple
    atom: int | None = None
    expansion: tuple | None = None

    def __post_init__(self):
        coords = tuple(float(c) for c in self.coords)
        object.__setattr__(self, "coords", coords)
        if len(coords) != self.space.dim:
            raise ValueError(f"expected {self.space.dim} coordinates, got {len(coords)}")
        if self.space.kind in (CIRCLE, PRODUCT) and coords[0] == 1.0:
            object.__setattr__(self, "coords", (0.0,) + coords[1:])
        if not self.space.contains(np.array([self.coords]))[0]:
            raise ValueError(f"point {coords} lies outside the {self.space.kind} space")
        if self.space.kind == INTERVAL:
            object.__setattr__(self, "atom", self.space.atom_index(coords[0]))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.coords, dtype=float)


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    depth: int = 0
    atom: int | None = None

    def __post_init__(self):
        if any(l > h for l, h in zip(self.lo, self.hi)):
            raise ValueError("box lower bound exceeds upper bound")
        if self.atom is not None and self.lo != self.hi:
            raise ValueError("atom boxes have zero extent")

    @property
    def center(self) -> tuple:
        return tuple(0.5 * (l + h) for l, h in zip(self.lo, self.hi))

    @property
    def widths(self) -> tuple:
        return tuple(h - l for l, h in zip(self.lo, self.hi))


@dataclass(frozen=True)
class Grid:
    """Uniform dyadic grid: ``bits[k]`` bisections along axis ``k``."""

    space: SpaceDescriptor
    bits: tuple

    @classmethod
    def from_depth(cls, space: SpaceDescriptor, depth: int) -> "Grid":
        bits = [0] * space.dim
        for _ in range(depth):
            bits[_longest_axis(space, bits)] += 1
        return cls(space, tuple(bits))

    @property
    def depth(self) -> int:
        return sum(self.bits)

    @property
    def shape(self) -> tuple:
        return tuple(1 << b for b in self.bits)

    @property
    def widths(self) -> np.ndarray:
        return np.array([(h - l) / n for (l, h), n in zip(self.space.root, self.shape)])

    @property
    def diameter(self) -> float:
        """Cell diameter in the space metric."""
        w = self.widths
        if self.space.kind == DISK:
            return float(np.hypot(*w))
        if self.space.kind == PRODUCT:
            return float(max(w[0], np.hypot(w[1], w[2])))
        return float(w[0])

    def refined(self) -> "Grid":
        bits = list(self.bits)
        bits[_longest_axis(self.space, bits)] += 1
        return Grid(self.space, tuple(bits))

    def box(self, key: Key) -> Box:
        if key[0] < 0:
            a = self.space.atoms[-key[0] - 1]
            return Box((a,), (a,), self.depth, atom=-key[0] - 1)
        w = self.widths
        lo = tuple(r[0] + i * wk for r, i, wk in zip(self.space.root, key, w))
        hi = tuple(r[0] + (i + 1) * wk for r, i, wk in zip(self.space.root, key, w))
        return Box(lo, hi, self.depth)

    def center(self, key: Key) -> np.ndarray:
        return np.array(self.box(key).center)

    def locate(self, X) -> np.ndarray:
        """Integer keys of the cells containing the rows of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        keys = np.empty(X.shape, dtype=np.int64)
        for k, ((lo, _), n, w, per) in enumerate(
            zip(self.space.root, self.shape, self.widths, self.space.periodic)
        ):
            idx = np.floor((X[:, k] - lo) / w).astype(np.int64)
            keys[:, k] = np.mod(idx, n) if per else np.clip(idx, 0, n - 1)
        if self.space.kind == INTERVAL:
            for a_id, a in enumerate(self.space.atoms):
                keys[X[:, 0] == a, 0] = -(a_id + 1)
        return keys

    def key_of(self, p: Point) -> Key:
        return tuple(int(v) for v in self.locate(p.array)[0])

    def intersects_space(self, keys: np.ndarray) -> np.ndarray:
        keys = np.atleast_2d(keys)
        if self.space.kind not in (DISK, PRODUCT):
            return np.ones(len(keys), dtype=bool)
        w = self.widths[-2:]
        root = np.array([r[0] for r in self.space.root[-2:]])
        lo = root + keys[:, -2:] * w
        hi = lo + w
        nearest = np.clip(0.0, lo, hi)
        return np.einsum("ij,ij->i", nearest, nearest) < self.space.radius ** 2

    def all_keys(self) -> list:
        axes = [np.arange(n) for n in self.shape]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
        mesh = mesh[self.intersects_space(mesh)]
        keys = [tuple(int(v) for v in row) for row in mesh]
        keys += [(-(k + 1),) for k in range(len(self.space.atoms))]
        return sorted(keys)

    def neighbors(self, key: Key) -> list:
        """Face-adjacent cells that meet the space. Atoms have none."""
        if key[0] < 0:
            return []
        out = []
        for k, (n, per) in enumerate(zip(self.shape, self.space.periodic)):
            for step in (-1, 1):
                j = key[k] + step
                if per:
                    j %= n
                elif not 0 <= j < n:
                    continue
                nb = key[:k] + (j,) + key[k + 1:]
                if nb != key and nb not in out:
                    out.append(nb)
        if self.space.kind in (DISK, PRODUCT) and out:
            ok = self.intersects_space(np.array(out))
            out = [nb for nb, o in zip(out, ok) if o]
        return out

    def chebyshev_neighbors(self, key: Key) -> list:
        """All cells within one step along every axis, diagonals included."""
        if key[0] < 0:
            return []
        ranges = []
        for k, (n, per) in enumerate(zip(self.shape, self.space.periodic)):
            vals = []
            for step in (-1, 0, 1):
                j = key[k] + step
                if per:
                    j %= n
                elif not 0 <= j < n:
                    continue
                if j not in vals:
                    vals.append(j)
            ranges.append(vals)
        out = [tuple(c) for c in np.array(np.meshgrid(*ranges, indexing="ij")).reshape(len(ranges), -1).T]
        return [tuple(int(v) for v in c) for c in out if tuple(c) != key]


def _longest_axis(space: SpaceDescriptor, bits) -> int:
    widths = [(h - l) / (1 << b) for (l, h), b in zip(space.root, bits)]
    best = max(widths)
    return next(k for k, w in enumerate(widths) if w >= best * (1 - 1e-12))


@dataclass(frozen=True)
class BoxCover:
    grid: Grid
    keys: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "keys", frozenset(tuple(int(v) for v in k) for k in self.keys))

    @classmethod
    def whole(cls, grid: Grid) -> "BoxCover":
        return cls(grid, frozenset(grid.all_keys()))

    @classmethod
    def from_points(cls, grid: Grid, X) -> "BoxCover":
        keys = np.asarray(grid.locate(X), dtype=np.int64)
        if keys.shape[0] == 0:
            return cls(grid, frozenset())
        # unique over one packed integer per row is much faster than axis=0
        shift = keys.min(axis=0)
        span = keys.max(axis=0) - shift + 1
        packed = np.ravel_multi_index((keys - shift).T, tuple(span))
        _, first = np.unique(packed, return_index=True)
        return cls(grid, frozenset(map(tuple, keys[first].tolist())))

    @property
    def space(self) -> SpaceDescriptor:
        return self.grid.space

    @property
    def depth(self) -> int:
        return self.grid.depth

    def sorted_keys(self) -> list:
        return sorted(self.keys)

    @property
    def boxes(self) -> list:
        return [self.grid.box(k) for k in self.sorted_keys()]

    def __len__(self):
        return len(self.keys)

    def __contains__(self, key) -> bool:
        return key in self.keys

    def contains_points(self, X) -> np.ndarray:
        keys = self.grid.locate(X)
        return np.array([tuple(row) in self.keys for row in keys.tolist()], dtype=bool)

    def union(self, other: "BoxCover") -> "BoxCover":
        _check_same_grid(self, other)
        return BoxCover(self.grid, self.keys | other.keys)

    def issubset(self, other: "BoxCover") -> bool:
        _check_same_grid(self, other)
        return self.keys <= other.keys

    def is_interior(self, key: Key) -> bool:
        """True when every face neighbor lies in the cover; present atoms always are."""
        if key not in self.keys:
            return False
        return all(nb in self.keys for nb in self.grid.neighbors(key))

    def interior_keys(self) -> list:
        return [k for k in self.sorted_keys() if self.is_interior(k)]

    def dilate(self) -> "BoxCover":
        """Inflate by one box diameter (Chebyshev neighborhood)."""
        keys = set(self.keys)
        for k in self.keys:
            keys.update(self.grid.chebyshev_neighbors(k))
        return BoxCover(self.grid, frozenset(keys))


def _check_same_grid(a: BoxCover, b: BoxCover):
    if a.grid != b.grid:
        raise ValueError("covers live on different grids")


def subdivide(cover: BoxCover) -> BoxCover:
    """Bisect every continuous box along the longest axis; atoms pass through."""
    if not cover.keys:
        raise ValueError("cannot subdivide an empty cover")
    grid = cover.grid.refined()
    axis = next(k for k, (a, b) in enumerate(zip(cover.grid.bits, grid.bits)) if a != b)
    keys = set()
    for key in cover.keys:
        if key[0] < 0:
            keys.add(key)
            continue
        for half in (0, 1):
            keys.add(key[:axis] + (2 * key[axis] + half,) + key[axis + 1:])
    children = np.array([k for k in keys if k[0] >= 0]) if keys else None
    if children is not None and len(children):
        ok = grid.intersects_space(children)
        keys = {k for k in keys if k[0] < 0} | {tuple(c) for c, o in zip(children.tolist(), ok) if o}
    return BoxCover(grid, frozenset(keys))


def cover_at(space: SpaceDescriptor, depth: int) -> BoxCover:
    return BoxCover.whole(Grid.from_depth(space, depth))


def distance(p: Point, q: Point) -> float:
    if p.space != q.space:
        raise ValueError("points live in different spaces")
    return float(pairwise_distance(p.space, p.array[None, :], q.array[None, :])[0])


def pairwise_distance(space: SpaceDescriptor, X, Y) -> np.ndarray:
    """Row-wise distances between equally shaped coordinate arrays."""
    X = np.atleast_2d(X)
    Y = np.atleast_2d(Y)
    if space.kind == INTERVAL:
        return np.abs(X[:, 0] - Y[:, 0])
    if space.kind == CIRCLE:
        return circle_distance(X[:, 0], Y[:, 0])
    fib = np.hypot(X[:, -2] - Y[:, -2], X[:, -1] - Y[:, -1])
    if space.kind == DISK:
        return fib
    return np.maximum(circle_distance(X[:, 0], Y[:, 0]), fib)


def circle_distance(a, b):
    d = np.abs(np.asarray(a) - np.asarray(b)) % 1.0
    return np.minimum(d, 1.0 - d)


def ball_probes(space: SpaceDescriptor, center: Point, radius: float, probe_count: int) -> np.ndarray:
    """Deterministic low-discrepancy points of the open ball, intersected with the space.

    The center is always the first probe. The scrambling seed is a checksum of
    ``(center, radius)`` so that identical queries give identical probes.
    """
    c = center.array
    seed = zlib.crc32(repr((center.coords, float(radius))).encode())
    pts = [c]
    if space.kind == INTERVAL:
        for a in space.atoms:
            if abs(a - c[0]) < radius and a != c[0]:
                pts.append(np.array([a]))
        u = qmc.Halton(d=1, scramble=True, seed=seed).random(probe_count)[:, 0]
        x = c[0] + radius * (2 * u - 1) * (1 - 1e-12)
        x = x[(x >= space.lo) & (x <= space.hi)]
        pts.extend(x[:, None])
        return np.array(pts)
    if space.kind == CIRCLE:
        if radius >= 0.5:
            u = qmc.Halton(d=1, scramble=True, seed=seed).random(probe_count)[:, 0]
            return np.vstack([c[None, :], u[:, None]])
        u = qmc.Halton(d=1, scramble=True, seed=seed).random(probe_count)[:, 0]
        x = np.mod(c[0] + radius * (2 * u - 1) * (1 - 1e-12), 1.0)
        return np.vstack([c[None, :], x[:, None]])
    dim = space.dim
    sampler = qmc.Halton(d=dim, scramble=True, seed=seed)
    out = []
    need = probe_count
    while need > 0:
        u = 2 * sampler.random(max(4 * need, 16)) - 1
        if space.kind == DISK:
            u = u[np.einsum("ij,ij->i", u, u) < 1.0]
        else:
            u = u[np.einsum("ij,ij->i", u[:, 1:], u[:, 1:]) < 1.0]
        out.append(u[:need])
        need -= len(out[-1])
    u = np.vstack(out) * radius * (1 - 1e-12)
    X = c[None, :] + u
    if space.kind == PRODUCT:
        X[:, 0] = np.mod(X[:, 0], 1.0)
    X = X[space.contains(X)]
    return np.vstack([c[None, :], X])


def ball_contained(cover: BoxCover, center: Point, radius: float, probe_count: int = 64) -> bool:
    if radius <= 0 or probe_count < 1:
        raise ValueError("radius must be positive and probe_count at least 1")
    probes = ball_probes(cover.space, center, radius, probe_count)
    return bool(cover.contains_points(probes).all())


def key_to_point(grid: Grid, key: Key) -> Point:
    if key[0] < 0:
        return Point(grid.space, (grid.space.atoms[-key[0] - 1],))
    c = grid.center(key)
    if grid.space.kind in (DISK, PRODUCT):
        r = math.hypot(c[-2], c[-1])
        if r > grid.space.radius:
            c[-2:] *= grid.space.radius / r
    return Point(grid.space, tuple(c))


# CSV dump: depth, lo_1..lo_n, hi_1..hi_n, atom_id

def cover_to_csv(cover: BoxCover) -> str:
    n = cover.space.dim
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["depth"] + [f"lo_{i + 1}" for i in range(n)] + [f"hi_{i + 1}" for i in range(n)] + ["atom_id"])
    for key in cover.sorted_keys():
        b = cover.grid.box(key)
        w.writerow([cover.depth] + [repr(float(v)) for v in b.lo] + [repr(float(v)) for v in b.hi]
                   + ["" if b.atom is None else b.atom])
    return buf.getvalue()


def cover_from_csv(text: str, grid: Grid) -> BoxCover:
    rows = list(csv.DictReader(io.StringIO(text)))
    n = grid.space.dim
    keys = []
    for row in rows:
        if int(row["depth"]) != grid.depth:
            raise ValueError("CSV depth does not match grid depth")
        if row["atom_id"] != "":
            keys.append((-(int(row["atom_id"]) + 1),))
            continue
        lo = np.array([float(row[f"lo_{i + 1}"]) for i in range(n)])
        hi = np.array([float(row[f"hi_{i + 1}"]) for i in range(n)])
        keys.append(tuple(int(v) for v in grid.locate(0.5 * (lo + hi))[0]))
    return BoxCover(grid, frozenset(keys))


def keys_array(keys: Iterable[Key]) -> np.ndarray:
    return np.array(sorted(keys), dtype=np.int64)


def as_points(space: SpaceDescriptor, coords: Sequence) -> list:
    return [Point(space, tuple(np.atleast_1d(c))) for c in coords]
