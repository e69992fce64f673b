"""The map zoo and outer box-image estimates.

Maps act on ``(n, dim)`` coordinate arrays. Registered names:

* ``counterexample`` -- ``[-1, 1]`` collapses onto the atom 2, which returns to 0
* ``mtupling:<m>`` -- angle times ``m`` on the circle
* ``cubic`` -- ``x -> x**3`` on ``[-1, 1]``
* ``halving`` -- ``x -> x/2`` on ``[0, 1]``
* ``identity`` -- the identity on the circle
* ``skewproduct`` -- octupling base with disk fibers
* ``ifs:<i>`` -- fiber member ``f_i`` (``i`` in 2, 4, 6) acting on the disk
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .phase import (CIRCLE, DISK, INTERVAL, PRODUCT, Box, Grid, Point, SpaceDescriptor,
                    circle, disk, interval_with_atoms, solid_torus)

# --------------------------------------------------------------------------
# smooth transition


def _flat(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    pos = u > 0
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def unit_bump(u):
    """Smooth monotone step from 0 at ``u <= 0`` to 1 at ``u >= 1``, flat to all orders at both ends."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    a = _flat(u)
    b = _flat(1.0 - u)
    return a / (a + b)


@dataclass(frozen=True)
class BumpSpec:
    l: float
    r: float

    def __post_init__(self):
        if not self.l < self.r:
            raise ValueError("bump requires l < r")


def bump(spec: BumpSpec, t):
    """Evaluate the transition on ``[spec.l, spec.r]``; arguments outside are clamped."""
    val = unit_bump((np.asarray(t, dtype=float) - spec.l) / (spec.r - spec.l))
    return float(val) if np.ndim(val) == 0 else val


_TABLE_N = 20001


@lru_cache(maxsize=1)
def _bump_integral_table():
    u = np.linspace(0.0, 1.0, _TABLE_N)
    a = unit_bump(u)
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (a[1:] + a[:-1]) * np.diff(u))])
    # symmetry fixes the total at exactly one half
    integral *= 0.5 / integral[-1]
    return u, integral


def bump_integral(u):
    """``int_0^u unit_bump``, tabulated; equals 0.5 at ``u = 1``."""
    grid, table = _bump_integral_table()
    u = np.asarray(u, dtype=float)
    inside = np.interp(np.clip(u, 0.0, 1.0), grid, table)
    return np.where(u > 1.0, 0.5 + (u - 1.0), inside)


# --------------------------------------------------------------------------
# fiber geometry and the member maps


@dataclass(frozen=True)
class FiberGeometry:
    radius: float = 3.0
    z_cut: float = 1.0
    d_cut: float = 0.0
    q: tuple = (2.0, 0.0)
    s: tuple = (-1.0, 0.0)

    def in_M(self, P, tol=1e-9):
        P = np.atleast_2d(P)
        return np.hypot(P[:, 0], P[:, 1]) <= self.radius + tol

    def z_depth(self, P):
        """Signed distance to the cut ``x = 1`` (positive inside Z)."""
        return self.z_cut - np.atleast_2d(P)[:, 0]

    def d_depth(self, P):
        """Signed distance to the cut ``x = 0`` (positive inside D)."""
        return self.d_cut - np.atleast_2d(P)[:, 0]


@dataclass(frozen=True)
class FiberParams:
    """Constants of the three contracting fiber maps ``f_i = retract o affine_i o fold``.

    The fold sends the strip ``x >= 1`` into ``x`` in ``[-0.5, -0.4]`` and is the
    identity on ``x <= 0``. The retraction squeezes the plane smoothly into the
    disk and is the identity on radius ``<= retract_start``.
    """

    scale: float = 0.85
    translations: tuple = (((0.3, 1.45)), ((0.3, -1.45)), ((-0.9, 0.0)))
    labels: tuple = (2, 4, 6)
    fold_width: float = 1.0 / 3.0
    retract_start: float = 2.9
    radius: float = 3.0

    @property
    def retract_end(self) -> float:
        return 2.0 * self.radius - self.retract_start

    def translation(self, label: int) -> np.ndarray:
        return np.array(self.translations[self.labels.index(label)], dtype=float)


DEFAULT_FIBER = FiberParams()


def fold_x(x, w):
    """Smooth 1-Lipschitz fold: identity for ``x <= 0``, constant ``-(1 - 1.5 w)`` for ``x >= 1``."""
    x = np.asarray(x, dtype=float)
    u1 = x / w
    rise = x - 2.0 * w * bump_integral(u1)
    middle = -(x - w)
    u3 = (x - (1.0 - w)) / w
    fall = -(1.0 - 2.0 * w) - w * (np.clip(u3, 0, 1) - bump_integral(u3))
    out = np.where(x <= 0.0, x, np.where(x <= w, rise, np.where(x <= 1.0 - w, middle, fall)))
    return np.where(x >= 1.0, -(1.0 - 2.0 * w) - 0.5 * w, out)


def _sigma(r, start, end):
    r = np.asarray(r, dtype=float)
    width = end - start
    mid = start + width * (np.clip((r - start) / width, 0, 1) - bump_integral((r - start) / width))
    return np.where(r <= start, r, np.where(r >= end, start + 0.5 * width, mid))


def retract(P, fp: FiberParams = DEFAULT_FIBER):
    """Radial squeeze of the plane onto the disk; identity inside ``retract_start``."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    r = np.hypot(P[:, 0], P[:, 1])
    sig = _sigma(r, fp.retract_start, fp.retract_end)
    factor = np.where(r > 0, sig / np.where(r > 0, r, 1.0), 1.0)
    return P * factor[:, None]


def unretract(P, fp: FiberParams = DEFAULT_FIBER):
    """Inverse of :func:`retract` on the open disk."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    r = np.hypot(P[:, 0], P[:, 1])
    rr = np.linspace(0.0, fp.retract_end, 40001)
    sig = _sigma(rr, fp.retract_start, fp.retract_end)
    pre = np.where(r <= fp.retract_start, r, np.interp(r, sig, rr))
    factor = np.where(r > 0, pre / np.where(r > 0, r, 1.0), 1.0)
    return P * factor[:, None]


def fiber_member(label: int, P, fp: FiberParams = DEFAULT_FIBER):
    P = np.atleast_2d(np.asarray(P, dtype=float))
    folded = np.column_stack([fold_x(P[:, 0], fp.fold_width), P[:, 1]])
    return retract(fp.scale * folded + fp.translation(label), fp)


def fiber_member_inverse_on_D(label: int, P, fp: FiberParams = DEFAULT_FIBER):
    """Preimage under ``f_label`` assuming it lies in the half-plane where the fold is the identity."""
    return (unretract(P, fp) - fp.translation(label)) / fp.scale


# --------------------------------------------------------------------------
# the arc schedule of the skew product (angles in [0, 1))

GEOMETRY = FiberGeometry()

# component order for the weight vectors: f0 (constant q), fs (constant s), f2, f4, f6
_PIECES = (
    # (start, end, from, to); from == to marks a constant piece
    (0.0, 1 / 8, 0, 0),
    (1 / 8, 3 / 16, 0, 1),
    (3 / 16, 1 / 4, 1, 2),
    (1 / 4, 3 / 8, 2, 2),
    (3 / 8, 1 / 2, 2, 3),
    (1 / 2, 5 / 8, 3, 3),
    (5 / 8, 3 / 4, 3, 4),
    (3 / 4, 7 / 8, 4, 4),
    (7 / 8, 15 / 16, 4, 1),
    (15 / 16, 1.0, 1, 0),
)


def schedule_weights(phi) -> np.ndarray:
    """``(n, 5)`` convex weights over (f0, fs, f2, f4, f6) for base angles ``phi``."""
    phi = np.mod(np.atleast_1d(np.asarray(phi, dtype=float)), 1.0)
    W = np.zeros((len(phi), 5))
    for start, end, a, b in _PIECES:
        m = (phi >= start) & (phi < end)
        if not m.any():
            continue
        if a == b:
            W[m, a] = 1.0
        else:
            t = unit_bump((phi[m] - start) / (end - start))
            W[m, a] += 1.0 - t
            W[m, b] += t
    return W


def fiber_components(P, fp: FiberParams = DEFAULT_FIBER, geom: FiberGeometry = GEOMETRY):
    """``(n, 5, 2)`` images of the rows of ``P`` under (f0, fs, f2, f4, f6)."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    n = len(P)
    # the fold is shared by all members, so fold once and retract once
    folded = np.column_stack([fold_x(P[:, 0], fp.fold_width), P[:, 1]])
    T = np.array([fp.translation(label) for label in (2, 4, 6)])
    moved = retract((fp.scale * folded[None, :, :] + T[:, None, :]).reshape(-1, 2), fp).reshape(3, n, 2)
    consts = np.broadcast_to(np.array([geom.q, geom.s], dtype=float)[:, None, :], (2, n, 2))
    return np.concatenate([consts, moved]).transpose(1, 0, 2)


def fiber_apply_weighted(W, P, fp: FiberParams = DEFAULT_FIBER):
    """Fiber images for precomputed schedule weights ``W`` (rows of :func:`schedule_weights`)."""
    W = np.atleast_2d(W)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if not W[:, 2:].any():
        return W[:, :2] @ np.array([GEOMETRY.q, GEOMETRY.s], dtype=float)
    return np.einsum("nk,nkj->nj", W, fiber_components(P, fp))


def fiber_apply(phi, P, fp: FiberParams = DEFAULT_FIBER):
    """Evaluate ``f_phi(p)`` row-wise."""
    return fiber_apply_weighted(schedule_weights(phi), P, fp)


def fiber_map(phi: float, fp: FiberParams = DEFAULT_FIBER):
    """The fiber map over base angle ``phi`` as a function on ``(n, 2)`` disk arrays."""
    phi = float(phi)

    def f(P):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        return fiber_apply(np.full(len(P), phi), P, fp)

    return f


# --------------------------------------------------------------------------
# map specs


@dataclass(frozen=True)
class MapSpec:
    name: str
    space: SpaceDescriptor
    rule: str
    params: tuple = ()
    lipschitz_hint: float | None = None
    fiber: FiberParams = field(default=DEFAULT_FIBER, compare=False)

    @property
    def digit_base(self) -> int | None:
        """Base of the symbolic coding of the circle coordinate, when the map has one."""
        if self.rule == "mtupling":
            return int(self.params[0])
        if self.rule == "skew":
            return 8
        return None


def counterexample() -> MapSpec:
    return MapSpec("counterexample", interval_with_atoms(-1.0, 1.0, (2.0,)), "counterexample", (), 0.0)


def mtupling(m: int) -> MapSpec:
    if m < 1:
        raise ValueError("m must be a positive integer")
    return MapSpec(f"mtupling:{m}", circle(), "mtupling", (int(m),), float(m))


def cubic() -> MapSpec:
    return MapSpec("cubic", SpaceDescriptor(INTERVAL, lo=-1.0, hi=1.0), "generic1d", (0.0, 0.0, 0.0, 1.0), 3.0)


def halving() -> MapSpec:
    return MapSpec("halving", SpaceDescriptor(INTERVAL, lo=0.0, hi=1.0), "generic1d", (0.0, 0.5), 0.5)


def identity() -> MapSpec:
    return MapSpec("identity", circle(), "mtupling", (1,), 1.0)


def skewproduct(fp: FiberParams = DEFAULT_FIBER) -> MapSpec:
    return MapSpec("skewproduct", solid_torus(fp.radius), "skew", (), 8.0, fp)


def ifs_member(label: int, fp: FiberParams = DEFAULT_FIBER) -> MapSpec:
    if label not in fp.labels:
        raise ValueError(f"no fiber member with label {label}")
    return MapSpec(f"ifs:{label}", disk(fp.radius), "ifs", (int(label),), 1.0, fp)


def get_map(name: str) -> MapSpec:
    """Look up a registered map by name; raises ``KeyError`` for unknown names."""
    name = name.strip()
    fixed = {"counterexample": counterexample, "cubic": cubic, "halving": halving,
             "identity": identity, "skewproduct": skewproduct}
    if name in fixed:
        return fixed[name]()
    head, _, arg = name.partition(":")
    try:
        if head == "mtupling" and arg:
            return mtupling(int(arg))
        if head == "ifs" and arg:
            return ifs_member(int(arg))
    except ValueError as exc:
        raise KeyError(name) from exc
    raise KeyError(name)


MAP_NAMES = ("counterexample", "mtupling:<m>", "skewproduct", "cubic", "halving", "identity", "ifs:<i>")


def apply_array(spec: MapSpec, X) -> np.ndarray:
    """Image of every row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if spec.rule == "counterexample":
        x = X[:, 0]
        out = np.where(x == 2.0, 0.0, 2.0)
        return out[:, None]
    if spec.rule == "mtupling":
        return np.mod(spec.params[0] * X, 1.0)
    if spec.rule == "generic1d":
        x = X[:, 0]
        out = np.zeros_like(x)
        for k, c in enumerate(spec.params):
            out += c * x ** k
        return out[:, None]
    if spec.rule == "skew":
        base = np.mod(8.0 * X[:, 0], 1.0)
        return np.column_stack([base, fiber_apply(X[:, 0], X[:, 1:], spec.fiber)])
    if spec.rule == "ifs":
        return fiber_member(spec.params[0], X, spec.fiber)
    raise ValueError(f"unknown rule {spec.rule!r}")


def angle_from_digits(digits, base: int = 8) -> float:
    """Float value of the first digits of an expansion in ``base``."""
    n = min(len(digits), int(math.ceil(56 / math.log2(base))) if base > 1 else 0)
    val = 0.0
    for d in reversed(digits[:n]):
        val = (val + d) / base
    return val % 1.0


def apply(spec: MapSpec, p: Point) -> Point:
    """Exact image of a single point, shifting its symbolic expansion when it has one."""
    if p.space != spec.space:
        raise ValueError(f"point lives in a {p.space.kind} space, map acts on {spec.space.kind}")
    image = apply_array(spec, p.array[None, :])[0]
    expansion = None
    if p.expansion is not None and spec.digit_base:
        rest = tuple(p.expansion[1:])
        if len(rest) >= 20:
            image[0] = angle_from_digits(rest, spec.digit_base)
        expansion = rest
    if spec.space.kind in (DISK, PRODUCT):
        r = math.hypot(image[-2], image[-1])
        if r > spec.space.radius:
            image[-2:] *= spec.space.radius / r
    return Point(spec.space, tuple(image), expansion=expansion)


# --------------------------------------------------------------------------
# outer box images


def box_samples(space: SpaceDescriptor, lo, hi, samples_per_axis: int, atom: bool = False):
    """Cell-centred sample grid of a box, pulled into the space."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if atom:
        return lo[None, :], np.zeros(len(lo))
    frac = (np.arange(samples_per_axis) + 0.5) / samples_per_axis
    axes = [l + (h - l) * frac for l, h in zip(lo, hi)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))
    X = _pull_into_space(space, X)
    return X, (hi - lo) / samples_per_axis


def _pull_into_space(space: SpaceDescriptor, X):
    if space.kind in (CIRCLE, PRODUCT):
        X[:, 0] = np.mod(X[:, 0], 1.0)
    if space.kind in (DISK, PRODUCT):
        r = np.hypot(X[:, -2], X[:, -1])
        over = r > space.radius
        X[over, -2:] *= (space.radius / r[over])[:, None]
    return X


def _sample_radius(space: SpaceDescriptor, spacing) -> float:
    """Max-metric half-diameter of a sampling sub-cell."""
    spacing = np.asarray(spacing, dtype=float)
    if space.kind == DISK:
        return 0.5 * float(np.hypot(*spacing))
    if space.kind == PRODUCT:
        return 0.5 * float(max(spacing[0], np.hypot(spacing[1], spacing[2])))
    return 0.5 * float(spacing[0]) if len(spacing) else 0.0


@lru_cache(maxsize=1)
def phi_lipschitz() -> float:
    """Bound on ``|d f_phi(p) / d phi|``: steepest bump slope over the narrowest blend arc times diam M."""
    u = np.linspace(0.0, 1.0, 100001)
    slope = float(np.max(np.diff(unit_bump(u)) / np.diff(u)))
    narrowest = min(end - start for start, end, a, b in _PIECES if a != b)
    return 1.01 * slope / narrowest * 2.0 * GEOMETRY.radius


def inflation_radius(spec: MapSpec, spacing) -> float:
    """Max-metric radius around a sample image covering the image of its sampling sub-cell."""
    space = spec.space
    if spec.rule == "skew":
        spacing = np.asarray(spacing, dtype=float)
        h_phi = 0.5 * spacing[0]
        h_fib = 0.5 * float(np.hypot(spacing[1], spacing[2]))
        return max(8.0 * h_phi, phi_lipschitz() * h_phi + h_fib)
    return (spec.lipschitz_hint or 0.0) * _sample_radius(space, spacing)


def inflated_keys(grid: Grid, Y, radius) -> np.ndarray:
    """Unique keys of the cells meeting the open max-metric balls ``B(Y[i], radius[i])``.

    The cell containing ``Y[i]`` itself is always included. Returns an int array
    of shape ``(m, dim + 1)``: the row index of ``Y`` followed by the key.
    """
    Y = np.atleast_2d(Y)
    radius = np.broadcast_to(np.asarray(radius, dtype=float), (len(Y),))
    space = grid.space
    base = grid.locate(Y)
    n, dim = Y.shape
    rows = np.arange(n)
    out = [np.column_stack([rows, base])]
    cont = base[:, 0] >= 0
    lo_idx = base.copy()
    hi_idx = base.copy()
    for k, ((root_lo, _), cells, w, per) in enumerate(
        zip(space.root, grid.shape, grid.widths, space.periodic)
    ):
        own = np.floor((Y[:, k] - root_lo) / w).astype(np.int64)
        a = np.floor((Y[:, k] - radius - root_lo) / w).astype(np.int64)
        b = np.maximum(np.ceil((Y[:, k] + radius - root_lo) / w).astype(np.int64) - 1, own)
        if per:
            full = (b - a + 1) >= cells
            a = np.where(full, 0, a)
            b = np.where(full, cells - 1, b)
        else:
            a = np.clip(a, 0, cells - 1)
            b = np.clip(b, 0, cells - 1)
        lo_idx[:, k] = np.where(cont, a, base[:, k])
        hi_idx[:, k] = np.where(cont, b, base[:, k])
    spans = hi_idx - lo_idx
    if cont.any():
        max_span = spans[cont].max(axis=0)
        offsets = np.stack(np.meshgrid(*[np.arange(s + 1) for s in max_span], indexing="ij"),
                           axis=-1).reshape(-1, dim)
        for off in offsets:
            ok = cont & np.all(off[None, :] <= spans, axis=1)
            if not ok.any():
                continue
            keys = lo_idx[ok] + off[None, :]
            for k, (cells, per) in enumerate(zip(grid.shape, space.periodic)):
                if per:
                    keys[:, k] = np.mod(keys[:, k], cells)
            out.append(np.column_stack([rows[ok], keys]))
    # atoms and the continuum see each other only through the ambient line
    if space.kind == INTERVAL and space.atoms:
        for a_id, a in enumerate(space.atoms):
            near = (np.abs(Y[:, 0] - a) < radius) & (Y[:, 0] != a)
            if near.any():
                out.append(np.column_stack([rows[near], np.full(near.sum(), -(a_id + 1))]))
        atom_rows = ~cont
        if atom_rows.any():
            y = Y[atom_rows, 0]
            r = radius[atom_rows]
            w = grid.widths[0]
            a = np.floor((np.maximum(y - r, space.lo) - space.lo) / w).astype(np.int64)
            b = np.ceil((np.minimum(y + r, space.hi) - space.lo) / w).astype(np.int64) - 1
            for row, lo_i, hi_i, yy, rr in zip(rows[atom_rows], a, b, y, r):
                if yy - rr < space.hi and yy + rr > space.lo:
                    for i in range(max(lo_i, 0), min(hi_i, grid.shape[0] - 1) + 1):
                        out.append(np.array([[row, i]]))
    allk = np.unique(np.vstack(out), axis=0)
    if space.kind in (DISK, PRODUCT):
        allk = allk[grid.intersects_space(allk[:, 1:])]
    return allk


def image_boxes(spec: MapSpec, grid: Grid, keys, samples_per_axis: int = 4, bloat: float = 0.0,
                target: Grid | None = None) -> dict:
    """Outer image estimate for many cells of ``grid`` at once.

    Returns ``{key: frozenset(target keys)}``. Every sample image is inflated by
    ``bloat + lipschitz_hint * (sample sub-cell half diameter)`` in the max metric;
    the skew product uses separate base and fiber bounds (see :func:`inflation_radius`).
    """
    if samples_per_axis < 1 or bloat < 0:
        raise ValueError("samples_per_axis must be >= 1 and bloat >= 0")
    target = target or grid
    keys = [tuple(k) for k in keys]
    if not keys:
        return {}
    Xs, owners, radii = [], [], []
    for i, key in enumerate(keys):
        b = grid.box(key)
        X, spacing = box_samples(grid.space, b.lo, b.hi, samples_per_axis, atom=b.atom is not None)
        Xs.append(X)
        owners.append(np.full(len(X), i))
        radii.append(np.full(len(X), bloat + inflation_radius(spec, spacing)))
    X = np.vstack(Xs)
    owners = np.concatenate(owners)
    radii = np.concatenate(radii)
    Y = apply_array(spec, X)
    hits = inflated_keys(target, Y, radii)
    result = {k: set() for k in keys}
    own = owners[hits[:, 0]]
    for i, row in zip(own.tolist(), hits[:, 1:].tolist()):
        result[keys[i]].add(tuple(row))
    return {k: frozenset(v) for k, v in result.items()}


def image_box(spec: MapSpec, b: Box, grid: Grid, samples_per_axis: int = 4, bloat: float = 0.0) -> list:
    """Target-grid boxes hit by the inflated images of a sample grid of ``b``."""
    if samples_per_axis < 1 or bloat < 0:
        raise ValueError("samples_per_axis must be >= 1 and bloat >= 0")
    X, spacing = box_samples(grid.space, b.lo, b.hi, samples_per_axis, atom=b.atom is not None)
    Y = apply_array(spec, X)
    r = bloat + inflation_radius(spec, spacing)
    hits = inflated_keys(grid, Y, np.full(len(Y), r))
    keys = sorted({tuple(row) for row in hits[:, 1:].tolist()})
    return [grid.box(k) for k in keys]
