import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from milnorbox.attractor import (AnalysisParams, OmegaEstimate, check_nonwandering_outside,
                                 closure_of_interior_fraction, decompose_attractors, delta_ball_check,
                                 initial_points, interior_invariance_audit, is_transitive, merge_classes,
                                 omega_estimates, omega_limit, orbit_batch, packing_bound, punctured_points,
                                 sensitivity_estimate, strong_transitivity_check, transition_graph)
from milnorbox.maps import MapSpec, angle_from_digits, get_map
from milnorbox.phase import BoxCover, Grid, Point
from milnorbox.symbolic import generic_expansion, rich_sequence

ORACLE = Path(__file__).parent / "fixtures" / "cubic_oracle.json"

OCT = get_map("mtupling:8")
CEX = get_map("counterexample")
HALF = get_map("halving")
CUBIC = get_map("cubic")
IDENT = get_map("identity")

CEX_P = AnalysisParams(delta=0.4, depth=8, n_tail=200, grid_per_axis=50)
OCT_P = AnalysisParams(delta=0.1, depth=10, n_tail=5000, grid_per_axis=50)


def rich_point(L=4, copies=2):
    digits = rich_sequence(L, copies)
    return Point(OCT.space, (angle_from_digits(digits),), expansion=digits)


@pytest.fixture(scope="module")
def oct_decomp():
    return decompose_attractors(OCT, OCT_P)


@pytest.fixture(scope="module")
def oct_graph():
    return transition_graph(OCT, BoxCover.whole(OCT_P.grid(OCT.space)), OCT_P)


# --- params


def test_params_validation():
    for bad in [dict(delta=0), dict(n_tail=0), dict(grid_per_axis=0), dict(probe_count=0), dict(bloat=-1)]:
        with pytest.raises(ValueError):
            AnalysisParams(**bad)


# --- omega limits


def test_omega_counterexample():
    est = omega_limit(CEX, Point(CEX.space, (0.3,)), CEX_P)
    assert est.cover.sorted_keys() == [(-1,), (128,)]


def test_omega_halving_global_sink():
    est = omega_limit(HALF, Point(HALF.space, (1.0,)), AnalysisParams(depth=8, n_tail=50))
    assert est.cover.sorted_keys() == [(0,)]


def test_omega_rich_angle_visits_every_cylinder():
    est = omega_limit(OCT, rich_point(), AnalysisParams(depth=12, n_tail=5000))
    assert len(est.cover) == 2 ** 12


def test_omega_errors():
    with pytest.raises(ValueError):
        omega_limit(OCT, Point(OCT.space, (0.1,), expansion=(1, 2, 3)), AnalysisParams(n_tail=50))
    escape = MapSpec("doubling-line", CUBIC.space, "generic1d", (0.0, 2.0), 2.0)
    with pytest.raises(RuntimeError):
        omega_limit(escape, Point(CUBIC.space, (0.9,)), AnalysisParams(n_tail=5))


def test_orbit_batch_matches_single_orbits():
    spec = get_map("skewproduct")
    params = AnalysisParams(depth=6, n_transient=10, n_tail=40, grid_per_axis=3)
    pts = initial_points(spec, params)[:5]
    batch = orbit_batch(spec, pts, 10, 40)
    for p, seg in zip(pts, batch):
        np.testing.assert_array_equal(orbit_batch(spec, [p], 10, 40)[0], seg)


@pytest.mark.parametrize("spec,x", [(OCT, None), (CUBIC, (0.7,)), (CEX, (-0.2,))])
def test_nesting_under_longer_transient(spec, x):
    p = rich_point() if x is None else Point(spec.space, x)
    a = omega_limit(spec, p, AnalysisParams(depth=9, n_transient=100, n_tail=3000))
    b = omega_limit(spec, p, AnalysisParams(depth=9, n_transient=200, n_tail=2900))
    assert b.cover.issubset(a.cover)


# --- delta balls and merging


def test_delta_ball_examples():
    g = Grid.from_depth(OCT.space, 8)
    assert delta_ball_check(BoxCover.whole(g), 0.1) is not None
    gx = Grid.from_depth(CEX.space, 8)
    c = delta_ball_check(BoxCover(gx, {(-1,), (128,)}), 0.5)
    assert c is not None and c.coords == (2.0,)
    half = BoxCover(g, {(k,) for k in range(128)})
    assert delta_ball_check(half, 0.6) is None


def _est(cover):
    return OmegaEstimate(Point(cover.space, (0.0,)), cover, AnalysisParams())


def test_merge_examples():
    g = Grid.from_depth(OCT.space, 8)
    full = BoxCover.whole(g)
    assert len(merge_classes([_est(full), _est(full)])) == 1
    left = BoxCover(g, {(k,) for k in range(128)})
    right = BoxCover(g, {(k,) for k in range(128, 256)})
    classes = merge_classes([_est(left), _est(right)])
    assert [c.members for c in classes] == [(0,), (1,)]


def test_merge_counterexample_grid():
    pts = initial_points(CEX, CEX_P)[:50]
    ests = omega_estimates(CEX, pts, CEX_P)
    classes = merge_classes(ests)
    assert len(classes) == 1
    assert classes[0].cover.sorted_keys() == [(-1,), (128,)]


@settings(max_examples=25, deadline=None)
@given(st.permutations(list(range(8))))
def test_merge_is_order_independent(perm):
    g = Grid.from_depth(OCT.space, 6)
    blocks = [BoxCover(g, {(k,) for k in range(a, a + 10)}) for a in (0, 5, 20, 27, 40, 45, 52, 58)]
    base = {frozenset(c.cover.keys) for c in merge_classes([_est(b) for b in blocks])}
    shuffled = {frozenset(c.cover.keys) for c in merge_classes([_est(blocks[i]) for i in perm])}
    assert base == shuffled


def test_merge_soundness_under_longer_tail():
    pts = [rich_point(4, 3), Point(OCT.space, (0.0,), expansion=rich_sequence(4, 3)[777:])]
    p1 = AnalysisParams(depth=9, n_tail=4000)
    p2 = replace(p1, n_tail=8000)
    a1, b1 = omega_estimates(OCT, pts, p1)
    a2, b2 = omega_estimates(OCT, pts, p2)
    assert len(merge_classes([a1, b1])) == 1
    frac = lambda a, b: len(a.cover.keys ^ b.cover.keys) / len(a.cover.keys | b.cover.keys)
    assert frac(a2, b2) <= frac(a1, b1)


# --- decomposition


def test_decompose_counterexample():
    d = decompose_attractors(CEX, replace(CEX_P, grid_per_axis=101))
    assert len(d.attractors) == 1
    a = d.attractors[0]
    assert a.cover.sorted_keys() == [(-1,), (128,)]
    assert a.basin_fraction == 1.0
    assert [(v.source, v.target) for v in a.violations] == [((-1,), (128,))]
    assert not d.remainder.keys and d.remainder_no_ball
    assert d.outliers == []


def test_decompose_octupling(oct_decomp):
    assert len(oct_decomp.attractors) == 1
    a = oct_decomp.attractors[0]
    assert len(a.cover) == 1024
    assert a.flags["transitive"] and a.flags["strongly_transitive"] and a.flags["sensitive"]
    assert a.flags["closure_of_interior"] and a.violations == []
    assert oct_decomp.outliers == []
    assert not oct_decomp.remainder.keys


def test_decompose_cubic_matches_oracle():
    oracle = json.loads(ORACLE.read_text())
    d = decompose_attractors(CUBIC, AnalysisParams(delta=0.05, depth=8, n_tail=500, grid_per_axis=101))
    assert [a.cover for a in d.attractors] == oracle["ball_attractors"]
    assert d.outlier_groups == oracle["limit_groups"]
    np.testing.assert_allclose([p.coords[0] for p in d.outliers], oracle["grid"], atol=1e-15)
    assert d.remainder_no_delta_ball
    # only the cells of the three fixed points carry cycles
    g = AnalysisParams(depth=8).grid(CUBIC.space)
    fixed = {tuple(k) for k in g.locate(np.array([[-1.0], [0.0], [1.0]])).tolist()}
    assert d.remainder.keys <= set().union(*({k} | set(g.neighbors(k)) for k in fixed))


def test_class_count_bound(oct_decomp):
    assert packing_bound(OCT.space, 0.1) == 5
    assert len(oct_decomp.attractors) <= oct_decomp.class_bound


def test_strong_transitivity_implies_transitivity(oct_decomp):
    for d in (oct_decomp, decompose_attractors(CEX, CEX_P)):
        for a in d.attractors:
            if a.flags["strongly_transitive"]:
                assert a.flags["transitive"]


@pytest.mark.parametrize("spec,params", [(CEX, CEX_P), (OCT, replace(OCT_P, n_tail=1000, grid_per_axis=12))])
def test_basin_openness_proxy(spec, params):
    coarse = decompose_attractors(spec, params)
    fine = decompose_attractors(spec, replace(params, grid_per_axis=4 * params.grid_per_axis))
    for a, b in zip(coarse.attractors, fine.attractors):
        assert a.cover == b.cover
        assert b.basin_fraction >= a.basin_fraction - 0.05


def test_determinism_and_workers():
    params = replace(CEX_P, grid_per_axis=40)
    a = decompose_attractors(CEX, params)
    b = decompose_attractors(CEX, replace(params, workers=2))
    assert [x.cover for x in a.attractors] == [x.cover for x in b.attractors]
    assert [x.flags for x in a.attractors] == [x.flags for x in b.attractors]
    pts = initial_points(OCT, replace(OCT_P, grid_per_axis=40, n_tail=500))
    e1 = omega_estimates(OCT, pts, replace(OCT_P, n_tail=500))
    e2 = omega_estimates(OCT, pts, replace(OCT_P, n_tail=500, workers=2))
    assert [e.cover for e in e1] == [e.cover for e in e2]


# --- claim checks


def test_nonwandering_examples(oct_graph):
    rem, ok = check_nonwandering_outside(CEX, [BoxCover(CEX_P.grid(CEX.space), {(-1,), (128,)})], CEX_P)
    assert not rem.keys and ok
    whole = BoxCover.whole(OCT_P.grid(OCT.space))
    rem, ok = check_nonwandering_outside(OCT, [whole], OCT_P, oct_graph)
    assert not rem.keys and ok


def test_strong_transitivity_examples(oct_graph):
    whole = BoxCover.whole(OCT_P.grid(OCT.space))
    for k in (0, 137, 512, 1023):
        ok, n = strong_transitivity_check(OCT, whole, (k,), OCT_P, oct_graph)
        assert ok and n <= math.ceil(10 / 3) + 1 + 1
    ok, n = strong_transitivity_check(OCT, whole, (5,), OCT_P)
    assert ok

    g = Grid.from_depth(IDENT.space, 6)
    half = {(k,) for k in range(32)}
    ok, _ = strong_transitivity_check(IDENT, BoxCover.whole(g), half, AnalysisParams(depth=6))
    assert not ok

    A = BoxCover(CEX_P.grid(CEX.space), {(-1,), (128,)})
    assert strong_transitivity_check(CEX, A, (-1,), CEX_P) == (True, 2)


def test_transitivity_graph(oct_graph):
    whole = BoxCover.whole(OCT_P.grid(OCT.space))
    assert is_transitive(oct_graph, whole)
    assert all(oct_graph.graph.out_degree(k) >= 1 for k in oct_graph.graph)


def test_sensitivity_examples():
    g = Grid.from_depth(OCT.space, 10)
    assert sensitivity_estimate(OCT, BoxCover.whole(g), 1e-3, 20, 32) >= 0.4
    gh = Grid.from_depth(HALF.space, 10)
    for eps in (1e-2, 1e-3):
        assert sensitivity_estimate(HALF, BoxCover.whole(gh), eps, 20, 32) <= 2 * eps
    with pytest.raises(ValueError):
        sensitivity_estimate(OCT, BoxCover.whole(g), 0.0, 5, 4)


def test_sensitivity_skew_product_base():
    spec = get_map("skewproduct")
    params = AnalysisParams(depth=12, n_transient=100, n_tail=4000)
    digits = generic_expansion((), 4200, seed=2)
    start = Point(spec.space, (angle_from_digits(digits), -1.5, 0.0), expansion=digits)
    est = omega_limit(spec, start, params)
    r = sensitivity_estimate(spec, est.cover, 1e-3, 20, 16, axes=(0,))
    assert r >= 0.4


def test_punctured_examples():
    A = BoxCover(CEX_P.grid(CEX.space), {(-1,), (128,)})
    ests = omega_estimates(CEX, initial_points(CEX, CEX_P), CEX_P)
    assert punctured_points(CEX, A, ests, 0.2) == []

    params = OCT_P
    whole = BoxCover.whole(params.grid(OCT.space))
    pts = [Point(OCT.space, (0.0,)), rich_point()]
    hits = punctured_points(OCT, whole, omega_estimates(OCT, pts, params), 0.1)
    assert len(hits) == 1 and hits[0][0].coords == (0.0,)
    assert abs(hits[0][1].coords[0] - 0.0) >= 0.1

    gh = Grid.from_depth(HALF.space, 8)
    sink = BoxCover(gh, {(0,)})
    ests = omega_estimates(HALF, [Point(HALF.space, (x,)) for x in (0.3, 0.9)], AnalysisParams(depth=8, n_tail=50))
    assert punctured_points(HALF, sink, ests, 0.1) == []
    with pytest.raises(ValueError):
        punctured_points(HALF, sink, ests, 0.0)


def test_interior_audit_examples():
    A = BoxCover(CEX_P.grid(CEX.space), {(-1,), (128,)})
    v = interior_invariance_audit(CEX, A, CEX_P)
    assert [(x.source, x.target, x.target_kind) for x in v] == [((-1,), (128,), "boundary")]
    whole = BoxCover.whole(Grid.from_depth(OCT.space, 8))
    assert interior_invariance_audit(OCT, whole, AnalysisParams(depth=8)) == []


def test_closure_fraction():
    g = Grid.from_depth(OCT.space, 6)
    assert closure_of_interior_fraction(BoxCover.whole(g)) == 1.0
    assert closure_of_interior_fraction(BoxCover(g, {(0,), (9,)})) == 0.0
