import numpy as np
import pytest
from hypothesis import given, strategies as st

from poisson_hail import UsageError
from poisson_hail.precedence import (DirectRecursion, all_pairs_dag, backward_heights, build_dag,
                                     loynes_profile, monotonicity_check, query, schedule, truncated_workload)
from poisson_hail.rain import BALL, CUBE, Rain

from conftest import small_rain


def cubes(t, x, half, sigma, d=1):
    n = len(t)
    x = np.asarray(x, float).reshape(n, d)
    return Rain(t, x, np.full(n, CUBE), np.repeat(np.asarray(half, float)[:, None], d, 1), sigma, d=d)


def test_disjoint_arrivals_have_no_predecessors():
    r = cubes([0.0, 1.0], [0.0, 10.0], [1.0, 1.0], [1.0, 1.0])
    assert build_dag(r).n_edges == 0


def test_three_arrival_chain():
    r = cubes([0.0, 1.0, 2.0], [0.0, 1.0, 2.0], [0.5, 0.5, 0.5], [1.0, 2.0, 3.0])
    dag = build_dag(r)
    assert [list(dag.pred(j)) for j in range(3)] == [[], [0], [1]]
    rec = schedule(r, dag)
    assert rec.top.tolist() == [1.0, 3.0, 6.0]


def test_single_arrival():
    rec = schedule(cubes([0.0], [0.0], [1.0], [3.0]))
    assert (rec.base[0], rec.top[0]) == (0.0, 3.0)


def test_fifo_examples():
    r = cubes([0.0], [0.0], [1.0], [2.0])
    assert query(r, schedule(r), [[0.0]], 1.0)[1][0] == 1.0
    r = cubes([0.0, 0.5], [0.0, 0.5], [1.0, 1.0], [2.0, 1.0])
    rec = schedule(r)
    assert rec.done.tolist() == [2.0, 3.0]
    assert query(r, rec, [[0.25]], 0.5)[1][0] == 2.5


def test_disjoint_workloads_independent():
    r = cubes([0.0, 0.2], [0.0, 5.0], [1.0, 1.0], [2.0, 3.0])
    H, W = query(r, schedule(r), [[0.0], [5.0]], 1.0)
    assert W.tolist() == [1.0, 2.2]


def test_unsorted_input_rejected():
    r = cubes([1.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0])
    with pytest.raises(UsageError):
        build_dag(r)


def test_query_includes_arrival_at_query_time():
    r = cubes([1.0], [0.0], [1.0], [2.0])
    H, W = query(r, schedule(r), [[0.0], [0.0]], [1.0, 0.999])
    assert H.tolist() == [2.0, 0.0] and W.tolist() == [2.0, 0.0]


@pytest.mark.parametrize("seed", range(40))
def test_dag_matches_all_pairs(seed):
    rng = np.random.default_rng(seed)
    r = small_rain(rng, d=1 + seed % 2)
    a, b = build_dag(r), all_pairs_dag(r)
    assert np.array_equal(a.ptr, b.ptr) and np.array_equal(a.idx, b.idx)


@pytest.mark.parametrize("seed", range(10))
def test_dag_equals_direct_recursion(seed):
    rng = np.random.default_rng(100 + seed)
    r = small_rain(rng, d=1 + seed % 2, n_max=30)
    rec = schedule(r)
    pts = rng.random((30, r.d)) * 4
    ts = rng.random(30) * 5
    H, W = query(r, rec, pts, ts)
    oracle = DirectRecursion(r)
    for q in range(30):
        h, w = oracle.at(pts[q], ts[q])
        assert (H[q], W[q]) == (h, w)


@pytest.mark.parametrize("seed", range(10))
def test_fifo_conservation(seed):
    r = small_rain(np.random.default_rng(seed))
    dag = build_dag(r)
    rec = schedule(r, dag)
    assert np.array_equal(rec.done - rec.start, r.sigma) or np.allclose(rec.done - rec.start, r.sigma, rtol=0, atol=1e-12)
    assert np.all(rec.start >= r.t) and np.all(rec.base >= 0)
    for j in range(dag.n):
        p = dag.pred(j)
        if p.size:
            assert rec.start[j] >= rec.done[p].max()
            assert rec.base[j] == rec.top[p].max()


@pytest.mark.parametrize("seed", range(5))
def test_heights_depend_only_on_order(seed):
    rng = np.random.default_rng(seed)
    r = small_rain(rng)
    new_t = np.sort(rng.random(len(r)) * 100)
    assert np.array_equal(schedule(r).top, schedule(r.replace(t=new_t)).top)


# ------------------------------------------------------------------ monotonicity properties


@given(st.integers(0, 10_000))
def test_adding_an_arrival_never_lowers_heights(seed):
    rng = np.random.default_rng(seed)
    r = small_rain(rng, n_max=25)
    if len(r) < 2:
        return
    drop = int(rng.integers(len(r)))
    base = r.take(np.delete(np.arange(len(r)), drop))
    pts = rng.random((20, r.d)) * 4
    res = monotonicity_check(base, r, "superset", pts, rng.random(20) * 5)
    assert res.ok, res.witness


@given(st.integers(0, 10_000))
def test_doubling_heights_never_lowers_heights(seed):
    rng = np.random.default_rng(seed)
    r = small_rain(rng, n_max=25)
    pts = rng.random((20, r.d)) * 4
    assert monotonicity_check(r, r.replace(sigma=2 * r.sigma), "enlarged", pts, 5.0).ok


@given(st.integers(0, 10_000))
def test_enlarging_shapes_never_lowers_heights(seed):
    rng = np.random.default_rng(seed)
    r = small_rain(rng, n_max=25)
    ext = r.ext * (1 + rng.random(r.ext.shape))
    ext[r.kind == BALL] = ext[r.kind == BALL][:, :1]
    pts = rng.random((20, r.d)) * 4
    assert monotonicity_check(r, r.replace(ext=ext), "enlarged", pts, 5.0).ok


@given(st.integers(0, 10_000))
def test_advancing_arrivals_never_lowers_heights(seed):
    rng = np.random.default_rng(seed)
    r = small_rain(rng, n_max=25)
    # order-preserving advance
    t = np.minimum.accumulate((r.t - rng.random(len(r)) * 0.5)[::-1])[::-1]
    earlier = r.replace(t=t)
    pts = rng.random((20, r.d)) * 4
    assert monotonicity_check(r, earlier, "earlier", pts, 5.0).ok


def test_reordering_advance_can_lower_heights():
    # moving the last arrival ahead of the others breaks the chain it sat on
    r = cubes([0.0, 1.0, 2.0], [0.0, 1.0, 2.0], [0.5, 0.5, 0.5], [1.0, 1.0, 1.0])
    moved = cubes([-1.0, 0.0, 1.0], [2.0, 0.0, 1.0], [0.5, 0.5, 0.5], [1.0, 1.0, 1.0])
    assert query(r, schedule(r), [[2.0]], 5.0)[0][0] == 3.0
    assert query(moved, schedule(moved), [[2.0]], 5.0)[0][0] == 1.0


def test_monotonicity_rejects_unrelated_inputs():
    a = cubes([0.0], [0.0], [1.0], [1.0])
    b = cubes([0.0], [1.0], [1.0], [1.0])
    with pytest.raises(UsageError):
        monotonicity_check(a, b, "superset", [[0.0]], 1.0)


# ------------------------------------------------------------------ Loynes


def test_loynes_trivial_cases():
    r = cubes([-0.5], [10.0], [1.0], [3.0])
    assert loynes_profile(r, [0.0], [1.0, 2.0]).tolist() == [0.0, 0.0]
    r = cubes([-1.0], [0.0], [1.0], [5.0])
    assert loynes_profile(r, [0.0], [0.5, 1.0, 3.0, 10.0]).tolist() == [0.0, 4.0, 4.0, 4.0]


@pytest.mark.parametrize("seed", range(8))
def test_loynes_profile_monotone_and_equals_truncation(seed):
    rng = np.random.default_rng(seed)
    r = small_rain(rng, d=1, n_max=50)
    r = r.replace(t=r.t - 5.0)
    x = [2.0]
    grid = np.linspace(0.25, 5.0, 20)
    prof = loynes_profile(r, x, grid)
    assert np.all(np.diff(prof) >= 0)
    assert prof.tolist() == [truncated_workload(r, x, s) for s in grid]
    fast = loynes_profile(r, x, grid, method="backward")
    assert np.allclose(fast, prof, rtol=0, atol=1e-9)
    assert np.all(np.diff(backward_heights(r, x, grid)) >= 0)
