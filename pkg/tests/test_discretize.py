import math

import numpy as np
import pytest

from poisson_hail.discretize import (LatticeRain, chain_check, chain_heights, containment, query_grid,
                                     slot_index, to_model2, to_model3, to_model4)
from poisson_hail.precedence import query, schedule
from poisson_hail.rain import BALL, CUBE, Dist, Rain, RainConfig, ShapeDist, sample_rain


def one(t, x, kind, size, sigma, d=None):
    x = np.atleast_1d(np.asarray(x, float))
    d = x.shape[0] if d is None else d
    return Rain([t], x[None], [kind], np.full((1, d), size), [sigma], d=d)


def test_model2_cube_example():
    # ball of radius 0.7 has diameter 1.4
    lat = to_model2(one(0.3, (1.7, -0.3), BALL, 0.7, 1.0))
    assert lat.z.tolist() == [[1, -1]] and lat.half_side.tolist() == [2]


def test_point_grain_gets_half_side_one():
    assert to_model2(one(0.0, (0.5,), BALL, 0.0, 1.0)).half_side.tolist() == [1]


def test_slot_index():
    assert slot_index([2.73, 0.0, 0.999, 1.0]).tolist() == [3, 1, 1, 2]
    m3 = to_model3(to_model2(one(2.73, (0.5,), CUBE, 0.2, 1.0)))
    assert m3.t.tolist() == [2.0]


def test_same_slot_keeps_continuous_order():
    r = Rain([0.6, 0.2], [[0.0], [0.0]], [CUBE, CUBE], [[0.1], [0.1]], [1.0, 2.0], ids=[0, 1], d=1).sorted()
    m3 = to_model3(to_model2(r))
    assert m3.tie_rank.tolist() == [0.2, 0.6] and m3.t.tolist() == [0.0, 0.0]


def test_aggregation_example_and_group_by():
    lat = LatticeRain(np.array([[0, 0], [0, 0]]), np.array([0.0, 0.0]), np.array([1, 1]), np.array([1, 3]),
                      np.array([2.0, 5.0]), np.array([0.1, 0.4]), np.array([0, 1]))
    cells = to_model4(lat)
    assert (cells.R_max.tolist(), cells.sigma_sum.tolist(), cells.M.tolist()) == ([3], [7.0], [2])
    rng = np.random.default_rng(4)
    n = 400
    lat = LatticeRain(rng.integers(0, 4, (n, 2)), np.zeros(n), rng.integers(1, 4, n), rng.integers(1, 5, n),
                      rng.random(n), np.sort(rng.random(n)), np.arange(n))
    cells = to_model4(to_model3(lat))
    groups = {}
    for k in range(n):
        key = (int(lat.slot[k]), *map(int, lat.z[k]))
        g = groups.setdefault(key, [0, 0.0, 0])
        g[0] = max(g[0], int(lat.half_side[k]))
        g[1] += lat.sigma[k]
        g[2] += 1
    assert len(cells) == len(groups)
    for k in range(len(cells)):
        g = groups[(int(cells.slot[k]), *map(int, cells.z[k]))]
        assert cells.R_max[k] == g[0] and cells.M[k] == g[2] and math.isclose(cells.sigma_sum[k], g[1])
    assert math.isclose(cells.sigma_sum.sum(), lat.sigma.sum())


def test_slot_occupancy_is_poisson():
    cfg = RainConfig(1, 0.5, ((0.0,), (1.0,)), (0.0, 100_000.0), ShapeDist("ball", Dist.deterministic(0.0)),
                     Dist.deterministic(1.0), pad=0.0)
    r = sample_rain(cfg, 1)
    occupied = np.unique(slot_index(r.t)).size / 100_000
    p = 1 - math.exp(-0.5)
    assert abs(occupied - p) < 3 * math.sqrt(p * (1 - p) / 100_000)


def test_containment_lattice_sense():
    rng = np.random.default_rng(0)
    cfg = RainConfig(2, 1.0, ((0, 0), (10, 10)), (0, 10), ShapeDist("box", Dist.uniform(0.0, 1.5)),
                     Dist.exponential(1.0), pad=0.0)
    r = sample_rain(cfg, rng)
    assert len(r) >= 1000
    lattice_ok, _ = containment(r, to_model2(r))
    assert lattice_ok.all()


def test_literal_containment_can_fail_for_small_grains():
    # point at 0.9 with radius 0.3: footprint reaches 1.2, cube is [-1, 1]
    r = one(0.0, (0.9,), BALL, 0.3, 1.0)
    lat_ok, lit_ok = containment(r, to_model2(r))
    assert lat_ok[0] and not lit_ok[0]


def test_empty_and_single_arrival_chain():
    pts = np.array([[0.5, 0.5], [1.2, 3.3]])
    H = chain_heights(Rain.empty(2), pts, 2.0)
    assert not H.any()
    r = one(0.4, (0.5, 0.5), BALL, 0.3, 2.0)
    H = chain_heights(r, pts, 2.0)
    assert H[0, 0] <= H[0, 1] and H[0, 1] == H[0, 2] == H[0, 3] == 2.0


def model3_counterexample():
    # d=1, all in slot 1, sigma 1: site 0 (R=3), site 4 (R=2), site 0 again (R=2)
    return LatticeRain(np.array([[0], [4], [0]]), np.array([0.1, 0.2, 0.3]), np.array([1, 1, 1]),
                       np.array([3, 2, 2]), np.ones(3), np.array([0.1, 0.2, 0.3]), np.arange(3))


def test_merging_cells_can_lower_heights():
    m3 = to_model3(model3_counterexample())
    r3 = m3.as_rain()
    sites = np.array([[-2.0], [6.0]])
    H3 = query(r3, schedule(r3), sites, 0.0)[0]
    assert H3.tolist() == [3.0, 2.0]
    cells = to_model4(m3)
    r4 = cells.as_rain()
    H4 = query(r4, schedule(r4), sites, 0.0)[0]
    assert H4.tolist() == [2.0, 3.0]
    # the other order of the two merged cells fails at the other site
    r4b = r4.take([1, 0]).replace(t=np.zeros(2), ids=np.arange(2))
    H4b = query(r4b, schedule(r4b), sites, 0.0)[0]
    assert H4b.tolist() == [3.0, 1.0]
    assert (H4 < H3).any() and (H4b < H3).any()


@pytest.mark.parametrize("seed", range(4))
def test_chain_links_other_than_merge(seed):
    rng = np.random.default_rng(seed)
    cfg = RainConfig(2, 0.1, ((0, 0), (10, 10)), (0, 20), ShapeDist("cube", Dist.uniform(0.1, 1.0)),
                     Dist.exponential(1.0))
    r = sample_rain(cfg, rng)
    pts = query_grid(cfg.window, rng, per_cell=2)
    rep = chain_check(r, pts, 20.0)
    v = rep.violations_by_link()
    assert v["model1<=model2"] == v["model2<=model3"] == v["model4<=model5"] == 0
    assert rep.margins().shape == (pts.shape[0], 4)


def test_query_grid_layout():
    pts = query_grid(((0, 0), (2, 3)), np.random.default_rng(0), per_cell=10)
    assert pts.shape == (6 * 11, 2)
    assert np.all((pts >= 0) & (pts < [2, 3]))
