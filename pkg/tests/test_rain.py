import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from poisson_hail import CapacityError, ConfigurationError, SeedSpec, UsageError
from poisson_hail.io import read_arrivals_csv, read_cache, write_arrivals_csv, write_cache
from poisson_hail.rain import (Dist, Rain, RainConfig, Shape, ShapeDist, covers, diameter, intersects,
                               sample_rain)

from conftest import small_rain


def unit_cfg(lam=1.0, d=2, horizon=(0.0, 10.0), shape=None, sigma=None):
    return RainConfig(d, lam, ((0.0,) * d, (1.0,) * d), horizon,
                      shape or ShapeDist("ball", Dist.deterministic(0.0)),
                      sigma or Dist.exponential(1.0), pad=0.0)


def test_zero_intensity_is_empty():
    assert len(sample_rain(unit_cfg(lam=0.0), 1)) == 0


def test_same_seed_same_sample():
    a = sample_rain(unit_cfg(lam=3.0), SeedSpec(5).rng())
    b = sample_rain(unit_cfg(lam=3.0), SeedSpec(5).rng())
    assert np.array_equal(a.t, b.t) and np.array_equal(a.x, b.x) and np.array_equal(a.sigma, b.sigma)


def test_sample_is_sorted_with_ordinal_ids():
    r = sample_rain(unit_cfg(lam=5.0), 2)
    assert r.is_sorted()
    assert np.array_equal(r.ids, np.arange(len(r)))
    assert np.all((r.t >= 0) & (r.t <= 10)) and np.all((r.x >= 0) & (r.x <= 1))


@pytest.mark.slow
def test_count_is_poisson():
    rng = np.random.default_rng(0)
    cfg = unit_cfg()
    counts = np.array([len(sample_rain(cfg, rng)) for _ in range(10_000)])
    assert abs(counts.mean() - 10.0) < 0.3
    # chi-square goodness of fit on pooled bins
    edges = np.arange(3, 19)
    obs = np.array([np.sum(counts <= 3)] + [np.sum(counts == k) for k in edges[1:-1]] + [np.sum(counts >= 18)])
    p = np.array([stats.poisson.cdf(3, 10)] + [stats.poisson.pmf(k, 10) for k in edges[1:-1]]
                 + [stats.poisson.sf(17, 10)])
    assert stats.chisquare(obs, p * counts.size).pvalue > 0.01


def test_marks_uncorrelated_with_positions():
    r = sample_rain(unit_cfg(lam=2000.0, horizon=(0.0, 10.0)), 3)
    n = len(r)
    for k in range(2):
        c = np.corrcoef(r.sigma, r.x[:, k])[0, 1]
        assert abs(c) < 3.0 / math.sqrt(n)


def test_capacity_error_instead_of_truncation():
    with pytest.raises(CapacityError):
        sample_rain(unit_cfg(lam=1e9), 0)


@pytest.mark.parametrize("kw", [dict(lam=-1.0), dict(horizon=(1.0, 1.0))])
def test_bad_config(kw):
    with pytest.raises(ConfigurationError):
        unit_cfg(**kw)


def test_bad_distribution():
    with pytest.raises(ConfigurationError):
        Dist.uniform(2.0, 1.0)
    with pytest.raises(ConfigurationError):
        Dist("lognormal", {})
    assert Dist("pareto", {"alpha": 1.5, "scale": 1.0}).heavy_tailed


def test_diameters():
    assert diameter(Shape.ball(1.0), 2) == 2.0
    assert diameter(Shape.cube(1.0), 2) == pytest.approx(2 * math.sqrt(2), abs=0)
    assert diameter(Shape.box((1.0, 2.0)), 2) == pytest.approx(2 * math.sqrt(5), abs=1e-15)


@given(st.lists(st.floats(0, 5), min_size=1, max_size=4))
def test_box_diameter_equals_vertex_brute_force(half):
    d = len(half)
    corners = np.array(np.meshgrid(*[[-h, h] for h in half], indexing="ij")).reshape(d, -1).T
    diff = corners[:, None, :] - corners[None, :, :]
    brute = np.sqrt((diff**2).sum(-1)).max()
    assert diameter(Shape.box(half), d) == pytest.approx(brute, rel=1e-12, abs=1e-12)


def test_intersection_examples():
    c = Shape.cube(1.0)
    assert intersects(c, (0, 0), c, (1.5, 0.3))
    assert not intersects(c, (0, 0), c, (2.5, 0))
    b = Shape.ball(1.0)
    assert intersects(b, (0, 0), b, (2.0, 0))
    with pytest.raises(UsageError):
        intersects(c, (0, 0), c, (0, 0, 0))


shapes = st.one_of(
    st.floats(0, 2).map(Shape.cube), st.floats(0, 2).map(Shape.ball),
    st.tuples(st.floats(0, 2), st.floats(0, 2)).map(Shape.box),
)
points = st.tuples(st.floats(-4, 4), st.floats(-4, 4))


@given(shapes, points, shapes, points)
def test_intersects_symmetric(a, xa, b, xb):
    assert intersects(a, xa, b, xb) == intersects(b, xb, a, xa)


@given(shapes, points, shapes, points)
def test_intersection_agrees_with_sampled_witness(a, xa, b, xb):
    # a point of a that lies in b proves intersection
    rng = np.random.default_rng(0)
    ea, eb = a.extents(2), b.extents(2)
    pts = np.asarray(xa) + (rng.random((400, 2)) * 2 - 1) * ea
    in_a = np.array([bool(covers(np.array([a.code]), ea[None], np.asarray(xa, float)[None], p)[0]) for p in pts])
    in_b = np.array([bool(covers(np.array([b.code]), eb[None], np.asarray(xb, float)[None], p)[0]) for p in pts])
    if np.any(in_a & in_b):
        assert intersects(a, xa, b, xb)


def test_csv_and_cache_roundtrip(tmp_path, rng):
    r = small_rain(rng, d=2)
    back = read_arrivals_csv(write_arrivals_csv(r, tmp_path / "a.csv"))
    for col in ("t", "x", "kind", "ext", "sigma", "ids"):
        assert np.array_equal(getattr(r, col), getattr(back, col))
    back = read_cache(write_cache(r, tmp_path / "a.phr"))
    for col in ("t", "x", "kind", "ext", "sigma", "ids", "u"):
        assert np.array_equal(getattr(r, col), getattr(back, col))
    head = (tmp_path / "a.phr").read_bytes()[:16]
    assert head[:8] == b"PHRAIN01" and int.from_bytes(head[12:16], "little") == 2


def test_cache_rejects_bad_magic(tmp_path):
    p = tmp_path / "x.phr"
    p.write_bytes(b"NOTRAIN!" + bytes(16))
    with pytest.raises(UsageError):
        read_cache(p)


def test_empty_roundtrip(tmp_path):
    r = Rain.empty(3)
    assert len(read_arrivals_csv(write_arrivals_csv(r, tmp_path / "e.csv"))) == 0
    assert read_cache(write_cache(r, tmp_path / "e.phr")).d == 3


def test_coupled_thinning_is_nested():
    base = sample_rain(unit_cfg(lam=20.0), 9)
    lo, hi = base.thin(5.0, 20.0), base.thin(10.0, 20.0)
    assert set(lo.ids) <= set(hi.ids) <= set(base.ids)


def test_seed_streams_distinct_and_stable():
    s = SeedSpec(42)
    ids = {s.child("rep", k).entropy_id() for k in range(200)}
    assert len(ids) == 200
    assert s.child("a").entropy_id() == SeedSpec(42, ("a",)).entropy_id()
