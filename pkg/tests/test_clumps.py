import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from poisson_hail import UsageError
from poisson_hail.clumps import (LayeredField, RadiusLaw, SlotField, SlotPoints, build_slot_field,
                                 clump_tail_stats, estimate_lambda_c, find_clumps, flood_fill_clumps,
                                 iterate_model5, model5_path_oracle, model5_step, remark_inequality,
                                 resample_extension)
from poisson_hail.rain import Dist

ONE = Dist.deterministic(1.0)


def field_with(shape, balls):
    f = SlotField.empty(shape)
    for z, r, s in balls:
        f.add_ball(z, r, s)
    return f


def test_zero_intensity_field_is_empty():
    f = build_slot_field((20, 20), 0.0, RadiusLaw.constant(1), ONE, 0)
    assert not f.alpha.any() and find_clumps(f).count == 0


def test_occupancy_rate():
    f = build_slot_field((1000, 1000), 0.2, RadiusLaw.constant(1), ONE, 1)
    p = 1 - math.exp(-0.2)
    assert abs(f.alpha.mean() - p) < 3 * math.sqrt(p * (1 - p) / 1e6)


def test_single_ball_clump(impl):
    cl = find_clumps(field_with((9, 9), [((4, 4), 1, 2.0)]), impl)
    assert cl.count == 1 and cl.L.tolist() == [9] and cl.sigma_hat.tolist() == [2.0]
    assert not cl.censored[0]


def test_two_balls_at_distance_two_merge(impl):
    cl = find_clumps(field_with((12, 12), [((5, 3), 1, 1.0), ((5, 5), 1, 1.0)]), impl)
    # two 3x3 squares sharing one column of 3 sites
    assert cl.count == 1 and cl.L.tolist() == [15] and cl.sigma_hat.tolist() == [2.0]


def test_two_balls_at_distance_five_stay_apart(impl):
    cl = find_clumps(field_with((12, 12), [((5, 2), 1, 1.0), ((5, 7), 1, 1.0)]), impl)
    assert cl.count == 2 and cl.L.tolist() == [9, 9]


def test_touching_balls_connect_by_overlap_rule(impl):
    # |y - z|_inf = 3 > 1 + 1: disjoint site sets, separate clumps
    cl = find_clumps(field_with((12, 12), [((5, 2), 1, 1.0), ((5, 5), 1, 1.0)]), impl)
    assert cl.count == 2


def test_border_clump_is_censored():
    cl = find_clumps(field_with((9, 9), [((1, 4), 1, 1.0)]))
    assert cl.censored.tolist() == [True]


def test_radius_zero_on_occupied_site_rejected():
    f = SlotField.empty((5, 5))
    f.alpha[2, 2] = True
    with pytest.raises(UsageError):
        find_clumps(f)


@pytest.mark.parametrize("seed", range(12))
def test_clumps_match_flood_fill(seed, impl):
    rng = np.random.default_rng(seed)
    d = 1 + seed % 3
    side = {1: 60, 2: 24, 3: 10}[d]
    law = RadiusLaw((1, 2, 3), (0.6, 0.3, 0.1))
    f = build_slot_field((side,) * d, float(rng.uniform(0.02, 0.3)), law, Dist.exponential(1.0), rng)
    cl = find_clumps(f, impl)
    ref = flood_fill_clumps(f)
    assert cl.count == len(ref)
    for sites, centers, sig in ref:
        c = int(cl.label[next(iter(sites))])
        assert {tuple(s) for s in np.argwhere(cl.label == c)} == sites
        assert cl.L[c] == len(sites) and cl.sigma_hat[c] == sig
        assert cl.n_balls[c] == len(centers)


@pytest.mark.parametrize("seed", range(4))
def test_backends_agree(seed):
    from poisson_hail import _kernels
    if _kernels.numba_impl is None:
        pytest.skip("numba missing")
    f = build_slot_field((40, 40), 0.2, RadiusLaw((1, 2), (0.5, 0.5)), ONE, seed)
    a, b = find_clumps(f, _kernels.numba_impl), find_clumps(f, _kernels.numpy_impl)
    assert np.array_equal(a.label, b.label) and np.array_equal(a.root, b.root)


def test_min_clump_size():
    law = RadiusLaw((2, 3), (0.5, 0.5))
    f = build_slot_field((40, 40), 0.05, law, ONE, 3)
    cl = find_clumps(f)
    assert np.all(cl.L[~cl.censored] >= (2 * 2 + 1) ** 2)


# ------------------------------------------------------------------ recursion


def test_empty_slots_stay_zero():
    rows = iterate_model5([SlotField.empty((6, 6)) for _ in range(3)])
    assert all(not r.any() for r in rows)


def test_one_clump_height_persists():
    fields = [field_with((9, 9), [((4, 4), 1, 2.0)])] + [SlotField.empty((9, 9)) for _ in range(4)]
    rows = iterate_model5(fields)
    assert all(r[3:6, 3:6].tolist() == [[2.0] * 3] * 3 for r in rows[1:])
    assert rows[-1].sum() == 18.0


@pytest.mark.parametrize("seed", range(6))
def test_recursion_equals_path_oracle(seed):
    rng = np.random.default_rng(seed)
    law = RadiusLaw((1, 2), (0.7, 0.3))
    fields = [build_slot_field((20, 20), 0.03, law, Dist.exponential(1.0), rng) for _ in range(3)]
    row = iterate_model5(fields)[-1]
    for z in rng.integers(0, 20, (15, 2)):
        assert row[tuple(z)] == model5_path_oracle(fields, z)


@given(st.integers(0, 10_000))
def test_adding_a_ball_never_lowers_heights(seed):
    rng = np.random.default_rng(seed)
    law = RadiusLaw((1, 2), (0.7, 0.3))
    fields = [build_slot_field((12, 12), 0.05, law, Dist.exponential(1.0), rng) for _ in range(3)]
    before = iterate_model5(fields)[-1]
    k = int(rng.integers(3))
    fields[k].add_ball(tuple(rng.integers(0, 12, 2)), int(rng.integers(1, 3)), float(rng.exponential()))
    after = iterate_model5(fields)[-1]
    assert np.all(after >= before)


def test_model5_step_keeps_uncovered_sites():
    prev = np.arange(25.0).reshape(5, 5)
    cl = find_clumps(field_with((5, 5), [((2, 2), 1, 1.0)]))
    out = model5_step(prev, cl)
    assert out[0, 0] == 0.0 and out[2, 2] == 1.0 + prev[1:4, 1:4].max()


# ------------------------------------------------------------------ statistics


def test_tail_stats_small_intensity():
    ts = clump_tail_stats(1e-4, RadiusLaw.constant(1), ONE, 20_000, region=64, seed=0)
    assert (ts.L_samples > 0).mean() < 0.01
    assert np.all(ts.L_samples[ts.L_samples > 0] >= 9)


def test_tail_decay_positive_at_five_percent():
    lam = -math.log(0.95)
    ts = clump_tail_stats(lam, RadiusLaw.constant(1), ONE, 200_000, region=128, seed=1)
    assert ts.decay_rate > 0 and ts.decay_ci[0] > 0


def test_coupled_fields_grow_with_intensity():
    pts = SlotPoints.sample((30, 30), 0.5, RadiusLaw.constant(1), ONE, 2)
    a, b = pts.field(0.1), pts.field(0.3)
    assert np.all(a.alpha <= b.alpha) and np.all(a.sigma_sum <= b.sigma_sum)
    la, lb = find_clumps(a).site_L(), find_clumps(b).site_L()
    assert np.all(la <= lb)


@pytest.mark.slow
def test_lambda_c_bracket_reproducible():
    kw = dict(radius=RadiusLaw.constant(1), d=2, sizes=(16, 32), replications=60, lam_max=0.5, steps=5)
    a = estimate_lambda_c(seed=1, **kw)
    b = estimate_lambda_c(seed=2, **kw)
    assert a.lo < a.hi and b.lo < b.hi
    assert max(a.lo, b.lo) <= min(a.hi, b.hi) + (a.hi - a.lo) + (b.hi - b.lo)


# ------------------------------------------------------------------ resampling extension


def test_extension_inclusion_and_remark_inequality():
    rng = np.random.default_rng(5)
    law = RadiusLaw.constant(1)
    lam = -math.log(0.95)
    x, y = (10, 10), (12, 11)
    for _ in range(300):
        lay = LayeredField.sample((21, 21), lam, law, ONE, rng)
        under, rec = resample_extension(lay, x, y, lam, law, ONE, rng)
        assert rec.Cx | rec.Cy <= rec.Cx | rec.Cy_under
        ax, ay = sorted(rng.random(2) * 5, reverse=True)
        assert remark_inequality(ax, rec.sigma_x, ay, rec.sigma_y, rec.sigma_y_under)


def test_extension_isolated_point_resamples_only_near_x():
    lay = LayeredField.sample((15, 15), 0.0, RadiusLaw.constant(1), ONE, 0)
    under, rec = resample_extension(lay, (7, 7), (2, 2), 0.0, RadiusLaw.constant(1), ONE, 1)
    assert rec.Cx == set() and rec.n_resampled == 9
    assert not under.alpha.any()
