"""Growth rates, the intensity/time rescaling identity, stability scans and
a percolation probe for the continuous model."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .branching import mean_ci
from .clumps import SlotField, backward_model5
from .discretize import to_model2, to_model3, to_model4
from .errors import ChainViolation, ConfigurationError
from .precedence import backward_heights, build_dag, loynes_profile, schedule
from .rain import Dist, Rain, RainConfig, ShapeDist, sample_rain
from .seeds import SeedSpec


@dataclass(frozen=True)
class Setup:
    """Geometry and marks of a continuous experiment on ``[-half_width, half_width]^d``."""

    d: int = 1
    shape: ShapeDist = ShapeDist("cube", Dist.deterministic(1.0))
    sigma: Dist = Dist.deterministic(1.0)
    half_width: float = 20.0
    pad: float | None = None

    def config(self, lam: float, t0: float, t1: float) -> RainConfig:
        w = float(self.half_width)
        return RainConfig(self.d, lam, ((-w,) * self.d, (w,) * self.d), (t0, t1), self.shape, self.sigma,
                          self.pad)

    @classmethod
    def from_dict(cls, spec) -> "Setup":
        spec = dict(spec)
        return cls(int(spec.get("d", 1)), ShapeDist.from_dict(spec["shape"]), Dist.from_dict(spec["sigma"]),
                   float(spec.get("half_width", 20.0)), spec.get("pad"))


def backward_rain(setup: Setup, lam: float, T: float, seed=None) -> Rain:
    """Rain on ``[-T, 0]``."""
    return sample_rain(setup.config(lam, -float(T), 0.0), seed)


def time_grid(T: float, points: int = 20) -> np.ndarray:
    return np.linspace(T / points, T, points)


# ------------------------------------------------------------------ kappa


@dataclass
class GrowthRateEstimate:
    lam: float
    kappa: float
    ci: tuple
    T: float
    replications: int
    model: str
    slopes: np.ndarray = field(repr=False)
    curves: np.ndarray = field(repr=False)
    grid: np.ndarray = field(repr=False)


def model5_backward_fields(rain: Rain, T: float, x=None):
    """Slot fields for slots ``-1, -2, ...`` from the Model 4 cells of ``rain``."""
    cells = to_model4(to_model3(to_model2(rain)))
    n_back = int(math.ceil(T))
    d = rain.d
    x = np.zeros(d) if x is None else np.asarray(x, float)
    site = np.floor(x).astype(np.int64)
    zs = [site[None, :]]
    if len(cells):
        zs += [cells.z - cells.R_max[:, None], cells.z + cells.R_max[:, None]]
    allz = np.concatenate(zs)
    lo = allz.min(axis=0) - 1
    shape = tuple(allz.max(axis=0) - lo + 2)
    fields = [SlotField.empty(shape, lo) for _ in range(n_back)]
    for k in range(len(cells)):
        idx = -int(cells.slot[k])  # slot n covers [n-1, n): slot 0 is [-1, 0)
        if 0 <= idx < n_back:
            f = fields[idx]
            i = f.index(cells.z[k])
            f.alpha[i] = True
            f.R_max[i] = cells.R_max[k]
            f.sigma_sum[i] = cells.sigma_sum[k]
    return fields, site


def _curve(rain, model, grid, x):
    if model == "continuous":
        return backward_heights(rain, x, grid)
    fields, site = model5_backward_fields(rain, grid[-1], x)
    vals = backward_model5(fields, site)
    # slots -1..-k cover [-k, 0): read the value for k = ceil(t)
    k = np.ceil(grid).astype(np.int64)
    return np.where(k > 0, vals[np.maximum(k, 1) - 1], 0.0)


def kappa_estimate(lam: float, model: str = "continuous", T: float = 100.0, replications: int = 20,
                   seed=None, setup: Setup | None = None, points: int = 20, x=None,
                   lam_max: float | None = None) -> GrowthRateEstimate:
    """Last-half slope of the backward height at ``x`` against the horizon.

    With ``lam_max`` the rain is drawn at ``lam_max`` and thinned, so
    estimates for several intensities share their randomness.
    """
    if model not in ("continuous", "model5"):
        raise ConfigurationError(f"unknown model {model!r}")
    setup = setup or Setup()
    x = np.zeros(setup.d) if x is None else np.asarray(x, float)
    spec = seed if isinstance(seed, SeedSpec) else SeedSpec(0 if seed is None else int(seed))
    grid = time_grid(T, points)
    curves = []
    for r in range(replications):
        rng = spec.child("kappa", r).rng()
        if lam_max is None:
            rain = backward_rain(setup, lam, T, rng)
        else:
            rain = backward_rain(setup, lam_max, T, rng).thin(lam, lam_max)
        curves.append(_curve(rain, model, grid, x))
    C = np.array(curves)
    slopes = np.array([_slope(grid, c) for c in C])
    k, ci = mean_ci(slopes)
    return GrowthRateEstimate(lam, k, ci, T, replications, model, slopes, C, grid)


def _slope(grid, values):
    half = grid >= grid[-1] / 2
    if half.sum() < 2:
        return float(values[-1] / grid[-1])
    return max(0.0, float(np.polyfit(grid[half], values[half], 1)[0]))


# ------------------------------------------------------------------ rescaling


@dataclass
class ScalingReport:
    lam: float
    a: float
    n_arrivals: int
    equal: bool
    max_abs_diff: float
    H_lam: float
    H_a: float
    witness: int | None = None


def scaling_check(lam: float, a: float, T: float, seed=None, setup: Setup | None = None,
                  strict: bool = False) -> ScalingReport:
    """One rain at intensity ``a`` on ``[0, lam T / a]`` read as intensity ``lam`` on ``[0, T]``.

    Multiplying every time by ``a / lam`` keeps the arrival order, so the
    growth tops must agree exactly, and so must the heights at the origin
    at the matching horizons.
    """
    if a <= 0 or lam <= 0:
        raise ConfigurationError("intensities must be positive")
    setup = setup or Setup()
    rain_a = sample_rain(setup.config(a, 0.0, lam * T / a), seed)
    rain_l = rain_a.replace(t=rain_a.t * (a / lam))
    rec_a = schedule(rain_a)
    rec_l = schedule(rain_l, build_dag(rain_l))
    diff = np.abs(rec_a.top - rec_l.top)
    bad = np.flatnonzero(rec_a.top != rec_l.top)
    origin = np.zeros(setup.d)
    H_a = _height_at(rain_a, rec_a, origin)
    H_l = _height_at(rain_l, rec_l, origin)
    rep = ScalingReport(lam, a, len(rain_a), bad.size == 0 and H_a == H_l,
                        float(diff.max()) if diff.size else 0.0, H_l, H_a,
                        int(rain_a.ids[bad[0]]) if bad.size else None)
    if strict and not rep.equal:
        raise ChainViolation("rescaled tops differ", witness=rep.witness)
    return rep


def _height_at(rain, rec, x):
    from .rain import covers

    if len(rain) == 0:
        return 0.0
    m = covers(rain.kind, rain.ext, rain.x, x)
    return float(rec.top[m].max()) if m.any() else 0.0


# ------------------------------------------------------------------ threshold scan


@dataclass
class StabilityVerdict:
    lam: float
    verdict: str
    plateau_fraction: float
    W_hat: float
    H_over_t: float
    H_over_t_ci: tuple
    kappa_hat: float
    kappa_ci: tuple
    bound: float | None
    T: float
    profiles: np.ndarray = field(repr=False)
    heights: np.ndarray = field(repr=False)
    slopes: np.ndarray = field(default=None, repr=False)


def plateaued(profile, eps: float = 0.01) -> bool:
    """Relative growth below ``eps`` over the final quarter of the schedule."""
    profile = np.asarray(profile, float)
    q = max(1, int(math.ceil(profile.shape[0] / 4)))
    last = profile[-1]
    ref = profile[-1 - q]
    if last <= 0:
        return True
    return (last - ref) < eps * last


def exponential_schedule(T0: float, T1: float, points: int = 8) -> np.ndarray:
    return np.geomspace(T0, T1, points)


def threshold_scan(lams, T_schedule, x_points, seed=None, setup: Setup | None = None,
                   replications: int = 5, bound: float | None = None, eps: float = 0.01,
                   lam_max: float | None = None) -> list:
    """Loynes profiles and backward heights along an intensity grid.

    All intensities thin the same rain drawn at ``lam_max`` (default the
    largest grid value).  Per intensity: ``stable-evidence`` if every
    workload profile plateaus, ``unstable-evidence`` if the backward height
    per unit time at the longest horizon has a confidence interval above 1,
    ``inconclusive`` otherwise.
    """
    lams = np.asarray(lams, float)
    if np.any(np.diff(lams) < 0):
        raise ConfigurationError("intensity grid must be sorted")
    setup = setup or Setup()
    T_schedule = np.asarray(T_schedule, float)
    T = float(T_schedule[-1])
    lam_max = float(lams.max()) if lam_max is None else lam_max
    x_points = np.atleast_2d(np.asarray(x_points, float))
    spec = seed if isinstance(seed, SeedSpec) else SeedSpec(0 if seed is None else int(seed))
    rains = [backward_rain(setup, lam_max, T, spec.child("scan", r).rng()) for r in range(replications)]
    out = []
    for lam in lams:
        profiles, heights = [], []
        for base in rains:
            rain = base.thin(lam, lam_max) if lam_max > 0 else base
            dag = build_dag(rain)
            for x in x_points:
                profiles.append(loynes_profile(rain, x, T_schedule, dag, method="backward"))
                heights.append(backward_heights(rain, x, T_schedule, dag))
        P = np.array(profiles)
        Hh = np.array(heights)
        plat = np.array([plateaued(p, eps) for p in P])
        ratio = Hh[:, -1] / T
        m, ci = mean_ci(ratio)
        slopes = np.array([_slope(T_schedule, h) for h in Hh])
        km, kci = mean_ci(slopes)
        if plat.all():
            verdict = "stable-evidence"
        elif ci[0] > 1.0:
            verdict = "unstable-evidence"
        else:
            verdict = "inconclusive"
        out.append(StabilityVerdict(float(lam), verdict, float(plat.mean()), float(P[:, -1].mean()), m, ci,
                                    km, kci, bound, T, P, Hh, slopes))
    return out


def stability_bound(lam_c_lo: float, a: float, kappa_a: float) -> float:
    """``min(lambda_c, a / kappa(a))``."""
    return min(lam_c_lo, a / kappa_a if kappa_a > 0 else math.inf)


# ------------------------------------------------------------------ percolation


@dataclass
class PercolationSnapshot:
    t: float
    n_active: int
    largest: int
    largest_fraction: float
    histogram: dict


def percolation_probe(lam: float, snapshot_times, T: float, seed=None, setup: Setup | None = None,
                      rain: Rain | None = None) -> list:
    """Connected components of the intersection graph of arrivals still in the system.

    An arrival is present at time ``t`` when ``t_j <= t < done_j``.  The
    rain runs on ``[0, T]`` from an empty system; snapshots should lie
    after the burn-in.
    """
    setup = setup or Setup()
    if rain is None:
        rain = sample_rain(setup.config(lam, 0.0, T), seed)
    dag = build_dag(rain)
    rec = schedule(rain, dag)
    src = np.repeat(np.arange(dag.n), np.diff(dag.ptr))
    dst = dag.idx
    out = []
    for t in np.atleast_1d(snapshot_times):
        active = (rain.t <= t) & (rec.done > t)
        idx = np.flatnonzero(active)
        if idx.size == 0:
            out.append(PercolationSnapshot(float(t), 0, 0, 0.0, {}))
            continue
        pos = np.full(dag.n, -1)
        pos[idx] = np.arange(idx.size)
        keep = active[src] & active[dst]
        g = coo_matrix((np.ones(int(keep.sum())), (pos[src[keep]], pos[dst[keep]])), shape=(idx.size, idx.size))
        _, lab = connected_components(g, directed=False)
        sizes = np.bincount(lab)
        vals, counts = np.unique(sizes, return_counts=True)
        out.append(PercolationSnapshot(float(t), int(idx.size), int(sizes.max()),
                                       float(sizes.max() / idx.size),
                                       {int(v): int(c) for v, c in zip(vals, counts)}))
    return out
