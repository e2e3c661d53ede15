"""Boolean model on Z^d: per-slot clumps of sup-norm balls and their heights.

A slot field records, per site ``z``, whether at least one ball is centered
there (``alpha``), the largest radius ``R_max`` and the total height
``sigma_sum``.  Balls ``B(y, R_y)`` and ``B(z, R_z)`` overlap iff
``|y - z|_inf <= R_y + R_z``; a clump is a maximal connected union of balls,
its height ``sigma_hat`` the sum of the heights of its balls.  The clump
height recursion is

    Hhat_n(z) = sigma_hat_n(z) + max over y in clump_n(z) + {z} of Hhat_{n-1}(y).
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _kernels
from .errors import ConfigurationError, UsageError
from .rain import Dist
from .seeds import as_rng


# ------------------------------------------------------------------ laws


@dataclass(frozen=True)
class RadiusLaw:
    """Distribution of integer ball radii (all >= 1)."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int64)
        p = np.asarray(self.probs, dtype=float)
        if v.ndim != 1 or v.shape != p.shape or v.size == 0:
            raise ConfigurationError("radius law needs matching value/probability lists")
        if np.any(v < 1) or np.any(p < 0) or not math.isclose(p.sum(), 1.0, rel_tol=1e-9):
            raise ConfigurationError("radii must be >= 1 and probabilities sum to 1")
        object.__setattr__(self, "values", tuple(int(a) for a in v))
        object.__setattr__(self, "probs", tuple(float(a) for a in p / p.sum()))

    @classmethod
    def constant(cls, r: int) -> "RadiusLaw":
        return cls((int(r),), (1.0,))

    @classmethod
    def from_dict(cls, spec) -> "RadiusLaw":
        if isinstance(spec, (int, float)):
            return cls.constant(int(spec))
        return cls(tuple(spec["values"]), tuple(spec["probs"]))

    def to_dict(self):
        return {"values": list(self.values), "probs": list(self.probs)}

    @property
    def max(self) -> int:
        return max(self.values)

    @property
    def min(self) -> int:
        return min(self.values)

    def pmf(self) -> np.ndarray:
        """Probability of each radius ``1..max``."""
        out = np.zeros(self.max)
        for v, p in zip(self.values, self.probs):
            out[v - 1] += p
        return out

    def sample(self, rng, size) -> np.ndarray:
        return rng.choice(np.asarray(self.values), size=size, p=np.asarray(self.probs))


# ------------------------------------------------------------------ fields


@dataclass
class SlotField:
    """One time slot of the lattice Boolean model on a finite box."""

    origin: np.ndarray
    alpha: np.ndarray
    R_max: np.ndarray
    sigma_sum: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.int64)
        self.alpha = np.asarray(self.alpha, dtype=bool)
        self.R_max = np.asarray(self.R_max, dtype=np.int64)
        self.sigma_sum = np.asarray(self.sigma_sum, dtype=float)
        if not (self.alpha.shape == self.R_max.shape == self.sigma_sum.shape):
            raise UsageError("field arrays must share a shape")
        if self.origin.shape != (self.alpha.ndim,):
            raise UsageError("origin must have one entry per axis")

    @property
    def shape(self):
        return self.alpha.shape

    @property
    def d(self) -> int:
        return self.alpha.ndim

    @classmethod
    def empty(cls, shape, origin=None) -> "SlotField":
        shape = tuple(int(s) for s in shape)
        origin = np.zeros(len(shape), np.int64) if origin is None else origin
        return cls(origin, np.zeros(shape, bool), np.zeros(shape, np.int64), np.zeros(shape))

    def index(self, z) -> tuple:
        """Array index of lattice site ``z``."""
        return tuple(np.asarray(z, dtype=np.int64) - self.origin)

    def sites(self):
        """Lattice coordinates of every array cell, shape ``(*shape, d)``."""
        grids = np.meshgrid(*[np.arange(s) for s in self.shape], indexing="ij")
        return np.stack(grids, axis=-1) + self.origin

    def add_ball(self, z, radius: int, sigma: float) -> None:
        i = self.index(z)
        self.alpha[i] = True
        self.R_max[i] = max(int(self.R_max[i]), int(radius))
        self.sigma_sum[i] += sigma

    def rows(self):
        idx = np.argwhere(np.ones(self.shape, bool))
        for k in idx:
            k = tuple(k)
            yield tuple(int(a) for a in np.asarray(k) + self.origin) + (
                int(self.alpha[k]), int(self.R_max[k]), float(self.sigma_sum[k]))


def _sum_by_count(counts, dist: Dist, rng):
    flat = counts.reshape(-1)
    total = int(flat.sum())
    out = np.zeros(flat.shape[0])
    if total:
        draws = dist.sample(rng, total)
        occ = np.flatnonzero(flat)
        starts = np.concatenate([[0], np.cumsum(flat[occ])[:-1]])
        out[occ] = np.add.reduceat(draws, starts)
    return out.reshape(counts.shape)


def build_slot_field(shape, lam: float, radius: RadiusLaw, sigma: Dist, seed=None, origin=None) -> SlotField:
    """I.i.d. sites: ``M ~ Poisson(lam)`` balls with i.i.d. radii and heights."""
    rng = as_rng(seed)
    shape = tuple(int(s) for s in shape)
    if lam < 0:
        raise ConfigurationError("intensity must be nonnegative")
    M = rng.poisson(lam, size=shape) if lam > 0 else np.zeros(shape, np.int64)
    flat = M.reshape(-1)
    R = np.zeros(flat.shape[0], np.int64)
    total = int(flat.sum())
    if total:
        draws = radius.sample(rng, total)
        occ = np.flatnonzero(flat)
        starts = np.concatenate([[0], np.cumsum(flat[occ])[:-1]])
        R[occ] = np.maximum.reduceat(draws, starts)
    s = _sum_by_count(M, sigma, rng)
    origin = np.zeros(len(shape), np.int64) if origin is None else origin
    return SlotField(origin, M > 0, R.reshape(shape), s)


@dataclass
class SlotPoints:
    """Individual balls of one slot drawn at a reference intensity ``lam_max``.

    Keeping balls with ``u < lam / lam_max`` gives coupled fields that grow
    with ``lam`` sample by sample.
    """

    shape: tuple
    site: np.ndarray
    radius: np.ndarray
    sigma: np.ndarray
    u: np.ndarray
    lam_max: float

    @classmethod
    def sample(cls, shape, lam_max, radius: RadiusLaw, sigma: Dist, seed=None) -> "SlotPoints":
        rng = as_rng(seed)
        shape = tuple(int(s) for s in shape)
        n_sites = int(np.prod(shape))
        M = rng.poisson(lam_max, n_sites)
        site = np.repeat(np.arange(n_sites), M)
        n = site.shape[0]
        return cls(shape, site, radius.sample(rng, n).astype(np.int64), sigma.sample(rng, n), rng.random(n),
                   float(lam_max))

    def field(self, lam: float, origin=None) -> SlotField:
        if lam > self.lam_max:
            raise UsageError("cannot thin to a larger intensity")
        keep = self.u < lam / self.lam_max if self.lam_max > 0 else np.zeros(self.u.shape, bool)
        n_sites = int(np.prod(self.shape))
        R = np.zeros(n_sites, np.int64)
        np.maximum.at(R, self.site[keep], self.radius[keep])
        s = np.bincount(self.site[keep], weights=self.sigma[keep], minlength=n_sites)
        origin = np.zeros(len(self.shape), np.int64) if origin is None else origin
        return SlotField(origin, R.reshape(self.shape) > 0, R.reshape(self.shape), s.reshape(self.shape))

    def crop(self, lo, shape) -> "SlotPoints":
        """Balls centered in the sub-box ``lo + [0, shape)`` (re-indexed)."""
        coords = np.array(np.unravel_index(self.site, self.shape)).T - np.asarray(lo)
        inside = np.all((coords >= 0) & (coords < np.asarray(shape)), axis=1)
        site = np.ravel_multi_index(tuple(coords[inside].T), tuple(shape)) if inside.any() else np.zeros(0, np.int64)
        return SlotPoints(tuple(shape), np.asarray(site, np.int64), self.radius[inside], self.sigma[inside],
                          self.u[inside], self.lam_max)


# ------------------------------------------------------------------ clumps


@dataclass
class Clumps:
    """Clump decomposition of one slot field.

    ``label`` gives, per site, the compact clump index of any covering ball
    (-1 if uncovered).  Per-clump arrays are indexed by that label.
    """

    field: SlotField
    label: np.ndarray
    root: np.ndarray  # smallest flat index of a ball center, per clump
    L: np.ndarray
    sigma_hat: np.ndarray
    n_balls: np.ndarray
    censored: np.ndarray

    @property
    def count(self) -> int:
        return int(self.L.shape[0])

    def clump_at(self, z) -> int:
        return int(self.label[self.field.index(z)])

    def sites_of(self, c: int) -> np.ndarray:
        return np.argwhere(self.label == c) + self.field.origin

    def site_sigma_hat(self) -> np.ndarray:
        """Per-site clump height (0 on uncovered sites)."""
        out = np.zeros(self.label.shape)
        cov = self.label >= 0
        out[cov] = self.sigma_hat[self.label[cov]]
        return out

    def site_L(self) -> np.ndarray:
        out = np.zeros(self.label.shape, np.int64)
        cov = self.label >= 0
        out[cov] = self.L[self.label[cov]]
        return out

    def rows(self, slot: int):
        for c in range(self.count):
            r = np.unravel_index(int(self.root[c]), self.label.shape)
            yield (slot, tuple(int(a) for a in np.asarray(r) + self.field.origin), int(self.L[c]),
                   float(self.sigma_hat[c]), bool(self.censored[c]))


def find_clumps(fld: SlotField, impl=None) -> Clumps:
    """Union-find over overlapping balls, then paint the covered sites."""
    radius = np.where(fld.alpha, np.maximum(fld.R_max, 0), 0)
    if np.any(fld.alpha & (fld.R_max < 1)):
        raise UsageError("occupied sites need a radius >= 1")
    roots, cover = _kernels.clump_cover(radius, impl=impl)
    uniq, label_flat = np.unique(cover.reshape(-1), return_inverse=True)
    has_uncovered = uniq.size > 0 and uniq[0] == -1
    label = (label_flat - (1 if has_uncovered else 0)).reshape(cover.shape)
    root_ids = uniq[1:] if has_uncovered else uniq
    k = root_ids.shape[0]
    cov = label >= 0
    L = np.bincount(label[cov], minlength=k).astype(np.int64)
    occ = roots >= 0
    ball_label = np.searchsorted(root_ids, roots[occ])
    sigma_hat = np.bincount(ball_label, weights=fld.sigma_sum[occ], minlength=k)
    n_balls = np.bincount(ball_label, minlength=k).astype(np.int64)
    # censored: some ball reaches the region boundary
    censored = np.zeros(k, dtype=bool)
    if occ.any():
        coords = np.argwhere(occ)
        r = radius[occ][:, None]
        touch = np.any((coords - r <= 0) | (coords + r >= np.asarray(fld.shape) - 1), axis=1)
        censored[ball_label[touch]] = True
    return Clumps(fld, label, root_ids, L, sigma_hat, n_balls, censored)


def flood_fill_clumps(fld: SlotField):
    """Reference decomposition by explicit site sets and breadth-first search.

    Returns a list of ``(covered site set, ball center set, sigma_hat)``.
    """
    centers = [tuple(int(a) for a in c) for c in np.argwhere(fld.alpha)]
    balls = []
    for c in centers:
        r = int(fld.R_max[c])
        ranges = [range(max(0, c[a] - r), min(fld.shape[a], c[a] + r + 1)) for a in range(fld.d)]
        cells = {()}
        for rg in ranges:
            cells = {p + (v,) for p in cells for v in rg}
        balls.append(cells)
    seen = [False] * len(centers)
    out = []
    for s in range(len(centers)):
        if seen[s]:
            continue
        seen[s] = True
        queue = deque([s])
        comp = []
        while queue:
            a = queue.popleft()
            comp.append(a)
            for b in range(len(centers)):
                if not seen[b] and balls[a] & balls[b]:
                    seen[b] = True
                    queue.append(b)
        comp.sort()
        sites = set().union(*(balls[a] for a in comp))
        out.append((sites, {centers[a] for a in comp}, float(sum(fld.sigma_sum[centers[a]] for a in comp))))
    return out


# ------------------------------------------------------------------ recursion


def model5_step(prev: np.ndarray, cl: Clumps) -> np.ndarray:
    """One application of the clump height recursion."""
    prev = np.asarray(prev, dtype=float)
    out = prev.copy()
    cov = cl.label >= 0
    if cov.any():
        lab = cl.label[cov]
        cmax = np.full(cl.count, -np.inf)
        np.maximum.at(cmax, lab, prev[cov])
        out[cov] = cl.sigma_hat[lab] + cmax[lab]
    return out


def iterate_model5(fields, initial=None, impl=None) -> list:
    """Heights after each slot, starting from ``initial`` (zero by default)."""
    fields = list(fields)
    if not fields and initial is None:
        raise UsageError("need at least one field or an initial row")
    shape = fields[0].shape if fields else np.shape(initial)
    cur = np.zeros(shape) if initial is None else np.asarray(initial, dtype=float).copy()
    rows = [cur]
    for f in fields:
        cur = model5_step(cur, find_clumps(f, impl=impl))
        rows.append(cur)
    return rows


def backward_model5(fields_back, x, impl=None) -> np.ndarray:
    """Heights at ``x`` at time 0 built from slots ``-1, -2, ...``.

    ``fields_back[k]`` is slot ``-(k+1)``.  Returns the value after each
    number of slots; nondecreasing.
    """
    fields_back = list(fields_back)
    if not fields_back:
        return np.zeros(0)
    cur = np.full(fields_back[0].shape, -np.inf)
    cur[fields_back[0].index(x)] = 0.0
    out = np.empty(len(fields_back))
    for k, f in enumerate(fields_back):
        cur = model5_step(cur, find_clumps(f, impl=impl))
        out[k] = cur.max()
    return out


def model5_path_oracle(fields, z) -> float:
    """Max over all admissible site paths of the summed clump heights (small inputs)."""
    decomp = [flood_fill_clumps(f) for f in fields]

    def clump_of(k, site):
        for sites, _, sig in decomp[k]:
            if site in sites:
                return sites, sig
        return None, 0.0

    memo = {}

    def best(k, site):
        # height at `site` after slots 0..k
        if k < 0:
            return 0.0
        key = (k, site)
        if key not in memo:
            sites, sig = clump_of(k, site)
            nxt = (sites or set()) | {site}
            memo[key] = sig + max(best(k - 1, y) for y in nxt)
        return memo[key]

    return best(len(fields) - 1, tuple(int(a) for a in np.asarray(z) - fields[0].origin)) if fields else 0.0


# ------------------------------------------------------------------ statistics


@dataclass
class TailStats:
    k: np.ndarray
    survival: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    decay_rate: float
    decay_ci: tuple
    n_roots: int
    n_censored: int
    boundary_warning: bool
    L_samples: np.ndarray = field(repr=False)
    sigma_samples: np.ndarray = field(repr=False)


def _wilson(k, n, z=1.96):
    k = np.asarray(k, float)
    if n == 0:
        return np.zeros_like(k), np.ones_like(k)
    p = k / n
    den = 1 + z * z / n
    c = (p + z * z / (2 * n)) / den
    h = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return np.clip(c - h, 0, 1), np.clip(c + h, 0, 1)


def clump_tail_stats(lam: float, radius: RadiusLaw, sigma: Dist, n_roots: int, region: int = 128,
                     d: int = 2, seed=None, margin: int | None = None) -> TailStats:
    """Empirical tail of the clump size at root sites.

    Every interior site (at least ``margin`` from the border) of each
    sampled field serves as a root.  Roots in censored clumps are dropped.
    """
    rng = as_rng(seed)
    margin = 4 * radius.max if margin is None else margin
    inner = region - 2 * margin
    if inner <= 0:
        raise ConfigurationError("region too small for the margin")
    per_field = inner**d
    Ls, Ss = [], []
    censored = 0
    got = 0
    sl = tuple(slice(margin, region - margin) for _ in range(d))
    while got < n_roots:
        f = build_slot_field((region,) * d, lam, radius, sigma, rng)
        cl = find_clumps(f)
        lab = cl.label[sl].reshape(-1)
        cens = np.zeros(lab.shape, bool)
        cov = lab >= 0
        cens[cov] = cl.censored[lab[cov]]
        take = min(per_field, n_roots - got)
        lab, cens = lab[:take], cens[:take]
        censored += int(cens.sum())
        ok = ~cens
        cov = lab >= 0
        if cl.count:
            L = np.where(cov, cl.L[np.maximum(lab, 0)], 0)
            S = np.where(cov, cl.sigma_hat[np.maximum(lab, 0)], 0.0)
        else:
            L, S = np.zeros(lab.shape, np.int64), np.zeros(lab.shape)
        Ls.append(L[ok])
        Ss.append(S[ok])
        got += take
    L = np.concatenate(Ls)
    S = np.concatenate(Ss)
    n = L.shape[0]
    ks = np.unique(np.concatenate([[0], L]))
    surv_counts = np.array([(L > k).sum() for k in ks])
    surv = surv_counts / max(n, 1)
    lo, hi = _wilson(surv_counts, n)
    fit = (ks > 0) & (surv_counts >= 10)
    rate, ci = float("nan"), (float("nan"), float("nan"))
    if fit.sum() >= 3:
        res = stats.linregress(ks[fit], np.log(surv[fit]))
        rate = -res.slope
        ci = (rate - 1.96 * res.stderr, rate + 1.96 * res.stderr)
    return TailStats(ks, surv, lo, hi, rate, ci, n, censored, censored > 0, L, S)


# ------------------------------------------------------------------ critical intensity


@dataclass
class LambdaCBracket:
    lo: float
    hi: float
    touch_lo: dict
    touch_hi: dict
    replications: int
    sizes: tuple
    history: list


def _touch_probability(samples, sizes, lam):
    """Fraction of samples whose central clump reaches the border, per size."""
    out = {}
    big = samples[0].shape[0]
    for n in sizes:
        hits = 0
        lo = (big - n) // 2
        for pts in samples:
            sub = pts.crop((lo,) * len(pts.shape), (n,) * len(pts.shape))
            fld = sub.field(lam)
            cl = find_clumps(fld)
            c = int(cl.label[(n // 2,) * fld.d])
            if c >= 0 and cl.censored[c]:
                hits += 1
        out[n] = hits / len(samples)
    return out


def _passes(touch, sizes, threshold):
    vals = [touch[n] for n in sizes]
    return all(v < threshold for v in vals) and all(b <= a for a, b in zip(vals, vals[1:]))


def estimate_lambda_c(radius: RadiusLaw, d: int, sizes, seed=None, replications: int = 200,
                      lam_max: float = 2.0, steps: int = 10, threshold: float = 0.01,
                      sigma: Dist | None = None) -> LambdaCBracket:
    """Bisection bracket for the intensity where central clumps stop reaching the border.

    The diagnostic at ``lam`` passes when the fraction of samples whose
    clump at the center touches the border is below ``threshold`` at every
    region size and does not grow with size.  All intensities share the
    same ball draws (coupled thinning), so the diagnostic is monotone in
    ``lam`` sample by sample.
    """
    sizes = tuple(sorted(int(s) for s in sizes))
    if len(sizes) < 2:
        raise ConfigurationError("need at least two region sizes")
    sigma = sigma or Dist.deterministic(1.0)
    rng = as_rng(seed)
    big = sizes[-1]
    samples = [SlotPoints.sample((big,) * d, lam_max, radius, sigma, rng) for _ in range(replications)]
    lo, hi = 0.0, lam_max
    t_lo = {n: 0.0 for n in sizes}
    t_hi = _touch_probability(samples, sizes, hi)
    history = [(hi, t_hi)]
    if _passes(t_hi, sizes, threshold):
        return LambdaCBracket(hi, math.inf, t_hi, {}, replications, sizes, history)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        t_mid = _touch_probability(samples, sizes, mid)
        history.append((mid, t_mid))
        if _passes(t_mid, sizes, threshold):
            lo, t_lo = mid, t_mid
        else:
            hi, t_hi = mid, t_mid
    return LambdaCBracket(lo, hi, t_lo, t_hi, replications, sizes, history)


# ------------------------------------------------------------------ resampling extension


@dataclass
class LayeredField:
    """Slot field split by radius: ``alpha[k-1]``, ``sigma[k-1]`` for balls of radius ``k``."""

    origin: np.ndarray
    alpha: np.ndarray
    sigma: np.ndarray

    @classmethod
    def sample(cls, shape, lam, radius: RadiusLaw, sigma: Dist, seed=None, origin=None) -> "LayeredField":
        rng = as_rng(seed)
        shape = tuple(int(s) for s in shape)
        pmf = radius.pmf()
        K = pmf.shape[0]
        alpha = np.zeros((K,) + shape, bool)
        sig = np.zeros((K,) + shape)
        for k in range(K):
            if pmf[k] == 0:
                continue
            M = rng.poisson(lam * pmf[k], size=shape)
            alpha[k] = M > 0
            sig[k] = _sum_by_count(M, sigma, rng)
        origin = np.zeros(len(shape), np.int64) if origin is None else np.asarray(origin, np.int64)
        return cls(origin, alpha, sig)

    def combine(self) -> SlotField:
        K = self.alpha.shape[0]
        ks = np.arange(1, K + 1).reshape((K,) + (1,) * (self.alpha.ndim - 1))
        R = np.max(np.where(self.alpha, ks, 0), axis=0)
        return SlotField(self.origin, R > 0, R, self.sigma.sum(axis=0))


def hit_set(A_mask: np.ndarray, K: int) -> np.ndarray:
    """``hit[k-1, z]`` iff the radius-``k`` ball at ``z`` meets the site set ``A``."""
    from scipy.ndimage import binary_dilation

    out = np.zeros((K,) + A_mask.shape, bool)
    if not A_mask.any():
        return out
    for k in range(1, K + 1):
        st = np.ones((2 * k + 1,) * A_mask.ndim, bool)
        out[k - 1] = binary_dilation(A_mask, structure=st)
    return out


@dataclass
class ExtensionRecord:
    Cx: set
    sigma_x: float
    Cy: set
    sigma_y: float
    Cy_under: set
    sigma_y_under: float
    censored: bool
    n_resampled: int


def _clump_record(cl: Clumps, z):
    c = cl.clump_at(z)
    if c < 0:
        return set(), 0.0, False
    return {tuple(int(a) for a in s) for s in cl.sites_of(c)}, float(cl.sigma_hat[c]), bool(cl.censored[c])


def resample_extension(layered: LayeredField, x, y, lam, radius: RadiusLaw, sigma: Dist, seed=None):
    """Redraw every layered coordinate whose ball meets ``A = clump(x) + {x}``.

    Returns the underline layered field and the clump records of ``x``,
    ``y`` in the original field and of ``y`` in the underline field.
    """
    fld = layered.combine()
    cl = find_clumps(fld)
    Cx, sx, cens_x = _clump_record(cl, x)
    Cy, sy, cens_y = _clump_record(cl, y)
    A = np.zeros(fld.shape, bool)
    cx = cl.clump_at(x)
    if cx >= 0:
        A |= cl.label == cx
    A[fld.index(x)] = True
    hit = hit_set(A, layered.alpha.shape[0])
    fresh = LayeredField.sample(fld.shape, lam, radius, sigma, seed, layered.origin)
    under = LayeredField(layered.origin, np.where(hit, fresh.alpha, layered.alpha),
                         np.where(hit, fresh.sigma, layered.sigma))
    cl_u = find_clumps(under.combine())
    Cyu, syu, cens_u = _clump_record(cl_u, y)
    rec = ExtensionRecord(Cx, sx, Cy, sy, Cyu, syu, cens_x or cens_y or cens_u, int(hit.sum()))
    return under, rec


def remark_inequality(ax, sx, ay, sy, sy_under) -> bool:
    """``max(a_x + s_x, a_y + s_y) <= max(a_x + s_x, a_y + s_y_under)`` given the coupling."""
    return max(ax + sx, ay + sy) <= max(ax + sx, ay + sy_under)
