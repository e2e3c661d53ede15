"""Branching random walk with heights and its i.i.d. dominating transform.

Every individual at site ``x`` with path height ``h`` draws a pair
``(V, s)``: a finite offset set containing 0 and a height.  Its children sit
at ``x + v`` for ``v`` in ``V``, each with path height ``h + s``.  ``h(n)``
is the largest path height in generation ``n``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy import stats

from .errors import CapacityError, ConfigurationError, UsageError
from .seeds import as_rng

FRONT_CAP = 10_000_000


# ------------------------------------------------------------------ laws


class ProgenyLaw:
    """Sampler of i.i.d. ``(V, s)`` pairs.

    ``sample(rng, m)`` returns ``(sizes, offsets, heights)`` where the
    offsets of draw ``i`` are the rows ``offsets[start_i : start_i + sizes[i]]``.
    """

    def __init__(self, d: int, sampler, name: str = "custom", atoms=None):
        self.d = int(d)
        self._sampler = sampler
        self.name = name
        self.atoms = atoms

    def sample(self, rng, m: int):
        sizes, offsets, heights = self._sampler(rng, int(m))
        return (np.asarray(sizes, np.int64), np.asarray(offsets, np.int64).reshape(-1, self.d),
                np.asarray(heights, float))

    @classmethod
    def from_atoms(cls, atoms, probs=None, d: int | None = None) -> "ProgenyLaw":
        """Finite law over ``(V, s)`` pairs (``V`` a list of offset tuples)."""
        atoms = [(tuple(tuple(int(c) for c in np.atleast_1d(v)) for v in V), float(s)) for V, s in atoms]
        if not atoms:
            raise ConfigurationError("need at least one atom")
        d = len(atoms[0][0][0]) if d is None else d
        origin = (0,) * d
        for V, s in atoms:
            if origin not in V:
                raise ConfigurationError("every offset set must contain the origin")
            if s < 0:
                raise ConfigurationError("heights must be nonnegative")
        probs = np.full(len(atoms), 1.0 / len(atoms)) if probs is None else np.asarray(probs, float)
        if probs.shape != (len(atoms),) or np.any(probs < 0) or not math.isclose(probs.sum(), 1.0):
            raise ConfigurationError("atom probabilities must be nonnegative and sum to 1")
        probs = probs / probs.sum()
        sizes_a = np.array([len(V) for V, _ in atoms])
        offs_a = [np.array(V, np.int64).reshape(-1, d) for V, _ in atoms]
        h_a = np.array([s for _, s in atoms])

        def sampler(rng, m):
            k = rng.choice(len(atoms), size=m, p=probs)
            offs = np.concatenate([offs_a[i] for i in k]) if m else np.zeros((0, d), np.int64)
            return sizes_a[k], offs, h_a[k]

        return cls(d, sampler, "atoms", atoms=(atoms, probs))

    @classmethod
    def fixed(cls, V, s: float) -> "ProgenyLaw":
        return cls.from_atoms([(V, s)])

    @classmethod
    def from_pairs(cls, sets, heights, d: int) -> "ProgenyLaw":
        """Empirical law: resample uniformly from observed ``(V, s)`` pairs."""
        sets = [np.asarray(V, np.int64).reshape(-1, d) for V in sets]
        heights = np.asarray(heights, float)
        if len(sets) != heights.shape[0] or not sets:
            raise ConfigurationError("need matching, nonempty set and height lists")
        sizes_a = np.array([V.shape[0] for V in sets])
        starts = np.concatenate([[0], np.cumsum(sizes_a)[:-1]])
        flat = np.concatenate(sets)

        def sampler(rng, m):
            k = rng.integers(0, len(sets), m)
            sz = sizes_a[k]
            idx = np.repeat(starts[k], sz) + (np.arange(sz.sum()) - np.repeat(np.cumsum(sz) - sz, sz))
            return sz, flat[idx], heights[k]

        law = cls(d, sampler, "empirical")
        law.pairs = (sets, heights)
        return law

    @classmethod
    def balls(cls, d: int, radius_sampler, height_sampler) -> "ProgenyLaw":
        """``V`` the sup-norm ball of a random integer radius; ``s`` independent of it."""

        def sampler(rng, m):
            r = np.asarray(radius_sampler(rng, m), np.int64)
            s = np.asarray(height_sampler(rng, m), float)
            parts = [_ball_offsets(int(a), d) for a in r]
            sizes = np.array([p.shape[0] for p in parts], np.int64)
            offs = np.concatenate(parts) if m else np.zeros((0, d), np.int64)
            return sizes, offs, s

        return cls(d, sampler, "balls")


_BALL_CACHE: dict = {}


def _ball_offsets(r: int, d: int) -> np.ndarray:
    key = (r, d)
    if key not in _BALL_CACHE:
        axes = [np.arange(-r, r + 1)] * d
        _BALL_CACHE[key] = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d).astype(np.int64)
    return _BALL_CACHE[key]


def clump_progeny_law(lam, radius, sigma, n_samples: int, region: int = 64, d: int = 2, seed=None):
    """Empirical law of ``(clump(z) + {z} - z, sigma_hat(z))`` at root sites.

    Roots whose clump reaches the region border are skipped.
    """
    from .clumps import build_slot_field, find_clumps

    rng = as_rng(seed)
    sets, heights = [], []
    centre = (region // 2,) * d
    while len(sets) < n_samples:
        f = build_slot_field((region,) * d, lam, radius, sigma, rng)
        cl = find_clumps(f)
        c = int(cl.label[centre])
        if c < 0:
            sets.append(np.zeros((1, d), np.int64))
            heights.append(0.0)
            continue
        if cl.censored[c]:
            continue
        sites = np.argwhere(cl.label == c) - np.asarray(centre)
        sets.append(sites.astype(np.int64))
        heights.append(float(cl.sigma_hat[c]))
    return ProgenyLaw.from_pairs(sets, heights, d)


# ------------------------------------------------------------------ process


@dataclass
class BranchingRun:
    h: np.ndarray
    front_paths: np.ndarray
    distinct_sites: np.ndarray
    progeny_total: np.ndarray  # sum of progeny sizes drawn by each generation

    def rows(self):
        for n in range(self.h.shape[0]):
            yield (n, float(self.h[n]), int(self.front_paths[n]), int(self.distinct_sites[n]))


def run_branching(law: ProgenyLaw, generations: int, seed=None, cap: int = FRONT_CAP,
                  track_sites: bool = True, record=None) -> BranchingRun:
    """Simulate generations ``0..N``; generation 0 is one individual at the origin.

    ``record`` (a list) receives every generation's draws, for replay checks.
    Raises :class:`CapacityError` with ``completed`` = last finished
    generation when a front would exceed ``cap`` individuals.
    """
    if generations < 1:
        raise UsageError("need at least one generation")
    rng = as_rng(seed)
    d = law.d
    sites = np.zeros((1, d), np.int64)
    heights = np.zeros(1)
    h = [0.0]
    paths = [1]
    distinct = [1]
    totals = []
    for n in range(1, generations + 1):
        m = heights.shape[0]
        sizes, offs, s = law.sample(rng, m)
        total = int(sizes.sum())
        totals.append(total)
        if record is not None:
            record.append((sizes.copy(), offs.copy(), s.copy()))
        if total > cap:
            raise CapacityError(f"generation {n} would hold {total} individuals (cap {cap})", completed=n - 1)
        parent = np.repeat(np.arange(m), sizes)
        heights = heights[parent] + s[parent]
        if track_sites:
            sites = sites[parent] + offs
            distinct.append(int(np.unique(sites, axis=0).shape[0]) if total else 0)
        else:
            distinct.append(-1)
        paths.append(total)
        h.append(float(heights.max()) if total else -math.inf)
        if total == 0:
            # extinct: pad the remaining generations
            for _ in range(n + 1, generations + 1):
                h.append(-math.inf)
                paths.append(0)
                distinct.append(0)
                totals.append(0)
            break
    return BranchingRun(np.array(h), np.array(paths, np.int64), np.array(distinct, np.int64),
                        np.array(totals, np.int64))


def replay_max_height(record) -> float:
    """Recompute ``h(N)`` from recorded draws by walking the explicit tree."""
    # each generation's draws are listed in the order of the previous front
    front = [0.0]
    for sizes, _, s in record:
        nxt = []
        for i, hi in enumerate(front):
            nxt.extend([hi + float(s[i])] * int(sizes[i]))
        front = nxt
    return max(front) if front else -math.inf


def exact_max_height_law(law: ProgenyLaw, generations: int) -> dict:
    """Exact law of ``h(N)`` for a finite-atom law (small N)."""
    if law.atoms is None:
        raise UsageError("exact enumeration needs a finite-atom law")
    atoms, probs = law.atoms
    dist = {0.0: 1.0}  # law of the max height k generations below a node
    for _ in range(generations):
        new: dict = {}
        values = sorted(dist)
        cdf = np.cumsum([dist[v] for v in values])
        for (V, s), p in zip(atoms, probs):
            k = len(V)
            # max of k i.i.d. copies, shifted by s
            prev = 0.0
            for v, c in zip(values, cdf):
                mass = c**k - prev**k
                prev = c
                if mass > 0:
                    key = round(s + v, 12)
                    new[key] = new.get(key, 0.0) + p * mass
        dist = new
    return dist


def enumerate_outcomes(law: ProgenyLaw, generations: int) -> dict:
    """Law of ``h(N)`` by exhaustive enumeration of every node's outcome (tiny trees only)."""
    atoms, probs = law.atoms
    out: dict = {}

    def rec(front, n, prob):
        if n == generations:
            key = round(max(front), 12) if front else -math.inf
            out[key] = out.get(key, 0.0) + prob
            return
        for choice in product(range(len(atoms)), repeat=len(front)):
            p = prob
            nxt = []
            for hi, c in zip(front, choice):
                V, s = atoms[c]
                p *= probs[c]
                nxt.extend([hi + s] * len(V))
            if p > 0:
                rec(nxt, n + 1, p)

    rec([0.0], 0, 1.0)
    return out


# ------------------------------------------------------------------ growth constant


def mean_excess_flag(samples, q_lo: float = 0.90, q_hi: float = 0.99) -> bool:
    """Heavy-tail heuristic: mean excess grows by more than 2x between two quantiles."""
    x = np.asarray(samples, float)
    if x.size < 100:
        return False
    a, b = np.quantile(x, [q_lo, q_hi])
    ea = x[x > a] - a
    eb = x[x > b] - b
    if ea.size == 0 or eb.size == 0 or ea.mean() == 0:
        return False
    return bool(eb.mean() > 2.0 * ea.mean())


@dataclass
class GrowthEstimate:
    c_hat: float
    ci: tuple
    slopes: np.ndarray
    heavy_tail: bool
    h: np.ndarray = field(repr=False)
    generations: int = 0


def slope_last_half(h: np.ndarray) -> float:
    n = np.arange(h.shape[0])
    half = n >= h.shape[0] // 2
    if half.sum() < 2 or not np.all(np.isfinite(h[half])):
        return float("nan")
    return float(np.polyfit(n[half], h[half], 1)[0])


def mean_ci(x, level: float = 0.95):
    x = np.asarray(x, float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        return float("nan"), (float("nan"), float("nan"))
    m = float(x.mean())
    if x.size < 2:
        return m, (m, m)
    se = float(x.std(ddof=1) / math.sqrt(x.size))
    q = stats.t.ppf(0.5 + level / 2, x.size - 1)
    return m, (m - q * se, m + q * se)


def estimate_growth_constant(law: ProgenyLaw, generations: int, replications: int, seed=None,
                             cap: int = FRONT_CAP) -> GrowthEstimate:
    """Last-half slope of ``h(n)`` against ``n``, averaged over replications."""
    rng = as_rng(seed)
    probe = law.sample(rng, 5000)
    heavy = mean_excess_flag(probe[2]) or mean_excess_flag(probe[0])
    if heavy:
        warnings.warn("progeny law looks heavy tailed; the growth estimate may be unreliable", stacklevel=2)
    hs = []
    for _ in range(replications):
        run = run_branching(law, generations, rng, cap=cap, track_sites=False)
        hs.append(run.h)
    H = np.array(hs)
    slopes = np.array([slope_last_half(row) for row in H])
    c, ci = mean_ci(slopes)
    return GrowthEstimate(c, ci, slopes, heavy, H, generations)


# ------------------------------------------------------------------ domination


@dataclass
class DominatedLaw:
    """Law ``G`` with survival ``sqrt(Fbar)``, ``F`` the law of ``max(0, X, Y)``.

    ``min(xi, eta)`` of two independent ``G`` draws has law ``F`` exactly.
    """

    atoms: np.ndarray
    F: np.ndarray  # cdf at atoms
    Fbar: np.ndarray
    Gbar: np.ndarray
    X: np.ndarray = field(repr=False)
    Y: np.ndarray = field(repr=False)
    zeta: np.ndarray = field(repr=False)
    low_resolution: bool = False

    def G_inverse(self, u) -> np.ndarray:
        """``inf{x : G(x) >= u}`` with ``G = 1 - Gbar``, i.e. ``F^{-1}(1 - (1-u)^2)``."""
        v = 1.0 - (1.0 - np.asarray(u, float)) ** 2
        k = np.searchsorted(self.F, v, side="left")
        return self.atoms[np.minimum(k, self.atoms.shape[0] - 1)]

    def sample(self, rng, n: int):
        rng = as_rng(rng)
        return self.G_inverse(rng.random(n)), self.G_inverse(rng.random(n))

    def sample_coupled(self, rng, n: int):
        """``(X, Y, xi, eta)`` with ``max(X, Y) <= min(xi, eta)`` on every draw.

        ``(X, Y)`` is an exact draw from the input pairs: given
        ``min(xi, eta) = m`` it is a uniform choice among pairs with
        ``max(0, X, Y) = m``.
        """
        rng = as_rng(rng)
        xi, eta = self.sample(rng, n)
        m = np.minimum(xi, eta)
        order = np.argsort(self.zeta, kind="stable")
        zs = self.zeta[order]
        lo = np.searchsorted(zs, m, "left")
        hi = np.searchsorted(zs, m, "right")
        pick = order[lo + (rng.random(n) * (hi - lo)).astype(np.int64)]
        return self.X[pick], self.Y[pick], xi, eta


def lighttail_dominate(X, Y=None, min_atoms: int = 100) -> DominatedLaw:
    """Build the dominating law from paired samples ``(X, Y)``."""
    X = np.asarray(X, float)
    Y = np.zeros_like(X) if Y is None else np.asarray(Y, float)
    if X.shape != Y.shape or X.ndim != 1 or X.size == 0:
        raise UsageError("X and Y must be nonempty 1-d arrays of equal length")
    zeta = np.maximum(0.0, np.maximum(X, Y))
    atoms, counts = np.unique(zeta, return_counts=True)
    F = np.cumsum(counts) / zeta.size
    F[-1] = 1.0
    Fbar = 1.0 - F
    Fbar[-1] = 0.0
    low = atoms.size < min_atoms
    if low:
        warnings.warn(f"only {atoms.size} distinct atoms; quantile resolution is coarse", stacklevel=2)
    return DominatedLaw(atoms, F, Fbar, np.sqrt(Fbar), X, Y, zeta, low)


@dataclass
class IndependentLaw:
    """``(W, t)``: sup-norm ball of radius ``ceil(xi)`` and height ``eta``, independent."""

    base: ProgenyLaw
    dominated: DominatedLaw
    radius_samples: np.ndarray = field(repr=False)
    law: ProgenyLaw = field(repr=False)

    def sample_coupled(self, rng, n: int):
        """Per draw: ``(V, s)`` from the base law with dominating ``(W radius, t)``."""
        X, Y, xi, eta = self.dominated.sample_coupled(rng, n)
        return X, Y, np.ceil(xi).astype(np.int64), eta


def independentize(law: ProgenyLaw, n_samples: int = 100_000, seed=None, min_atoms: int = 100) -> IndependentLaw:
    """Dominate ``(V, s)`` by independent ``(ball(ceil(xi)), eta)``.

    ``X`` is the sup-norm radius of ``V`` and ``Y = s``; the pair is
    dominated through :func:`lighttail_dominate` on ``n_samples`` draws.
    """
    rng = as_rng(seed)
    sizes, offs, s = law.sample(rng, n_samples)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    rad = np.abs(offs).max(axis=1) if offs.size else np.zeros(0)
    X = np.maximum.reduceat(rad, starts).astype(float) if offs.size else np.zeros(n_samples)
    dom = lighttail_dominate(X, s, min_atoms=min_atoms)

    def radius_sampler(r, m):
        return np.ceil(dom.G_inverse(r.random(m))).astype(np.int64)

    def height_sampler(r, m):
        return dom.G_inverse(r.random(m))

    ind = ProgenyLaw.balls(law.d, radius_sampler, height_sampler)
    return IndependentLaw(law, dom, X, ind)
