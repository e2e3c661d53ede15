"""Bernoulli hail on a one-dimensional grid of servers.

A customer of type ``i`` needs servers ``i - 1/2`` and ``i + 1/2`` for one
time unit (or ``sigma``).  Per slot ``n`` and type ``i`` a customer arrives
with probability ``p`` (``v[n, i]``); when neighbours ``i`` and ``i + 1``
both arrive, ``e[n, i]`` says which one came first: ``True`` (``"r"``) means
the right one has priority, so ``i`` waits for ``i + 1``.

Arrays are indexed ``[row, site]`` with row ``k`` holding slot ``k + 1``.
State arrays have one extra leading row for the empty initial state.
"""
from __future__ import annotations

import graphlib
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from .branching import mean_ci
from .errors import ChainViolation, ConfigurationError, UsageError
from .rain import Dist
from .seeds import as_rng

DEFAULT_WIDTH = 1024


@dataclass
class GridInput:
    v: np.ndarray
    e: np.ndarray
    sigma: np.ndarray | None = None
    torus: bool = True
    u: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=bool)
        self.e = np.asarray(self.e, dtype=bool)
        if self.v.ndim != 2 or self.v.shape != self.e.shape:
            raise UsageError("v and e must be (N, width) arrays of equal shape")
        if self.sigma is not None:
            self.sigma = np.asarray(self.sigma, dtype=float)
            if self.sigma.shape != self.v.shape or np.any(self.sigma < 0):
                raise UsageError("sigma must match v and be nonnegative")
        if self.torus and self.width < 3:
            raise UsageError("a torus needs at least 3 sites")

    @property
    def N(self) -> int:
        return self.v.shape[0]

    @property
    def width(self) -> int:
        return self.v.shape[1]

    def heights(self) -> np.ndarray:
        return np.ones(self.v.shape) if self.sigma is None else self.sigma

    def with_p(self, p: float) -> "GridInput":
        """Coupled re-thinning: same uniforms, new arrival probability."""
        if self.u is None:
            raise UsageError("input carries no uniforms to re-threshold")
        return GridInput(self.u < p, self.e, self.sigma, self.torus, self.u)


def sample_grid(width: int, N: int, p: float, seed=None, torus: bool = True,
                sigma: Dist | None = None) -> GridInput:
    if not 0.0 <= p <= 1.0:
        raise ConfigurationError("p must lie in [0, 1]")
    rng = as_rng(seed)
    u = rng.random((N, width))
    e = rng.random((N, width)) < 0.5
    s = None if sigma is None else sigma.sample(rng, (N, width)).reshape(N, width)
    return GridInput(u < p, e, s, torus, u)


def sample_batch(B: int, width: int, N: int, p: float, seed=None):
    rng = as_rng(seed)
    return rng.random((B, N, width)) < p, rng.random((B, N, width)) < 0.5


# ------------------------------------------------------------------ recursions


def simulate_growth(inp: GridInput, impl=None) -> np.ndarray:
    """Heights ``H[n, i]`` for ``n = 0..N`` (row 0 is the empty start)."""
    return _kernels.grid_growth(inp.v[None], inp.e[None], inp.torus, impl=impl)[0]


def simulate_service(inp: GridInput, impl=None) -> np.ndarray:
    """Residual workloads ``W[n, i]`` for ``n = 0..N``."""
    return _kernels.grid_service(inp.v[None], inp.e[None], inp.heights()[None], inp.torus, impl=impl)[0]


def row_spatial_edges(v_row, e_row, torus: bool):
    """Directed same-slot edges ``a -> b`` (``a`` served after ``b``) among black nodes.

    On a torus a row where every edge points the same way round closes a
    directed cycle; the edge across the wrap (between sites ``w-1`` and
    ``0``) is then dropped.
    """
    w = len(v_row)
    edges = []
    for i in range(w):
        j = i + 1
        wrap = j == w
        if wrap and not torus:
            continue
        j %= w
        if v_row[i] and v_row[j]:
            edges.append(((i, j) if e_row[i] else (j, i), wrap))
    graph = {i: set() for i in range(w)}
    for (a, b), _ in edges:
        graph[a].add(b)
    try:
        tuple(graphlib.TopologicalSorter(graph).static_order())
    except graphlib.CycleError:
        edges = [(ab, wrap) for ab, wrap in edges if not wrap]
    return [ab for ab, _ in edges]


def max_height_path_oracle(inp: GridInput) -> np.ndarray:
    """Largest path height from each node of the precedence graph (memoized DP).

    Black nodes weigh 1, white 0.  Black nodes have spatial edges to the
    neighbours they wait for and time edges to the three nodes below;
    white nodes keep only the vertical time edge.
    """
    N, w = inp.v.shape
    spatial = [row_spatial_edges(inp.v[n], inp.e[n], inp.torus) for n in range(N)]
    succ = {}
    for n in range(N):
        for i in range(w):
            out = []
            if n > 0:
                if inp.v[n, i]:
                    for j in (i - 1, i, i + 1):
                        if inp.torus:
                            out.append((j % w, n - 1))
                        elif 0 <= j < w:
                            out.append((j, n - 1))
                else:
                    out.append((i, n - 1))
            succ[(i, n)] = out
        for a, b in spatial[n]:
            succ[(a, n)].append((b, n))

    @lru_cache(maxsize=None)
    def value(i, n):
        best = 0.0
        for j, m in succ[(i, n)]:
            best = max(best, value(j, m))
        return (1.0 if inp.v[n, i] else 0.0) + best

    out = np.zeros((N + 1, w))
    for n in range(N):
        for i in range(w):
            out[n + 1, i] = value(i, n)
    return out


def service_schedule_oracle(inp: GridInput) -> np.ndarray:
    """Explicit FIFO schedule on the two-server customers.

    Customers of slot ``n`` arrive at time ``n``; within a slot they are
    served in an order compatible with the priority edges.  Each server
    handles its customers one at a time in that order.
    """
    N, w = inp.v.shape
    sig = inp.heights()
    n_servers = w if inp.torus else w + 1
    free = np.zeros(n_servers)
    last_done = np.full(w, -np.inf)
    W = np.zeros((N + 1, w))
    for n in range(N):
        t = float(n + 1)
        graph = {i: set() for i in range(w) if inp.v[n, i]}
        for a, b in row_spatial_edges(inp.v[n], inp.e[n], inp.torus):
            graph[a].add(b)
        for i in graphlib.TopologicalSorter(graph).static_order():
            # servers left and right of type i
            if inp.torus:
                s1, s2 = (i - 1) % w, i
            else:
                s1, s2 = i, i + 1
            start = max(t, free[s1], free[s2])
            done = start + sig[n, i]
            free[s1] = free[s2] = done
            last_done[i] = done
        W[n + 1] = np.maximum(last_done - t, 0.0)
    return W


def arrivals_count(inp: GridInput) -> np.ndarray:
    """``beta[n, i]``: number of arrivals of type ``i`` in slots ``1..n``."""
    return np.vstack([np.zeros((1, inp.width)), np.cumsum(inp.v, axis=0)])


# ------------------------------------------------------------------ growth rate


@dataclass
class GammaEstimate:
    p: float
    N: int
    gamma: float
    ci: tuple
    se: float
    H_over_n: float
    H_ci: tuple
    H_se: float
    h: np.ndarray = field(repr=False)
    H: np.ndarray = field(repr=False)


def _se(x):
    x = np.asarray(x, float)
    return float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


def gamma_estimate(p: float, N: int, replications: int, seed=None, width: int = DEFAULT_WIDTH,
                   torus: bool = True, batch: int = 8, impl=None) -> GammaEstimate:
    """``h_N / N`` (paths from ``(0, N)`` down to ``(0, 1)``) and ``H_N / N`` at site 0."""
    rng = as_rng(seed)
    hs, Hs = [], []
    done = 0
    while done < replications:
        b = min(batch, replications - done)
        u = rng.random((b, N, width))
        e = rng.random((b, N, width)) < 0.5
        v = u < p
        hs.append(_kernels.grid_target_paths(v, e, torus, 0, impl=impl)[:, -1])
        Hs.append(_kernels.grid_growth(v, e, torus, keep_history=False, impl=impl)[:, 0, 0])
        done += b
    h = np.concatenate(hs) / N
    H = np.concatenate(Hs) / N
    g, ci = mean_ci(h)
    Hm, Hci = mean_ci(H)
    return GammaEstimate(p, N, g, ci, _se(h), Hm, Hci, _se(H), h, H)


def gamma_curve(ps, N: int, replications: int, seed=None, width: int = DEFAULT_WIDTH, torus: bool = True,
                impl=None) -> list:
    """Coupled estimates: every ``p`` thresholds the same uniforms."""
    rng = as_rng(seed)
    u = rng.random((replications, N, width))
    e = rng.random((replications, N, width)) < 0.5
    out = []
    for p in ps:
        v = u < p
        h = _kernels.grid_target_paths(v, e, torus, 0, impl=impl)[:, -1] / N
        H = _kernels.grid_growth(v, e, torus, keep_history=False, impl=impl)[:, 0, 0] / N
        g, ci = mean_ci(h)
        Hm, Hci = mean_ci(H)
        out.append(GammaEstimate(float(p), N, g, ci, _se(h), Hm, Hci, _se(H), h, H))
    return out


# ------------------------------------------------------------------ Loynes


@dataclass
class LoynesGrid:
    values: np.ndarray  # (K, width): W at slot 0 started empty at -n, n = 1..K
    monotone: bool
    witness: tuple | None
    plateau: bool
    stationary: np.ndarray


def loynes_grid(p: float, K: int, width: int, seed=None, torus: bool = False, strict: bool = False,
                inp: GridInput | None = None, eps: float = 0.01, impl=None) -> LoynesGrid:
    """Workload row at slot 0 when the system starts empty ``n`` slots earlier.

    One input on slots ``-K+1..0`` is shared by every start time, so the
    rows must grow with ``n`` site by site.
    """
    inp = inp or sample_grid(width, K, p, seed, torus)
    K = inp.N
    v = np.repeat(inp.v[None], K, axis=0)
    for b in range(K):
        v[b, : K - (b + 1)] = False  # start b keeps the last b+1 slots
    e = np.repeat(inp.e[None], K, axis=0)
    s = np.repeat(inp.heights()[None], K, axis=0)
    vals = _kernels.grid_service(v, e, s, inp.torus, keep_history=False, impl=impl)[:, 0, :]
    dec = np.argwhere(np.diff(vals, axis=0) < 0)
    witness = (int(dec[0][1]), int(dec[0][0]) + 2) if dec.size else None
    if strict and witness is not None:
        raise ChainViolation("Loynes sequence decreased", witness=witness)
    q = max(1, K // 4)
    last, ref = vals[-1], vals[-1 - q] if K > q else vals[0]
    plateau = bool(np.all(last - ref <= eps * np.maximum(last, 1e-300)))
    return LoynesGrid(vals, witness is None, witness, plateau, vals[-1].copy())


def regeneration_scan(row, origin: int | None = None):
    """Distances from ``origin`` to the nearest idle site on each side.

    Returns ``(right, left, censored)`` where ``right = min{i >= 0: W^i = 0}``
    and ``left = max{i <= 0: W^i = 0}`` in coordinates relative to the
    origin; a side without an idle site in the window is ``None`` and sets
    ``censored``.
    """
    row = np.asarray(row, float)
    origin = row.shape[0] // 2 if origin is None else origin
    right = np.flatnonzero(row[origin:] == 0)
    left = np.flatnonzero(row[: origin + 1][::-1] == 0)
    r = int(right[0]) if right.size else None
    l = -int(left[0]) if left.size else None
    return r, l, r is None or l is None


# ------------------------------------------------------------------ threshold


@dataclass
class P0Bracket:
    lo: float
    hi: float
    estimates: list
    plateau_rates: dict


def p0_estimate(ps, N: int, replications: int, seed=None, width: int = DEFAULT_WIDTH,
                loynes_K: int | None = None, loynes_width: int = 64, loynes_reps: int = 10, impl=None) -> P0Bracket:
    """Bracket of ``sup{p : gamma(p) <= 1}`` on a grid of ``p``.

    ``lo`` is the largest grid value whose interval lies at or below 1,
    ``hi`` the smallest whose interval lies above 1 (``inf`` if none).
    """
    ps = np.sort(np.asarray(ps, float))
    if np.any((ps <= 0) | (ps >= 1)):
        raise ConfigurationError("grid must lie in (0, 1)")
    est = gamma_curve(ps, N, replications, seed, width, impl=impl)
    lo, hi = 0.0, math.inf
    for g in est:
        if g.ci[1] <= 1.0:
            lo = max(lo, g.p)
        if g.ci[0] > 1.0:
            hi = min(hi, g.p)
    rates = {}
    if loynes_K:
        rng = as_rng(seed)
        for p in ps:
            ok = [loynes_grid(p, loynes_K, loynes_width, rng, impl=impl).plateau for _ in range(loynes_reps)]
            rates[float(p)] = float(np.mean(ok))
    return P0Bracket(lo, hi, est, rates)
