"""Precedence DAG of intersecting arrivals; growth heights and FIFO workloads.

Arrival ``j`` must wait for every earlier arrival whose footprint meets its
own.  Heights (cold ground) and completion times (unit-rate FIFO service)
are longest-path quantities on that DAG; fields at arbitrary points are
read off the last covering arrival.  A query at time ``t`` includes
arrivals with ``t_j <= t``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import UsageError
from .rain import BALL, Rain, covers, pair_intersects

_PAIR_CHUNK = 2_000_000


@dataclass
class PrecedenceDag:
    """``pred(j)`` in CSR form: ``idx[ptr[j]:ptr[j+1]]`` (ascending)."""

    n: int
    ptr: np.ndarray
    idx: np.ndarray
    cell_size: float

    def pred(self, j: int) -> np.ndarray:
        return self.idx[self.ptr[j]:self.ptr[j + 1]]

    @property
    def n_edges(self) -> int:
        return int(self.idx.shape[0])

    def pred_sets(self) -> list:
        return [set(self.pred(j).tolist()) for j in range(self.n)]


@dataclass
class ScheduleRecord:
    ids: np.ndarray
    t: np.ndarray
    base: np.ndarray
    top: np.ndarray
    start: np.ndarray
    done: np.ndarray

    def rows(self):
        for k in range(self.ids.shape[0]):
            yield (int(self.ids[k]), self.t[k], self.base[k], self.top[k], self.start[k], self.done[k])


def _cell_keys(cells):
    lo = cells.min(axis=0) - 1
    span = cells.max(axis=0) - lo + 2
    if float(np.prod(span.astype(float))) > 2.0**62:
        return None, None, None
    mult = np.ones_like(span)
    for a in range(span.shape[0] - 2, -1, -1):
        mult[a] = mult[a + 1] * span[a + 1]
    return (cells - lo) @ mult, mult, lo


def candidate_pairs(x, ext, cell_size):
    """Index pairs ``(i, j)``, ``i < j``, whose bounding boxes may overlap."""
    n, d = x.shape
    cells = np.floor(x / cell_size).astype(np.int64)
    keys, mult, _ = _cell_keys(cells)
    if keys is None:  # absurd window/cell ratio: fall back to one bucket
        keys = np.zeros(n, dtype=np.int64)
        mult = np.zeros(d, dtype=np.int64)
    order = np.argsort(keys, kind="stable")
    skeys = keys[order]
    offsets = np.stack(np.meshgrid(*[np.arange(-1, 2)] * d, indexing="ij"), -1).reshape(-1, d)
    shifts = np.unique(offsets @ mult)
    out_i, out_j = [], []
    for s in shifts:
        lo = np.searchsorted(skeys, keys + s, "left")
        hi = np.searchsorted(skeys, keys + s, "right")
        cnt = hi - lo
        total = int(cnt.sum())
        if total == 0:
            continue
        # expand in chunks of rows to bound memory
        csum = np.cumsum(cnt)
        start = 0
        while start < n:
            base = csum[start - 1] if start else 0
            stop = int(np.searchsorted(csum, base + _PAIR_CHUNK, "right"))
            stop = max(stop, start + 1)
            c = cnt[start:stop]
            a = np.repeat(np.arange(start, stop), c)
            first = np.repeat(lo[start:stop], c)
            within = np.arange(a.shape[0]) - np.repeat(np.cumsum(c) - c, c)
            b = order[first + within]
            keep = b < a
            out_i.append(b[keep])
            out_j.append(a[keep])
            start = stop
    if not out_i:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(out_i), np.concatenate(out_j)


def build_dag(rain: Rain) -> PrecedenceDag:
    """Predecessor lists by spatial hashing; cell size = widest bounding box."""
    if not rain.is_sorted():
        raise UsageError("arrivals must be sorted by (t, id)")
    n = len(rain)
    if n == 0:
        return PrecedenceDag(0, np.zeros(1, np.int64), np.zeros(0, np.int64), 1.0)
    width = 2.0 * float(rain.ext.max())
    cell = width if width > 0 else 1.0
    i, j = candidate_pairs(rain.x, rain.ext, cell)
    if i.size:
        ok = pair_intersects(rain.kind[i], rain.ext[i], rain.x[i], rain.kind[j], rain.ext[j], rain.x[j])
        i, j = i[ok], j[ok]
    order = np.lexsort((i, j))
    i, j = i[order], j[order]
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(j, minlength=n), out=ptr[1:])
    return PrecedenceDag(n, ptr, i.astype(np.int64), cell)


def all_pairs_dag(rain: Rain) -> PrecedenceDag:
    """O(n^2) reference construction."""
    n = len(rain)
    i, j = np.triu_indices(n, 1)
    ok = pair_intersects(rain.kind[i], rain.ext[i], rain.x[i], rain.kind[j], rain.ext[j], rain.x[j])
    i, j = i[ok], j[ok]
    order = np.lexsort((i, j))
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(j[order], minlength=n), out=ptr[1:])
    return PrecedenceDag(n, ptr, i[order].astype(np.int64), np.inf)


def growth_heights(dag: PrecedenceDag, rain: Rain):
    """``base_j = max top over pred(j)`` (0 if none), ``top_j = base_j + sigma_j``."""
    return _kernels.dag_forward(dag.ptr, dag.idx, np.zeros(dag.n), rain.sigma)


def fifo_completion(dag: PrecedenceDag, rain: Rain):
    """``start_j = max(t_j, done over pred(j))``, ``done_j = start_j + sigma_j``."""
    return _kernels.dag_forward(dag.ptr, dag.idx, rain.t, rain.sigma)


def schedule(rain: Rain, dag: PrecedenceDag | None = None) -> ScheduleRecord:
    dag = build_dag(rain) if dag is None else dag
    base, top = growth_heights(dag, rain)
    start, done = fifo_completion(dag, rain)
    return ScheduleRecord(rain.ids.copy(), rain.t.copy(), base, top, start, done)


fifo_schedule = schedule


def query(rain: Rain, rec: ScheduleRecord, points, times):
    """Height ``H`` and residual workload ``W`` at each ``(x, t)`` query."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    times = np.broadcast_to(np.asarray(times, dtype=float), (points.shape[0],))
    H = np.zeros(points.shape[0])
    W = np.zeros(points.shape[0])
    if len(rain) == 0:
        return H, W
    for q in range(points.shape[0]):
        k = int(np.searchsorted(rain.t, times[q], "right"))
        if k == 0:
            continue
        m = covers(rain.kind[:k], rain.ext[:k], rain.x[:k], points[q])
        if m.any():
            H[q] = rec.top[:k][m].max()
            W[q] = max(0.0, float((rec.done[:k][m] - times[q]).max()))
    return H, W


# ------------------------------------------------------------------ backward


def backward_paths(rain: Rain, dag: PrecedenceDag, x, t0: float = 0.0):
    """Heaviest-path weights feeding the arrivals that cover ``x`` by ``t0``.

    ``P[i]`` is the largest total height of a precedence chain that starts at
    arrival ``i`` and ends at an arrival covering ``x`` with ``t_j <= t0``
    (``-inf`` if none).  Restricting the input to arrivals after ``-s``
    only removes chain starts, so every backward quantity is a running max.
    """
    k = int(np.searchsorted(rain.t, t0, "right"))
    start = np.zeros(len(rain), dtype=bool)
    if k:
        start[:k] = covers(rain.kind[:k], rain.ext[:k], rain.x[:k], np.asarray(x, float))
    return _kernels.dag_backward(dag.ptr, dag.idx, start, rain.sigma)


def _running_backward(rain, values, horizons, t0):
    cut = t0 - np.asarray(horizons, dtype=float)
    order = np.argsort(-rain.t, kind="stable")
    run = np.maximum.accumulate(np.concatenate([[-np.inf], values[order]]))
    # number of arrivals with t_i >= cut
    cnt = np.searchsorted(-rain.t[order], -cut, "right")
    return run[cnt]


def suffix_dag(dag: PrecedenceDag, k0: int) -> PrecedenceDag:
    """Induced DAG on arrivals ``k0, k0+1, ...`` (indices shifted by ``k0``)."""
    lo = dag.ptr[k0]
    keep = dag.idx[lo:] >= k0
    sub_j = np.repeat(np.arange(dag.n - k0), np.diff(dag.ptr[k0:]))[keep]
    ptr = np.zeros(dag.n - k0 + 1, dtype=np.int64)
    np.cumsum(np.bincount(sub_j, minlength=dag.n - k0), out=ptr[1:])
    return PrecedenceDag(dag.n - k0, ptr, dag.idx[lo:][keep] - k0, dag.cell_size)


def _profile(rain, x, horizons, dag, t0, method, field):
    dag = build_dag(rain) if dag is None else dag
    horizons = np.asarray(horizons, dtype=float)
    if method == "backward":
        P = backward_paths(rain, dag, x, t0)
        if field == "W":
            P = np.where(P > -np.inf, rain.t - t0 + P, -np.inf)
        return np.maximum(_running_backward(rain, P, horizons, t0), 0.0)
    if method != "truncate":
        raise UsageError(f"unknown method {method!r}")
    k1 = int(np.searchsorted(rain.t, t0, "right"))
    cover = np.zeros(len(rain), dtype=bool)
    cover[:k1] = covers(rain.kind[:k1], rain.ext[:k1], rain.x[:k1], np.asarray(x, float))
    out = np.zeros(horizons.shape[0])
    for q, s in enumerate(horizons):
        k0 = int(np.searchsorted(rain.t, t0 - s, "left"))
        m = cover[k0:]
        if not m.any():
            continue
        sub = suffix_dag(dag, k0)
        if field == "W":
            _, done = _kernels.dag_forward(sub.ptr, sub.idx, rain.t[k0:], rain.sigma[k0:])
            out[q] = max(0.0, float(done[m].max()) - t0)
        else:
            _, top = _kernels.dag_forward(sub.ptr, sub.idx, np.zeros(sub.n), rain.sigma[k0:])
            out[q] = float(top[m].max())
    return out


def loynes_profile(rain: Rain, x, horizons, dag: PrecedenceDag | None = None, t0: float = 0.0,
                   method: str = "truncate"):
    """Workload at ``(x, t0)`` when only arrivals in ``[t0 - s, t0]`` are kept, per ``s``.

    ``method="truncate"`` re-runs the forward schedule on each restricted
    input; ``"backward"`` uses one reverse longest-path pass and a running
    max (faster, equal up to floating-point summation order).
    """
    return _profile(rain, x, horizons, dag, t0, method, "W")


def backward_heights(rain: Rain, x, horizons, dag: PrecedenceDag | None = None, t0: float = 0.0,
                     method: str = "backward"):
    """Height at ``(x, t0)`` built only from arrivals in ``[t0 - s, t0]``, per ``s``."""
    return _profile(rain, x, horizons, dag, t0, method, "H")


def truncated_workload(rain: Rain, x, s: float, t0: float = 0.0) -> float:
    """Reference for :func:`loynes_profile`: rebuild the schedule on the restricted input."""
    keep = np.flatnonzero((rain.t >= t0 - s) & (rain.t <= t0))
    sub = rain.take(keep)
    rec = schedule(sub)
    return float(query(sub, rec, np.atleast_2d(x), t0)[1][0])


# ------------------------------------------------------------------ oracle


def _witness(ka, ea, xa, kb, eb, xb):
    """A point inside both closed shapes, away from their boundaries when possible."""
    if ka != BALL and kb != BALL:
        lo = np.maximum(xa - ea, xb - eb)
        hi = np.minimum(xa + ea, xb + eb)
        return 0.5 * (lo + hi)
    if ka == BALL and kb == BALL:
        v = xb - xa
        dist = float(np.sqrt(v @ v))
        if dist == 0.0:
            return xa.copy()
        ra, rb = ea[0], eb[0]
        lo = max(0.0, dist - rb)
        hi = min(dist, ra)
        return xa + v * (0.5 * (lo + hi) / dist)
    if ka == BALL:
        ka, ea, xa, kb, eb, xb = kb, eb, xb, ka, ea, xa
    # a is a box, b a ball: clamp the ball center into the box, then nudge inwards
    c = np.clip(xb, xa - ea, xa + ea)
    slack = eb[0] - float(np.sqrt(np.sum((c - xb) ** 2)))
    v = xa - c
    norm = float(np.sqrt(v @ v))
    if norm == 0.0 or slack <= 0.0:
        return c
    beta = min(0.5, 0.5 * slack / norm)
    return c + beta * v


class DirectRecursion:
    """Literal field recursion evaluated point by point (small inputs only).

    The height at ``y`` just before arrival ``k`` is the height of the last
    earlier arrival ``tau`` covering ``y``: its own height plus the sup of the
    field over its footprint just before ``tau``.  That sup is attained at
    witness points of the footprint intersections, which are evaluated by the
    same recursion.  No DAG is used.
    """

    def __init__(self, rain: Rain):
        self.rain = rain
        self.n = len(rain)
        self._h = {}
        self._w = {}
        self._witnesses = {}

    def _last_cover(self, y, k):
        r = self.rain
        if k == 0:
            return -1
        m = covers(r.kind[:k], r.ext[:k], r.x[:k], y)
        hits = np.flatnonzero(m)
        return int(hits[-1]) if hits.size else -1

    def _points(self, tau):
        pts = self._witnesses.get(tau)
        if pts is None:
            r = self.rain
            pts = []
            for i in range(tau):
                ok = pair_intersects(r.kind[[i]], r.ext[[i]], r.x[[i]], r.kind[[tau]], r.ext[[tau]], r.x[[tau]])[0]
                if ok:
                    pts.append(_witness(int(r.kind[tau]), r.ext[tau], r.x[tau], int(r.kind[i]), r.ext[i], r.x[i]))
            self._witnesses[tau] = pts
        return pts

    def height(self, y, k):
        """Height at ``y`` produced by the first ``k`` arrivals."""
        key = (tuple(np.asarray(y, float)), k)
        if key in self._h:
            return self._h[key]
        tau = self._last_cover(np.asarray(y, float), k)
        if tau < 0:
            val = 0.0
        else:
            sup = 0.0
            for w in self._points(tau):
                sup = max(sup, self.height(w, tau))
            val = self.rain.sigma[tau] + sup
        self._h[key] = val
        return val

    def epoch(self, y, k):
        """Time at which ``y`` is cleared of the work of the first ``k`` arrivals.

        Same recursion as the residual workload, written for ``t + W`` so
        that the floating-point operations match the forward schedule.
        """
        key = (tuple(np.asarray(y, float)), k)
        if key in self._w:
            return self._w[key]
        tau = self._last_cover(np.asarray(y, float), k)
        if tau < 0:
            val = -np.inf
        else:
            ttau = self.rain.t[tau]
            sup = ttau
            for w in self._points(tau):
                sup = max(sup, self.epoch(w, tau))
            val = sup + self.rain.sigma[tau]
        self._w[key] = val
        return val

    def workload(self, y, k, s):
        """Residual workload at ``y`` and time ``s`` from the first ``k`` arrivals."""
        return max(0.0, self.epoch(y, k) - s)

    def at(self, x, t):
        k = int(np.searchsorted(self.rain.t, t, "right"))
        return self.height(x, k), self.workload(x, k, float(t))


# ------------------------------------------------------------------ monotonicity


@dataclass
class MonotonicityResult:
    ok: bool
    witness: tuple | None = None

    def __bool__(self):
        return self.ok


def _relation_ok(base: Rain, pert: Rain, relation: str) -> bool:
    if relation == "superset":
        if len(pert) < len(base):
            return False
        rows = {(float(t), tuple(x), int(k), tuple(e), float(s))
                for t, x, k, e, s in zip(pert.t, pert.x, pert.kind, pert.ext, pert.sigma)}
        return all((float(t), tuple(x), int(k), tuple(e), float(s)) in rows
                   for t, x, k, e, s in zip(base.t, base.x, base.kind, base.ext, base.sigma))
    if len(base) != len(pert):
        return False
    b = np.argsort(base.ids)
    p = np.argsort(pert.ids)
    if not np.array_equal(base.ids[b], pert.ids[p]):
        return False
    same_place = np.array_equal(base.x[b], pert.x[p]) and np.array_equal(base.kind[b], pert.kind[p])
    if relation == "earlier":
        return (same_place and np.array_equal(base.ext[b], pert.ext[p])
                and np.array_equal(base.sigma[b], pert.sigma[p]) and bool(np.all(pert.t[p] <= base.t[b])))
    if relation == "enlarged":
        return (same_place and np.array_equal(base.t[b], pert.t[p])
                and bool(np.all(pert.ext[p] >= base.ext[b])) and bool(np.all(pert.sigma[p] >= base.sigma[b])))
    raise UsageError(f"unknown relation {relation!r}")


def monotonicity_check(base: Rain, perturbed: Rain, relation: str, points, times) -> MonotonicityResult:
    """Pointwise ``H(perturbed) >= H(base)`` on a query grid.

    ``relation`` is ``"superset"`` (added arrivals), ``"earlier"`` (same
    arrivals, advanced times) or ``"enlarged"`` (bigger shapes and/or
    heights).  Workloads are compared too for the relations that keep
    arrival times.
    """
    if not _relation_ok(base, perturbed, relation):
        raise UsageError(f"inputs are not related by {relation!r}")
    pert = perturbed if perturbed.is_sorted() else perturbed.sorted()
    hb, wb = query(base, schedule(base), points, times)
    hp, wp = query(pert, schedule(pert), points, times)
    bad = hp < hb
    if relation != "earlier":
        bad |= wp < wb
    if bad.any():
        q = int(np.flatnonzero(bad)[0])
        pts = np.atleast_2d(points)
        return MonotonicityResult(False, (tuple(pts[q]), float(np.broadcast_to(times, (pts.shape[0],))[q])))
    return MonotonicityResult(True)
