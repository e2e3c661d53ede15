"""Lattice and slot discretizations of a continuous rain sample.

Model 1 is the continuous rain.  Model 2 replaces each footprint by the
lattice cube of half side ``floor(diameter) + 1`` centered at ``floor(x)``.
Model 3 moves every arrival of slot ``[n-1, n)`` to time ``n-1`` keeping
the continuous order.  Model 4 merges the arrivals sharing a site and slot
into one cube (largest half side, summed height).  Model 5 is the clump
recursion of :mod:`poisson_hail.clumps` on the Model 4 cells.

A lattice cube of half side ``R`` at ``z`` covers the continuous point
``a`` when ``|floor(a) - z|_inf <= R``; heights of Models 2-5 at ``x`` are
read at the site ``floor(x)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clumps import SlotField, find_clumps, model5_step
from .errors import ChainViolation
from .precedence import query, schedule
from .rain import CUBE, Rain, diameters

MODEL_NAMES = ("model1", "model2", "model3", "model4", "model5")


@dataclass
class LatticeRain:
    """Lattice arrivals in processing order."""

    z: np.ndarray
    t: np.ndarray
    slot: np.ndarray
    half_side: np.ndarray
    sigma: np.ndarray
    tie_rank: np.ndarray
    ids: np.ndarray

    def __len__(self):
        return self.t.shape[0]

    @property
    def d(self) -> int:
        return self.z.shape[1]

    def as_rain(self) -> Rain:
        """Closed cubes at integer centers; same intersections as the lattice cubes."""
        n = len(self)
        ext = np.repeat(self.half_side[:, None].astype(float), self.d, axis=1)
        return Rain(self.t, self.z.astype(float), np.full(n, CUBE), ext, self.sigma,
                    ids=np.arange(n), d=self.d)

    def rows(self):
        for k in range(len(self)):
            yield tuple(int(a) for a in self.z[k]) + (int(self.slot[k]), int(self.half_side[k]),
                                                      float(self.sigma[k]), float(self.tie_rank[k]))


@dataclass
class AggregatedCells:
    """One merged cube per occupied (site, slot), ordered by (slot, first tie rank)."""

    z: np.ndarray
    slot: np.ndarray
    R_max: np.ndarray
    sigma_sum: np.ndarray
    M: np.ndarray
    first_rank: np.ndarray

    def __len__(self):
        return self.slot.shape[0]

    @property
    def d(self) -> int:
        return self.z.shape[1]

    def as_rain(self) -> Rain:
        n = len(self)
        ext = np.repeat(self.R_max[:, None].astype(float), self.d, axis=1)
        return Rain((self.slot - 1).astype(float), self.z.astype(float), np.full(n, CUBE), ext,
                    self.sigma_sum, ids=np.arange(n), d=self.d)


def slot_index(t) -> np.ndarray:
    """Slot ``n`` with ``t`` in ``[n-1, n)``."""
    return np.floor(np.asarray(t, dtype=float)).astype(np.int64) + 1


def to_model2(rain: Rain) -> LatticeRain:
    z = np.floor(rain.x).astype(np.int64)
    half = np.floor(diameters(rain.kind, rain.ext)).astype(np.int64) + 1
    return LatticeRain(z, rain.t.copy(), slot_index(rain.t), half, rain.sigma.copy(), rain.t.copy(),
                       rain.ids.copy())


def to_model3(lat: LatticeRain) -> LatticeRain:
    order = np.lexsort((lat.tie_rank, lat.slot))
    return LatticeRain(lat.z[order], (lat.slot[order] - 1).astype(float), lat.slot[order],
                       lat.half_side[order], lat.sigma[order], lat.tie_rank[order], lat.ids[order])


def to_model4(lat3: LatticeRain) -> AggregatedCells:
    d = lat3.d
    if len(lat3) == 0:
        return AggregatedCells(np.zeros((0, d), np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64),
                               np.zeros(0), np.zeros(0, np.int64), np.zeros(0))
    keys = np.column_stack([lat3.slot, lat3.z])
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    k = uniq.shape[0]
    R = np.zeros(k, np.int64)
    np.maximum.at(R, inv, lat3.half_side)
    # sum in arrival order within each cell
    order = np.argsort(inv, kind="stable")
    starts = np.searchsorted(inv[order], np.arange(k))
    S = np.add.reduceat(lat3.sigma[order], starts)
    M = np.bincount(inv, minlength=k)
    first = np.full(k, np.inf)
    np.minimum.at(first, inv, lat3.tie_rank)
    o = np.lexsort((first, uniq[:, 0]))
    return AggregatedCells(uniq[o, 1:], uniq[o, 0], R[o], S[o], M[o], first[o])


def containment(rain: Rain, lat: LatticeRain):
    """Per-arrival footprint checks against the Model 2 cube.

    Returns ``(lattice_ok, continuum_ok)``: the first tests that every point
    of the footprint's bounding box lands in a lattice cell of the cube
    (``z - R <= a < z + R + 1``); the second tests literal inclusion in the
    closed cube ``z + [-R, R]^d``, which can fail for diameters below 1.
    """
    R = lat.half_side[:, None].astype(float)
    lo = rain.x - rain.ext
    hi = rain.x + rain.ext
    zl = lat.z.astype(float)
    lattice_ok = np.all((lo >= zl - R) & (hi < zl + R + 1.0), axis=1)
    continuum_ok = np.all((lo >= zl - R) & (hi <= zl + R), axis=1)
    return lattice_ok, continuum_ok


def slot_fields(cells: AggregatedCells, lo, shape, n_slots: int) -> list:
    """Model 5 input: one :class:`SlotField` per slot ``1..n_slots`` on the box ``lo + [0, shape)``."""
    fields = [SlotField.empty(shape, lo) for _ in range(n_slots)]
    for k in range(len(cells)):
        n = int(cells.slot[k])
        if 1 <= n <= n_slots:
            f = fields[n - 1]
            i = f.index(cells.z[k])
            f.alpha[i] = True
            f.R_max[i] = cells.R_max[k]
            f.sigma_sum[i] = cells.sigma_sum[k]
    return fields


@dataclass
class ChainReport:
    points: np.ndarray
    times: np.ndarray
    heights: np.ndarray  # (n_queries, 5)
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def margins(self) -> np.ndarray:
        return np.diff(self.heights, axis=1)

    def violations_by_link(self) -> dict:
        out = {f"{MODEL_NAMES[i]}<={MODEL_NAMES[i + 1]}": 0 for i in range(4)}
        for v in self.violations:
            out[v[0]] += 1
        return out


def chain_heights(rain: Rain, points, times):
    """Heights of Models 1-5 at each query ``(x, t)`` on one shared sample."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    times = np.broadcast_to(np.asarray(times, dtype=float), (points.shape[0],)).copy()
    sites = np.floor(points)
    out = np.zeros((points.shape[0], 5))
    out[:, 0] = query(rain, schedule(rain), points, times)[0]
    m2 = to_model2(rain)
    r2 = m2.as_rain()
    out[:, 1] = query(r2, schedule(r2), sites, times)[0]
    m3 = to_model3(m2)
    r3 = m3.as_rain()
    out[:, 2] = query(r3, schedule(r3), sites, times)[0]
    cells = to_model4(m3)
    r4 = cells.as_rain()
    out[:, 3] = query(r4, schedule(r4), sites, times)[0]
    # Model 5 on a box holding every cube and query site
    q_slot = slot_index(times)
    n_slots = int(max(q_slot.max(initial=0), cells.slot.max(initial=0)))
    zs = [sites.astype(np.int64)]
    if len(cells):
        zs += [cells.z - cells.R_max[:, None], cells.z + cells.R_max[:, None]]
    allz = np.concatenate(zs)
    lo = allz.min(axis=0) - 1
    shape = tuple(allz.max(axis=0) - lo + 2)
    fields = slot_fields(cells, lo, shape, n_slots)
    cur = np.zeros(shape)
    idx = tuple((sites.astype(np.int64) - lo).T)
    rows = {0: cur}
    for n, f in enumerate(fields, start=1):
        cur = model5_step(cur, find_clumps(f))
        rows[n] = cur
    for q in range(points.shape[0]):
        out[q, 4] = rows[int(q_slot[q])][tuple(a[q] for a in idx)] if q_slot[q] > 0 else 0.0
    return out


def chain_check(rain: Rain, points, times, strict: bool = False) -> ChainReport:
    """Compare the five models link by link on one sample.

    Every violation of ``H_k <= H_{k+1}`` is recorded with its query point;
    ``strict=True`` raises :class:`ChainViolation` on the first one.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    times = np.broadcast_to(np.asarray(times, dtype=float), (points.shape[0],)).copy()
    H = chain_heights(rain, points, times)
    report = ChainReport(points, times, H)
    for i in range(4):
        bad = np.flatnonzero(H[:, i] > H[:, i + 1])
        link = f"{MODEL_NAMES[i]}<={MODEL_NAMES[i + 1]}"
        for q in bad:
            report.violations.append((link, tuple(points[q]), float(times[q]), float(H[q, i]), float(H[q, i + 1])))
    if strict and report.violations:
        raise ChainViolation(f"{len(report.violations)} chain violations", witness=report.violations[0])
    return report


def query_grid(window, rng, per_cell: int = 10):
    """Lattice points of the window plus ``per_cell`` uniform points in each unit cell."""
    lo = np.floor(np.asarray(window[0], float)).astype(np.int64)
    hi = np.ceil(np.asarray(window[1], float)).astype(np.int64)
    axes = [np.arange(a, b) for a, b in zip(lo, hi)]
    cells = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, lo.shape[0]).astype(float)
    rand = np.repeat(cells, per_cell, axis=0) + rng.random((cells.shape[0] * per_cell, lo.shape[0]))
    return np.concatenate([cells, rand])
