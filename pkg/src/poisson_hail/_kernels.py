"""Hot inner loops, compiled with numba or run as plain numpy.

Set ``POISSON_HAIL_NO_NUMBA=1`` before import to select the numpy path.
Both backends are always importable as :data:`numba_impl` and
:data:`numpy_impl`; the module-level functions dispatch to the active one.
Every kernel performs the same floating-point operations in the same
order on both paths, so results agree bit for bit.
"""
from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("POISSON_HAIL_NO_NUMBA", "").lower() not in ("1", "true", "yes")
BACKEND = "numba" if USE_NUMBA else "numpy"

NEG_INF = -np.inf


# ------------------------------------------------------------------ numba

if HAVE_NUMBA:

    @njit(cache=True)
    def _dag_forward_nb(ptr, idx, init, w):
        n = init.shape[0]
        val = np.empty(n)
        out = np.empty(n)
        for j in range(n):
            m = init[j]
            for k in range(ptr[j], ptr[j + 1]):
                o = out[idx[k]]
                if o > m:
                    m = o
            val[j] = m
            out[j] = m + w[j]
        return val, out

    @njit(cache=True)
    def _dag_backward_nb(ptr, idx, start, w):
        n = w.shape[0]
        reach = np.full(n, -np.inf)
        for j in range(n):
            if start[j]:
                reach[j] = w[j]
        for j in range(n - 1, -1, -1):
            rj = reach[j]
            if rj == -np.inf:
                continue
            for k in range(ptr[j], ptr[j + 1]):
                i = idx[k]
                c = rj + w[i]
                if c > reach[i]:
                    reach[i] = c
        return reach

    @njit(cache=True)
    def _row_deps_nb(v, e, torus, depl, depr):
        w = v.shape[0]
        for i in range(w):
            depl[i] = False
            depr[i] = False
        for i in range(w):
            j = i + 1
            if j == w:
                if not torus:
                    continue
                j = 0
            if v[i] and v[j]:
                if e[i]:
                    depr[i] = True
                else:
                    depl[j] = True
        if torus:
            all_l = True
            all_r = True
            for i in range(w):
                if not depl[i]:
                    all_l = False
                if not depr[i]:
                    all_r = False
            if all_l:
                depl[0] = False
            if all_r:
                depr[w - 1] = False

    @njit(cache=True)
    def _row_passes_nb(base, depl, depr, inc, out, tmp):
        w = base.shape[0]
        s = 0
        while s < w and depl[s]:
            s += 1
        for k in range(w):
            i = (s + k) % w
            b = base[i]
            if depl[i] and k > 0:
                c = tmp[(i - 1) % w] + inc[i]
                if c > b:
                    b = c
            tmp[i] = b
        s = w - 1
        while s >= 0 and depr[s]:
            s -= 1
        for k in range(w):
            i = (s - k) % w
            b = base[i]
            if depr[i] and k > 0:
                c = out[(i + 1) % w] + inc[i]
                if c > b:
                    b = c
            out[i] = b
        for i in range(w):
            if tmp[i] > out[i]:
                out[i] = tmp[i]

    @njit(cache=True)
    def _grid_growth_nb(v, e, torus, hist):
        B, N, w = v.shape
        keep = hist.shape[1] > 1
        depl = np.zeros(w, dtype=np.bool_)
        depr = np.zeros(w, dtype=np.bool_)
        base = np.empty(w)
        inc = np.ones(w)
        tmp = np.empty(w)
        for b in range(B):
            cur = np.zeros(w)
            new = np.empty(w)
            if keep:
                hist[b, 0, :] = 0.0
            for n in range(N):
                for i in range(w):
                    if v[b, n, i]:
                        m = cur[i]
                        if i > 0 or torus:
                            x = cur[(i - 1) % w]
                            if x > m:
                                m = x
                        if i < w - 1 or torus:
                            x = cur[(i + 1) % w]
                            if x > m:
                                m = x
                        base[i] = m + 1.0
                    else:
                        base[i] = cur[i]
                _row_deps_nb(v[b, n], e[b, n], torus, depl, depr)
                _row_passes_nb(base, depl, depr, inc, new, tmp)
                cur, new = new, cur
                if keep:
                    hist[b, n + 1, :] = cur
            if not keep:
                hist[b, 0, :] = cur

    @njit(cache=True)
    def _grid_service_nb(v, e, sigma, torus, hist):
        B, N, w = v.shape
        keep = hist.shape[1] > 1
        depl = np.zeros(w, dtype=np.bool_)
        depr = np.zeros(w, dtype=np.bool_)
        base = np.empty(w)
        tmp = np.empty(w)
        for b in range(B):
            cur = np.zeros(w)
            new = np.empty(w)
            if keep:
                hist[b, 0, :] = 0.0
            for n in range(N):
                for i in range(w):
                    r = cur[i] - 1.0
                    if r < 0.0:
                        r = 0.0
                    if v[b, n, i]:
                        if i > 0 or torus:
                            x = cur[(i - 1) % w] - 1.0
                            if x > r:
                                r = x
                        if i < w - 1 or torus:
                            x = cur[(i + 1) % w] - 1.0
                            if x > r:
                                r = x
                        base[i] = r + sigma[b, n, i]
                    else:
                        base[i] = r
                _row_deps_nb(v[b, n], e[b, n], torus, depl, depr)
                _row_passes_nb(base, depl, depr, sigma[b, n], new, tmp)
                cur, new = new, cur
                if keep:
                    hist[b, n + 1, :] = cur
            if not keep:
                hist[b, 0, :] = cur

    @njit(cache=True)
    def _grid_target_paths_nb(v, e, torus, origin, out):
        B, N, w = v.shape
        depl = np.zeros(w, dtype=np.bool_)
        depr = np.zeros(w, dtype=np.bool_)
        base = np.empty(w)
        inc = np.ones(w)
        tmp = np.empty(w)
        for b in range(B):
            cur = np.empty(w)
            new = np.empty(w)
            for n in range(N):
                for i in range(w):
                    col = 1.0 if v[b, n, i] else 0.0
                    if n == 0:
                        base[i] = col if i == origin else -np.inf
                    elif v[b, n, i]:
                        m = cur[i]
                        if i > 0 or torus:
                            x = cur[(i - 1) % w]
                            if x > m:
                                m = x
                        if i < w - 1 or torus:
                            x = cur[(i + 1) % w]
                            if x > m:
                                m = x
                        base[i] = m + 1.0
                    else:
                        base[i] = cur[i]
                _row_deps_nb(v[b, n], e[b, n], torus, depl, depr)
                _row_passes_nb(base, depl, depr, inc, new, tmp)
                cur, new = new, cur
                out[b, n] = cur[origin]

    @njit(cache=True)
    def _uf_find(parent, a):
        r = a
        while parent[r] != r:
            r = parent[r]
        while parent[a] != r:
            nxt = parent[a]
            parent[a] = r
            a = nxt
        return r

    @njit(cache=True)
    def _clump_cover_nb(radius, shape, offsets, cheb):
        # radius: flat int array, 0 = no ball; offsets: (K, d) with Chebyshev norms cheb
        d = shape.shape[0]
        n = radius.shape[0]
        strides = np.empty(d, dtype=np.int64)
        acc = 1
        for a in range(d - 1, -1, -1):
            strides[a] = acc
            acc *= shape[a]
        parent = np.arange(n)
        rmax = 0
        for p in range(n):
            if radius[p] > rmax:
                rmax = radius[p]
        coord = np.empty(d, dtype=np.int64)
        for p in range(n):
            rp = radius[p]
            if rp == 0:
                continue
            rem = p
            for a in range(d):
                coord[a] = rem // strides[a]
                rem -= coord[a] * strides[a]
            for k in range(offsets.shape[0]):
                if cheb[k] > rp + rmax:
                    continue
                q = 0
                inside = True
                for a in range(d):
                    c = coord[a] + offsets[k, a]
                    if c < 0 or c >= shape[a]:
                        inside = False
                        break
                    q += c * strides[a]
                if not inside or q <= p:
                    continue
                rq = radius[q]
                if rq == 0 or cheb[k] > rp + rq:
                    continue
                ra = _uf_find(parent, p)
                rb = _uf_find(parent, q)
                if ra < rb:
                    parent[rb] = ra
                elif rb < ra:
                    parent[ra] = rb
        roots = np.full(n, -1, dtype=np.int64)
        cover = np.full(n, -1, dtype=np.int64)
        for p in range(n):
            rp = radius[p]
            if rp == 0:
                continue
            r = _uf_find(parent, p)
            roots[p] = r
            rem = p
            for a in range(d):
                coord[a] = rem // strides[a]
                rem -= coord[a] * strides[a]
            for k in range(offsets.shape[0]):
                if cheb[k] > rp:
                    continue
                q = 0
                inside = True
                for a in range(d):
                    c = coord[a] + offsets[k, a]
                    if c < 0 or c >= shape[a]:
                        inside = False
                        break
                    q += c * strides[a]
                if inside:
                    cover[q] = r
        return roots, cover


# ------------------------------------------------------------------ numpy


def _segment_max(values, ptr):
    n = ptr.shape[0] - 1
    out = np.full(n, -np.inf)
    nonempty = ptr[1:] > ptr[:-1]
    if values.size and nonempty.any():
        out[nonempty] = np.maximum.reduceat(values, ptr[:-1][nonempty])
    return out


def _dag_forward_np(ptr, idx, init, w):
    out = init + w
    while True:
        m = np.maximum(init, _segment_max(out[idx], ptr))
        new = m + w
        if np.array_equal(new, out):
            return m, out
        out = new


def _dag_backward_np(ptr, idx, start, w):
    n = w.shape[0]
    src = np.repeat(np.arange(n), np.diff(ptr))
    seed = np.where(start, w, -np.inf)
    reach = seed.copy()
    while True:
        new = seed.copy()
        live = reach[src] > -np.inf
        np.maximum.at(new, idx[live], reach[src[live]] + w[idx[live]])
        if np.array_equal(new, reach):
            return reach
        reach = new


def _row_deps_np(v, e, torus):
    # v, e: (B, w) boolean
    right = np.roll(v, -1, axis=1)
    depr = v & right & e
    depl = np.roll(v & right & ~e, 1, axis=1)
    if not torus:
        depr[:, -1] = False
        depl[:, 0] = False
    else:
        ring_l = depl.all(axis=1)
        ring_r = depr.all(axis=1)
        depl[ring_l, 0] = False
        depr[ring_r, -1] = False
    return depl, depr


def _row_passes_np(base, depl, depr, inc):
    """Chain resolution vectorized over the batch axis, sequential over sites."""
    B, w = base.shape
    rows = np.arange(B)
    s = np.argmin(depl, axis=1)  # first site without a left dependency
    left = np.empty_like(base)
    prev = None
    for k in range(w):
        i = (s + k) % w
        b = base[rows, i]
        if k > 0:
            c = prev + inc[rows, i]
            b = np.where(depl[rows, i] & (c > b), c, b)
        left[rows, i] = b
        prev = b
    s = w - 1 - np.argmin(depr[:, ::-1], axis=1)
    right = np.empty_like(base)
    for k in range(w):
        i = (s - k) % w
        b = base[rows, i]
        if k > 0:
            c = prev + inc[rows, i]
            b = np.where(depr[rows, i] & (c > b), c, b)
        right[rows, i] = b
        prev = b
    return np.maximum(left, right)


def _neighbor_max(cur, torus, transform=None):
    vals = cur if transform is None else transform(cur)
    lft = np.roll(vals, 1, axis=1)
    rgt = np.roll(vals, -1, axis=1)
    if not torus:
        lft[:, 0] = -np.inf
        rgt[:, -1] = -np.inf
    return np.maximum(vals, np.maximum(lft, rgt))


def _grid_growth_np(v, e, torus, hist):
    B, N, w = v.shape
    keep = hist.shape[1] > 1
    cur = np.zeros((B, w))
    inc = np.ones((B, w))
    if keep:
        hist[:, 0, :] = 0.0
    for n in range(N):
        vn = v[:, n, :].astype(bool)
        base = np.where(vn, _neighbor_max(cur, torus) + 1.0, cur)
        depl, depr = _row_deps_np(vn, e[:, n, :].astype(bool), torus)
        cur = _row_passes_np(base, depl, depr, inc)
        if keep:
            hist[:, n + 1, :] = cur
    if not keep:
        hist[:, 0, :] = cur


def _grid_service_np(v, e, sigma, torus, hist):
    B, N, w = v.shape
    keep = hist.shape[1] > 1
    cur = np.zeros((B, w))
    if keep:
        hist[:, 0, :] = 0.0
    for n in range(N):
        vn = v[:, n, :].astype(bool)
        res = np.maximum(cur - 1.0, 0.0)
        lft = np.roll(cur, 1, axis=1) - 1.0
        rgt = np.roll(cur, -1, axis=1) - 1.0
        if not torus:
            lft[:, 0] = -np.inf
            rgt[:, -1] = -np.inf
        busy = np.maximum(np.maximum(res, lft), rgt)
        base = np.where(vn, busy + sigma[:, n, :], res)
        depl, depr = _row_deps_np(vn, e[:, n, :].astype(bool), torus)
        cur = _row_passes_np(base, depl, depr, sigma[:, n, :])
        if keep:
            hist[:, n + 1, :] = cur
    if not keep:
        hist[:, 0, :] = cur


def _grid_target_paths_np(v, e, torus, origin, out):
    B, N, w = v.shape
    inc = np.ones((B, w))
    cur = None
    for n in range(N):
        vn = v[:, n, :].astype(bool)
        if n == 0:
            base = np.full((B, w), -np.inf)
            base[:, origin] = vn[:, origin].astype(float)
        else:
            base = np.where(vn, _neighbor_max(cur, torus) + 1.0, cur)
        depl, depr = _row_deps_np(vn, e[:, n, :].astype(bool), torus)
        cur = _row_passes_np(base, depl, depr, inc)
        out[:, n] = cur[:, origin]


def _clump_cover_np(radius, shape, offsets, cheb):
    n = radius.shape[0]
    shape = tuple(int(s) for s in shape)
    grid = radius.reshape(shape)
    occ = np.flatnonzero(radius > 0)
    roots = np.full(n, -1, dtype=np.int64)
    cover = np.full(n, -1, dtype=np.int64)
    if occ.size == 0:
        return roots, cover
    coords = np.array(np.unravel_index(occ, shape)).T
    rmax = int(radius.max())
    src, dst = [], []
    for k in range(offsets.shape[0]):
        if cheb[k] > 2 * rmax:
            continue
        q = coords + offsets[k]
        inside = np.all((q >= 0) & (q < np.array(shape)), axis=1)
        p_in = occ[inside]
        q_flat = np.ravel_multi_index(tuple(q[inside].T), shape)
        ok = (q_flat > p_in) & (radius[q_flat] > 0) & (radius[p_in] + radius[q_flat] >= cheb[k])
        src.append(p_in[ok])
        dst.append(q_flat[ok])
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    pos = np.full(n, -1, dtype=np.int64)
    pos[occ] = np.arange(occ.size)
    g = coo_matrix((np.ones(src.size), (pos[src], pos[dst])), shape=(occ.size, occ.size))
    _, comp = connected_components(g, directed=False)
    first = np.full(comp.max() + 1, n, dtype=np.int64)
    np.minimum.at(first, comp, occ)
    roots[occ] = first[comp]
    for k in range(offsets.shape[0]):
        if cheb[k] > rmax:
            continue
        q = coords + offsets[k]
        sel = np.all((q >= 0) & (q < np.array(shape)), axis=1) & (radius[occ] >= cheb[k])
        q_flat = np.ravel_multi_index(tuple(q[sel].T), shape)
        cover[q_flat] = roots[occ[sel]]
    del grid
    return roots, cover


# ------------------------------------------------------------------ dispatch

numpy_impl = SimpleNamespace(
    name="numpy",
    dag_forward=_dag_forward_np,
    dag_backward=_dag_backward_np,
    grid_growth=_grid_growth_np,
    grid_service=_grid_service_np,
    grid_target_paths=_grid_target_paths_np,
    clump_cover=_clump_cover_np,
)

if HAVE_NUMBA:
    numba_impl = SimpleNamespace(
        name="numba",
        dag_forward=_dag_forward_nb,
        dag_backward=_dag_backward_nb,
        grid_growth=_grid_growth_nb,
        grid_service=_grid_service_nb,
        grid_target_paths=_grid_target_paths_nb,
        clump_cover=_clump_cover_nb,
    )
else:  # pragma: no cover
    numba_impl = None

_active = numba_impl if USE_NUMBA else numpy_impl


def chebyshev_offsets(r: int, d: int):
    """All integer offsets with sup-norm at most ``r`` and their norms."""
    axes = [np.arange(-r, r + 1)] * d
    offs = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d).astype(np.int64)
    return offs, np.abs(offs).max(axis=1).astype(np.int64)


def dag_forward(ptr, idx, init, w, impl=None):
    """Longest-path sweep: ``val[j] = max(init[j], out[pred])``, ``out = val + w``."""
    impl = impl or _active
    return impl.dag_forward(ptr, idx, np.ascontiguousarray(init, float), np.ascontiguousarray(w, float))


def dag_backward(ptr, idx, start, w, impl=None):
    """Heaviest path weight from any start node down to each node (inclusive)."""
    impl = impl or _active
    return impl.dag_backward(ptr, idx, np.ascontiguousarray(start, bool), np.ascontiguousarray(w, float))


def grid_growth(v, e, torus, keep_history=True, impl=None):
    impl = impl or _active
    v = np.ascontiguousarray(v, dtype=np.bool_)
    e = np.ascontiguousarray(e, dtype=np.bool_)
    B, N, w = v.shape
    hist = np.empty((B, N + 1 if keep_history else 1, w))
    impl.grid_growth(v, e, bool(torus), hist)
    return hist


def grid_service(v, e, sigma, torus, keep_history=True, impl=None):
    impl = impl or _active
    v = np.ascontiguousarray(v, dtype=np.bool_)
    e = np.ascontiguousarray(e, dtype=np.bool_)
    sigma = np.ascontiguousarray(sigma, dtype=float)
    B, N, w = v.shape
    hist = np.empty((B, N + 1 if keep_history else 1, w))
    impl.grid_service(v, e, sigma, bool(torus), hist)
    return hist


def grid_target_paths(v, e, torus, origin, impl=None):
    impl = impl or _active
    v = np.ascontiguousarray(v, dtype=np.bool_)
    e = np.ascontiguousarray(e, dtype=np.bool_)
    B, N, w = v.shape
    out = np.empty((B, N))
    impl.grid_target_paths(v, e, bool(torus), int(origin), out)
    return out


def clump_cover(radius_grid, impl=None):
    """Union-find over overlapping sup-norm balls on a finite box.

    Returns per-site ``roots`` (component id of the ball centered there, -1
    if none) and ``cover`` (component id of any ball covering the site, -1
    if uncovered).  Component ids are the smallest flat index of a ball
    center in the component, so both backends label identically.
    """
    impl = impl or _active
    radius_grid = np.asarray(radius_grid, dtype=np.int64)
    shape = np.array(radius_grid.shape, dtype=np.int64)
    rmax = int(radius_grid.max()) if radius_grid.size else 0
    offsets, cheb = chebyshev_offsets(2 * rmax, radius_grid.ndim)
    roots, cover = impl.clump_cover(radius_grid.reshape(-1).copy(), shape, offsets, cheb)
    return roots.reshape(radius_grid.shape), cover.reshape(radius_grid.shape)
