"""Marked Poisson rain of random closed sets and their geometry.

Arrivals are stored column-wise in :class:`Rain` (times, centers, shape
codes, per-axis half extents, service heights).  Shapes are closed sets
centered at the origin: cubes, Euclidean balls and axis-aligned boxes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import CapacityError, ConfigurationError, UsageError
from .seeds import as_rng

CUBE, BALL, BOX = 0, 1, 2
KIND_NAMES = {CUBE: "cube", BALL: "ball", BOX: "box"}
KIND_CODES = {v: k for k, v in KIND_NAMES.items()}

# Expected arrival count above which sample_rain refuses to allocate.
MAX_EXPECTED_ARRIVALS = 20_000_000


@dataclass(frozen=True)
class Shape:
    """A closed cube, ball or box centered at the origin."""

    kind: str
    size: float | None = None
    half_extents: tuple | None = None

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise ConfigurationError(f"unknown shape kind {self.kind!r}")
        if self.kind == "box":
            if self.half_extents is None or any(h < 0 for h in self.half_extents):
                raise ConfigurationError("box needs nonnegative half_extents")
        elif self.size is None or self.size < 0:
            raise ConfigurationError(f"{self.kind} needs a nonnegative size")

    @classmethod
    def cube(cls, half_side: float) -> "Shape":
        return cls("cube", size=float(half_side))

    @classmethod
    def ball(cls, radius: float) -> "Shape":
        return cls("ball", size=float(radius))

    @classmethod
    def box(cls, half_extents: Sequence[float]) -> "Shape":
        return cls("box", half_extents=tuple(float(h) for h in half_extents))

    @property
    def code(self) -> int:
        return KIND_CODES[self.kind]

    def extents(self, d: int) -> np.ndarray:
        """Per-axis half widths of the bounding box (radius for balls)."""
        if self.kind == "box":
            if len(self.half_extents) != d:
                raise UsageError(f"box has dimension {len(self.half_extents)}, expected {d}")
            return np.asarray(self.half_extents, dtype=float)
        return np.full(d, self.size, dtype=float)


def diameter(shape: Shape, d: int | None = None) -> float:
    """Euclidean diameter of a shape (``d`` is required for cubes)."""
    if shape.kind == "ball":
        return 2.0 * shape.size
    if shape.kind == "box":
        return 2.0 * math.sqrt(sum(h * h for h in shape.half_extents))
    if d is None:
        raise UsageError("cube diameter needs the dimension d")
    return 2.0 * shape.size * math.sqrt(d)


def diameters(kind: np.ndarray, ext: np.ndarray) -> np.ndarray:
    """Vectorized diameter for column-stored shapes."""
    ext = np.asarray(ext, dtype=float)
    out = 2.0 * np.sqrt(np.sum(ext * ext, axis=1))
    ball = np.asarray(kind) == BALL
    out[ball] = 2.0 * ext[ball, 0]
    return out


def intersects(a: Shape, xa, b: Shape, xb) -> bool:
    """True iff the closed sets ``xa + a`` and ``xb + b`` share a point."""
    xa = np.atleast_1d(np.asarray(xa, dtype=float))
    xb = np.atleast_1d(np.asarray(xb, dtype=float))
    if xa.shape != xb.shape:
        raise UsageError(f"dimension mismatch: {xa.shape[0]} vs {xb.shape[0]}")
    d = xa.shape[0]
    for s in (a, b):
        if s.kind == "box" and len(s.half_extents) != d:
            raise UsageError("box dimension does not match center dimension")
    res = pair_intersects(
        np.array([a.code]), a.extents(d)[None, :], xa[None, :],
        np.array([b.code]), b.extents(d)[None, :], xb[None, :],
    )
    return bool(res[0])


def pair_intersects(ka, ea, xa, kb, eb, xb) -> np.ndarray:
    """Row-wise intersection test for two aligned batches of placed shapes."""
    ka = np.asarray(ka)
    kb = np.asarray(kb)
    diff = np.abs(np.asarray(xa, float) - np.asarray(xb, float))
    ball_a = ka == BALL
    ball_b = kb == BALL
    out = np.all(diff <= ea + eb, axis=1)  # box-box (cubes are boxes)
    both = ball_a & ball_b
    if both.any():
        dist2 = np.sum(diff[both] ** 2, axis=1)
        rad = ea[both, 0] + eb[both, 0]
        out[both] = dist2 <= rad * rad
    mixed = ball_a ^ ball_b
    if mixed.any():
        # distance from the ball center to the box
        r = np.where(ball_a[mixed], ea[mixed, 0], eb[mixed, 0])
        h = np.where(ball_a[mixed, None], eb[mixed], ea[mixed])
        gap = np.maximum(diff[mixed] - h, 0.0)
        out[mixed] = np.sum(gap * gap, axis=1) <= r * r
    return out


def covers(kind, ext, centers, point) -> np.ndarray:
    """Mask of placed shapes containing ``point``."""
    kind = np.asarray(kind)
    diff = np.abs(np.asarray(centers, float) - np.asarray(point, float)[None, :])
    out = np.all(diff <= ext, axis=1)
    ball = kind == BALL
    if ball.any():
        out[ball] = np.sum(diff[ball] ** 2, axis=1) <= ext[ball, 0] ** 2
    return out


# ---------------------------------------------------------------- distributions

_DIST_PARAMS = {
    "deterministic": ("value",),
    "uniform": ("a", "b"),
    "exponential": ("mean",),
    "bounded_pareto": ("alpha", "lo", "hi"),
    "pareto": ("alpha", "scale"),
}


@dataclass(frozen=True)
class Dist:
    """A named nonnegative one-dimensional distribution.

    ``pareto`` is the only heavy-tailed member; it is accepted but flagged
    through :attr:`heavy_tailed`.
    """

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in _DIST_PARAMS:
            raise ConfigurationError(f"unknown distribution {self.name!r}")
        missing = set(_DIST_PARAMS[self.name]) - set(self.params)
        extra = set(self.params) - set(_DIST_PARAMS[self.name])
        if missing or extra:
            raise ConfigurationError(
                f"{self.name} expects parameters {_DIST_PARAMS[self.name]}, got {sorted(self.params)}"
            )
        p = {k: float(v) for k, v in self.params.items()}
        object.__setattr__(self, "params", p)
        ok = {
            "deterministic": lambda: p["value"] >= 0,
            "uniform": lambda: 0 <= p["a"] <= p["b"],
            "exponential": lambda: p["mean"] > 0,
            "bounded_pareto": lambda: p["alpha"] > 0 and 0 < p["lo"] < p["hi"],
            "pareto": lambda: p["alpha"] > 0 and p["scale"] > 0,
        }[self.name]()
        if not ok:
            raise ConfigurationError(f"invalid parameters for {self.name}: {p}")

    @classmethod
    def deterministic(cls, value):
        return cls("deterministic", {"value": value})

    @classmethod
    def uniform(cls, a, b):
        return cls("uniform", {"a": a, "b": b})

    @classmethod
    def exponential(cls, mean):
        return cls("exponential", {"mean": mean})

    @classmethod
    def from_dict(cls, spec) -> "Dist":
        spec = dict(spec)
        name = spec.pop("name", None) or spec.pop("kind", None)
        if name is None:
            raise ConfigurationError("distribution needs a 'name'")
        return cls(name, spec)

    def to_dict(self) -> dict:
        return {"name": self.name, **self.params}

    @property
    def heavy_tailed(self) -> bool:
        return self.name == "pareto"

    def quantile(self, q):
        q = np.asarray(q, dtype=float)
        p = self.params
        if self.name == "deterministic":
            return np.full_like(q, p["value"])
        if self.name == "uniform":
            return p["a"] + q * (p["b"] - p["a"])
        if self.name == "exponential":
            return -p["mean"] * np.log1p(-q)
        if self.name == "bounded_pareto":
            a, lo, hi = p["alpha"], p["lo"], p["hi"]
            ratio = (lo / hi) ** a
            return lo * (1.0 - q * (1.0 - ratio)) ** (-1.0 / a)
        return p["scale"] * (1.0 - q) ** (-1.0 / p["alpha"])

    def sample(self, rng, size) -> np.ndarray:
        if self.name == "deterministic":
            return np.full(size, self.params["value"])
        if self.name == "exponential":
            return rng.exponential(self.params["mean"], size)
        return self.quantile(rng.random(size))

    def mean(self) -> float:
        p = self.params
        if self.name == "deterministic":
            return p["value"]
        if self.name == "uniform":
            return 0.5 * (p["a"] + p["b"])
        if self.name == "exponential":
            return p["mean"]
        if self.name == "bounded_pareto":
            a, lo, hi = p["alpha"], p["lo"], p["hi"]
            if a == 1.0:
                return lo * hi / (hi - lo) * math.log(hi / lo)
            num = lo**a * (hi ** (1 - a) - lo ** (1 - a)) * a / (1 - a)
            return num / (1 - (lo / hi) ** a)
        a = p["alpha"]
        return math.inf if a <= 1 else a * p["scale"] / (a - 1)


@dataclass(frozen=True)
class ShapeDist:
    """Random shape: a kind plus a size law (per-axis i.i.d. for boxes)."""

    kind: str
    size: Dist

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise ConfigurationError(f"unknown shape kind {self.kind!r}")

    @classmethod
    def from_dict(cls, spec) -> "ShapeDist":
        spec = dict(spec)
        return cls(spec["kind"], Dist.from_dict(spec["size"]))

    def to_dict(self):
        return {"kind": self.kind, "size": self.size.to_dict()}

    def sample_extents(self, rng, n: int, d: int) -> np.ndarray:
        if self.kind == "box":
            return self.size.sample(rng, (n, d)).reshape(n, d)
        return np.repeat(self.size.sample(rng, n)[:, None], d, axis=1)

    def reach_quantile(self, q: float, d: int) -> float:
        """Quantile of the largest distance from the center to the shape."""
        s = float(self.size.quantile(q))
        if self.kind == "ball":
            return s
        if self.kind == "cube":
            return s * math.sqrt(d)
        # a box's reach is bounded by its largest half extent times sqrt(d)
        s = float(self.size.quantile(q ** (1.0 / d)))
        return s * math.sqrt(d)


@dataclass(frozen=True)
class RainConfig:
    """Parameters of a Poisson rain sample.

    ``window`` is ``(lo, hi)`` with one entry per axis.  Centers are drawn on
    the window enlarged by ``pad`` on every side so that shapes centered
    outside but reaching into the window are present.  ``pad=None`` uses the
    99.99 % quantile of the shape reach.
    """

    d: int
    lam: float
    window: tuple
    horizon: tuple
    shape: ShapeDist
    sigma: Dist
    pad: float | None = None

    def __post_init__(self):
        if self.d < 1:
            raise ConfigurationError("dimension must be positive")
        if self.lam < 0:
            raise ConfigurationError("intensity must be nonnegative")
        lo, hi = (np.asarray(w, dtype=float).reshape(-1) for w in self.window)
        if lo.shape[0] != self.d or hi.shape[0] != self.d or np.any(hi < lo):
            raise ConfigurationError("window must be (lo, hi) with d entries each, lo <= hi")
        object.__setattr__(self, "window", (tuple(lo), tuple(hi)))
        t0, t1 = map(float, self.horizon)
        if not t0 < t1:
            raise ConfigurationError("horizon must satisfy t0 < t1")
        object.__setattr__(self, "horizon", (t0, t1))
        if self.pad is not None and self.pad < 0:
            raise ConfigurationError("pad must be nonnegative")

    @property
    def effective_pad(self) -> float:
        if self.pad is not None:
            return float(self.pad)
        return self.shape.reach_quantile(0.9999, self.d)

    def padded_window(self):
        pad = self.effective_pad
        lo, hi = (np.asarray(w) for w in self.window)
        return lo - pad, hi + pad

    @property
    def heavy_tailed(self) -> bool:
        return self.shape.size.heavy_tailed or self.sigma.heavy_tailed

    def expected_count(self) -> float:
        lo, hi = self.padded_window()
        t0, t1 = self.horizon
        return self.lam * float(np.prod(hi - lo)) * (t1 - t0)


@dataclass(frozen=True)
class Arrival:
    id: int
    t: float
    x: tuple
    shape: Shape
    sigma: float


class Rain:
    """Column store of arrivals sorted by ``(t, id)``.

    ``u`` holds one independent uniform per arrival; keeping the arrivals
    with ``u < lam / lam_max`` realizes the coupled thinning used for
    monotone comparisons across intensities.
    """

    def __init__(self, t, x, kind, ext, sigma, ids=None, u=None, d=None, meta=None):
        self.t = np.asarray(t, dtype=float).reshape(-1)
        n = self.t.shape[0]
        if d is None:
            d = np.asarray(x).shape[1] if np.asarray(x).ndim == 2 else 1
        self.d = int(d)
        self.x = np.asarray(x, dtype=float).reshape(n, self.d)
        self.kind = np.asarray(kind, dtype=np.int8).reshape(n)
        self.ext = np.asarray(ext, dtype=float).reshape(n, self.d)
        self.sigma = np.asarray(sigma, dtype=float).reshape(n)
        self.ids = np.arange(n, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
        self.u = np.zeros(n) if u is None else np.asarray(u, dtype=float)
        self.meta = dict(meta or {})
        if np.any(self.sigma < 0):
            raise UsageError("service heights must be nonnegative")

    def __len__(self):
        return self.t.shape[0]

    def __iter__(self) -> Iterator[Arrival]:
        for k in range(len(self)):
            yield self.arrival(k)

    def arrival(self, k: int) -> Arrival:
        code = int(self.kind[k])
        if code == BOX:
            shape = Shape.box(self.ext[k])
        else:
            shape = Shape(KIND_NAMES[code], size=float(self.ext[k, 0]))
        return Arrival(int(self.ids[k]), float(self.t[k]), tuple(self.x[k]), shape, float(self.sigma[k]))

    @classmethod
    def empty(cls, d: int) -> "Rain":
        return cls(np.empty(0), np.empty((0, d)), np.empty(0), np.empty((0, d)), np.empty(0), d=d)

    @classmethod
    def from_arrivals(cls, arrivals: Sequence[Arrival], d: int) -> "Rain":
        arrivals = list(arrivals)
        if not arrivals:
            return cls.empty(d)
        return cls(
            [a.t for a in arrivals],
            [a.x for a in arrivals],
            [a.shape.code for a in arrivals],
            [a.shape.extents(d) for a in arrivals],
            [a.sigma for a in arrivals],
            ids=[a.id for a in arrivals],
            d=d,
        )

    def is_sorted(self) -> bool:
        if len(self) < 2:
            return True
        dt = np.diff(self.t)
        return bool(np.all((dt > 0) | ((dt == 0) & (np.diff(self.ids) > 0))))

    def sorted(self) -> "Rain":
        order = np.lexsort((self.ids, self.t))
        return self.take(order)

    def take(self, idx) -> "Rain":
        idx = np.asarray(idx)
        return Rain(self.t[idx], self.x[idx], self.kind[idx], self.ext[idx], self.sigma[idx],
                    ids=self.ids[idx], u=self.u[idx], d=self.d, meta=self.meta)

    def replace(self, **cols) -> "Rain":
        cur = dict(t=self.t, x=self.x, kind=self.kind, ext=self.ext, sigma=self.sigma,
                   ids=self.ids, u=self.u)
        cur.update(cols)
        return Rain(cur["t"], cur["x"], cur["kind"], cur["ext"], cur["sigma"],
                    ids=cur["ids"], u=cur["u"], d=self.d, meta=self.meta)

    def thin(self, lam: float, lam_max: float) -> "Rain":
        """Coupled thinning to intensity ``lam`` of a sample drawn at ``lam_max``."""
        if lam_max <= 0:
            return self.take(np.zeros(0, dtype=int))
        if lam > lam_max:
            raise UsageError("cannot thin to a larger intensity")
        return self.take(np.flatnonzero(self.u < lam / lam_max))

    def reach(self) -> np.ndarray:
        """Per-arrival bounding-box half widths (equal to ``ext``)."""
        return self.ext


def sample_rain(cfg: RainConfig, seed=None, max_expected: float = MAX_EXPECTED_ARRIVALS) -> Rain:
    """Draw a marked Poisson rain sample on the padded window and horizon.

    The count is Poisson with mean ``lam * vol(padded window) * (t1 - t0)``;
    centers and times are uniform, marks i.i.d. and independent of positions.
    Callers needing edge-free interiors should pass a ``pad`` at least the
    largest shape reach.
    """
    rng = as_rng(seed)
    mean = cfg.expected_count()
    if mean > max_expected:
        raise CapacityError(f"expected {mean:.3g} arrivals exceeds the budget of {max_expected:.3g}")
    lo, hi = cfg.padded_window()
    t0, t1 = cfg.horizon
    n = int(rng.poisson(mean)) if mean > 0 else 0
    x = lo + (hi - lo) * rng.random((n, cfg.d))
    t = t0 + (t1 - t0) * rng.random(n)
    ext = cfg.shape.sample_extents(rng, n, cfg.d)
    sigma = cfg.sigma.sample(rng, n)
    u = rng.random(n)
    order = np.argsort(t, kind="stable")
    kind = np.full(n, KIND_CODES[cfg.shape.kind], dtype=np.int8)
    meta = {"heavy_tailed": cfg.heavy_tailed, "pad": cfg.effective_pad}
    return Rain(t[order], x[order], kind, ext[order], sigma[order], u=u[order], d=cfg.d, meta=meta)
