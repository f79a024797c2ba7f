"""Marked point processes in the plane.

Configurations are immutable: positions and radii are stored in read-only
numpy arrays, and every operation returns a new configuration.  Samplers
are pure functions of their inputs and seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
from scipy.spatial import cKDTree

from .rng import SeedLike, as_generator, derive, split

DIM = 2
MAX_REJECTION_BATCHES = 100_000
_BATCH = 256


# ---------------------------------------------------------------------------
# windows


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle ``[lo[0], hi[0]] x [lo[1], hi[1]]``."""

    lo: tuple[float, float]
    hi: tuple[float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != DIM or len(hi) != DIM:
            raise ValueError("Box corners must be 2-vectors")
        if not all(math.isfinite(v) for v in lo + hi):
            raise ValueError("Box corners must be finite")
        if not (hi[0] > lo[0] and hi[1] > lo[1]):
            raise ValueError(f"degenerate box {lo} {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def unit(cls) -> "Box":
        return cls((0.0, 0.0), (1.0, 1.0))

    @classmethod
    def centered(cls, center, half_size: float) -> "Box":
        cx, cy = center
        return cls((cx - half_size, cy - half_size), (cx + half_size, cy + half_size))

    @property
    def area(self) -> float:
        return (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])

    @property
    def diameter(self) -> float:
        return math.hypot(self.hi[0] - self.lo[0], self.hi[1] - self.lo[1])

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.lo[0] + self.hi[0]), 0.5 * (self.lo[1] + self.hi[1]))

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        return (
            (p[:, 0] >= self.lo[0]) & (p[:, 0] <= self.hi[0])
            & (p[:, 1] >= self.lo[1]) & (p[:, 1] <= self.hi[1])
        )

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random((n, 2))
        return np.asarray(self.lo) + u * (np.asarray(self.hi) - np.asarray(self.lo))

    def dilate(self, center, factor: float) -> "Box":
        cx, cy = center
        return Box(
            (factor * (self.lo[0] - cx), factor * (self.lo[1] - cy)),
            (factor * (self.hi[0] - cx), factor * (self.hi[1] - cy)),
        )

    def intersect(self, other: "Box") -> "Box | None":
        lo = (max(self.lo[0], other.lo[0]), max(self.lo[1], other.lo[1]))
        hi = (min(self.hi[0], other.hi[0]), min(self.hi[1], other.hi[1]))
        if hi[0] <= lo[0] or hi[1] <= lo[1]:
            return None
        return Box(lo, hi)

    def expand(self, margin: float) -> "Box":
        return Box((self.lo[0] - margin, self.lo[1] - margin), (self.hi[0] + margin, self.hi[1] + margin))

    def inradius_from(self, p) -> float:
        """Distance from an interior point to the boundary."""
        x, y = p
        return min(x - self.lo[0], self.hi[0] - x, y - self.lo[1], self.hi[1] - y)


@dataclass(frozen=True)
class Ball:
    """Closed disk window."""

    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        if len(c) != DIM or not all(math.isfinite(v) for v in c):
            raise ValueError("Ball center must be a finite 2-vector")
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"degenerate ball radius {self.radius}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def area(self) -> float:
        return math.pi * self.radius**2

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        d2 = (p[:, 0] - self.center[0]) ** 2 + (p[:, 1] - self.center[1]) ** 2
        return d2 <= self.radius**2 * (1 + 1e-12)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random((n, 2))
        r = self.radius * np.sqrt(u[:, 0])
        t = 2 * np.pi * u[:, 1]
        return np.column_stack([self.center[0] + r * np.cos(t), self.center[1] + r * np.sin(t)])

    def dilate(self, center, factor: float) -> "Ball":
        return Ball(
            (factor * (self.center[0] - center[0]), factor * (self.center[1] - center[1])),
            factor * self.radius,
        )

    def bounding_box(self) -> Box:
        return Box.centered(self.center, self.radius)

    def inradius_from(self, p) -> float:
        return self.radius - math.hypot(p[0] - self.center[0], p[1] - self.center[1])


Window = Union[Box, Ball]


# ---------------------------------------------------------------------------
# marks and configurations


@dataclass(frozen=True)
class Mark:
    kind: str = "none"
    radius: float | None = None

    def __post_init__(self):
        if self.kind == "none":
            if self.radius is not None:
                raise ValueError("unmarked points carry no radius")
        elif self.kind == "disk-radius":
            if self.radius is None or not (self.radius > 0 and math.isfinite(self.radius)):
                raise ValueError(f"disk radius must be positive, got {self.radius}")
        else:
            raise ValueError(f"unknown mark kind {self.kind!r}")

    @classmethod
    def disk(cls, radius: float) -> "Mark":
        return cls("disk-radius", float(radius))


NO_MARK = Mark()


@dataclass(frozen=True)
class MarkedPoint:
    position: tuple[float, float]
    mark: Mark = NO_MARK

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        if len(pos) != DIM or not all(math.isfinite(v) for v in pos):
            raise ValueError(f"position must be a finite 2-vector, got {self.position}")
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True, eq=False)
class PointConfiguration:
    """Finite marked point set observed in ``window``.

    ``radii`` is ``None`` for unmarked configurations, otherwise an array of
    grain radii aligned with ``positions``.
    """

    positions: np.ndarray
    window: Window
    radii: np.ndarray | None = None
    _checked: bool = field(default=True, repr=False)

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        radii = None
        if self.radii is not None:
            radii = np.array(self.radii, dtype=float).reshape(-1)
            if radii.shape[0] != pos.shape[0]:
                raise ValueError("radii and positions differ in length")
            if np.any(~(radii > 0)) or not np.all(np.isfinite(radii)):
                raise ValueError("grain radii must be positive and finite")
            radii.setflags(write=False)
        if self._checked and pos.shape[0]:
            if not np.all(self.window.contains(pos)):
                raise ValueError("configuration has points outside its window")
            if np.unique(pos, axis=0).shape[0] != pos.shape[0]:
                raise ValueError("configuration has duplicate positions")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "radii", radii)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def marked(self) -> bool:
        return self.radii is not None

    @property
    def points(self) -> list[MarkedPoint]:
        if self.radii is None:
            return [MarkedPoint(tuple(p)) for p in self.positions]
        return [MarkedPoint(tuple(p), Mark.disk(r)) for p, r in zip(self.positions, self.radii)]

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.positions if len(self) else np.zeros((0, 2)))

    def mark_of(self, i: int) -> Mark:
        return NO_MARK if self.radii is None else Mark.disk(float(self.radii[i]))

    def index_of(self, position) -> int | None:
        if not len(self):
            return None
        d, j = self.tree.query(np.asarray(position, dtype=float))
        return int(j) if d == 0.0 else None

    def same_points(self, other: "PointConfiguration") -> bool:
        """Set equality of marked points (order-insensitive)."""
        return _canonical(self) == _canonical(other)


def _canonical(cfg: PointConfiguration) -> list[tuple]:
    if cfg.radii is None:
        return sorted((float(x), float(y)) for x, y in cfg.positions)
    return sorted((float(x), float(y), float(r)) for (x, y), r in zip(cfg.positions, cfg.radii))


def empty_configuration(window: Window, marked: bool = False) -> PointConfiguration:
    return PointConfiguration(np.zeros((0, 2)), window, np.zeros(0) if marked else None)


# ---------------------------------------------------------------------------
# mark laws and densities


@dataclass(frozen=True)
class MarkDistribution:
    """Law of the grain radius attached to each point.

    family is one of ``none``, ``fixed``, ``pareto`` (survival
    ``(s/scale)**-exponent`` for ``s >= scale``) or ``uniform``.
    """

    family: str = "none"
    radius: float | None = None
    scale: float | None = None
    exponent: float | None = None
    low: float | None = None
    high: float | None = None

    def __post_init__(self):
        f = self.family
        if f == "none":
            return
        if f == "fixed":
            _positive(self.radius, "radius")
        elif f == "pareto":
            _positive(self.scale, "scale")
            _positive(self.exponent, "exponent")
            if self.exponent <= 2:
                raise ValueError("pareto exponent must exceed 2")
        elif f == "uniform":
            _positive(self.low, "low")
            _positive(self.high, "high")
            if self.high <= self.low:
                raise ValueError("uniform radius law needs low < high")
        else:
            raise ValueError(f"unknown mark family {f!r}")

    @classmethod
    def none(cls) -> "MarkDistribution":
        return cls("none")

    @classmethod
    def fixed(cls, radius: float) -> "MarkDistribution":
        return cls("fixed", radius=float(radius))

    @classmethod
    def pareto(cls, scale: float, exponent: float) -> "MarkDistribution":
        return cls("pareto", scale=float(scale), exponent=float(exponent))

    @classmethod
    def uniform(cls, low: float, high: float) -> "MarkDistribution":
        return cls("uniform", low=float(low), high=float(high))

    @property
    def marked(self) -> bool:
        return self.family != "none"

    @property
    def max_radius(self) -> float:
        """Essential supremum of the radius (``inf`` for heavy tails)."""
        return {"none": 0.0, "fixed": self.radius, "pareto": math.inf, "uniform": self.high}[self.family]

    @property
    def mean_radius(self) -> float:
        f = self.family
        if f == "none":
            return 0.0
        if f == "fixed":
            return self.radius
        if f == "pareto":
            q = self.exponent
            return self.scale * q / (q - 1)
        return 0.5 * (self.low + self.high)

    @property
    def mean_area(self) -> float:
        f = self.family
        if f == "none":
            return 0.0
        if f == "fixed":
            return math.pi * self.radius**2
        if f == "pareto":
            q = self.exponent
            return math.pi * self.scale**2 * q / (q - 2)
        return math.pi * (self.high**3 - self.low**3) / (3 * (self.high - self.low))

    def radii_from_uniform(self, u: np.ndarray) -> np.ndarray | None:
        """Inverse-CDF transform; keeps mark streams prefix-consistent."""
        u = np.asarray(u, dtype=float)
        f = self.family
        if f == "none":
            return None
        if f == "fixed":
            return np.full(u.shape, self.radius)
        if f == "pareto":
            return self.scale * (1.0 - u) ** (-1.0 / self.exponent)
        return self.low + (self.high - self.low) * u

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray | None:
        if not self.marked:
            return None
        return self.radii_from_uniform(rng.random(n))

    def draw_mark(self, rng: np.random.Generator) -> Mark:
        if not self.marked:
            return NO_MARK
        return Mark.disk(float(self.sample(rng, 1)[0]))


def _positive(v, name):
    if v is None or not (v > 0) or not math.isfinite(v):
        raise ValueError(f"{name} must be positive and finite, got {v}")


DENSITY_FAMILIES = ("uniform-box", "linear-tilt", "radial-bump")


@dataclass(frozen=True)
class DensityModel:
    """Probability density ``kappa`` with bounded support.

    * ``uniform-box``: constant on ``support_box``.
    * ``linear-tilt``: proportional to ``x1 - lo1`` on ``support_box``
      (``2 x1`` on the unit square).
    * ``radial-bump``: proportional to ``1 - |x - c|^2 / r^2`` on the disk
      inscribed in ``support_box``.
    """

    family: str
    support_box: Box

    def __post_init__(self):
        if self.family not in DENSITY_FAMILIES:
            raise ValueError(f"unknown density family {self.family!r}")
        if self.family == "radial-bump":
            w = self.support_box.hi[0] - self.support_box.lo[0]
            h = self.support_box.hi[1] - self.support_box.lo[1]
            if not math.isclose(w, h, rel_tol=1e-12):
                raise ValueError("radial-bump needs a square support box")
        total = self.mass(self.support_box, resolution=512)
        if abs(total - 1.0) > 1e-3:
            raise ValueError(f"density integrates to {total}, not 1")

    @classmethod
    def uniform(cls, box: Box | None = None) -> "DensityModel":
        return cls("uniform-box", box or Box.unit())

    @classmethod
    def linear_tilt(cls, box: Box | None = None) -> "DensityModel":
        return cls("linear-tilt", box or Box.unit())

    @classmethod
    def radial_bump(cls, center=(0.5, 0.5), radius: float = 0.5) -> "DensityModel":
        return cls("radial-bump", Box.centered(center, radius))

    @property
    def sup_bound(self) -> float:
        b = self.support_box
        w, h = b.hi[0] - b.lo[0], b.hi[1] - b.lo[1]
        if self.family == "uniform-box":
            return 1.0 / (w * h)
        if self.family == "linear-tilt":
            return 2.0 / (w * h)
        r = 0.5 * w
        return 2.0 / (math.pi * r * r)

    def evaluate(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        b = self.support_box
        inside = b.contains(p)
        w, h = b.hi[0] - b.lo[0], b.hi[1] - b.lo[1]
        if self.family == "uniform-box":
            val = np.full(p.shape[0], 1.0 / (w * h))
        elif self.family == "linear-tilt":
            val = 2.0 * (p[:, 0] - b.lo[0]) / (w * w * h)
        else:
            cx, cy = b.center
            r = 0.5 * w
            q = 1.0 - ((p[:, 0] - cx) ** 2 + (p[:, 1] - cy) ** 2) / (r * r)
            val = 2.0 / (math.pi * r * r) * np.maximum(q, 0.0)
        return np.where(inside, val, 0.0)

    def __call__(self, points) -> np.ndarray:
        return self.evaluate(points)

    def mass(self, box: Box | None, resolution: int = 256) -> float:
        """``kappa``-measure of ``box`` (the whole support when ``None``; midpoint rule)."""
        if box is None:
            box = self.support_box
        sub = box.intersect(self.support_box)
        if sub is None:
            return 0.0
        xs = np.linspace(sub.lo[0], sub.hi[0], resolution + 1)
        ys = np.linspace(sub.lo[1], sub.hi[1], resolution + 1)
        xm, ym = 0.5 * (xs[1:] + xs[:-1]), 0.5 * (ys[1:] + ys[:-1])
        gx, gy = np.meshgrid(xm, ym, indexing="ij")
        vals = self.evaluate(np.column_stack([gx.ravel(), gy.ravel()]))
        return float(vals.mean() * sub.area)

    def sample_positions(self, rng: np.random.Generator, n: int, within: Box | None = None) -> np.ndarray:
        """``n`` i.i.d. positions from ``kappa`` (restricted to ``within``) by rejection."""
        box = self.support_box if within is None else within.intersect(self.support_box)
        if box is None:
            raise ValueError("sampling region misses the support")
        out = []
        got = 0
        for _ in range(MAX_REJECTION_BATCHES):
            if got >= n:
                break
            cand = box.sample(rng, _BATCH)
            u = rng.random(_BATCH)
            keep = cand[u * self.sup_bound < self.evaluate(cand)]
            out.append(keep)
            got += keep.shape[0]
        else:
            raise RuntimeError("rejection sampler exceeded its iteration cap")
        return np.concatenate(out)[:n] if out else np.zeros((0, 2))


@dataclass(frozen=True)
class RegionFamily:
    """The region gate in the rescaled functional; only all-space is shipped."""

    tag: str = "all-space"

    def __post_init__(self):
        if self.tag != "all-space":
            raise ValueError(f"unsupported region family {self.tag!r}")

    def contains(self, position, lam: float) -> bool:
        return True


ALL_SPACE = RegionFamily()


# ---------------------------------------------------------------------------
# samplers


def _check_intensity(intensity: float) -> float:
    intensity = float(intensity)
    if not math.isfinite(intensity) or intensity < 0:
        raise ValueError(f"intensity must be finite and non-negative, got {intensity}")
    return intensity


def sample_homogeneous(intensity: float, window: Window, marks: MarkDistribution, seed: SeedLike) -> PointConfiguration:
    """Homogeneous marked Poisson process of the given intensity on ``window``."""
    intensity = _check_intensity(intensity)
    rng = as_generator(seed)
    n = rng.poisson(intensity * window.area) if intensity > 0 else 0
    pos = window.sample(rng, n)
    radii = marks.sample(rng, n)
    return PointConfiguration(pos, window, radii, _checked=False)


def sample_poisson_kappa(
    lam: float,
    kappa: DensityModel,
    marks: MarkDistribution,
    seed: SeedLike,
    window: Window | None = None,
) -> PointConfiguration:
    """Poisson process with intensity ``lam * kappa`` by thinning.

    A homogeneous process at rate ``lam * sup kappa`` is drawn on the support
    box (or on ``window``, for local sampling) with exactly the stream usage of
    :func:`sample_homogeneous`; acceptance uniforms are drawn afterwards, so a
    constant density accepts every point and reproduces the homogeneous draw.
    """
    if not (lam > 0 and math.isfinite(lam)):
        raise ValueError(f"lambda must be positive, got {lam}")
    if kappa.sup_bound <= 0:
        raise ValueError("density has zero supremum")
    rng = as_generator(seed)
    win = kappa.support_box if window is None else window
    base = sample_homogeneous(lam * kappa.sup_bound, win, marks, rng)
    u = rng.random(len(base))
    keep = u * kappa.sup_bound < kappa.evaluate(base.positions)
    radii = None if base.radii is None else base.radii[keep]
    return PointConfiguration(base.positions[keep], win, radii, _checked=False)


def sample_binomial(n: int, kappa: DensityModel, marks: MarkDistribution, seed: SeedLike) -> PointConfiguration:
    """``n`` i.i.d. points from ``kappa``; prefix-coupled across ``n``.

    Positions and marks come from separate child streams and are consumed in
    fixed-size batches, so the first ``m`` points of a draw with ``n > m``
    coincide with a draw of ``m`` points under the same seed.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    n = int(n)
    pos_rng, mark_rng = split(seed, 2)
    pos = kappa.sample_positions(pos_rng, n)
    radii = marks.radii_from_uniform(mark_rng.random(n)) if marks.marked else None
    return PointConfiguration(pos, kappa.support_box, radii, _checked=False)


def insert_point(config: PointConfiguration, p: MarkedPoint) -> PointConfiguration:
    """``config`` with ``p`` appended (the original is untouched)."""
    if config.marked != (p.mark.kind == "disk-radius"):
        raise ValueError("mark kind of inserted point does not match configuration")
    if len(config) and config.index_of(p.position) is not None:
        raise ValueError(f"position {p.position} already present")
    if not config.window.contains(np.asarray(p.position))[0]:
        raise ValueError(f"position {p.position} outside window")
    pos = np.vstack([config.positions, np.asarray(p.position)[None, :]])
    radii = None if config.radii is None else np.append(config.radii, p.mark.radius)
    return PointConfiguration(pos, config.window, radii, _checked=False)


def with_points(config: PointConfiguration, positions, radii=None) -> PointConfiguration:
    """Append several points at once (no duplicate check beyond the window)."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    pos = np.vstack([config.positions, positions])
    if config.radii is None:
        new_r = None
    else:
        new_r = np.concatenate([config.radii, np.asarray(radii, dtype=float).reshape(-1)])
    return PointConfiguration(pos, config.window, new_r)


def rescale_config(config: PointConfiguration, center, lam: float) -> PointConfiguration:
    """Centered dilation ``x -> sqrt(lam) * (x - center)``; marks untouched."""
    if not (lam > 0):
        raise ValueError(f"lambda must be positive, got {lam}")
    s = math.sqrt(lam)
    c = np.asarray(center, dtype=float)
    pos = s * (config.positions - c)
    return PointConfiguration(pos, config.window.dilate(tuple(c), s), config.radii, _checked=False)


def pivoted_coupling(
    lam: float,
    kappa: DensityModel,
    pivot,
    a: float,
    marks: MarkDistribution,
    seed: SeedLike,
) -> tuple[PointConfiguration, PointConfiguration]:
    """Coupled ``P_lam`` and ``H_a`` built from one space-time Poisson set.

    A unit-rate Poisson set on ``support x [0, S]`` (``S = lam * max(sup kappa, a)``)
    is thinned to ``s <= lam kappa(x)`` for the inhomogeneous process and to
    ``s <= lam a`` for the homogeneous one.  The second output is returned in
    the rescaled coordinates ``sqrt(lam) (x - pivot)`` on the dilated support.
    """
    a = _check_intensity(a)
    if not kappa.support_box.contains(np.asarray(pivot, dtype=float))[0]:
        raise ValueError("pivot outside the support of kappa")
    rng = as_generator(seed)
    box = kappa.support_box
    top = lam * max(kappa.sup_bound, a)
    n = rng.poisson(box.area * top)
    pos = box.sample(rng, n)
    radii = marks.sample(rng, n)
    s = rng.random(n) * top
    in_p = s <= lam * kappa.evaluate(pos)
    in_h = s <= lam * a
    p_cfg = PointConfiguration(pos[in_p], box, None if radii is None else radii[in_p], _checked=False)
    scale = math.sqrt(lam)
    piv = np.asarray(pivot, dtype=float)
    h_pos = scale * (pos[in_h] - piv)
    h_cfg = PointConfiguration(
        h_pos, box.dilate(tuple(piv), scale), None if radii is None else radii[in_h], _checked=False
    )
    return p_cfg, h_cfg


def agree_on_ball(x: PointConfiguration, y: PointConfiguration, radius: float) -> bool:
    """Whether the marked point sets coincide on the closed ball ``B_radius``."""
    return _restricted(x, radius) == _restricted(y, radius)


def _restricted(cfg: PointConfiguration, radius: float) -> list[tuple]:
    d = np.hypot(cfg.positions[:, 0], cfg.positions[:, 1])
    sel = d <= radius
    if cfg.radii is None:
        return sorted(map(tuple, cfg.positions[sel].tolist()))
    return sorted(
        (float(p[0]), float(p[1]), float(r)) for p, r in zip(cfg.positions[sel], cfg.radii[sel])
    )


def config_distance(x: PointConfiguration, y: PointConfiguration, k_max: int | None = None) -> float:
    """``1 / K*`` with ``K*`` the largest integer radius of agreement.

    Returns 1 when the configurations already differ inside ``B_1`` and
    ``1 / k_max`` when they agree everywhere they are observed; by default
    ``k_max`` is the largest integer ball inside both windows (at least 1).
    """
    if k_max is None:
        k_max = max(1, int(math.floor(min(x.window.inradius_from((0.0, 0.0)), y.window.inradius_from((0.0, 0.0))))))
    key = (lambda p, r: (p[0], p[1], r)) if x.marked else (lambda p, r: (p[0], p[1]))
    sx = {key(p, r): p for p, r in _iter_points(x)}
    sy = {key(p, r): p for p, r in _iter_points(y)}
    diff = set(sx).symmetric_difference(sy)
    if not diff:
        return 1.0 / k_max
    first = min(math.hypot(k[0], k[1]) for k in diff)
    k_star = math.ceil(first) - 1
    if k_star < 1:
        return 1.0
    return 1.0 / min(k_star, k_max)


def _iter_points(cfg: PointConfiguration):
    pos = cfg.positions.tolist()
    if cfg.radii is None:
        return ((p, None) for p in pos)
    return zip(pos, cfg.radii.tolist())


# ---------------------------------------------------------------------------
# monotone growing samples around a point


def growing_ball_sample(
    intensity,
    center,
    radius: float,
    marks: MarkDistribution,
    seed: SeedLike,
    base_radius: float,
    kappa: DensityModel | None = None,
    lam: float = 1.0,
) -> PointConfiguration:
    """Poisson sample on ``B_radius`` in coordinates rescaled about ``center``.

    The ball is built from shells ``[0, base), [base, 2 base), [2 base, 4 base) ...``
    each drawn from its own stream, so enlarging ``radius`` to the next shell
    boundary never changes the points already inside.  ``radius`` must be a
    shell boundary.

    Without ``kappa`` this is ``H_intensity`` around the origin.  With
    ``kappa`` the points are ``sqrt(lam) (P_lam - center)`` restricted to the
    ball, i.e. the locally rescaled inhomogeneous process.
    """
    shells = _shell_edges(base_radius, radius)
    pos_parts, rad_parts = [], []
    c = np.asarray(center, dtype=float)
    s = math.sqrt(lam)
    for k, (r0, r1) in enumerate(shells):
        rng = np.random.default_rng(derive(seed, "shell", k))
        if kappa is None:
            rate = float(intensity)
        else:
            rate = lam * kappa.sup_bound / (s * s)  # rescaled-coordinate rate bound
        n = rng.poisson(rate * math.pi * (r1 * r1 - r0 * r0)) if rate > 0 else 0
        u = rng.random((n, 2))
        rr = np.sqrt(r0 * r0 + u[:, 0] * (r1 * r1 - r0 * r0))
        th = 2 * np.pi * u[:, 1]
        z = np.column_stack([rr * np.cos(th), rr * np.sin(th)])
        radii = marks.sample(rng, n)
        if kappa is not None:
            acc = rng.random(n) * kappa.sup_bound < kappa.evaluate(c + z / s)
            z = z[acc]
            radii = None if radii is None else radii[acc]
        pos_parts.append(z)
        if radii is not None:
            rad_parts.append(radii)
    pos = np.concatenate(pos_parts) if pos_parts else np.zeros((0, 2))
    radii = np.concatenate(rad_parts) if marks.marked else None
    if marks.marked and radii is None:
        radii = np.zeros(0)
    return PointConfiguration(pos, Ball((0.0, 0.0), radius), radii, _checked=False)


def _shell_edges(base: float, radius: float) -> list[tuple[float, float]]:
    if not (base > 0 and radius >= base):
        raise ValueError("radius must be at least the base radius")
    edges = [(0.0, base)]
    r = base
    while r < radius * (1 - 1e-12):
        edges.append((r, 2 * r))
        r *= 2
    if not math.isclose(r, radius, rel_tol=1e-9):
        raise ValueError("radius must be base * 2**k")
    return edges
