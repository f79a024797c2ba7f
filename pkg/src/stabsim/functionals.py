"""Score functionals on marked configurations and their measure values.

Three families are shipped, each with an optional point-mass ("star")
version:

* ``voronoi-volume``: Lebesgue measure on the Voronoi cell of the point when
  the cell is bounded, zero otherwise.
* ``germ-volume``: Lebesgue measure on the set of points whose nearest
  covering germ (open grains) is the point.
* ``germ-surface``: signed length measure; plus the boundary of the grain
  minus its closer-covered arcs, minus the kept arcs of other grains lying in
  the point's nearest-covering region.

Summing either germ family over all points gives the union's area and the
length of the union's boundary respectively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import QhullError

from . import geometry as geo
from .point_process import ALL_SPACE, Box, MarkDistribution, PointConfiguration, RegionFamily, rescale_config
from .rng import SeedLike, as_generator

FAMILIES = ("voronoi-volume", "germ-volume", "germ-surface")
CONTINUITY = ("everywhere-continuous", "a.e.-continuous", "general-Borel")
MC_BUDGET = 10_000
GL_NODES = 32


# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class TestFunction:
    """Bounded test function with a known sup norm.

    kinds and parameters:

    * ``indicator-box``: ``lo``, ``hi``
    * ``indicator-disk``: ``center``, ``radius``
    * ``smooth-bump``: ``center``, ``radius``, ``height`` -- a compactly
      supported C-infinity bump, ``height * exp(1 - 1/(1 - s^2))``
    * ``constant``: ``value``
    * ``clamped-linear``: ``weights``, ``offset``, ``low``, ``high`` --
      ``clip(w . x + b, low, high)``
    """

    __test__ = False  # not a pytest class

    kind: str
    params: tuple = ()

    def __post_init__(self):
        p = dict(self.params)
        k = self.kind
        if k == "indicator-box":
            Box(p["lo"], p["hi"])
        elif k in ("indicator-disk", "smooth-bump"):
            if not p["radius"] > 0:
                raise ValueError("radius must be positive")
        elif k == "constant":
            if not math.isfinite(p["value"]):
                raise ValueError("constant must be finite")
        elif k == "clamped-linear":
            if not p["low"] <= p["high"]:
                raise ValueError("clamped-linear needs low <= high")
        else:
            raise ValueError(f"unknown test function kind {k!r}")
        object.__setattr__(self, "params", tuple(sorted((key, _freeze(v)) for key, v in p.items())))

    # constructors
    @classmethod
    def indicator_box(cls, lo, hi) -> "TestFunction":
        return cls("indicator-box", (("lo", tuple(lo)), ("hi", tuple(hi))))

    @classmethod
    def indicator_disk(cls, center, radius) -> "TestFunction":
        return cls("indicator-disk", (("center", tuple(center)), ("radius", float(radius))))

    @classmethod
    def smooth_bump(cls, center, radius, height: float = 1.0) -> "TestFunction":
        return cls("smooth-bump", (("center", tuple(center)), ("radius", float(radius)), ("height", float(height))))

    @classmethod
    def constant(cls, value: float) -> "TestFunction":
        return cls("constant", (("value", float(value)),))

    @classmethod
    def clamped_linear(cls, weights, offset, low, high) -> "TestFunction":
        return cls(
            "clamped-linear",
            (("weights", tuple(weights)), ("offset", float(offset)), ("low", float(low)), ("high", float(high))),
        )

    @property
    def p(self) -> dict:
        return dict(self.params)

    @property
    def sup_norm(self) -> float:
        p = self.p
        if self.kind in ("indicator-box", "indicator-disk"):
            return 1.0
        if self.kind == "smooth-bump":
            return abs(p["height"])
        if self.kind == "constant":
            return abs(p["value"])
        return max(abs(p["low"]), abs(p["high"]))

    @property
    def continuity_class(self) -> str:
        if self.kind in ("indicator-box", "indicator-disk"):
            return "a.e.-continuous"
        return "everywhere-continuous"

    @property
    def is_zero(self) -> bool:
        p = self.p
        if self.kind == "constant":
            return p["value"] == 0.0
        if self.kind == "smooth-bump":
            return p["height"] == 0.0
        if self.kind == "clamped-linear":
            return p["low"] == 0.0 and p["high"] == 0.0
        return False

    def __call__(self, points) -> np.ndarray:
        x = np.asarray(points, dtype=float).reshape(-1, 2)
        p = self.p
        k = self.kind
        if k == "indicator-box":
            lo, hi = p["lo"], p["hi"]
            return ((x[:, 0] >= lo[0]) & (x[:, 0] <= hi[0]) & (x[:, 1] >= lo[1]) & (x[:, 1] <= hi[1])).astype(float)
        if k == "indicator-disk":
            c = p["center"]
            return (np.hypot(x[:, 0] - c[0], x[:, 1] - c[1]) <= p["radius"]).astype(float)
        if k == "smooth-bump":
            c = p["center"]
            s2 = ((x[:, 0] - c[0]) ** 2 + (x[:, 1] - c[1]) ** 2) / p["radius"] ** 2
            out = np.zeros(x.shape[0])
            m = s2 < 1
            out[m] = p["height"] * np.exp(1.0 - 1.0 / (1.0 - s2[m]))
            return out
        if k == "constant":
            return np.full(x.shape[0], p["value"])
        w = p["weights"]
        return np.clip(w[0] * x[:, 0] + w[1] * x[:, 1] + p["offset"], p["low"], p["high"])

    def pullback(self, origin, scale: float) -> "TestFunction":
        """``z -> f(origin + scale * z)`` expressed as a test function."""
        o = np.asarray(origin, dtype=float)
        p = self.p
        k = self.kind
        if k == "indicator-box":
            return TestFunction.indicator_box((np.asarray(p["lo"]) - o) / scale, (np.asarray(p["hi"]) - o) / scale)
        if k in ("indicator-disk", "smooth-bump"):
            c = (np.asarray(p["center"]) - o) / scale
            if k == "indicator-disk":
                return TestFunction.indicator_disk(c, p["radius"] / scale)
            return TestFunction.smooth_bump(c, p["radius"] / scale, p["height"])
        if k == "constant":
            return self
        w = np.asarray(p["weights"], dtype=float)
        return TestFunction.clamped_linear(w * scale, p["offset"] + float(w @ o), p["low"], p["high"])

    def support_box(self) -> Box | None:
        """A box outside which ``f`` vanishes (``None`` for global support)."""
        p = self.p
        if self.kind == "indicator-box":
            return Box(p["lo"], p["hi"])
        if self.kind in ("indicator-disk", "smooth-bump"):
            return Box.centered(p["center"], p["radius"])
        return None


def _freeze(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return tuple(float(x) for x in np.asarray(v, dtype=float).ravel())
    return float(v)


# ---------------------------------------------------------------------------
# functionals and measure values


@dataclass(frozen=True)
class XiFunctional:
    """Functional family identifier.

    ``mark_bound`` (the essential supremum of grain radii, ``inf`` if unknown)
    is only informational for the germ families.
    """

    family: str
    star: bool = False
    mark_bound: float | None = None
    translation_invariant: bool = field(default=True, init=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown functional family {self.family!r}")

    @classmethod
    def parse(cls, name: str, marks: MarkDistribution | None = None) -> "XiFunctional":
        name = name.strip()
        star = name.startswith("star-of(") and name.endswith(")")
        fam = name[len("star-of("):-1] if star else name
        if fam == "voronoi-star":
            fam, star = "voronoi-volume", True
        bound = None if marks is None else marks.max_radius
        return cls(fam, star, bound)

    @property
    def name(self) -> str:
        return f"star-of({self.family})" if self.star else self.family

    @property
    def needs_marks(self) -> bool:
        return self.family != "voronoi-volume"

    @property
    def is_volume(self) -> bool:
        return self.family in ("voronoi-volume", "germ-volume")

    def check_config(self, config: PointConfiguration):
        if self.needs_marks and not config.marked:
            raise ValueError(f"{self.family} requires disk marks")
        if not self.needs_marks and config.marked:
            raise ValueError("voronoi-volume requires unmarked points")

    def as_star(self) -> "XiFunctional":
        return XiFunctional(self.family, True, self.mark_bound)


@dataclass(frozen=True, eq=False)
class PolygonPiece:
    polygon: geo.ConvexPolygon

    @property
    def mass(self) -> float:
        return geo.polygon_area(self.polygon)


@dataclass(frozen=True, eq=False)
class RegionPiece:
    region: geo.NCRegion

    @property
    def mass(self) -> float:
        return self.region.area()


@dataclass(frozen=True, eq=False)
class ArcPiece:
    arcs: geo.ArcSet
    sign: int = 1

    @property
    def mass(self) -> float:
        return self.sign * geo.arc_length(self.arcs)


@dataclass(frozen=True, eq=False)
class Atom:
    position: tuple[float, float]
    mass: float


@dataclass(frozen=True, eq=False)
class MeasureValue:
    """Finite signed measure as a list of pieces in evaluation coordinates.

    World coordinates are ``origin + scale * z``; the measure on the world is
    the pushforward, so masses are those of the pieces.
    """

    pieces: tuple = ()
    origin: tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0

    @property
    def total_mass(self) -> float:
        return float(sum(p.mass for p in self.pieces))

    @property
    def positive_mass(self) -> float:
        return float(sum(max(p.mass, 0.0) for p in self.pieces))

    @property
    def negative_mass(self) -> float:
        return float(sum(max(-p.mass, 0.0) for p in self.pieces))

    @property
    def is_zero(self) -> bool:
        return not self.pieces


ZERO = MeasureValue()


def star_projection(m: MeasureValue, at) -> MeasureValue:
    """Point mass at ``at`` (world coordinates) carrying the total mass of ``m``."""
    return MeasureValue((Atom((float(at[0]), float(at[1])), m.total_mass),))


# ---------------------------------------------------------------------------
# evaluation


def sentinel_half_size(config: PointConfiguration) -> float:
    return geo.SENTINEL_FACTOR * config.window.diameter


def _neighbour_indices(config: PointConfiguration, i: int, radius: float) -> list[int]:
    return [j for j in config.tree.query_ball_point(config.positions[i], radius) if j != i]


def nc_region(config: PointConfiguration, i: int) -> geo.NCRegion:
    r_max = float(config.radii.max())
    cand = _neighbour_indices(config, i, config.radii[i] + r_max)
    return geo.NCRegion.build(i, config.positions, config.radii, cand)


def keep_arcs(config: PointConfiguration, j: int) -> geo.ArcSet:
    r_max = float(config.radii.max())
    cand = _neighbour_indices(config, j, config.radii[j] + r_max)
    pos = config.positions
    rad = config.radii
    cc = geo.closer_cover_intervals(j, pos, rad, cand)
    circle = geo.Disk(tuple(pos[j]), float(rad[j]))
    return geo.ArcSet(circle, geo.intervals_complement(cc))


def surface_pieces(config: PointConfiguration, i: int) -> list:
    """Positive and negative arc pieces of the signed surface measure at ``i``."""
    pos, rad = config.positions, config.radii
    pieces = [ArcPiece(keep_arcs(config, i), 1)]
    region = nc_region(config, i)
    ri = rad[i]
    for j in _neighbour_indices(config, i, ri + float(rad.max())):
        if rad[j] >= ri:
            continue  # a circle at least as large as grain i is closer-covered inside it
        if math.hypot(*(pos[j] - pos[i])) >= ri + rad[j]:
            continue
        ivs = region.circle_membership(pos[j, 0], pos[j, 1], float(rad[j]))
        if not ivs:
            continue
        arcs = keep_arcs(config, j).restrict(ivs)
        if arcs.intervals:
            pieces.append(ArcPiece(arcs, -1))
    return pieces


def eval_xi(xi: XiFunctional, i: int, config: PointConfiguration) -> MeasureValue:
    """``xi`` at point ``i`` of ``config``, in the configuration's coordinates."""
    if not 0 <= i < len(config):
        raise IndexError(f"point index {i} out of range")
    xi.check_config(config)
    if xi.family == "voronoi-volume":
        cell = geo.voronoi_cell(i, config.positions, sentinel_half_size(config), config.tree)
        m = MeasureValue((PolygonPiece(cell),)) if cell.bounded and not cell.empty else ZERO
    elif xi.family == "germ-volume":
        m = MeasureValue((RegionPiece(nc_region(config, i)),))
    else:
        m = MeasureValue(tuple(surface_pieces(config, i)))
    if xi.star:
        return star_projection(m, config.positions[i])
    return m


def xi_total_sum(xi: XiFunctional, config: PointConfiguration) -> float:
    """Sum of total masses over all points."""
    return float(sum(eval_xi(xi, i, config).total_mass for i in range(len(config))))


def eval_xi_rescaled(
    xi: XiFunctional,
    i: int,
    config: PointConfiguration,
    lam: float,
    gamma: RegionFamily = ALL_SPACE,
    dilated: PointConfiguration | None = None,
) -> MeasureValue:
    """``xi_lam`` at point ``i``: evaluate on ``sqrt(lam) X`` and push back.

    ``dilated`` may carry a precomputed ``rescale_config(config, 0, lam)``.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if not gamma.contains(config.positions[i], lam):
        return ZERO
    if dilated is None:
        dilated = rescale_config(config, (0.0, 0.0), lam)
    m = eval_xi(xi.__class__(xi.family, False, xi.mark_bound), i, dilated)
    m = MeasureValue(m.pieces, (0.0, 0.0), 1.0 / math.sqrt(lam))
    if xi.star:
        return star_projection(m, config.positions[i])
    return m


# ---------------------------------------------------------------------------
# integration


def _gauss_legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def _arc_quadrature(arcs: geo.ArcSet, f: TestFunction) -> float:
    x, w = _gauss_legendre(GL_NODES)
    c = arcs.circle
    total = 0.0
    for a, b in arcs.intervals:
        th = 0.5 * (b - a) * x + 0.5 * (b + a)
        total += 0.5 * (b - a) * float(w @ f(c.point_at(th)))
    return c.radius * total


def _piece_integral(piece, f: TestFunction, budget: int, rng) -> tuple[float, float]:
    k = f.kind
    p = f.p
    if isinstance(piece, Atom):
        return piece.mass * float(f(np.asarray(piece.position))[0]), 0.0
    if k == "constant":
        return p["value"] * piece.mass, 0.0
    if isinstance(piece, ArcPiece):
        if k == "indicator-box":
            sub = geo.arcs_in_box(piece.arcs, p["lo"], p["hi"])
            return piece.sign * geo.arc_length(sub), 0.0
        if k == "indicator-disk":
            sub = geo.arcs_in_disk(piece.arcs, p["center"], p["radius"])
            return piece.sign * geo.arc_length(sub), 0.0
        return piece.sign * _arc_quadrature(piece.arcs, f), 0.0
    if isinstance(piece, PolygonPiece):
        poly = piece.polygon
        if k == "indicator-box":
            return geo.polygon_area(geo.polygon_clip_box(poly, Box(p["lo"], p["hi"]))), 0.0
        if k == "indicator-disk":
            return geo.polygon_disk_area(poly.vertices, p["center"], p["radius"]), 0.0
        area = geo.polygon_area(poly)
        if area == 0.0:
            return 0.0, 0.0
        if budget <= 0:
            raise ValueError("no Monte Carlo budget for a non-exact integral")
        vals = f(geo.sample_in_polygon(poly, budget, rng))
        return area * float(vals.mean()), area * float(vals.std(ddof=1)) / math.sqrt(budget)
    if isinstance(piece, RegionPiece):
        reg = piece.region
        if k == "indicator-box":
            return reg.area(clip_box=Box(p["lo"], p["hi"])), 0.0
        if k == "indicator-disk":
            return reg.area(clip_disk=(p["center"], p["radius"])), 0.0
        area = reg.area()
        if area == 0.0:
            return 0.0, 0.0
        if budget <= 0:
            raise ValueError("no Monte Carlo budget for a non-exact integral")
        vals = f(reg.sample(budget, rng))
        return area * float(vals.mean()), area * float(vals.std(ddof=1)) / math.sqrt(budget)
    raise TypeError(f"unknown measure piece {type(piece).__name__}")


def integrate_with_error(m: MeasureValue, f: TestFunction, budget: int = MC_BUDGET, seed: SeedLike = 0) -> tuple[float, float]:
    """``<f, m>`` and a Monte Carlo standard error (0 on exact paths)."""
    if m.is_zero:
        return 0.0, 0.0
    g = f.pullback(m.origin, m.scale) if (m.origin != (0.0, 0.0) or m.scale != 1.0) else f
    rng = None
    total, var = 0.0, 0.0
    for piece in m.pieces:
        if isinstance(piece, Atom):
            # atoms carry world positions
            total += piece.mass * float(f(np.asarray(piece.position))[0])
            continue
        if rng is None and g.kind in ("smooth-bump", "clamped-linear") and not isinstance(piece, ArcPiece):
            rng = as_generator(seed)
        v, se = _piece_integral(piece, g, budget, rng)
        total += v
        var += se * se
    return total, math.sqrt(var)


def integrate(m: MeasureValue, f: TestFunction, budget: int = MC_BUDGET, seed: SeedLike = 0) -> float:
    """``<f, m>``; see :func:`integrate_with_error`."""
    return integrate_with_error(m, f, budget, seed)[0]


# ---------------------------------------------------------------------------
# stabilization


def stabilization_radius(xi: XiFunctional, i: int, config: PointConfiguration) -> float:
    """Certified integer upper bound on the radius of stabilization (``inf`` if none).

    Germ families: the grain of radius ``r`` only interacts with germs within
    ``2 r``, so ``ceil(2 r)`` certifies.  Voronoi: the cell from the data is
    final once its farthest vertex is at distance ``R`` and ``B_{2R}`` holds
    all the data used, giving ``ceil(2 R)`` provided that ball sits inside
    the observation window.
    """
    xi.check_config(config)
    if xi.family != "voronoi-volume":
        return float(max(1, math.ceil(2.0 * float(config.radii[i]))))
    cell = geo.voronoi_cell(i, config.positions, sentinel_half_size(config), config.tree)
    if not cell.bounded:
        return math.inf
    r = max(1, math.ceil(2.0 * cell.max_distance(config.positions[i]) * (1 - 1e-14)))
    if r > config.window.inradius_from(config.positions[i]):
        return math.inf
    return float(r)


# ---------------------------------------------------------------------------
# bulk evaluation


def _world_box(f: TestFunction, lam: float):
    """The test function pulled back to dilated coordinates."""
    return f.pullback((0.0, 0.0), 1.0 / math.sqrt(lam))


def bulk_values(
    xi: XiFunctional,
    f: TestFunction,
    config: PointConfiguration,
    lam: float,
    gamma: RegionFamily = ALL_SPACE,
) -> np.ndarray:
    """Per-point ``<f, xi_lam(x_i; X)>`` for every point of ``config``.

    Uses whole-configuration kernels (Qhull, neighbour lists) where they
    apply and falls back to :func:`eval_xi_rescaled` otherwise.
    """
    n = len(config)
    if n == 0:
        return np.zeros(0)
    xi.check_config(config)
    if f.is_zero:
        return np.zeros(n)
    dil = rescale_config(config, (0.0, 0.0), lam)
    g = _world_box(f, lam)
    if xi.family == "voronoi-volume" and g.kind in ("indicator-box", "constant"):
        try:
            return _bulk_voronoi(xi, f, g, dil, config)
        except QhullError:
            pass
    if (
        xi.family == "germ-volume"
        and g.kind in ("indicator-box", "constant")
        and n >= 3
        and np.all(dil.radii == dil.radii[0])
    ):
        try:
            return _bulk_germ_volume(xi, f, g, dil, config)
        except QhullError:
            pass
    return np.array([integrate(eval_xi_rescaled(xi, i, config, lam, gamma, dil), f) for i in range(n)])


def _bulk_voronoi(xi, f, g, dil, config) -> np.ndarray:
    vd = geo.voronoi_diagram(dil.positions, dil.window.diameter)
    areas = np.where(vd.bounded, vd.areas, 0.0)
    if xi.star:
        return areas * f(config.positions)
    if g.kind == "constant":
        return areas * g.p["value"]
    lo, hi = g.p["lo"], g.p["hi"]
    return areas_in_box(vd, lo, hi, areas)


def areas_in_box(vd: geo.VoronoiDiagram, lo, hi, areas) -> np.ndarray:
    n = len(vd.points)
    out = np.zeros(n)
    if not len(vd.vertices):
        return out
    starts = vd.offsets[:-1]
    vmin = np.minimum.reduceat(vd.vertices, starts, axis=0)
    vmax = np.maximum.reduceat(vd.vertices, starts, axis=0)
    inside = (vmin[:, 0] >= lo[0]) & (vmin[:, 1] >= lo[1]) & (vmax[:, 0] <= hi[0]) & (vmax[:, 1] <= hi[1])
    disjoint = (vmax[:, 0] <= lo[0]) | (vmax[:, 1] <= lo[1]) | (vmin[:, 0] >= hi[0]) | (vmin[:, 1] >= hi[1])
    ok = vd.bounded
    out[ok & inside] = areas[ok & inside]
    for i in np.flatnonzero(ok & ~inside & ~disjoint):
        poly = geo.clip_to_box(vd.vertices[vd.offsets[i]:vd.offsets[i + 1]].tolist(), lo, hi)
        out[i] = max(0.0, geo._shoelace(poly))
    return out


def _bulk_germ_volume(xi, f, g, dil, config) -> np.ndarray:
    r = float(dil.radii[0])
    vd = geo.voronoi_diagram(dil.positions, dil.window.diameter)
    pts = dil.positions
    n = len(pts)
    full = geo.bulk_polygon_disk_area(vd.vertices, vd.offsets, pts, np.full(n, r))
    if xi.star:
        return full * f(config.positions)
    if g.kind == "constant":
        return full * g.p["value"]
    lo, hi = g.p["lo"], g.p["hi"]
    inside = (pts[:, 0] - r >= lo[0]) & (pts[:, 0] + r <= hi[0]) & (pts[:, 1] - r >= lo[1]) & (pts[:, 1] + r <= hi[1])
    disjoint = (pts[:, 0] + r <= lo[0]) | (pts[:, 0] - r >= hi[0]) | (pts[:, 1] + r <= lo[1]) | (pts[:, 1] - r >= hi[1])
    out = np.where(inside, full, 0.0)
    for i in np.flatnonzero(~inside & ~disjoint):
        poly = vd.vertices[vd.offsets[i]:vd.offsets[i + 1]].tolist()
        poly = geo.clip_to_box(poly, lo, hi)
        out[i] = geo.polygon_disk_area(np.array(poly), pts[i], r) if len(poly) >= 3 else 0.0
    return out


def empirical_functional(
    xi: XiFunctional,
    f: TestFunction,
    config: PointConfiguration,
    lam: float,
    gamma: RegionFamily = ALL_SPACE,
) -> float:
    """``<f, mu_lam^xi>``, the sum over points of ``<f, xi_lam(x; X)>``."""
    if len(config) == 0:
        return 0.0
    return float(bulk_values(xi, f, config, lam, gamma).sum())
