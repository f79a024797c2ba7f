"""Exact planar kernels: Voronoi cells, disks, boundary arcs and NC regions.

Polygons are small (a handful of vertices), so the single-cell kernels are
plain Python on tuples; bulk tessellations go through Qhull.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import chain
from typing import Sequence

import numpy as np
from scipy.spatial import Voronoi, cKDTree

from .rng import SeedLike, as_generator

EPS = 1e-12
TWO_PI = 2.0 * math.pi
SENTINEL_FACTOR = 1e3
SENTINEL = -1  # edge label for sentinel-box edges


# ---------------------------------------------------------------------------
# polygons


@dataclass(frozen=True, eq=False)
class ConvexPolygon:
    """Convex polygon with CCW vertices.

    ``bounded`` is False when the polygon is the clip of an unbounded cell
    against the sentinel box; in that case the vertices are only a proxy.
    """

    vertices: np.ndarray
    bounded: bool = True

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 2)
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    def __len__(self):
        return self.vertices.shape[0]

    @property
    def empty(self) -> bool:
        return self.vertices.shape[0] < 3

    def max_distance(self, point) -> float:
        if self.empty:
            return 0.0
        d = self.vertices - np.asarray(point, dtype=float)
        return float(np.sqrt((d * d).sum(axis=1)).max())

    def contains(self, points, tol: float = 1e-12) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        if self.empty:
            return np.zeros(p.shape[0], dtype=bool)
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        e = w - v
        rel = p[:, None, :] - v[None, :, :]
        cross = e[None, :, 0] * rel[:, :, 1] - e[None, :, 1] * rel[:, :, 0]
        scale = np.hypot(e[:, 0], e[:, 1])[None, :]
        return np.all(cross >= -tol * scale, axis=1)

    def translate(self, v) -> "ConvexPolygon":
        return ConvexPolygon(self.vertices + np.asarray(v, dtype=float), self.bounded)


EMPTY_POLYGON = ConvexPolygon(np.zeros((0, 2)))


def _shoelace(vs) -> float:
    n = len(vs)
    if n < 3:
        return 0.0
    s = 0.0
    x0, y0 = vs[0]
    for k in range(1, n - 1):
        x1, y1 = vs[k]
        x2, y2 = vs[k + 1]
        s += (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    return 0.5 * s


def polygon_area(p: ConvexPolygon) -> float:
    """Area of a bounded convex polygon (shoelace)."""
    if not p.bounded:
        raise ValueError("unbounded cell has no finite area; treat it as empty")
    return max(0.0, _shoelace(p.vertices.tolist()))


def _clip_halfplane(poly, nx, ny, c, label, labels=None):
    """Keep ``{p: nx*px + ny*py <= c}``; labels track the edge leaving each vertex."""
    n = len(poly)
    if n == 0:
        return poly, labels
    tol = EPS * (abs(c) + 1.0)
    s = [nx * x + ny * y - c for x, y in poly]
    if max(s) <= tol:
        return poly, labels
    if min(s) > tol:
        return [], ([] if labels is not None else None)
    out = []
    out_l = [] if labels is not None else None
    for k in range(n):
        a = poly[k]
        b = poly[(k + 1) % n]
        sa, sb = s[k], s[(k + 1) % n]
        a_in = sa <= tol
        b_in = sb <= tol
        if a_in:
            out.append(a)
            if out_l is not None:
                out_l.append(labels[k])
            if not b_in:
                t = sa / (sa - sb)
                out.append((a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])))
                if out_l is not None:
                    out_l.append(label)
        elif b_in:
            t = sa / (sa - sb)
            out.append((a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])))
            if out_l is not None:
                out_l.append(labels[k])
    return _dedupe(out, out_l)


def _dedupe(poly, labels):
    if len(poly) < 2:
        return poly, labels
    keep_p, keep_l = [], [] if labels is not None else None
    n = len(poly)
    for k in range(n):
        a = poly[k]
        b = poly[(k + 1) % n]
        if abs(a[0] - b[0]) <= 1e-15 * (1 + abs(a[0])) and abs(a[1] - b[1]) <= 1e-15 * (1 + abs(a[1])) and n > 1:
            # zero-length edge: drop it together with its label
            continue
        keep_p.append(a)
        if keep_l is not None:
            keep_l.append(labels[k])
    return keep_p, keep_l


def _box_vertices(lo, hi):
    return [(lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1])]


def clip_to_box(poly: list, lo, hi) -> list:
    """Sutherland–Hodgman clip of a vertex list against a box."""
    poly, _ = _clip_halfplane(poly, 1.0, 0.0, hi[0], 0)
    poly, _ = _clip_halfplane(poly, -1.0, 0.0, -lo[0], 0)
    poly, _ = _clip_halfplane(poly, 0.0, 1.0, hi[1], 0)
    poly, _ = _clip_halfplane(poly, 0.0, -1.0, -lo[1], 0)
    return poly


def polygon_clip_box(p: ConvexPolygon, box) -> ConvexPolygon:
    """Intersection of a bounded convex polygon with an axis-aligned box."""
    if not p.bounded:
        raise ValueError("cannot clip an unbounded cell")
    out = clip_to_box(p.vertices.tolist(), box.lo, box.hi)
    if len(out) < 3:
        return EMPTY_POLYGON
    return ConvexPolygon(np.array(out), True)


def sample_in_polygon(p: ConvexPolygon, count: int, seed: SeedLike) -> np.ndarray:
    """Uniform points in ``p`` via fan triangulation."""
    v = p.vertices
    if not p.bounded or p.empty:
        raise ValueError("need a bounded polygon with positive area")
    a, b, c = v[0], v[1:-1], v[2:]
    areas = 0.5 * np.abs((b[:, 0] - a[0]) * (c[:, 1] - a[1]) - (c[:, 0] - a[0]) * (b[:, 1] - a[1]))
    total = areas.sum()
    if not total > 0:
        raise ValueError("polygon has zero area")
    rng = as_generator(seed)
    tri = rng.choice(len(areas), size=count, p=areas / total)
    u = rng.random((count, 2))
    flip = u.sum(axis=1) > 1
    u[flip] = 1 - u[flip]
    return a + u[:, :1] * (b[tri] - a) + u[:, 1:] * (c[tri] - a)


# ---------------------------------------------------------------------------
# Voronoi cells


def voronoi_cell(
    nucleus_index: int,
    nuclei,
    sentinel_half_size: float,
    tree: cKDTree | None = None,
) -> ConvexPolygon:
    """Voronoi cell of ``nuclei[nucleus_index]`` by half-plane clipping.

    The cell starts as the sentinel box of half-size ``sentinel_half_size``
    centred at the nucleus and is cut by bisectors in order of increasing
    neighbour distance, stopping once the next neighbour is too far to reach
    the current polygon.  The cell is bounded iff no sentinel edge survives.
    """
    pts = np.asarray(nuclei, dtype=float).reshape(-1, 2)
    n = pts.shape[0]
    if n < 1:
        raise ValueError("need at least one nucleus")
    x0, y0 = pts[nucleus_index]
    H = float(sentinel_half_size)
    rel_max = np.abs(pts - pts[nucleus_index]).max() if n > 1 else 0.0
    if not H > rel_max:
        raise ValueError("sentinel box must strictly contain all nuclei")
    poly = [(-H, -H), (H, -H), (H, H), (-H, H)]
    labels = [SENTINEL] * 4
    if n > 1:
        if tree is None:
            tree = cKDTree(pts)
        k = min(n, 16)
        done = 1  # the nucleus itself is the closest point
        while True:
            dist, idx = tree.query(pts[nucleus_index], k=k)
            dist = np.atleast_1d(dist)
            idx = np.atleast_1d(idx)
            stop = False
            for d, j in zip(dist[done:].tolist(), idx[done:].tolist()):
                if j == nucleus_index or j >= n:
                    continue
                rmax2 = max(vx * vx + vy * vy for vx, vy in poly)
                if d * d >= 4.0 * rmax2 * (1 + 1e-12):
                    stop = True
                    break
                dx = pts[j, 0] - x0
                dy = pts[j, 1] - y0
                if dx == 0.0 and dy == 0.0:
                    raise ValueError("duplicate nuclei")
                poly, labels = _clip_halfplane(poly, dx, dy, 0.5 * (dx * dx + dy * dy), j, labels)
            if stop or k >= n:
                break
            done = k
            k = min(n, 2 * k)
    bounded = SENTINEL not in labels and len(poly) >= 3
    verts = np.array(poly) + (x0, y0) if poly else np.zeros((0, 2))
    return ConvexPolygon(verts, bounded)


def voronoi_cell_neighbors(nucleus_index: int, nuclei, sentinel_half_size: float, tree=None) -> list[int]:
    """Indices of nuclei whose bisectors are edges of the cell."""
    pts = np.asarray(nuclei, dtype=float).reshape(-1, 2)
    cell = voronoi_cell(nucleus_index, pts, sentinel_half_size, tree)
    if cell.empty:
        return []
    v = cell.vertices
    mids = 0.5 * (v + np.roll(v, -1, axis=0))
    x = pts[nucleus_index]
    tree = tree or cKDTree(pts)
    out = set()
    for m in mids:
        r = np.hypot(*(m - x))
        for j in tree.query_ball_point(m, r * (1 + 1e-9) + 1e-12):
            if j != nucleus_index and abs(np.hypot(*(m - pts[j])) - r) <= 1e-9 * (1 + r):
                out.add(j)
    return sorted(out)


@dataclass(frozen=True, eq=False)
class VoronoiDiagram:
    """All cells of a point set at once (Qhull, with four far sentinels).

    ``bounded[i]`` is True iff cell ``i`` does not touch a sentinel, which is
    the bulk analogue of the sentinel-box test.  Cell vertices are stored
    flat: ``vertices[offsets[i]:offsets[i+1]]`` in CCW order.
    """

    points: np.ndarray
    bounded: np.ndarray
    vertices: np.ndarray
    offsets: np.ndarray
    areas: np.ndarray

    def cell(self, i: int) -> ConvexPolygon:
        return ConvexPolygon(self.vertices[self.offsets[i]:self.offsets[i + 1]], bool(self.bounded[i]))

    def max_vertex_distance(self) -> np.ndarray:
        owner = np.repeat(np.arange(len(self.points)), np.diff(self.offsets))
        d = np.hypot(*(self.vertices - self.points[owner]).T)
        out = np.zeros(len(self.points))
        np.maximum.at(out, owner, d)
        return out


def voronoi_diagram(points, scale: float | None = None) -> VoronoiDiagram:
    """Bulk Voronoi tessellation.

    ``scale`` is the window diameter; sentinels sit at distance
    ``2 * SENTINEL_FACTOR * scale`` around the centroid.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = pts.shape[0]
    if n == 0:
        return VoronoiDiagram(pts, np.zeros(0, bool), np.zeros((0, 2)), np.zeros(1, int), np.zeros(0))
    if n < 3:
        # too few for Qhull; fall back to the clipping kernel
        H = SENTINEL_FACTOR * max(scale or 0.0, np.ptp(pts, axis=0).max() if n > 1 else 0.0, 1.0)
        cells = [voronoi_cell(i, pts, H) for i in range(n)]
        return _from_cells(pts, cells)
    if scale is None:
        scale = float(np.hypot(*np.ptp(pts, axis=0))) or 1.0
    H = 2.0 * SENTINEL_FACTOR * scale
    c = pts.mean(axis=0)
    sent = c + H * np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    vor = Voronoi(np.vstack([pts, sent]))
    touches = np.zeros(n + 4, dtype=bool)
    rp = vor.ridge_points
    s_mask = rp >= n
    touches[rp[s_mask[:, 1], 0]] = True
    touches[rp[s_mask[:, 0], 1]] = True
    regions = [vor.regions[vor.point_region[i]] for i in range(n)]
    lengths = np.fromiter(map(len, regions), dtype=np.int64, count=n)
    flat = np.fromiter(chain.from_iterable(regions), dtype=np.int64, count=int(lengths.sum()))
    if np.any(flat < 0):
        raise RuntimeError("qhull returned an open region despite sentinels")
    owner = np.repeat(np.arange(n), lengths)
    verts = vor.vertices[flat]
    rel = verts - pts[owner]
    ang = np.arctan2(rel[:, 1], rel[:, 0])
    order = np.lexsort((ang, owner))
    verts = verts[order]
    rel = rel[order]
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    nxt = np.arange(len(flat)) + 1
    nxt[offsets[1:] - 1] = offsets[:-1]
    cross = rel[:, 0] * rel[nxt, 1] - rel[:, 1] * rel[nxt, 0]
    areas = 0.5 * np.add.reduceat(cross, offsets[:-1]) if len(flat) else np.zeros(n)
    return VoronoiDiagram(pts, ~touches[:n], verts, offsets, areas)


def _from_cells(pts, cells) -> VoronoiDiagram:
    bounded = np.array([c.bounded for c in cells])
    lengths = [len(c) for c in cells]
    verts = np.vstack([c.vertices for c in cells]) if sum(lengths) else np.zeros((0, 2))
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(int)
    areas = np.array([max(0.0, _shoelace(c.vertices.tolist())) for c in cells])
    return VoronoiDiagram(pts, bounded, verts, offsets, areas)


# ---------------------------------------------------------------------------
# polygon ∩ disk


def _segment_disk_area(ax, ay, bx, by, r):
    """Signed area of triangle (0, a, b) intersected with the disk B(0, r)."""
    dx, dy = bx - ax, by - ay
    A = dx * dx + dy * dy
    if A == 0.0:
        return 0.0
    B = ax * dx + ay * dy
    C = ax * ax + ay * ay - r * r
    disc = B * B - A * C
    ts = [0.0]
    if disc > 0:
        sq = math.sqrt(disc)
        for t in ((-B - sq) / A, (-B + sq) / A):
            if 0.0 < t < 1.0:
                ts.append(t)
    ts.append(1.0)
    total = 0.0
    for t0, t1 in zip(ts[:-1], ts[1:]):
        px, py = ax + t0 * dx, ay + t0 * dy
        qx, qy = ax + t1 * dx, ay + t1 * dy
        tm = 0.5 * (t0 + t1)
        mx, my = ax + tm * dx, ay + tm * dy
        cr = px * qy - py * qx
        if disc > 0 and mx * mx + my * my < r * r:
            total += 0.5 * cr
        else:
            total += 0.5 * r * r * math.atan2(cr, px * qx + py * qy)
    return total


def polygon_disk_area(vertices, center, radius: float) -> float:
    """Area of a CCW polygon intersected with a disk (exact)."""
    v = np.asarray(vertices, dtype=float).reshape(-1, 2)
    if v.shape[0] < 3:
        return 0.0
    rel = (v - np.asarray(center, dtype=float)).tolist()
    s = 0.0
    n = len(rel)
    for k in range(n):
        a = rel[k]
        b = rel[(k + 1) % n]
        s += _segment_disk_area(a[0], a[1], b[0], b[1], radius)
    return max(0.0, s)


def bulk_polygon_disk_area(vertices, offsets, owner_centers, radii) -> np.ndarray:
    """Vectorized polygon ∩ disk areas for flat CCW vertex arrays.

    ``vertices[offsets[i]:offsets[i+1]]`` is polygon ``i``; the disk of
    polygon ``i`` has centre ``owner_centers[i]`` and radius ``radii[i]``.
    """
    offsets = np.asarray(offsets)
    n = len(offsets) - 1
    lengths = np.diff(offsets)
    owner = np.repeat(np.arange(n), lengths)
    m = len(owner)
    if m == 0:
        return np.zeros(n)
    nxt = np.arange(m) + 1
    nxt[offsets[1:] - 1] = offsets[:-1]
    c = np.asarray(owner_centers, dtype=float)[owner]
    r = np.broadcast_to(np.asarray(radii, dtype=float), (n,))[owner]
    a = np.asarray(vertices, dtype=float) - c
    b = np.asarray(vertices, dtype=float)[nxt] - c
    d = b - a
    A = (d * d).sum(1)
    B = (a * d).sum(1)
    C = (a * a).sum(1) - r * r
    disc = B * B - A * C
    safeA = np.where(A > 0, A, 1.0)
    sq = np.sqrt(np.maximum(disc, 0.0))
    t1 = np.where(disc > 0, (-B - sq) / safeA, 0.0)
    t2 = np.where(disc > 0, (-B + sq) / safeA, 0.0)
    t1 = np.clip(t1, 0.0, 1.0)
    t2 = np.clip(t2, 0.0, 1.0)
    ts = np.stack([np.zeros(m), t1, t2, np.ones(m)], axis=1)
    total = np.zeros(m)
    r2 = r * r
    for k in range(3):
        u0, u1 = ts[:, k], ts[:, k + 1]
        p = a + u0[:, None] * d
        q = a + u1[:, None] * d
        mid = a + (0.5 * (u0 + u1))[:, None] * d
        cr = p[:, 0] * q[:, 1] - p[:, 1] * q[:, 0]
        dot = (p * q).sum(1)
        inside = ((mid * mid).sum(1) < r2) & (disc > 0)
        piece = np.where(inside, 0.5 * cr, 0.5 * r2 * np.arctan2(cr, dot))
        total += np.where(u1 > u0, piece, 0.0)
    total = np.where(A > 0, total, 0.0)
    out = np.add.reduceat(total, offsets[:-1]) if m else np.zeros(n)
    out[lengths == 0] = 0.0
    return np.maximum(out, 0.0)


# ---------------------------------------------------------------------------
# disks, angular intervals and arcs


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ValueError(f"disk radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    def point_at(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.stack(
            [self.center[0] + self.radius * np.cos(theta), self.center[1] + self.radius * np.sin(theta)], axis=-1
        )


Intervals = tuple  # tuple of (a, b) with 0 <= a < b <= 2π, sorted and disjoint


def _norm_angle(t: float) -> float:
    t = math.fmod(t, TWO_PI)
    return t + TWO_PI if t < 0 else t


def intervals_from_arc(start: float, width: float) -> Intervals:
    """Open arc of angular ``width`` starting at ``start`` (CCW), split at 0."""
    if width <= 0:
        return ()
    if width >= TWO_PI:
        return ((0.0, TWO_PI),)
    a = _norm_angle(start)
    b = a + width
    if b <= TWO_PI:
        return ((a, b),)
    return ((0.0, b - TWO_PI), (a, TWO_PI))


def intervals_union(ivs) -> Intervals:
    items = sorted(iv for iv in ivs if iv[1] > iv[0])
    out = []
    for a, b in items:
        if out and a <= out[-1][1]:
            if b > out[-1][1]:
                out[-1] = (out[-1][0], b)
        else:
            out.append((a, b))
    return tuple(out)


def intervals_complement(ivs: Intervals) -> Intervals:
    out = []
    cur = 0.0
    for a, b in ivs:
        if a > cur:
            out.append((cur, a))
        cur = max(cur, b)
    if cur < TWO_PI:
        out.append((cur, TWO_PI))
    return tuple(out)


def intervals_intersect(x: Intervals, y: Intervals) -> Intervals:
    out = []
    i = j = 0
    while i < len(x) and j < len(y):
        a = max(x[i][0], y[j][0])
        b = min(x[i][1], y[j][1])
        if b > a:
            out.append((a, b))
        if x[i][1] < y[j][1]:
            i += 1
        else:
            j += 1
    return tuple(out)


def intervals_measure(ivs: Intervals) -> float:
    return float(sum(b - a for a, b in ivs))


@dataclass(frozen=True)
class ArcSet:
    """Union of disjoint open arcs of ``circle``; angles in ``[0, 2π]``."""

    circle: Disk
    intervals: Intervals = ()

    def __post_init__(self):
        object.__setattr__(self, "intervals", intervals_union(tuple((float(a), float(b)) for a, b in self.intervals)))
        for a, b in self.intervals:
            if a < -1e-15 or b > TWO_PI + 1e-12:
                raise ValueError("arc intervals must lie in [0, 2π]")

    @property
    def angle(self) -> float:
        return intervals_measure(self.intervals)

    def restrict(self, ivs: Intervals) -> "ArcSet":
        return ArcSet(self.circle, intervals_intersect(self.intervals, ivs))

    def complement(self) -> "ArcSet":
        return ArcSet(self.circle, intervals_complement(self.intervals))

    def translate(self, v) -> "ArcSet":
        c = self.circle
        return ArcSet(Disk((c.center[0] + v[0], c.center[1] + v[1]), c.radius), self.intervals)


def arc_length(a: ArcSet) -> float:
    """One-dimensional Hausdorff measure of the arcs."""
    return a.circle.radius * a.angle


def _circle_lens_interval(ci, ri, cj, s):
    """Angles on circle ``(ci, ri)`` strictly inside the open disk ``(cj, s)``."""
    dx, dy = cj[0] - ci[0], cj[1] - ci[1]
    d = math.hypot(dx, dy)
    if d == 0.0:
        return ()
    c = (ri * ri + d * d - s * s) / (2.0 * ri * d)
    if c >= 1.0:
        return ()
    if c <= -1.0:
        return ((0.0, TWO_PI),)
    w = math.acos(c)
    phi = math.atan2(dy, dx)
    return intervals_from_arc(phi - w, 2.0 * w)


def nearest_covering_germ(y, disks: Sequence[Disk], open: bool = False) -> int | None:
    """Index of the nearest centre among disks covering ``y``.

    Covering means ``|y - c| <= r`` (``< r`` when ``open``).  Ties in the
    distance go to the lexicographically smaller centre.
    """
    best = None
    best_key = None
    for k, dk in enumerate(disks):
        d = math.hypot(y[0] - dk.center[0], y[1] - dk.center[1])
        covered = d < dk.radius if open else d <= dk.radius
        if not covered:
            continue
        key = (d, dk.center[0], dk.center[1])
        if best_key is None or key < best_key:
            best, best_key = k, key
    return best


def _check_distinct(i, disks):
    ci, ri = disks[i].center, disks[i].radius
    for j, dj in enumerate(disks):
        if j != i and dj.center == ci and dj.radius == ri:
            raise ValueError(f"disks {i} and {j} are identical (concentric, equal radii)")


def closer_cover_intervals(i: int, centers, radii, candidates=None) -> Intervals:
    """Angles of circle ``i`` lying in some other open grain whose germ is strictly nearer.

    For ``z`` on circle ``i``, ``|z - x_i| = r_i``, so the condition
    ``z ∈ B°(x_j, r_j)`` and ``|z - x_j| < |z - x_i|`` is
    ``z ∈ B°(x_j, min(r_i, r_j))``.
    """
    ci = centers[i]
    ri = radii[i]
    ivs = []
    it = range(len(centers)) if candidates is None else candidates
    for j in it:
        if j == i:
            continue
        ivs.extend(_circle_lens_interval(ci, ri, centers[j], min(ri, radii[j])))
    return intervals_union(ivs)


def uncovered_boundary_arcs(i: int, disks: Sequence[Disk]) -> tuple[ArcSet, ArcSet]:
    """Split circle ``i`` into ``(keep, closer_cover)``."""
    _check_distinct(i, disks)
    centers = [d.center for d in disks]
    radii = [d.radius for d in disks]
    cc = closer_cover_intervals(i, centers, radii)
    circ = disks[i]
    return ArcSet(circ, intervals_complement(cc)), ArcSet(circ, cc)


def closer_cover_oracle(i: int, disks: Sequence[Disk], theta) -> np.ndarray:
    """Pointwise test of the closer-cover condition at angles ``theta``."""
    z = disks[i].point_at(theta)
    ci = np.asarray(disks[i].center)
    di = np.hypot(*(z - ci).T)
    out = np.zeros(z.shape[0], dtype=bool)
    for j, dj in enumerate(disks):
        if j == i:
            continue
        dz = np.hypot(*(z - np.asarray(dj.center)).T)
        out |= (dz < dj.radius) & (dz < di)
    return out


def _line_circle_angles(px, py, ux, uy, cx, cy, r):
    """Parameters t and circle angles where ``p + t u`` meets circle ``(c, r)``."""
    ax, ay = px - cx, py - cy
    B = ax * ux + ay * uy
    C = ax * ax + ay * ay - r * r
    disc = B * B - C
    if disc <= 0:
        return []
    sq = math.sqrt(disc)
    out = []
    for t in (-B - sq, -B + sq):
        x, y = ax + t * ux, ay + t * uy
        out.append((t, math.atan2(y, x)))
    return out


def _circle_circle_angles(c1, r1, c2, r2):
    dx, dy = c2[0] - c1[0], c2[1] - c1[1]
    d = math.hypot(dx, dy)
    if d == 0 or d >= r1 + r2 or d <= abs(r1 - r2):
        return []
    c = (r1 * r1 + d * d - r2 * r2) / (2 * r1 * d)
    c = min(1.0, max(-1.0, c))
    w = math.acos(c)
    phi = math.atan2(dy, dx)
    return [phi - w, phi + w]


def arcs_in_box(a: ArcSet, lo, hi) -> ArcSet:
    """Sub-arcs of ``a`` inside the box ``[lo, hi]``."""
    c = a.circle
    cx, cy = c.center
    r = c.radius
    cuts = [0.0, TWO_PI]
    for px, py, ux, uy in ((lo[0], 0.0, 0.0, 1.0), (hi[0], 0.0, 0.0, 1.0), (0.0, lo[1], 1.0, 0.0), (0.0, hi[1], 1.0, 0.0)):
        for _, th in _line_circle_angles(px, py, ux, uy, cx, cy, r):
            cuts.append(_norm_angle(th))
    cuts.sort()
    ivs = []
    for t0, t1 in zip(cuts[:-1], cuts[1:]):
        if t1 <= t0:
            continue
        tm = 0.5 * (t0 + t1)
        x, y = cx + r * math.cos(tm), cy + r * math.sin(tm)
        if lo[0] <= x <= hi[0] and lo[1] <= y <= hi[1]:
            ivs.append((t0, t1))
    return a.restrict(intervals_union(ivs))


def arcs_in_disk(a: ArcSet, center, radius: float) -> ArcSet:
    """Sub-arcs of ``a`` inside the closed disk ``B(center, radius)``."""
    c = a.circle
    dx, dy = center[0] - c.center[0], center[1] - c.center[1]
    d = math.hypot(dx, dy)
    r = c.radius
    if d + r <= radius:
        return a
    if d >= r + radius or d + radius <= r:
        return ArcSet(c, ())
    return a.restrict(_circle_lens_interval(c.center, r, center, radius))


# ---------------------------------------------------------------------------
# nearest-covering (NC) regions


def _contains_nc(px, py, ri, ncx, ncy, nr, ahead):
    """Membership in NC for points relative to germ ``i`` (vectorized)."""
    d0 = px * px + py * py
    ok = d0 < ri * ri
    for k in range(len(nr)):
        dk = (px - ncx[k]) ** 2 + (py - ncy[k]) ** 2
        closer = dk < d0 if not ahead[k] else dk <= d0
        ok &= ~((dk < nr[k] * nr[k]) & closer)
    return ok


@dataclass(frozen=True, eq=False)
class NCRegion:
    """Points whose nearest covering germ (open grains) is germ ``i``.

    Coordinates of ``nbr_centers`` are relative to ``center``.  ``ahead[k]``
    marks neighbours winning exact distance ties (lexicographically smaller
    centre).
    """

    center: tuple[float, float]
    radius: float
    nbr_centers: np.ndarray
    nbr_radii: np.ndarray
    ahead: np.ndarray = field(default=None)

    def __post_init__(self):
        nc = np.asarray(self.nbr_centers, dtype=float).reshape(-1, 2)
        nr = np.asarray(self.nbr_radii, dtype=float).reshape(-1)
        if self.ahead is None:
            ahead = np.zeros(nr.shape[0], dtype=bool)
        else:
            ahead = np.asarray(self.ahead, dtype=bool).reshape(-1)
        object.__setattr__(self, "nbr_centers", nc)
        object.__setattr__(self, "nbr_radii", nr)
        object.__setattr__(self, "ahead", ahead)

    @classmethod
    def build(cls, i: int, centers, radii, candidates=None) -> "NCRegion":
        centers = np.asarray(centers, dtype=float).reshape(-1, 2)
        radii = np.asarray(radii, dtype=float).reshape(-1)
        ci, ri = centers[i], radii[i]
        idx = range(len(centers)) if candidates is None else candidates
        keep = []
        for j in idx:
            if j == i:
                continue
            d = math.hypot(*(centers[j] - ci))
            if d < ri + radii[j]:
                keep.append(j)
        keep = np.array(keep, dtype=int)
        rel = centers[keep] - ci if len(keep) else np.zeros((0, 2))
        ahead = np.array(
            [(centers[j, 0], centers[j, 1]) < (ci[0], ci[1]) for j in keep], dtype=bool
        )
        return cls((float(ci[0]), float(ci[1])), float(ri), rel, radii[keep], ahead)

    @property
    def equal_radii(self) -> bool:
        return bool(np.all(self.nbr_radii == self.radius))

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        px = p[:, 0] - self.center[0]
        py = p[:, 1] - self.center[1]
        return _contains_nc(px, py, self.radius, self.nbr_centers[:, 0], self.nbr_centers[:, 1], self.nbr_radii, self.ahead)

    def _contains_rel(self, x: float, y: float, skip: int = -1) -> bool:
        d0 = x * x + y * y
        if not d0 < self.radius * self.radius:
            return False
        for k, ((cx, cy), r, a) in enumerate(zip(self.nbr_centers.tolist(), self.nbr_radii.tolist(), self.ahead.tolist())):
            if k == skip:
                continue
            dk = (x - cx) ** 2 + (y - cy) ** 2
            if dk < r * r and (dk < d0 or (a and dk == d0)):
                return False
        return True

    def voronoi_polygon(self) -> list:
        """Relative Voronoi polygon of the germ among its neighbours, clipped to the grain's box."""
        r = self.radius
        poly = [(-r, -r), (r, -r), (r, r), (-r, r)]
        for cx, cy in self.nbr_centers.tolist():
            poly, _ = _clip_halfplane(poly, cx, cy, 0.5 * (cx * cx + cy * cy), 0)
            if not poly:
                break
        return poly

    def area(self, clip_box=None, clip_disk=None) -> float:
        """Exact Lebesgue measure of NC (optionally intersected with a box or disk)."""
        if clip_disk is None and self.equal_radii:
            poly = self.voronoi_polygon()
            if clip_box is not None:
                lo = (clip_box.lo[0] - self.center[0], clip_box.lo[1] - self.center[1])
                hi = (clip_box.hi[0] - self.center[0], clip_box.hi[1] - self.center[1])
                poly = clip_to_box(poly, lo, hi)
            if len(poly) < 3:
                return 0.0
            return polygon_disk_area(np.array(poly), (0.0, 0.0), self.radius)
        return self._green_area(clip_box, clip_disk)

    # -- generic boundary integration --------------------------------------

    def _curves(self, clip_box, clip_disk):
        """Circles ``(cx, cy, r)`` and line chords ``(px, py, ux, uy, t0, t1)`` in relative coordinates."""
        ri = self.radius
        circles = [(0.0, 0.0, ri)]
        lines = []
        for (cx, cy), r in zip(self.nbr_centers.tolist(), self.nbr_radii.tolist()):
            circles.append((cx, cy, r))
            d = math.hypot(cx, cy)
            if d > 0:
                ux, uy = -cy / d, cx / d
                lines.append((0.5 * cx, 0.5 * cy, ux, uy))
        if clip_disk is not None:
            (dx, dy), rd = clip_disk
            circles.append((dx - self.center[0], dy - self.center[1], rd))
        if clip_box is not None:
            lo = (clip_box.lo[0] - self.center[0], clip_box.lo[1] - self.center[1])
            hi = (clip_box.hi[0] - self.center[0], clip_box.hi[1] - self.center[1])
            lines += [(lo[0], 0.0, 0.0, 1.0), (hi[0], 0.0, 0.0, 1.0), (0.0, lo[1], 1.0, 0.0), (0.0, hi[1], 1.0, 0.0)]
        chords = []
        for px, py, ux, uy in lines:
            hits = _line_circle_angles(px, py, ux, uy, 0.0, 0.0, ri)
            if len(hits) == 2:
                chords.append((px, py, ux, uy, hits[0][0], hits[1][0]))
        return circles, chords

    def _green_area(self, clip_box, clip_disk) -> float:
        circles, chords = self._curves(clip_box, clip_disk)

        def member(x, y):
            if not self._contains_rel(x, y):
                return False
            if clip_box is not None:
                X, Y = x + self.center[0], y + self.center[1]
                if not (clip_box.lo[0] <= X <= clip_box.hi[0] and clip_box.lo[1] <= Y <= clip_box.hi[1]):
                    return False
            if clip_disk is not None:
                (dx, dy), rd = clip_disk
                X, Y = x + self.center[0] - dx, y + self.center[1] - dy
                if X * X + Y * Y > rd * rd:
                    return False
            return True

        eps = 1e-9 * self.radius
        total = 0.0
        for a, (cx, cy, r) in enumerate(circles):
            cuts = [0.0, TWO_PI]
            for b, (ex, ey, er) in enumerate(circles):
                if a != b:
                    cuts.extend(_norm_angle(t) for t in _circle_circle_angles((cx, cy), r, (ex, ey), er))
            for px, py, ux, uy, t0, t1 in chords:
                for t, th in _line_circle_angles(px, py, ux, uy, cx, cy, r):
                    if t0 <= t <= t1:
                        cuts.append(_norm_angle(th))
            cuts.sort()
            for th0, th1 in zip(cuts[:-1], cuts[1:]):
                if th1 - th0 <= 1e-15:
                    continue
                tm = 0.5 * (th0 + th1)
                cm, sm = math.cos(tm), math.sin(tm)
                inside = member(cx + (r - eps) * cm, cy + (r - eps) * sm)
                outside = member(cx + (r + eps) * cm, cy + (r + eps) * sm)
                if inside == outside:
                    continue
                contrib = 0.5 * (
                    r * cx * (math.sin(th1) - math.sin(th0))
                    - r * cy * (math.cos(th1) - math.cos(th0))
                    + r * r * (th1 - th0)
                )
                total += contrib if inside else -contrib
        for a, (px, py, ux, uy, t0, t1) in enumerate(chords):
            cuts = [t0, t1]
            for cx, cy, r in circles:
                for t, _ in _line_circle_angles(px, py, ux, uy, cx, cy, r):
                    if t0 < t < t1:
                        cuts.append(t)
            for b, (qx, qy, vx, vy, s0, s1) in enumerate(chords):
                if a == b:
                    continue
                den = ux * vy - uy * vx
                if abs(den) < 1e-15:
                    continue
                wx, wy = qx - px, qy - py
                t = (wx * vy - wy * vx) / den
                if t0 < t < t1:
                    cuts.append(t)
            cuts.sort()
            nx, ny = -uy, ux  # left normal
            for s0, s1 in zip(cuts[:-1], cuts[1:]):
                if s1 - s0 <= 1e-15:
                    continue
                tm = 0.5 * (s0 + s1)
                mx, my = px + tm * ux, py + tm * uy
                left = member(mx + eps * nx, my + eps * ny)
                right = member(mx - eps * nx, my - eps * ny)
                if left == right:
                    continue
                ax, ay = px + s0 * ux, py + s0 * uy
                bx, by = px + s1 * ux, py + s1 * uy
                contrib = 0.5 * (ax * by - ay * bx)
                total += contrib if left else -contrib
        return max(0.0, total)

    def circle_membership(self, cx: float, cy: float, r: float) -> Intervals:
        """Angles of the circle ``(cx, cy, r)`` (absolute centre) lying inside NC."""
        x0, y0 = cx - self.center[0], cy - self.center[1]
        cuts = [0.0, TWO_PI]
        cuts.extend(_norm_angle(t) for t in _circle_circle_angles((x0, y0), r, (0.0, 0.0), self.radius))
        own = -1
        for k, ((nx, ny), nr) in enumerate(zip(self.nbr_centers.tolist(), self.nbr_radii.tolist())):
            if nx == x0 and ny == y0:
                # points on a circle never lie in that circle's open grain
                own = k
                continue
            cuts.extend(_norm_angle(t) for t in _circle_circle_angles((x0, y0), r, (nx, ny), nr))
            d = math.hypot(nx, ny)
            if d > 0:
                ux, uy = -ny / d, nx / d
                for _, th in _line_circle_angles(0.5 * nx, 0.5 * ny, ux, uy, x0, y0, r):
                    cuts.append(_norm_angle(th))
        cuts.sort()
        ivs = []
        for t0, t1 in zip(cuts[:-1], cuts[1:]):
            if t1 - t0 <= 1e-15:
                continue
            tm = 0.5 * (t0 + t1)
            if self._contains_rel(x0 + r * math.cos(tm), y0 + r * math.sin(tm), own):
                ivs.append((t0, t1))
        return intervals_union(ivs)

    def sample(self, count: int, seed: SeedLike, max_batches: int = 10_000) -> np.ndarray:
        """Uniform points in NC by rejection from the grain."""
        rng = as_generator(seed)
        out, got = [], 0
        r = self.radius
        for _ in range(max_batches):
            if got >= count:
                break
            m = max(64, 2 * (count - got))
            u = rng.random((m, 2))
            rr = r * np.sqrt(u[:, 0])
            th = TWO_PI * u[:, 1]
            p = np.column_stack([self.center[0] + rr * np.cos(th), self.center[1] + rr * np.sin(th)])
            keep = p[self.contains(p)]
            out.append(keep)
            got += len(keep)
        else:
            raise RuntimeError("NC region rejection sampler exhausted its budget")
        return np.concatenate(out)[:count]


def union_boundary_intervals(i: int, centers, radii, candidates=None) -> Intervals:
    """Angles of circle ``i`` not inside any other open disk (on the union's boundary)."""
    ci, ri = centers[i], radii[i]
    it = range(len(centers)) if candidates is None else candidates
    ivs = []
    for j in it:
        if j != i:
            ivs.extend(_circle_lens_interval(ci, ri, centers[j], radii[j]))
    return intervals_complement(intervals_union(ivs))


def union_boundary_length(disks: Sequence[Disk]) -> float:
    """Length of the boundary of a union of disks (independent arc oracle)."""
    centers = [d.center for d in disks]
    radii = [d.radius for d in disks]
    return float(sum(radii[i] * intervals_measure(union_boundary_intervals(i, centers, radii)) for i in range(len(disks))))
