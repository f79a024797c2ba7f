"""Empirical functionals and Monte Carlo limit targets.

Every target is an integral over an auxiliary homogeneous process ``H_a``
seen from an inserted point at the origin.  ``H_a`` is sampled on a ball
``B_L`` built from independently seeded shells, so growing ``L`` until the
stabilization certificate fits never changes the points already drawn.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import functionals as fn
from .functionals import TestFunction, XiFunctional
from .point_process import (
    ALL_SPACE,
    Box,
    DensityModel,
    MarkDistribution,
    PointConfiguration,
    RegionFamily,
    growing_ball_sample,
    sample_poisson_kappa,
)
from .rng import SeedLike, derive

CENSOR_LIMIT = 0.01
BLOCK = 64


class DiagnosticError(RuntimeError):
    """Raised when a Monte Carlo run cannot be trusted (censoring, truncation)."""


@dataclass(frozen=True)
class McParams:
    """Discretization and replication settings for the limit targets."""

    outer_reps: int = 20_000
    inner_reps: int = 2_000
    window_half_size: float = 4.0
    window_growth: str = "grow"
    max_window: float = 256.0
    trunc_radius: float | None = None
    radial_grid: int = 8
    pair_reps: int = 20_000
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        for name in ("outer_reps", "inner_reps", "radial_grid", "pair_reps", "jobs"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")
        if not self.window_half_size > 0:
            raise ValueError("window_half_size must be positive")
        if self.window_growth not in ("fixed", "grow"):
            raise ValueError("window_growth must be 'fixed' or 'grow'")
        if self.trunc_radius is not None and not self.trunc_radius > 0:
            raise ValueError("trunc_radius must be positive")

    def with_seed(self, *key) -> "McParams":
        ss = derive(self.seed, *key)
        return replace(self, seed=int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1)))


@dataclass(frozen=True)
class EstimateWithError:
    value: float
    std_error: float
    reps: int

    @classmethod
    def from_samples(cls, x) -> "EstimateWithError":
        x = np.asarray(x, dtype=float)
        n = x.size
        if n == 0:
            return cls(0.0, 0.0, 0)
        m = Moments.from_array(x)
        return cls(m.mean, m.std_error, n)

    @classmethod
    def exact(cls, value: float) -> "EstimateWithError":
        return cls(float(value), 0.0, 0)

    def z_score(self, target: float, target_error: float = 0.0) -> float:
        se = math.hypot(self.std_error, target_error)
        if se == 0:
            return 0.0 if self.value == target else math.copysign(math.inf, self.value - target)
        return (self.value - target) / se

    def __add__(self, other: "EstimateWithError") -> "EstimateWithError":
        return EstimateWithError(self.value + other.value, math.hypot(self.std_error, other.std_error), min(self.reps, other.reps))

    def scaled(self, c: float) -> "EstimateWithError":
        return EstimateWithError(c * self.value, abs(c) * self.std_error, self.reps)


@dataclass(frozen=True)
class Moments:
    """Count, mean and centred sum of squares, mergeable in any grouping (Chan et al.)."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def from_array(cls, x) -> "Moments":
        x = np.asarray(x, dtype=float).ravel()
        if x.size == 0:
            return cls()
        blocks = [x[i:i + BLOCK] for i in range(0, x.size, BLOCK)]
        parts = [cls(b.size, float(b.mean()), float(((b - b.mean()) ** 2).sum())) for b in blocks]
        return pairwise_merge(parts)

    def merge(self, other: "Moments") -> "Moments":
        if self.n == 0:
            return other
        if other.n == 0:
            return self
        n = self.n + other.n
        d = other.mean - self.mean
        mean = self.mean + d * other.n / n
        m2 = self.m2 + other.m2 + d * d * self.n * other.n / n
        return Moments(n, mean, m2)

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance / self.n) if self.n > 1 else 0.0


def pairwise_merge(parts: Sequence[Moments]) -> Moments:
    parts = list(parts)
    if not parts:
        return Moments()
    while len(parts) > 1:
        nxt = [parts[i].merge(parts[i + 1]) for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


# ---------------------------------------------------------------------------
# replication


def _run_block(fn_and_args):
    func, args, seeds = fn_and_args
    return [func(*args, s) for s in seeds]


def replicate(func: Callable, args: tuple, seed: SeedLike, key, reps: int, jobs: int = 1) -> list:
    """``[func(*args, seed_r) for r in range(reps)]`` with per-replicate streams.

    Replicate ``r`` always gets stream ``(seed, *key, r)``, so the result is the
    same for any ``jobs``.  ``func`` must be a module-level function.
    """
    key = tuple(key) if isinstance(key, (tuple, list)) else (key,)
    seeds = [derive(seed, *key, r) for r in range(reps)]
    if jobs <= 1 or reps < 2 * BLOCK:
        return [func(*args, s) for s in seeds]
    chunks = [(func, args, seeds[i:i + BLOCK]) for i in range(0, reps, BLOCK)]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        out = []
        for block in ex.map(_run_block, chunks):
            out.extend(block)
    return out


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# local configurations around the origin


def _cfg(positions, radii, window) -> PointConfiguration:
    return PointConfiguration(positions, window, radii, _checked=False)


def _with_inserted(base: PointConfiguration, pts, radii) -> PointConfiguration:
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    pos = np.vstack([base.positions, pts])
    r = None if base.radii is None else np.concatenate([base.radii, np.asarray(radii, dtype=float)])
    return _cfg(pos, r, base.window)


def _mark_radius(marks: MarkDistribution, seed, tag) -> float | None:
    if not marks.marked:
        return None
    u = np.random.default_rng(derive(seed, tag)).random()
    return float(marks.radii_from_uniform(np.array([u]))[0])


def _certificate(xi, cfg, i) -> float:
    return fn.stabilization_radius(XiFunctional(xi.family), i, cfg)


@dataclass
class _Local:
    """Evaluations at inserted points of a homogeneous sample on ``B_L``."""

    values: tuple
    certs: tuple
    radius: float
    censored: bool


def _local_eval(xi, a, marks, params, seed, inserts, mark_tags, evals):
    """Sample ``H_a`` on a growing ball and evaluate at inserted points.

    ``inserts`` are positions, ``evals`` a list of ``(subset, target)`` pairs:
    evaluate the total mass at ``inserts[target]`` in ``H ∪ inserts[subset]``.
    The ball grows until every evaluated point's certificate ball fits.
    """
    radii = [_mark_radius(marks, seed, t) for t in mark_tags]
    L = params.window_half_size
    while True:
        H = growing_ball_sample(a, (0.0, 0.0), L, marks, derive(seed, "H"), params.window_half_size)
        vals, certs, ok = [], [], True
        for subset, target in evals:
            pts = [inserts[k] for k in subset]
            rr = [radii[k] for k in subset]
            cfg = _with_inserted(H, pts, rr)
            idx = len(H) + subset.index(target)
            cert = _certificate(xi, cfg, idx)
            reach = cert + math.hypot(*inserts[target])
            if not reach < L:
                ok = False
                break
            vals.append(fn.eval_xi(XiFunctional(xi.family), idx, cfg).total_mass)
            certs.append(cert)
        if ok:
            return _Local(tuple(vals), tuple(certs), L, False)
        if params.window_growth == "fixed" or 2 * L > params.max_window:
            return _Local((), (), L, True)
        L *= 2


def _origin_sample(xi, a, marks, params, seed):
    loc = _local_eval(xi, a, marks, params, seed, [(0.0, 0.0)], ["T0"], [((0,), 0)])
    if loc.censored:
        return (math.nan, math.inf)
    return (loc.values[0], loc.certs[0])


def _check_censoring(flags, what):
    frac = float(np.mean(flags)) if len(flags) else 0.0
    if frac > CENSOR_LIMIT:
        raise DiagnosticError(f"{what}: {100 * frac:.1f}% of replicates censored (certificate beyond max window)")
    return frac


@dataclass(frozen=True)
class OriginStats:
    """Total masses and certificates at the inserted origin of ``H_a``."""

    masses: np.ndarray
    certificates: np.ndarray
    censored: float

    @property
    def mean(self) -> EstimateWithError:
        return EstimateWithError.from_samples(self.masses)

    @property
    def second_moment(self) -> EstimateWithError:
        return EstimateWithError.from_samples(self.masses**2)


def origin_stats(xi: XiFunctional, a: float, marks: MarkDistribution, params: McParams, key=("origin",)) -> OriginStats:
    if not a > 0:
        raise ValueError("intensity must be positive")
    _check_family(xi, marks)
    out = replicate(_origin_sample, (xi, a, marks, params), params.seed, (*key, float(a)), params.inner_reps, params.jobs)
    vals = np.array([o[0] for o in out])
    certs = np.array([o[1] for o in out])
    bad = ~np.isfinite(vals)
    frac = _check_censoring(bad, f"total mass at intensity {a}")
    return OriginStats(vals[~bad], certs[~bad], frac)


def _check_family(xi: XiFunctional, marks: MarkDistribution):
    if xi.needs_marks and not marks.marked:
        raise ValueError(f"{xi.family} requires a disk-radius mark law")
    if not xi.needs_marks and marks.marked:
        raise ValueError("voronoi-volume takes no marks")


def expected_total_mass_homogeneous(xi: XiFunctional, a: float, marks: MarkDistribution, params: McParams) -> EstimateWithError:
    """``E[xi(0, T; H_a ∪ {(0, T)}, R^2)]`` with standard error."""
    return origin_stats(xi, a, marks, params).mean


# ---------------------------------------------------------------------------
# outer integrals over x ~ kappa


def _kappa_values(kappa: DensityModel, x: np.ndarray) -> np.ndarray:
    return kappa.evaluate(x)


def _outer_points(kappa: DensityModel, params: McParams, tag, within: Box | None = None):
    rng = np.random.default_rng(derive(params.seed, "outer", tag))
    x = kappa.sample_positions(rng, params.outer_reps, within)
    return x


A_GRID = 9


def _by_intensity(kappa: DensityModel, x: np.ndarray, compute: Callable[[float], EstimateWithError]):
    """Evaluate ``compute(kappa(x_k))`` for all outer points.

    Piecewise-constant densities are handled exactly by caching per distinct
    value; otherwise ``compute`` runs on an ``A_GRID`` grid spanning the
    observed intensities and is linearly interpolated.  Returns values,
    the interpolation weight matrix and the per-node estimates.
    """
    a = _kappa_values(kappa, x)
    pos = a > 0
    distinct = np.unique(a[pos])
    if distinct.size <= 16:
        nodes = distinct
        W = np.zeros((a.size, nodes.size))
        for k, v in enumerate(nodes):
            W[a == v, k] = 1.0
    else:
        nodes = np.linspace(distinct.min(), distinct.max(), A_GRID)
        W = np.zeros((a.size, nodes.size))
        j = np.clip(np.searchsorted(nodes, a, side="right") - 1, 0, nodes.size - 2)
        t = np.where(pos, (a - nodes[j]) / (nodes[j + 1] - nodes[j]), 0.0)
        rows = np.flatnonzero(pos)
        W[rows, j[rows]] = 1 - t[rows]
        W[rows, j[rows] + 1] = t[rows]
    ests = [compute(float(v)) for v in nodes]
    return W, ests


def _weighted_outer(weights: np.ndarray, W: np.ndarray, ests, scale: float = 1.0) -> EstimateWithError:
    """``scale * mean_k weights_k * sum_j W_kj est_j`` with outer + inner error."""
    vals = np.array([e.value for e in ests])
    ses = np.array([e.std_error for e in ests])
    per = weights * (W @ vals)
    outer = Moments.from_array(per)
    coef = (weights[:, None] * W).mean(axis=0)
    inner_var = float(((coef * ses) ** 2).sum())
    se = math.sqrt(outer.std_error**2 + inner_var)
    return EstimateWithError(scale * outer.mean, abs(scale) * se, len(per))


def lln_target(
    xi: XiFunctional,
    f: TestFunction,
    kappa: DensityModel,
    marks: MarkDistribution,
    gamma: RegionFamily = ALL_SPACE,
    params: McParams = McParams(),
) -> EstimateWithError:
    """``∫ f(x) E[xi(H_{kappa(x)})] kappa(x) dx`` by outer sampling ``x ~ kappa``."""
    if f.is_zero:
        return EstimateWithError.exact(0.0)
    x = _outer_points(kappa, params, "lln")
    W, ests = _by_intensity(kappa, x, lambda a: expected_total_mass_homogeneous(xi, a, marks, params))
    return _weighted_outer(f(x), W, ests)


# ---------------------------------------------------------------------------
# V and delta


def _range_bound(xi: XiFunctional, marks: MarkDistribution) -> float | None:
    """Interaction range of ``xi`` at the origin in the limit process, if bounded."""
    if xi.needs_marks and math.isfinite(marks.max_radius):
        return 2.0 * marks.max_radius
    return None


def truncation_radius(xi: XiFunctional, marks: MarkDistribution, params: McParams, stats: OriginStats) -> float:
    """Radius beyond which the two-point integrand is taken as zero.

    For bounded grains it is twice the interaction range (both points'
    neighbourhoods must be disjoint), where the integrand vanishes exactly.
    Otherwise ``params.trunc_radius`` or six times the 99th percentile of the
    certificate, which must be at least three times its median.
    """
    rb = _range_bound(xi, marks)
    if rb is not None:
        z = 2.0 * rb
        if params.trunc_radius is not None:
            z = min(z, params.trunc_radius)
        return z
    med = float(np.median(stats.certificates))
    z = params.trunc_radius if params.trunc_radius is not None else 6.0 * float(np.percentile(stats.certificates, 99))
    if z < 3 * med:
        raise DiagnosticError(f"truncation radius {z:.3g} below 3x median certificate {med:.3g}")
    return z


def _radial_nodes(zmax: float, panels: int, per_panel: int = 4):
    x, w = np.polynomial.legendre.leggauss(per_panel)
    edges = np.linspace(0.0, zmax, panels + 1)
    r, wt = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        r.append(0.5 * (b - a) * x + 0.5 * (a + b))
        wt.append(0.5 * (b - a) * w)
    r = np.concatenate(r)
    wt = np.concatenate(wt)
    return r, 2.0 * math.pi * r * wt  # includes the polar Jacobian


def _pair_sample(xi, a, marks, params, r, seed):
    """``(xi_0, xi_z, xi_0^0, xi_z^0)`` at ``z`` of length ``r``, random direction."""
    th = 2 * math.pi * np.random.default_rng(derive(seed, "theta")).random()
    z = (r * math.cos(th), r * math.sin(th))
    loc = _local_eval(
        xi, a, marks, params, seed,
        [(0.0, 0.0), z], ["T0", "T1"],
        [((0, 1), 0), ((0, 1), 1), ((0,), 0), ((1,), 1)],
    )
    if loc.censored:
        return (math.nan,) * 4
    return loc.values


def v_xi(x, a: float, xi: XiFunctional, marks: MarkDistribution, params: McParams = McParams()) -> EstimateWithError:
    """Limiting variance density ``V(x, a)``.

    ``E[xi_0^2] + a ∫ (E[xi_0 xi_z] - m^2) dz`` where both masses are taken in
    ``H_a ∪ {0, z}``.  The pair term is estimated as
    ``(xi_0 - m)(xi_z - m) + m[(xi_0 - xi_0^0) + (xi_z - xi_z^0)]`` with
    ``xi^0`` the masses without the partner point (same ``H``), which has the
    right mean and vanishes identically where the points do not interact.
    """
    if a < 0:
        raise ValueError("intensity must be non-negative")
    if a == 0:
        return EstimateWithError.exact(0.0)
    stats = origin_stats(xi, a, marks, params, key=("v-origin",))
    m = stats.mean
    m2 = stats.second_moment
    zmax = truncation_radius(xi, marks, params, stats)
    r, w = _radial_nodes(zmax, params.radial_grid)
    per_node = max(2, params.pair_reps // r.size)
    total, var = 0.0, 0.0
    censored = []
    for k, (rk, wk) in enumerate(zip(r, w)):
        out = np.array(replicate(_pair_sample, (xi, a, marks, params, float(rk)), params.seed, ("v-pair", float(a), k), per_node, params.jobs))
        bad = ~np.all(np.isfinite(out), axis=1)
        censored.extend(bad.tolist())
        out = out[~bad]
        x0, xz, x00, xz0 = out.T
        g = (x0 - m.value) * (xz - m.value) + m.value * ((x0 - x00) + (xz - xz0))
        mom = Moments.from_array(g)
        total += wk * mom.mean
        var += (wk * mom.std_error) ** 2
    _check_censoring(censored, "pair term")
    # E[(xi_0 - m_hat)(xi_z - m_hat)] picks up Var(m_hat) beyond the interaction range
    area = math.pi * zmax * zmax
    pair = total - area * m.std_error**2
    value = m2.value + a * pair
    se = math.sqrt(m2.std_error**2 + a * a * var)
    return EstimateWithError(value, se, params.inner_reps + per_node * r.size)


def _delta_sample(xi, a, marks, params, seed):
    """``xi_0(H^0) + a pi R^2 [xi_0(H^{0,y}) - xi_0(H^0)]`` with ``y`` uniform on ``B_R``."""
    base = _local_eval(xi, a, marks, params, derive(seed, "base"), [(0.0, 0.0)], ["T0"], [((0,), 0)])
    if base.censored:
        return math.nan
    R = base.certs[0]
    u = np.random.default_rng(derive(seed, "y")).random(2)
    rr = R * math.sqrt(u[0])
    th = 2 * math.pi * u[1]
    y = (rr * math.cos(th), rr * math.sin(th))
    both = _local_eval(xi, a, marks, params, derive(seed, "base"), [(0.0, 0.0), y], ["T0", "T1"], [((0, 1), 0), ((0,), 0)])
    if both.censored:
        return math.nan
    x1, x0 = both.values
    return x0 + a * math.pi * R * R * (x1 - x0)


def delta_xi(x, a: float, xi: XiFunctional, marks: MarkDistribution, params: McParams = McParams()) -> EstimateWithError:
    """Add-one increment ``E xi_0 + a ∫ E[xi_0(H^{0,y}) - xi_0(H^0)] dy``.

    The ``y``-integral is restricted pathwise to the certificate ball of the
    origin, outside of which the difference is identically zero, so no
    truncation is involved.
    """
    if not a > 0:
        raise ValueError("intensity must be positive")
    _check_family(xi, marks)
    out = np.array(replicate(_delta_sample, (xi, a, marks, params), params.seed, ("delta", float(a)), params.inner_reps, params.jobs))
    bad = ~np.isfinite(out)
    _check_censoring(bad, "delta")
    return EstimateWithError.from_samples(out[~bad])


# ---------------------------------------------------------------------------
# covariances


def _f_product(f1: TestFunction, f2: TestFunction):
    return lambda x: f1(x) * f2(x)


def clt_covariance_poisson(
    f1: TestFunction, f2: TestFunction, kappa: DensityModel, xi: XiFunctional, marks: MarkDistribution, params: McParams = McParams()
) -> EstimateWithError:
    """``∫ f1 f2 V(x, kappa(x)) kappa(x) dx``."""
    if f1.is_zero or f2.is_zero:
        return EstimateWithError.exact(0.0)
    x = _outer_points(kappa, params, "cov")
    W, ests = _by_intensity(kappa, x, lambda a: v_xi(None, a, xi, marks, params))
    return _weighted_outer(_f_product(f1, f2)(x), W, ests)


def delta_integral(f: TestFunction, kappa: DensityModel, xi: XiFunctional, marks: MarkDistribution, params: McParams = McParams()) -> EstimateWithError:
    """``∫ f(x) delta(x, kappa(x)) kappa(x) dx``."""
    if f.is_zero:
        return EstimateWithError.exact(0.0)
    x = _outer_points(kappa, params, "delta")
    W, ests = _by_intensity(kappa, x, lambda a: delta_xi(None, a, xi, marks, params))
    return _weighted_outer(f(x), W, ests)


def clt_covariance_binomial(
    f1: TestFunction, f2: TestFunction, kappa: DensityModel, xi: XiFunctional, marks: MarkDistribution, params: McParams = McParams()
) -> EstimateWithError:
    """Poisson covariance minus ``∫ f1 delta kappa · ∫ f2 delta kappa``."""
    if f1.is_zero or f2.is_zero:
        return EstimateWithError.exact(0.0)
    pois = clt_covariance_poisson(f1, f2, kappa, xi, marks, params)
    d1 = delta_integral(f1, kappa, xi, marks, params)
    d2 = d1 if f2 == f1 else delta_integral(f2, kappa, xi, marks, params)
    prod = d1.value * d2.value
    if f2 == f1:
        se_prod = 2 * abs(d1.value) * d1.std_error
    else:
        se_prod = math.hypot(d1.value * d2.std_error, d2.value * d1.std_error)
    return EstimateWithError(pois.value - prod, math.hypot(pois.std_error, se_prod), pois.reps)


# ---------------------------------------------------------------------------
# finite-lambda variance identity


@dataclass(frozen=True)
class VarianceDecomposition:
    alpha: EstimateWithError
    beta: EstimateWithError
    total: EstimateWithError  # lam * (alpha + beta), SE from joint samples

    def __iter__(self):
        return iter((self.alpha, self.beta))


def _reach(xi: XiFunctional, marks: MarkDistribution) -> float:
    rb = _range_bound(xi, marks)
    if rb is None:
        raise ValueError("variance decomposition needs bounded interaction range (bounded grains)")
    return rb


def _local_value(xi, f, lam, kappa, marks, center, pts, radii, target, half, seed):
    """``<f, xi_lam(pts[target]; P_lam ∪ pts)>`` using ``P_lam`` on a box around ``center``."""
    win = Box.centered(center, half)
    P = sample_poisson_kappa(lam, kappa, marks, seed, window=win)
    cfg = _with_inserted(P, pts, radii)
    idx = len(P) + target
    return fn.integrate(fn.eval_xi_rescaled(xi, idx, cfg, lam), f)


def _decomp_sample(xi, f, lam, kappa, marks, region, zmax, reach, seed):
    rng = np.random.default_rng(derive(seed, "xz"))
    x = kappa.sample_positions(rng, 1, region)[0]
    u = rng.random(2)
    rr = zmax * math.sqrt(u[0])
    th = 2 * math.pi * u[1]
    s = 1.0 / math.sqrt(lam)
    y = x + s * np.array([rr * math.cos(th), rr * math.sin(th)])
    tx = _mark_radius(marks, seed, "Tx")
    ty = _mark_radius(marks, seed, "Ty")
    half = s * (zmax + reach + 1.0)
    ky = float(kappa.evaluate(y)[0])
    X0 = _local_value(xi, f, lam, kappa, marks, x, [x], [tx], 0, half, derive(seed, "P"))
    alpha = X0 * X0
    if ky == 0.0:
        return alpha, 0.0
    X = _local_value(xi, f, lam, kappa, marks, x, [x, y], [tx, ty], 0, half, derive(seed, "P"))
    Z = _local_value(xi, f, lam, kappa, marks, x, [x, y], [tx, ty], 1, half, derive(seed, "P"))
    Z0 = _local_value(xi, f, lam, kappa, marks, x, [y], [ty], 0, half, derive(seed, "P"))
    X1 = _local_value(xi, f, lam, kappa, marks, x, [x], [tx], 0, half, derive(seed, "P1"))
    Z2 = _local_value(xi, f, lam, kappa, marks, x, [y], [ty], 0, half, derive(seed, "P2"))
    g = (X - X1) * (Z - Z2) + Z2 * (X - X0) + X1 * (Z - Z0)
    return alpha, ky * math.pi * zmax * zmax * g


def variance_decomposition(
    xi: XiFunctional,
    f: TestFunction,
    lam: float,
    kappa: DensityModel,
    marks: MarkDistribution,
    params: McParams = McParams(),
) -> VarianceDecomposition:
    """Palm estimates of ``alpha`` and ``beta`` with ``Var<f, mu_lam> = lam (alpha + beta)``.

    ``alpha = ∫ E[<f, xi_lam(x; P^x)>^2] kappa(x) dx`` and, with
    ``y = x + lam^{-1/2} z``,
    ``beta = ∫∫ (E[<f,xi_lam(x;P^{x,y})><f,xi_lam(y;P^{x,y})>] - m(x) m(y)) kappa(x) kappa(y) dz dx``.
    The ``beta`` integrand is estimated by
    ``(X - X')(Z - Z'') + Z''(X - X^0) + X'(Z - Z^0)`` where primes are copies
    from independent processes; it vanishes for ``|z|`` beyond twice the
    interaction range.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    _check_family(xi, marks)
    zero = EstimateWithError.exact(0.0)
    if f.is_zero:
        return VarianceDecomposition(zero, zero, zero)
    reach = _reach(xi, marks)
    zmax = 2.0 * reach
    s = 1.0 / math.sqrt(lam)
    sb = f.support_box()
    region = kappa.support_box if sb is None else sb.expand(s * reach).intersect(kappa.support_box)
    if region is None:
        return VarianceDecomposition(zero, zero, zero)
    mass = kappa.mass(region, resolution=512)
    out = np.array(
        replicate(_decomp_sample, (xi, f, lam, kappa, marks, region, zmax, reach), params.seed, ("decomp", float(lam)), params.outer_reps, params.jobs)
    )
    a_est = EstimateWithError.from_samples(out[:, 0]).scaled(mass)
    b_est = EstimateWithError.from_samples(out[:, 1]).scaled(mass)
    t_est = EstimateWithError.from_samples(out.sum(axis=1)).scaled(lam * mass)
    return VarianceDecomposition(a_est, b_est, t_est)


# ---------------------------------------------------------------------------
# Voronoi coverage


def symmetric_difference_voronoi(A: Box, config: PointConfiguration, lam: float) -> tuple[float, bool]:
    """``|A △ ∪_{x ∈ A} C(x)|`` as ``lam^{-1} Σ |<1_A, xi_lam - xi*_lam>|``.

    Returns ``(area, flagged)``; ``flagged`` is True when some unbounded cell
    reaches ``A`` (the identity then undercounts).
    """
    if len(config) == 0:
        return A.area, True
    f = TestFunction.indicator_box(A.lo, A.hi)
    vol = fn.bulk_values(XiFunctional("voronoi-volume"), f, config, lam)
    star = fn.bulk_values(XiFunctional("voronoi-volume", star=True), f, config, lam)
    area = float(np.abs(vol - star).sum() / lam)
    from . import geometry as geo
    from .point_process import rescale_config

    dil = rescale_config(config, (0.0, 0.0), lam)
    vd = geo.voronoi_diagram(dil.positions, dil.window.diameter)
    s = math.sqrt(lam)
    flagged = False
    for i in np.flatnonzero(~vd.bounded):
        poly = vd.vertices[vd.offsets[i]:vd.offsets[i + 1]].tolist()
        if len(geo.clip_to_box(poly, (s * A.lo[0], s * A.lo[1]), (s * A.hi[0], s * A.hi[1]))) >= 3:
            flagged = True
            break
    return area, flagged


def empirical_functional(
    xi: XiFunctional, f: TestFunction, config: PointConfiguration, lam: float, gamma: RegionFamily = ALL_SPACE
) -> float:
    """``<f, mu_lam^xi>`` (or ``<f, nu_{lam,n}^xi>`` for a binomial ``config``)."""
    return fn.empirical_functional(xi, f, config, lam, gamma)


# ---------------------------------------------------------------------------
# closed forms


def _grid_integral(g: Callable[[np.ndarray], np.ndarray], box: Box, resolution: int = 1024) -> float:
    xs = np.linspace(box.lo[0], box.hi[0], resolution + 1)
    ys = np.linspace(box.lo[1], box.hi[1], resolution + 1)
    xm, ym = 0.5 * (xs[1:] + xs[:-1]), 0.5 * (ys[1:] + ys[:-1])
    gx, gy = np.meshgrid(xm, ym, indexing="ij")
    return float(g(np.column_stack([gx.ravel(), gy.ravel()])).mean() * box.area)


def closed_form_lln_target(xi: XiFunctional, f: TestFunction, kappa: DensityModel, marks: MarkDistribution) -> float | None:
    """Known limits of ``lam^{-1} <f, mu_lam>``, or ``None`` when no closed form applies.

    * Voronoi cells (either version): ``∫_{supp kappa} f``, as mean cell
      volume at intensity ``a`` is ``1/a``.
    * Boolean model volume: ``∫ f (1 - exp(-kappa E|grain|))``.
    * Boolean model surface: ``∫ f kappa 2 pi E[R] exp(-kappa E|grain|)``.
    """
    box = kappa.support_box
    if xi.family == "voronoi-volume":
        if f.kind == "indicator-box":
            inter = Box(f.p["lo"], f.p["hi"]).intersect(box)
            return 0.0 if inter is None else inter.area
        g = lambda x: f(x) * (kappa.evaluate(x) > 0)
    elif xi.family == "germ-volume":
        ma = marks.mean_area
        g = lambda x: f(x) * (1.0 - np.exp(-kappa.evaluate(x) * ma))
    else:
        if not math.isfinite(marks.mean_area):
            return None
        ma, mr = marks.mean_area, marks.mean_radius
        g = lambda x: f(x) * kappa.evaluate(x) * 2 * math.pi * mr * np.exp(-kappa.evaluate(x) * ma)
    return _grid_integral(g, box)


def coupling_disagreement_mean(
    lam: float, kappa: DensityModel, pivot, K: float, a: float | None = None, nodes: int = 64, angles: int = 4096
) -> float:
    """``lam ∫_{B(pivot, K lam^{-1/2})} |kappa(z) - a| dz`` (``a = kappa(pivot)`` by default).

    Gauss-Legendre in the radius and the periodic trapezoid rule in the angle,
    which copes with the kinks of ``|kappa - a|`` at second order.
    """
    p = np.asarray(pivot, dtype=float)
    if a is None:
        a = float(kappa.evaluate(p)[0])
    R = K / math.sqrt(lam)
    x, w = np.polynomial.legendre.leggauss(nodes)
    r = 0.5 * R * (x + 1)
    wr = 0.5 * R * w
    th = (np.arange(angles) + 0.5) * (2 * np.pi / angles)
    rr, tt = np.meshgrid(r, th, indexing="ij")
    W = np.outer(wr, np.full(angles, 2 * np.pi / angles)) * rr
    pts = np.column_stack([(p[0] + rr * np.cos(tt)).ravel(), (p[1] + rr * np.sin(tt)).ravel()])
    vals = np.abs(kappa.evaluate(pts) - a)
    return float(lam * (W.ravel() * vals).sum())
