"""End-to-end acceptance checks.

Each test prints one ``AC <k>: PASS|FAIL`` line (collected again in the
terminal summary) with the measured quantities, then asserts the verdict.
Runtimes include any shared fixture work charged to the criterion.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.spatial import cKDTree

from conftest import ACCEPTANCE_LINES
from stabsim import cli
from stabsim import geometry as geo
from stabsim import limit_engine as le
from stabsim import stats as st
from stabsim.functionals import TestFunction, XiFunctional
from stabsim.limit_engine import EstimateWithError, McParams
from stabsim.point_process import Box, DensityModel, MarkDistribution, sample_homogeneous
from stabsim.rng import derive

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
RHO = 0.5
FIXED = MarkDistribution.fixed(RHO)
NONE = MarkDistribution.none()
UNIFORM = DensityModel.uniform()
GV = XiFunctional("germ-volume")
VOR = XiFunctional("voronoi-volume")
VSTAR = XiFunctional.parse("voronoi-star")
F1 = TestFunction.indicator_box((0.25, 0.25), (0.75, 0.75))
F2 = TestFunction.indicator_box((0.35, 0.25), (0.85, 0.75))
ENGINE = McParams(outer_reps=1000, inner_reps=20_000, pair_reps=40_000, seed=2024)


def report(k: int, ok: bool, seconds: float, limit: float, detail: str):
    ok_all = ok and seconds < limit
    line = f"AC {k}: {'PASS' if ok_all else 'FAIL'}  {detail}  runtime={seconds:.1f}s (limit {limit:.0f}s)"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line
    assert seconds < limit, line


def run_config(name: str, **options):
    cfg = cli.load_config(CONFIGS / name)
    cfg.options.update(options)
    rows, _ = cli.run_experiment(cfg, jobs=1)
    return rows


def timed(fn_, *args, **kw):
    t0 = time.perf_counter()
    out = fn_(*args, **kw)
    return out, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# shared samples for the variance and Gaussianity criteria


@pytest.fixture(scope="session")
def poisson_germ_samples():
    """4000 draws of (<f1, mu>, <f2, mu>) for germ-volume at lambda = 1000."""
    s, dt = timed(st.replicate_functional, GV, [F1, F2], st.ProcessSpec.poisson(1000), UNIFORM, FIXED, 4000, 81)
    return s.values, dt


@pytest.fixture(scope="session")
def poisson_covariances():
    """Engine prediction of the 2x2 limiting covariance for (f1, f2)."""
    def compute():
        c11 = le.clt_covariance_poisson(F1, F1, UNIFORM, GV, FIXED, ENGINE)
        c12 = le.clt_covariance_poisson(F1, F2, UNIFORM, GV, FIXED, ENGINE)
        c22 = le.clt_covariance_poisson(F2, F2, UNIFORM, GV, FIXED, ENGINE)
        return c11, c12, c22

    return timed(compute)


# ---------------------------------------------------------------------------


def test_ac01_voronoi_mean_cell_area():
    # Cells of nuclei in an inner region tile that region, so the pooled mean is
    # close to |region| / count and fluctuates like 1 / sqrt(cells), not like
    # sd(area) / sqrt(cells).  About 1.5e5 cells put 1% at four standard errors.
    t0 = time.perf_counter()
    L, margin = 30.0, 5.0
    areas = []
    uncertified = 0
    for s in range(400):
        cfg = sample_homogeneous(1.0, Box((0, 0), (L, L)), NONE, derive(1, "ac1", s))
        vd = geo.voronoi_diagram(cfg.positions)
        p = cfg.positions
        inner = np.all((p > margin) & (p < L - margin), axis=1)
        # a cell is exact when its stabilization ball stays inside the window
        reach = 2 * vd.max_vertex_distance()
        to_edge = np.minimum(p, L - p).min(axis=1)
        ok = vd.bounded & (reach < to_edge)
        uncertified += int((inner & ~ok).sum())
        areas.append(vd.areas[inner])
    areas = np.concatenate(areas)
    m = areas.mean()
    passed = areas.size >= 10_000 and abs(m - 1.0) <= 0.01 and uncertified == 0
    report(1, passed, time.perf_counter() - t0, 60,
           f"mean cell area {m:.5f} over {areas.size} cells (target 1, tol 1%), uncertified={uncertified}")


def test_ac02_voronoi_coverage_lln():
    rows, dt = timed(run_config, "voronoi_lln.toml")
    (r,) = rows
    passed = r.target == 0.25 and abs(r.z_score) <= 3 and r.std_error < 0.005
    report(2, passed, dt, 120, f"estimate {r.estimate:.5f} +- {r.std_error:.5f}, target {r.target}, z={r.z_score:.2f}")


def test_ac03_symmetric_difference_shrinks():
    rows, dt = timed(run_config, "voronoi_coverage.toml")
    means = [r.estimate for r in rows]
    lams = [r.param_point for r in rows]
    decreasing = all(b < a for a, b in zip(means, means[1:]))
    passed = lams == ["lambda=250", "lambda=1000", "lambda=4000"] and decreasing and means[-1] < 0.02
    passed = passed and all(r.verdict == "pass" for r in rows)
    report(3, passed, dt, 180, "means " + ", ".join(f"{m:.5f}" for m in means) + " (decreasing, last < 0.02)")


def _boolean_coverage_oracle(seed, windows=40):
    """Coverage fraction of random probe points in a homogeneous Boolean model."""
    hits = n = 0
    rng = np.random.default_rng(seed)
    for w in range(windows):
        cfg = sample_homogeneous(1.0, Box((-1, -1), (21, 21)), FIXED, derive(seed, w))
        probes = rng.random((2000, 2)) * 20
        d, _ = cKDTree(cfg.positions).query(probes)
        hits += int((d < RHO).sum())
        n += probes.shape[0]
    p = hits / n
    return p, math.sqrt(p * (1 - p) / n)


def test_ac04_boolean_volume_lln():
    t0 = time.perf_counter()
    (r,) = run_config("boolean_volume.toml")
    target = 0.25 * (1 - math.exp(-math.pi * RHO**2))
    p, se = _boolean_coverage_oracle(41)
    oracle_z = (p - (1 - math.exp(-math.pi * RHO**2))) / se
    passed = abs(r.target - target) < 1e-9 and abs(r.z_score) <= 3 and abs(oracle_z) <= 3
    report(4, passed, time.perf_counter() - t0, 120,
           f"estimate {r.estimate:.6f} +- {r.std_error:.6f}, target {r.target:.6f}, z={r.z_score:.2f}; "
           f"coverage oracle z={oracle_z:.2f}")


def _boundary_density_oracle(seed, windows=20, L=20.0):
    """Union boundary length per unit area inside [0, L]^2, via exact arcs clipped to the box."""
    vals = []
    for w in range(windows):
        cfg = sample_homogeneous(1.0, Box((-1, -1), (L + 1, L + 1)), FIXED, derive(seed, w))
        c, r = cfg.positions, cfg.radii
        tree = cKDTree(c)
        total = 0.0
        for i in range(len(c)):
            nb = [j for j in tree.query_ball_point(c[i], 2 * RHO) if j != i]
            iv = geo.union_boundary_intervals(i, c, r, nb)
            arcs = geo.arcs_in_box(geo.ArcSet(geo.Disk(tuple(c[i]), float(r[i])), iv), (0, 0), (L, L))
            total += geo.arc_length(arcs)
        vals.append(total / L**2)
    return EstimateWithError.from_samples(vals)


def test_ac05_boolean_surface_lln():
    t0 = time.perf_counter()
    (r,) = run_config("boolean_surface.toml")
    density = 2 * math.pi * RHO * math.exp(-math.pi * RHO**2)
    oracle = _boundary_density_oracle(51)
    oracle_z = oracle.z_score(density)
    passed = abs(r.target - 0.25 * density) < 1e-9 and abs(r.z_score) <= 3 and abs(oracle_z) <= 3
    report(5, passed, time.perf_counter() - t0, 180,
           f"estimate {r.estimate:.6f} +- {r.std_error:.6f}, target {r.target:.6f}, z={r.z_score:.2f}; "
           f"arc oracle z={oracle_z:.2f}")


def test_ac06_delta_conservation():
    t0 = time.perf_counter()
    p = McParams(inner_reps=20_000, seed=61)
    dv = le.delta_xi(None, 1.0, VOR, NONE, p)
    dg = le.delta_xi(None, 1.0, GV, FIXED, p)
    target = math.pi * RHO**2 * math.exp(-math.pi * RHO**2)
    zv, zg = dv.z_score(0.0), dg.z_score(target)
    report(6, abs(zv) <= 3 and abs(zg) <= 3, time.perf_counter() - t0, 120,
           f"voronoi delta {dv.value:.2e} +- {dv.std_error:.1e} (z={zv:.2f}); "
           f"germ delta {dg.value:.5f} +- {dg.std_error:.5f} vs {target:.5f} (z={zg:.2f})")


def test_ac07_variance_identity():
    t0 = time.perf_counter()
    lam = 200.0
    s = st.replicate_functional(GV, [F1], st.ProcessSpec.poisson(lam), UNIFORM, FIXED, 2000, 71)
    direct = cli.variance_estimate(s.values[:, 0])
    dec = le.variance_decomposition(GV, F1, lam, UNIFORM, FIXED, McParams(outer_reps=20_000, seed=72))
    z = direct.z_score(dec.total.value, dec.total.std_error)
    report(7, abs(z) <= 3, time.perf_counter() - t0, 300,
           f"direct Var {direct.value:.4f} +- {direct.std_error:.4f}, lam(alpha+beta) {dec.total.value:.4f} "
           f"+- {dec.total.std_error:.4f}, z={z:.2f}")


def test_ac08_limiting_variance(poisson_germ_samples, poisson_covariances):
    vals, t_samples = poisson_germ_samples
    (c11, _, _), t_cov = poisson_covariances
    est = cli.variance_estimate(vals[:, 0]).scaled(1 / 1000)
    rel = abs(est.value - c11.value) / c11.value
    report(8, rel <= 0.10, t_samples + t_cov, 600,
           f"lam^-1 Var {est.value:.5f} +- {est.std_error:.5f} vs integral of V {c11.value:.5f} "
           f"+- {c11.std_error:.5f}, rel err {rel:.3f} (tol 0.10)")


def test_ac09_gaussianity(poisson_germ_samples, poisson_covariances):
    t0 = time.perf_counter()
    vals, t_samples = poisson_germ_samples
    (c11, c12, c22), t_cov = poisson_covariances
    z = (vals[:2000] - vals[:2000].mean(axis=0)) / math.sqrt(1000)
    germ = st.normality_test(st.SampleSet(z[:, 0]), alpha=0.01)
    vs = st.replicate_functional(VSTAR, [F1], st.ProcessSpec.poisson(1000), UNIFORM, NONE, 2000, 91)
    vstar = st.normality_test(st.SampleSet(vs.values[:, 0] / math.sqrt(1000)), alpha=0.01)
    S = np.array([[c11.value, c12.value], [c12.value, c22.value]])
    mv = st.multivariate_gaussian_check(st.SampleSet(z), S, alpha=0.01, tol=0.15)
    passed = germ.passed and vstar.passed and mv.passed
    report(9, passed, time.perf_counter() - t0 + t_cov, 900,
           f"KS p germ={germ.p_value:.3f}, voronoi-star={vstar.p_value:.3f}; multivariate p={mv.p_value:.3f}, "
           f"cov rel err {mv.details['cov_rel_error']:.3f} (tol 0.15)")


def test_ac10_binomial_correction(poisson_germ_samples, poisson_covariances):
    t0 = time.perf_counter()
    vals, _ = poisson_germ_samples
    (c11, _, _), t_cov = poisson_covariances
    d = le.delta_integral(F1, UNIFORM, GV, FIXED, ENGINE)
    pred = c11.value - d.value**2
    b = st.replicate_functional(GV, [F1], st.ProcessSpec.binomial(1000), UNIFORM, FIXED, 4000, 101)
    vb = cli.variance_estimate(b.values[:, 0]).scaled(1 / 1000)
    vp = cli.variance_estimate(vals[:, 0]).scaled(1 / 1000)
    rel = abs(vb.value - pred) / pred
    gap = (vp.value - vb.value) / math.hypot(vp.std_error, vb.std_error)
    passed = rel <= 0.10 and abs(d.value) > 0 and gap > 3
    report(10, passed, time.perf_counter() - t0 + t_cov, 900,
           f"n^-1 Var binomial {vb.value:.5f} vs Poisson limit - delta^2 = {pred:.5f} (rel err {rel:.3f}); "
           f"Poisson {vp.value:.5f}, gap {gap:.1f} SE")


def test_ac11_stabilization_tails():
    t0 = time.perf_counter()
    home = st.ProcessSpec.homogeneous(1.0)
    step_vals = st.tail_samples(GV, home, (0.0, 0.0), reps=1000, marks=FIXED, seed=111)
    step = st.fit_tail(step_vals)
    step_ok = step.model == "step" and np.all(step_vals == math.ceil(2 * RHO))
    pareto = st.tail_estimate(GV, st.ProcessSpec.poisson(100), (0.5, 0.5), reps=10_000, kappa=UNIFORM,
                              marks=MarkDistribution.pareto(1.0, 5.0), seed=112)
    pareto_ok = pareto.model == "power-law" and 4.0 <= pareto.exponent_or_rate <= 6.0
    vor = st.tail_estimate(VOR, home, (0.0, 0.0), reps=2000, seed=113)
    vor_ok = vor.model == "exponential" and vor.exponent_or_rate < 0
    report(11, step_ok and pareto_ok and vor_ok, time.perf_counter() - t0, 180,
           f"fixed rho: {step.model} at {step.exponent_or_rate:g}; Pareto(5): {pareto.model} exponent "
           f"{pareto.exponent_or_rate:.2f}; Voronoi: {vor.model} rate {vor.exponent_or_rate:.3f} "
           f"(R^2 {vor.goodness:.3f} vs {vor.alternative_goodness:.3f})")


def test_ac12_pivoted_coupling():
    t0 = time.perf_counter()
    pivot, K, reps = (0.5, 0.5), 3.0, 1000
    uni = [float(cli.coupling_agreement(lam, UNIFORM, pivot, 1.0, NONE, K, reps, derive(12, "uniform", lam)).mean()) for lam in (100, 1000)]
    tilt = DensityModel.linear_tilt()
    a = float(tilt.evaluate(np.array([pivot]))[0])
    parts, ok = [], all(u == 1.0 for u in uni)
    for lam in (100, 1000):
        mean = le.coupling_disagreement_mean(lam, tilt, pivot, K, a)
        # closed form of lam * integral over B(x0, K / sqrt(lam)) of |2 x1 - 1|
        ok &= abs(mean / (72 / math.sqrt(lam)) - 1) < 1e-6
        p = math.exp(-mean)
        obs = cli.coupling_agreement(lam, tilt, pivot, a, NONE, K, reps, derive(12, "tilt", lam)).mean()
        z = (obs - p) / math.sqrt(p * (1 - p) / reps)
        ok &= abs(z) <= 3
        parts.append(f"lam={lam}: {obs:.4f} vs {p:.4f} (z={z:.2f})")
    report(12, bool(ok), time.perf_counter() - t0, 60, f"uniform agreement {uni}; tilt " + "; ".join(parts))


def _grid_areas(nuclei, m=2000):
    xs = (np.arange(m) + 0.5) / m
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    _, owner = cKDTree(nuclei).query(np.column_stack([gx.ravel(), gy.ravel()]))
    return np.bincount(owner, minlength=len(nuclei)) / m**2


def test_ac13_geometry_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(131)
    worst = 0.0
    for _ in range(50):
        nuclei = rng.random((20, 2))
        grid = _grid_areas(nuclei)
        for i in range(20):
            cell = geo.voronoi_cell(i, nuclei, 1e3)
            poly = geo.clip_to_box(cell.vertices.tolist(), (0, 0), (1, 1))
            area = geo.polygon_area(geo.ConvexPolygon(np.array(poly)))
            worst = max(worst, abs(area - grid[i]) / grid[i])
    zs, n_pts, side = [], 400_000, 4.6
    for _ in range(20):
        n = 12
        centers = rng.random((n, 2)) * 3
        radii = 0.2 + 0.6 * rng.random(n)
        mass = sum(geo.NCRegion.build(i, centers, radii).area() for i in range(n))
        pts = rng.random((n_pts, 2)) * side - 0.8
        d, idx = cKDTree(centers).query(pts, k=n)
        covered = np.any(d < radii[idx], axis=1).mean()
        se = math.sqrt(covered * (1 - covered) / n_pts) * side**2
        zs.append((mass - covered * side**2) / se)
    max_z = float(np.max(np.abs(zs)))
    report(13, worst < 1e-3 and max_z <= 3, time.perf_counter() - t0, 120,
           f"Voronoi max rel err {worst:.2e} (tol 1e-3); NC partition vs coverage max |z| {max_z:.2f} over 20 configs")
