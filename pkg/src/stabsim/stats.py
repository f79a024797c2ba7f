"""Replication harness and statistical verdicts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import stats as sst

from . import functionals as fn
from .functionals import TestFunction, XiFunctional
from .limit_engine import EstimateWithError, replicate
from .point_process import (
    Ball,
    DensityModel,
    MarkDistribution,
    PointConfiguration,
    growing_ball_sample,
    rescale_config,
    sample_binomial,
    sample_poisson_kappa,
)
from .rng import SeedLike, derive

BOOTSTRAP = 10_000
MIN_TAIL_SAMPLES = 100
MIN_EXCEEDANCES = 10


@dataclass(frozen=True)
class SampleSet:
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size == 0:
            raise ValueError("empty sample set")
        if not np.all(np.isfinite(v)):
            raise ValueError("sample set has non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[1]

    def column(self, j: int) -> "SampleSet":
        v = self.values if self.values.ndim == 1 else self.values[:, j]
        return SampleSet(v, f"{self.label}[{j}]")


@dataclass(frozen=True)
class TestReport:
    __test__ = False

    statistic: float
    p_value: float
    alpha: float
    verdict: str  # pass | fail | degenerate
    method: str
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.p_value <= 1.0):
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


@dataclass(frozen=True)
class TailFit:
    model: str  # power-law | exponential | step
    exponent_or_rate: float
    goodness: float
    sample_size: int
    alternative_goodness: float = math.nan
    survival: tuple = ()


@dataclass(frozen=True)
class ProcessSpec:
    """Which point process to replicate: ``poisson`` (``lam``), ``binomial`` (``n``)
    or ``homogeneous`` (intensity ``lam`` around the origin)."""

    kind: str
    lam: float = 0.0
    n: int = 0

    def __post_init__(self):
        if self.kind == "poisson" or self.kind == "homogeneous":
            if not self.lam > 0:
                raise ValueError("lambda must be positive")
        elif self.kind == "binomial":
            if self.n < 1:
                raise ValueError("n must be at least 1")
        else:
            raise ValueError(f"unknown process kind {self.kind!r}")

    @classmethod
    def poisson(cls, lam: float) -> "ProcessSpec":
        return cls("poisson", lam=float(lam))

    @classmethod
    def binomial(cls, n: int) -> "ProcessSpec":
        return cls("binomial", lam=float(n), n=int(n))

    @classmethod
    def homogeneous(cls, a: float) -> "ProcessSpec":
        return cls("homogeneous", lam=float(a))

    @property
    def scale(self) -> float:
        """The ``lambda`` used in rescaling (``n`` for binomial samples)."""
        return float(self.n) if self.kind == "binomial" else self.lam

    def sample(self, kappa: DensityModel, marks: MarkDistribution, seed) -> PointConfiguration:
        if self.kind == "poisson":
            return sample_poisson_kappa(self.lam, kappa, marks, seed)
        if self.kind == "binomial":
            return sample_binomial(self.n, kappa, marks, seed)
        raise ValueError("homogeneous processes are sampled around a point")


# ---------------------------------------------------------------------------
# replication


def _functional_replicate(xi, f_list, process, kappa, marks, seed):
    cfg = process.sample(kappa, marks, seed)
    return [fn.empirical_functional(xi, f, cfg, process.scale) for f in f_list]


def replicate_functional(
    xi: XiFunctional,
    f_list: Sequence[TestFunction],
    process: ProcessSpec,
    kappa: DensityModel,
    marks: MarkDistribution,
    reps: int,
    seed: SeedLike,
    jobs: int = 1,
) -> SampleSet:
    """``reps`` independent draws of ``(<f_j, mu>)_j`` (or of ``nu`` for binomial)."""
    if reps < 2:
        raise ValueError("need at least 2 replicates")
    out = replicate(_functional_replicate, (xi, tuple(f_list), process, kappa, marks), seed, ("functional",), reps, jobs)
    return SampleSet(np.array(out, dtype=float), f"{xi.name}/{process.kind}")


# ---------------------------------------------------------------------------
# normality


def _ks_stat_normal(sorted_z: np.ndarray) -> np.ndarray:
    """KS distance to N(0,1) for rows of sorted samples."""
    n = sorted_z.shape[-1]
    F = sst.norm.cdf(sorted_z)
    i = np.arange(1, n + 1)
    d_plus = (i / n - F).max(axis=-1)
    d_minus = (F - (i - 1) / n).max(axis=-1)
    return np.maximum(d_plus, d_minus)


def _studentize(x: np.ndarray) -> np.ndarray:
    m = x.mean(axis=-1, keepdims=True)
    s = x.std(axis=-1, ddof=1, keepdims=True)
    return (x - m) / s


@lru_cache(maxsize=16)
def lilliefors_null(n: int, boot: int = BOOTSTRAP, seed: int = 0) -> np.ndarray:
    """Sorted bootstrap null of the studentized KS statistic for sample size ``n``."""
    rng = np.random.default_rng(derive(seed, "lilliefors", n, boot))
    out = np.empty(boot)
    chunk = max(1, min(boot, 2_000_000 // max(n, 1)))
    for s in range(0, boot, chunk):
        b = min(chunk, boot - s)
        z = np.sort(_studentize(rng.standard_normal((b, n))), axis=1)
        out[s:s + b] = _ks_stat_normal(z)
    out.sort()
    out.setflags(write=False)
    return out


def normality_test(
    s: SampleSet,
    alpha: float = 0.01,
    boot: int = BOOTSTRAP,
    predicted_variance: float | None = None,
    seed: int = 0,
) -> TestReport:
    """Studentized KS test against N(0, 1) with a parametric-bootstrap p-value.

    With ``predicted_variance`` the details also carry a second KS test of the
    centred samples scaled by the predicted standard deviation.
    """
    x = np.asarray(s.values, dtype=float)
    if x.ndim != 1:
        raise ValueError("normality_test takes univariate samples")
    n = x.size
    if n < 100:
        raise ValueError("need at least 100 samples")
    sd = x.std(ddof=1)
    if not sd > 1e-14 * max(1.0, np.abs(x).max()):
        return TestReport(math.nan, 1.0, alpha, "degenerate", "lilliefors-bootstrap", {"sd": 0.0})
    d = float(_ks_stat_normal(np.sort((x - x.mean()) / sd)))
    null = lilliefors_null(n, boot, seed)
    exceed = boot - int(np.searchsorted(null, d, side="left"))
    p = (1 + exceed) / (boot + 1)
    details = {"n": n, "boot": boot, "sd": float(sd)}
    if predicted_variance is not None:
        if predicted_variance > 0:
            kt = sst.kstest((x - x.mean()) / math.sqrt(predicted_variance), "norm")
            details["predicted"] = {"statistic": float(kt.statistic), "p_value": float(kt.pvalue)}
        else:
            details["predicted"] = {"statistic": math.inf, "p_value": 0.0}
    return TestReport(d, p, alpha, "pass" if p >= alpha else "fail", "lilliefors-bootstrap", details)


def multivariate_gaussian_check(
    s: SampleSet,
    predicted_cov,
    alpha: float = 0.01,
    projections: int = 20,
    tol: float = 0.15,
    seed: int = 0,
    boot: int = BOOTSTRAP,
) -> TestReport:
    """Random-projection normality tests plus an entrywise covariance comparison.

    The reported p-value is the smallest projection p-value times the number
    of projections (Bonferroni, capped at 1).  The verdict passes when that
    p-value is at least ``alpha`` and every covariance entry is within
    relative ``tol`` of the prediction (relative to ``|Sigma_ij|``, or to
    ``sqrt(Sigma_ii Sigma_jj)`` when ``Sigma_ij = 0``).
    """
    x = np.asarray(s.values, dtype=float)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ValueError("need k >= 2 columns")
    k = x.shape[1]
    S = np.asarray(predicted_cov, dtype=float)
    if S.shape != (k, k):
        raise ValueError("predicted covariance has the wrong shape")
    scale = max(1.0, float(np.abs(S).max()))
    if not np.allclose(S, S.T, atol=1e-9 * scale):
        raise ValueError("predicted covariance is not symmetric")
    if np.linalg.eigvalsh(0.5 * (S + S.T)).min() < -1e-9 * scale:
        raise ValueError("predicted covariance is not positive semidefinite")
    C = np.cov(x, rowvar=False)
    diag = np.sqrt(np.outer(np.diag(S), np.diag(S)))
    denom = np.where(S != 0, np.abs(S), diag)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(denom > 0, np.abs(C - S) / denom, np.where(np.abs(C) > 1e-12 * max(1.0, np.abs(C).max()), np.inf, 0.0))
    cov_err = float(rel.max())
    rng = np.random.default_rng(derive(seed, "projections", k))
    pvals = []
    for _ in range(projections):
        u = rng.standard_normal(k)
        u /= np.linalg.norm(u)
        rep = normality_test(SampleSet(x @ u), alpha, boot, seed=seed)
        if rep.verdict == "degenerate":
            # exact linear dependence: Gaussian iff the prediction is degenerate too
            pvals.append(1.0 if u @ S @ u <= 1e-9 * scale else 0.0)
        else:
            pvals.append(rep.p_value)
    p_adj = min(1.0, projections * min(pvals))
    ok = p_adj >= alpha and cov_err <= tol
    return TestReport(
        float(min(pvals)),
        p_adj,
        alpha,
        "pass" if ok else "fail",
        "cramer-wold-projections",
        {"cov_rel_error": cov_err, "sample_cov": C.tolist(), "projection_p": pvals},
    )


# ---------------------------------------------------------------------------
# stabilization tails


def _tail_replicate(xi, process, kappa, marks, x, inserted, seed):
    """Certificate at ``x`` in the rescaled process with ``x`` (and extras) inserted."""
    tags = ["Tx"] + [f"Ta{k}" for k in range(len(inserted))]
    pts = [tuple(x)] + [tuple(p) for p in inserted]
    radii = None
    if marks.marked:
        radii = [float(marks.radii_from_uniform(np.array([np.random.default_rng(derive(seed, t)).random()]))[0]) for t in tags]
    if process.kind == "homogeneous":
        L = 8.0
        while True:
            H = growing_ball_sample(process.lam, (0.0, 0.0), L, marks, derive(seed, "H"), 8.0)
            rel = [(p[0] - x[0], p[1] - x[1]) for p in pts]
            cfg = _insert(H, rel, radii)
            r = fn.stabilization_radius(XiFunctional(xi.family), len(H), cfg)
            if math.isfinite(r) or L >= 1024:
                return r
            L *= 2
    base = process.sample(kappa, marks, derive(seed, "P"))
    cfg = _insert(base, pts, radii)
    dil = rescale_config(cfg, x, process.scale)
    return fn.stabilization_radius(XiFunctional(xi.family), len(base), dil)


def _insert(cfg: PointConfiguration, pts, radii) -> PointConfiguration:
    pos = np.vstack([cfg.positions, np.asarray(pts, dtype=float).reshape(-1, 2)])
    r = None if cfg.radii is None else np.concatenate([cfg.radii, radii])
    return PointConfiguration(pos, cfg.window, r, _checked=False)


def _weighted_line(x, y, w) -> tuple[float, float]:
    """Weighted least-squares slope and weighted R^2."""
    slope, icpt = np.polyfit(x, y, 1, w=np.sqrt(w))
    ybar = np.average(y, weights=w)
    ss_tot = float((w * (y - ybar) ** 2).sum())
    ss_res = float((w * (y - slope * x - icpt) ** 2).sum())
    return float(slope), 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


def survival_curve(values) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``s``, ``P[R > s]`` and exceedance counts at integer levels."""
    v = np.asarray(values, dtype=float)
    top = int(np.max(v))
    s = np.arange(0, top + 1)
    counts = np.array([(v > k).sum() for k in s])
    return s, counts / v.size, counts


def fit_tail(values) -> TailFit:
    """Choose between power-law and exponential decay of the survival function."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < MIN_TAIL_SAMPLES:
        raise ValueError(f"need at least {MIN_TAIL_SAMPLES} samples for a tail fit")
    if not np.all(np.isfinite(v)):
        raise ValueError("infinite certificates in tail sample")
    s, surv, counts = survival_curve(v)
    if np.all(v == v[0]):
        return TailFit("step", float(v[0]), 1.0, n, math.nan, tuple(zip(s.tolist(), surv.tolist())))
    use = (counts >= MIN_EXCEEDANCES) & (surv < 1.0) & (s >= 1)
    if use.sum() < 3:
        raise ValueError("too few informative survival levels for a tail fit")
    ls = np.log(surv[use])
    # delta-method variance of log survival is (1 - S) / (n S)
    w = counts[use] / (1.0 - surv[use])
    fits = {}
    for model, xs in (("power-law", np.log(s[use])), ("exponential", s[use].astype(float))):
        fits[model] = _weighted_line(xs, ls, w)
    best = max(fits, key=lambda m: fits[m][1])
    other = "exponential" if best == "power-law" else "power-law"
    slope, r2 = fits[best]
    rate = -slope if best == "power-law" else slope
    return TailFit(best, float(rate), float(r2), n, float(fits[other][1]), tuple(zip(s.tolist(), surv.tolist())))


def tail_samples(
    xi: XiFunctional,
    process: ProcessSpec,
    x,
    inserted: Sequence = (),
    reps: int = 10_000,
    kappa: DensityModel | None = None,
    marks: MarkDistribution = MarkDistribution.none(),
    seed: SeedLike = 0,
    jobs: int = 1,
) -> np.ndarray:
    if len(inserted) > 2:
        raise ValueError("at most two extra inserted points")
    if process.kind != "homogeneous" and kappa is None:
        raise ValueError("a density is required for Poisson/binomial tails")
    out = replicate(_tail_replicate, (xi, process, kappa, marks, tuple(x), tuple(map(tuple, inserted))), seed, ("tail",), reps, jobs)
    return np.array(out, dtype=float)


def tail_estimate(
    xi: XiFunctional,
    process: ProcessSpec,
    x,
    inserted: Sequence = (),
    reps: int = 10_000,
    kappa: DensityModel | None = None,
    marks: MarkDistribution = MarkDistribution.none(),
    seed: SeedLike = 0,
    jobs: int = 1,
) -> TailFit:
    """Fit the tail of the stabilization certificate at ``x``.

    The power-law exponent is ``-slope`` of ``log P[R > s]`` against
    ``log s``; the exponential rate is the slope against ``s`` (negative for
    decay).  Certificates over-estimate the true radius, so fitted power
    exponents are conservative.
    """
    if reps < MIN_TAIL_SAMPLES:
        raise ValueError(f"need at least {MIN_TAIL_SAMPLES} replicates")
    return fit_tail(tail_samples(xi, process, x, inserted, reps, kappa, marks, seed, jobs))


# ---------------------------------------------------------------------------
# moments


def _moment_replicate(xi, lam, kappa, marks, p, x, inserted, seed):
    rng = np.random.default_rng(derive(seed, "x"))
    xx = kappa.sample_positions(rng, 1)[0] if x is None else np.asarray(x, dtype=float)
    pts = [tuple(xx)] + [tuple(q) for q in inserted]
    radii = None
    if marks.marked:
        radii = marks.sample(np.random.default_rng(derive(seed, "T")), len(pts))
    base = sample_poisson_kappa(lam, kappa, marks, derive(seed, "P"))
    cfg = _insert(base, pts, radii)
    m = fn.eval_xi_rescaled(XiFunctional(xi.family), len(base), cfg, lam).total_mass
    return abs(m) ** p


def moment_probe(
    xi: XiFunctional,
    lam: float,
    kappa: DensityModel,
    marks: MarkDistribution,
    p: float,
    reps: int,
    seed: SeedLike = 0,
    x=None,
    inserted: Sequence = (),
    jobs: int = 1,
) -> EstimateWithError:
    """``E |<1, xi_lam(x, T; P_lam ∪ {x} ∪ inserted)>|^p`` with ``x ~ kappa`` unless fixed."""
    if p < 1:
        raise ValueError("p must be at least 1")
    if reps < 100:
        raise ValueError("need at least 100 replicates")
    if len(inserted) > 3:
        raise ValueError("at most three extra inserted points")
    out = replicate(_moment_replicate, (xi, lam, kappa, marks, p, x, tuple(map(tuple, inserted))), seed, ("moment", float(lam)), reps, jobs)
    return EstimateWithError.from_samples(out)
