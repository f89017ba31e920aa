"""Replica orchestration and the estimator / test toolbox."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps
from statsmodels.stats.diagnostic import normal_ad

from ._hashrng import replica_seed
from .errors import InsufficientDataError, ValidationError


@dataclass(frozen=True)
class EstimateReport:
    trials: int
    successes: int
    p_hat: float
    ci_low: float
    ci_high: float
    level: float = 0.95
    excluded_boundary: int = 0
    horizon_note: str = ""

    @property
    def half_width(self) -> float:
        return (self.ci_high - self.ci_low) / 2

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TestReport:
    name: str
    statistic: float
    p_value: float
    sample_sizes: tuple
    level: float = 0.01
    extra: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    @property
    def reject(self) -> bool:
        return self.p_value < self.level

    def to_dict(self) -> dict:
        d = asdict(self)
        d["reject"] = self.reject
        d["sample_sizes"] = list(self.sample_sizes)
        return d


@dataclass(frozen=True)
class DecayFit:
    c_hat: float
    gamma_hat: float
    r_squared: float
    support: tuple

    def to_dict(self) -> dict:
        return {"c_hat": self.c_hat, "gamma_hat": self.gamma_hat,
                "r_squared": self.r_squared,
                "support": [list(p) for p in self.support]}


def run_experiment(task: Callable[[int, int], object], replicas: int,
                   master_seed: int, workers: int = 1,
                   stream: int = 0) -> list:
    """Run ``task(index, seed)`` for every replica, in replica order.

    Replica ``i`` always receives the seed derived from ``(master_seed, i)``,
    so the first k replicas of a larger run coincide with a k-replica run.
    ``task`` must be picklable when ``workers > 1``.
    """
    if replicas < 1:
        raise ValidationError("replicas must be >= 1")
    seeds = [replica_seed(master_seed, i, stream) for i in range(replicas)]
    if workers <= 1:
        return [task(i, s) for i, s in enumerate(seeds)]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(task, range(replicas), seeds,
                             chunksize=max(1, replicas // (8 * workers))))


def wilson_ci(successes: int, trials: int, level: float = 0.95,
              excluded_boundary: int = 0, horizon_note: str = "") -> EstimateReport:
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    if not 0 <= successes <= trials:
        raise ValidationError("successes must lie in [0, trials]")
    z = sps.norm.ppf(0.5 + level / 2)
    p = successes / trials
    denom = 1 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    margin = z / denom * math.sqrt(p * (1 - p) / trials
                                   + z * z / (4 * trials * trials))
    lo = 0.0 if successes == 0 else min(p, max(0.0, center - margin))
    hi = 1.0 if successes == trials else max(p, min(1.0, center + margin))
    return EstimateReport(trials, successes, p, lo, hi, level,
                          excluded_boundary, horizon_note)


def ks_two_sample(a, b, level: float = 0.01) -> TestReport:
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.size == 0 or b.size == 0:
        raise ValidationError("both samples must be nonempty")
    with np.errstate(divide="ignore"):
        res = sps.ks_2samp(a, b, method="asymp")
    return TestReport("ks_two_sample", float(res.statistic),
                      float(min(1.0, res.pvalue)), (a.size, b.size), level)


def lag_autocorrelation(sample, lag: int = 1) -> float:
    """Correlation between the series and itself shifted by ``lag``."""
    x = np.asarray(sample, float)
    if x.size <= lag + 1:
        raise ValidationError("sample size must exceed lag + 1")
    head, tail = x[:-lag], x[lag:]
    if np.ptp(head) == 0 or np.ptp(tail) == 0:
        raise ValidationError("degenerate sample: zero variance")
    return float(np.corrcoef(head, tail)[0, 1])


def pooled_lag_autocorrelation(segments, lag: int = 1) -> tuple[float, int]:
    """Lag correlation over pairs taken inside each segment only.

    Returns (correlation, number of pairs).
    """
    heads, tails = [], []
    for seg in segments:
        x = np.asarray(seg, float)
        if x.size > lag:
            heads.append(x[:-lag])
            tails.append(x[lag:])
    if not heads:
        raise ValidationError("no segment is longer than lag")
    head, tail = np.concatenate(heads), np.concatenate(tails)
    if head.size < 2 or np.ptp(head) == 0 or np.ptp(tail) == 0:
        raise ValidationError("degenerate sample: zero variance")
    return float(np.corrcoef(head, tail)[0, 1]), int(head.size)


def geometric_fit(ns, level: float = 0.01) -> tuple[float, TestReport]:
    """Fit Geometric(p) on {1, 2, ...} and test it by chi-square.

    Bins are 1, 2, ... while the expected count stays >= 5; the remaining
    tail is pooled into one bin.  One degree of freedom is spent on p.
    """
    x = np.asarray(ns)
    if x.size == 0:
        raise ValidationError("sample must be nonempty")
    if np.any(x < 1) or np.any(x != np.round(x)):
        raise ValidationError("values must be integers >= 1")
    n = x.size
    p = 1.0 / float(x.mean())
    if p >= 1.0:
        return 1.0, TestReport("geometric_chi2", 0.0, 1.0, (n,), level,
                               {"bins": 1})
    observed, expected = [], []
    k = 1
    while True:
        e = n * p * (1 - p) ** (k - 1)
        tail = n * (1 - p) ** k
        if e < 5 or tail < 5:
            break
        observed.append(int(np.sum(x == k)))
        expected.append(e)
        k += 1
    observed.append(int(np.sum(x >= k)))
    expected.append(n * (1 - p) ** (k - 1))
    if expected[-1] < 5 and len(expected) > 1:
        observed[-2] += observed.pop()
        expected[-2] += expected.pop()
    observed = np.array(observed, float)
    expected = np.array(expected)
    dof = len(expected) - 2
    stat = float(np.sum((observed - expected) ** 2 / expected))
    pval = float(sps.chi2.sf(stat, dof)) if dof >= 1 else 1.0
    return p, TestReport("geometric_chi2", stat, pval, (n,), level,
                         {"bins": len(expected), "dof": dof})


def normality_test(sample, level: float = 0.01) -> TestReport:
    """Anderson-Darling test against the normal family (mean and variance
    estimated)."""
    x = np.asarray(sample, float)
    if x.size < 20:
        raise ValidationError("normality test needs at least 20 values")
    if np.ptp(x) == 0:
        raise ValidationError("degenerate sample: zero variance")
    stat, pval = normal_ad(x)
    return TestReport("anderson_darling", float(stat), float(pval), (x.size,),
                      level)


def decay_fit(points: Sequence[tuple], min_successes: int = 5) -> DecayFit:
    """Least squares of log p_n on n over points with enough successes.

    ``points`` are (n, p_hat, trials); the fitted model is C exp(-gamma n).
    """
    usable = [(n, p, t) for n, p, t in points
              if p > 0 and round(p * t) >= min_successes]
    if len(usable) < 3:
        raise InsufficientDataError(
            f"{len(usable)} usable points; decay fit needs at least 3")
    ns = np.array([u[0] for u in usable], float)
    ys = np.log([u[1] for u in usable])
    slope, intercept = np.polyfit(ns, ys, 1)
    fitted = intercept + slope * ns
    ss_res = float(np.sum((ys - fitted) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1 - ss_res / ss_tot)
    return DecayFit(float(math.exp(intercept)), float(-slope), r2,
                    tuple(usable))


def edge_speed(pairs, level: float = 0.95) -> tuple[float, tuple[float, float]]:
    """Ratio estimator sum(dr) / sum(dpsi) with a delta-method interval."""
    arr = np.asarray(pairs, float).reshape(-1, 2)
    if arr.shape[0] < 30:
        raise InsufficientDataError("edge speed needs at least 30 pairs")
    dr, dpsi = arr[:, 0], arr[:, 1]
    alpha = float(dr.sum() / dpsi.sum())
    resid = dr - alpha * dpsi
    n = arr.shape[0]
    se = math.sqrt(float(np.sum(resid ** 2)) / (n * (n - 1))) / float(dpsi.mean())
    z = sps.norm.ppf(0.5 + level / 2)
    return alpha, (alpha - z * se, alpha + z * se)
