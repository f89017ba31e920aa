"""Break points of the right endpoint and the restart construction.

A space-time point (x, s) controls subsequent edges (c.s.e.) when the
process started at time s from {x} and the one started from every site
<= x keep the same right endpoint forever.  "Forever" is read as "up to the
horizon"; points found too close to the horizon are flagged as censored.

Break points are found by a chain of attempts: an attempt from (r_s, s)
either survives to the horizon (a break point) or is overtaken at some event
time f, and the next attempt starts from (r_f, f).  No time strictly between
two attempts can be c.s.e., so the chain visits exactly the infimum of the
c.s.e. times.  ``psi_sequence(..., method="naive")`` checks every event time
instead and serves as the oracle for the chain.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .engine import Trajectory, evolve, race
from .errors import InsufficientDataError, ValidationError
from .graphical import EventLog


@dataclass(frozen=True)
class CsePoint:
    site: int
    time: float
    holds_up_to: float


@dataclass(frozen=True)
class BreakPointSeries:
    points: tuple            # ((psi_k, r_psi_k), ...)
    flags: tuple             # per-point censoring flags
    horizon: float
    margin: float
    censored: bool
    extinction_time: float | None = None

    @property
    def uncensored(self) -> tuple:
        return tuple(p for p, c in zip(self.points, self.flags) if not c)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "psi", "r_psi", "censored"])
            for k, ((psi, r), c) in enumerate(zip(self.points, self.flags)):
                w.writerow([k, repr(psi), r, int(c)])


@dataclass(frozen=True)
class RestartRecord:
    extinction_times: tuple  # T_0, T_1, ...; the last is inf if it survives
    sigma_times: tuple       # sigma_1 = 1, sigma_2, ...
    tau: tuple               # tau_1 = 1, ..., tau_{N+1} = inf
    N: int
    final_position: int
    censored: bool
    horizon: float

    @property
    def sigma_N(self) -> float:
        return self.sigma_times[-1]


@dataclass(frozen=True)
class IncrementSample:
    pairs: tuple             # ((dr, dpsi), ...)

    def __len__(self):
        return len(self.pairs)

    @property
    def dr(self) -> np.ndarray:
        return np.array([p[0] for p in self.pairs], float)

    @property
    def dpsi(self) -> np.ndarray:
        return np.array([p[1] for p in self.pairs], float)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "dr", "dpsi"])
            for k, (dr, dpsi) in enumerate(self.pairs, start=1):
                w.writerow([k, dr, repr(dpsi)])


def _endpoint_lookup(traj: Trajectory):
    times, sup, _ = traj.extremes()

    def r_at(s: float) -> float:
        return float(sup[np.searchsorted(times, s, side="right") - 1])
    return r_at


def _horizon(log: EventLog, horizon: float | None) -> float:
    if horizon is None:
        return log.horizon
    if horizon > log.horizon:
        raise ValidationError("horizon exceeds log horizon")
    return float(horizon)


def attempt(log: EventLog, x: int, s: float, horizon: float) -> float | None:
    """Time at which the pair started at (x, s) first disagrees, or None."""
    if not log.x_min <= x <= log.x_max:
        raise ValidationError(f"site {x} outside window")
    viol = race(log, (x,), x, s, horizon, stop=True)[0]
    return None if viol < 0 else float(log.t[viol])


def is_cse(log: EventLog, point: tuple[int, float],
           horizon: float | None = None) -> bool:
    x, s = point
    horizon = _horizon(log, horizon)
    if s > horizon:
        raise ValidationError("point time exceeds horizon")
    return attempt(log, int(x), float(s), horizon) is None


def _series(points, horizon, margin, extinction=None):
    flags = tuple(psi > horizon - margin for psi, _ in points)
    return BreakPointSeries(tuple(points), flags, horizon, margin,
                            any(flags), extinction)


def psi_sequence(log: EventLog, horizon: float | None = None,
                 margin: float | None = None,
                 method: str = "chain") -> BreakPointSeries:
    """psi_k = inf{t >= 1 + psi_{k-1} : (r_t, t) is c.s.e.}, psi_{-1} = 0.

    ``margin`` (default horizon / 4) marks points too close to the horizon
    as censored.  Returns an empty series if the origin process dies.
    """
    horizon = _horizon(log, horizon)
    margin = horizon / 4 if margin is None else float(margin)
    base = evolve(log, (0,), horizon)
    if not base.survived:
        return _series([], horizon, margin, base.extinction_time)
    r_at = _endpoint_lookup(base)
    if method == "chain":
        points = _chain(log, r_at, horizon)
    elif method == "naive":
        points = _naive(log, r_at, horizon)
    else:
        raise ValidationError(f"unknown method {method!r}")
    return _series(points, horizon, margin)


def _chain(log, r_at, horizon):
    points = []
    s = 1.0
    while s <= horizon:
        x = int(r_at(s))
        fail = attempt(log, x, s, horizon)
        if fail is None:
            points.append((s, x))
            s += 1.0
        else:
            s = fail
    return points


def _naive(log, r_at, horizon):
    points = []
    s = 1.0
    while s <= horizon:
        hi = int(np.searchsorted(log.t, horizon, side="right"))
        candidates = [s] + log.t[log.index_after(s):hi].tolist()
        for c in candidates:
            x = int(r_at(c))
            if is_cse(log, (x, c), horizon):
                points.append((c, x))
                s = c + 1.0
                break
        else:
            break
    return points


def restart_construction(log: EventLog, horizon: float | None = None,
                         margin: float | None = None) -> RestartRecord:
    """Chain of origin-restarted processes and the attempt sequence on it.

    The process from {0} is restarted from {0} at each extinction time T_n;
    r'_t is the right endpoint of the current copy.  Attempts start at
    sigma_1 = 1 and at each overtaking time; N counts attempts up to the
    first that is never overtaken before the horizon.
    """
    horizon = _horizon(log, horizon)
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    margin = horizon / 4 if margin is None else float(margin)
    starts = [0.0]
    lookups = []
    ext = []
    while True:
        seg = evolve(log, (0,), horizon, start_time=starts[-1])
        lookups.append(_endpoint_lookup(seg))
        if seg.survived:
            ext.append(math.inf)
            break
        ext.append(seg.extinction_time)
        starts.append(seg.extinction_time)
    starts_arr = np.array(starts)

    def r_prime(s: float) -> int:
        n = int(np.searchsorted(starts_arr, s, side="right")) - 1
        return int(lookups[n](s))

    sigma = [1.0]
    tau = [1.0]
    while True:
        s = sigma[-1]
        fail = attempt(log, r_prime(s), s, horizon)
        if fail is None:
            tau.append(math.inf)
            break
        tau.append(fail - s)
        sigma.append(fail)
    return RestartRecord(tuple(ext), tuple(sigma), tuple(tau), len(sigma),
                         r_prime(sigma[-1]), horizon - sigma[-1] < margin,
                         horizon)


def increments(series: BreakPointSeries) -> IncrementSample:
    """Consecutive differences (r_psi_n - r_psi_{n-1}, psi_n - psi_{n-1})
    over the uncensored points."""
    pts = series.uncensored
    if len(pts) < 2:
        raise InsufficientDataError("fewer than 2 uncensored break points")
    return IncrementSample(tuple((b[1] - a[1], b[0] - a[0])
                                 for a, b in zip(pts, pts[1:])))
