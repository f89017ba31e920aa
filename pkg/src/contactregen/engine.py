"""Contact processes evolved on a shared graphical representation.

Every initial condition evolved on the same :class:`EventLog` (or view of
it) is coupled to every other, which makes additivity, monotonicity and the
endpoint comparisons exact statements about a single realization.
"""
from __future__ import annotations

import csv
import math
from functools import partial
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .errors import UsageError, ValidationError
from .graphical import EdgeMask, EventLog, SimConfig, build_event_log, masked_view
from .stats import EstimateReport, run_experiment, wilson_ci

NEG_INF = -math.inf


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Occupied-set evolution from ``initial`` at ``start_time``.

    ``times``/``sites``/``born`` list the transitions in event order; the
    state between transitions is constant.
    """
    initial: tuple
    times: np.ndarray
    sites: np.ndarray
    born: np.ndarray
    horizon: float
    window: tuple
    start_time: float = 0.0
    boundary_contaminated: bool = False
    extinction_time: float | None = None
    births: int = 0

    @property
    def transitions(self) -> list[tuple[float, int, str]]:
        return [(t, s, "born" if b else "died") for t, s, b in
                zip(self.times.tolist(), self.sites.tolist(), self.born.tolist())]

    @property
    def survived(self) -> bool:
        return self.extinction_time is None

    def initial_mask(self) -> np.ndarray:
        x_min, x_max = self.window
        occ = np.zeros(x_max - x_min + 1, np.uint8)
        occ[np.asarray(self.initial, int) - x_min] = 1
        return occ

    def occupied_at(self, time: float) -> tuple:
        """Occupied sites at ``time`` (right-continuous)."""
        n = int(np.searchsorted(self.times, time, side="right"))
        occ = self.initial_mask()
        x_min = self.window[0]
        # transitions at a site alternate born/died; the last one decides
        rev_sites = self.sites[:n][::-1]
        sites, first = np.unique(rev_sites, return_index=True)
        occ[sites - x_min] = self.born[:n][::-1][first]
        return tuple((np.flatnonzero(occ) + x_min).tolist())

    def final(self) -> tuple:
        return self.occupied_at(self.horizon)

    def extremes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(times, sup, inf) after the start and after each transition;
        an empty set has sup -inf and inf +inf."""
        x_min = self.window[0]
        occ = self.initial_mask()
        sup, inf = K.extremes_series(self.sites.astype(np.int64),
                                     self.born.astype(np.int8), occ, x_min)
        n_sites = occ.size
        init = np.asarray(self.initial)
        s0 = float(init.max()) if init.size else NEG_INF
        i0 = float(init.min()) if init.size else math.inf
        sup_f = np.where(sup < 0, NEG_INF, sup + x_min).astype(float)
        inf_f = np.where(inf >= n_sites, math.inf, inf + x_min).astype(float)
        times = np.concatenate([[self.start_time], self.times])
        return times, np.concatenate([[s0], sup_f]), np.concatenate([[i0], inf_f])

    def right_endpoint_at(self, time: float) -> float:
        times, sup, _ = self.extremes()
        return float(sup[np.searchsorted(times, time, side="right") - 1])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("# initial: " + " ".join(map(str, self.initial)) + "\n")
            fh.write(f"# start_time: {self.start_time!r}\n")
            fh.write(f"# horizon: {self.horizon!r}\n")
            w = csv.writer(fh)
            w.writerow(["time", "site", "event"])
            for t, s, e in self.transitions:
                w.writerow([repr(t), s, e])


@dataclass(frozen=True)
class AgreementReport:
    agrees: bool
    first_violation_time: float | None
    checked_horizon: float


@dataclass(frozen=True, eq=False)
class EndpointReport:
    agreement: AgreementReport
    times: np.ndarray
    r: np.ndarray
    R: np.ndarray
    contaminated_single: bool
    contaminated_half_line: bool

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "r", "R"])
            for t, a, b in zip(self.times.tolist(), self.r.tolist(),
                               self.R.tolist()):
                w.writerow([repr(t), _site_str(a), _site_str(b)])


def _site_str(v: float) -> str:
    return "-inf" if v == NEG_INF else str(int(v))


def half_line(log: EventLog, x: int = 0) -> tuple:
    """Sites of the window at or left of ``x`` (truncated half-line)."""
    return tuple(range(log.x_min, x + 1))


def _occ(log: EventLog, sites: Iterable[int]) -> np.ndarray:
    occ = np.zeros(log.config.n_sites, np.uint8)
    for s in sites:
        if not log.x_min <= s <= log.x_max:
            raise ValidationError(f"site {s} outside window {log.config.window}")
        occ[s - log.x_min] = 1
    return occ


def _horizon(log: EventLog, horizon: float | None) -> float:
    if horizon is None:
        return log.horizon
    if horizon > log.horizon:
        raise ValidationError(
            f"horizon {horizon} exceeds log horizon {log.horizon}")
    return float(horizon)


def evolve(log: EventLog, initial: Iterable[int], horizon: float | None = None,
           start_time: float = 0.0) -> Trajectory:
    """Run the contact process from ``initial`` at ``start_time``.

    Deaths at occupied sites vacate them; an arrow x -> y from an occupied x
    to a vacant y occupies y; every other event is a no-op.
    """
    horizon = _horizon(log, horizon)
    init = tuple(sorted(set(int(s) for s in initial)))
    occ = _occ(log, init)
    i0 = log.index_after(start_time)
    nt, ev, sites, born, ext, cont, births = K.evolve_kernel(
        log.t, log.kind, log.src, log.dst, i0, horizon, occ, log.x_min,
        log.range_M, True)
    if not init:
        extinction = float(start_time)
    elif ext >= 0:
        extinction = float(log.t[ext])
    else:
        extinction = None
    return Trajectory(init, log.t[ev], sites, born.astype(bool), horizon,
                      log.config.window, float(start_time), bool(cont),
                      extinction, int(births))


def evolve_family(log: EventLog, initials: Sequence[Iterable[int]],
                  mask: EdgeMask | str = EdgeMask.FULL_GRAPH,
                  horizon: float | None = None) -> list[Trajectory]:
    view = masked_view(log, mask)
    return [evolve(view, a, horizon) for a in initials]


def _restricted(traj: Trajectory, F: Sequence[int]):
    sel = np.isin(traj.sites, np.asarray(F, dtype=traj.sites.dtype))
    return traj.times[sel], traj.sites[sel], traj.born[sel]


def agreement_on_set(traj_full: Trajectory, traj_F: Trajectory, F: Iterable[int],
                     from_time: float = 0.0) -> AgreementReport:
    """Whether the two occupied sets coincide on ``F`` at every time in
    [from_time, horizon]."""
    if traj_full.horizon != traj_F.horizon:
        raise UsageError("trajectories have different horizons")
    F = sorted(set(int(s) for s in F))
    state = {}
    for j, tr in enumerate((traj_full, traj_F)):
        init = set(tr.initial)
        for s in F:
            state[(j, s)] = s in init
    streams = []
    for j, tr in enumerate((traj_full, traj_F)):
        t, s, b = _restricted(tr, F)
        streams += [(float(a), j, int(c), bool(d)) for a, c, d in zip(t, s, b)]
    streams.sort(key=lambda e: e[0])
    n_bad = sum(state[(0, s)] != state[(1, s)] for s in F)
    checked = False
    i = 0
    while i < len(streams):
        now = streams[i][0]
        if not checked and now > from_time:
            if n_bad:
                return AgreementReport(False, float(from_time), traj_full.horizon)
            checked = True
        while i < len(streams) and streams[i][0] == now:
            _, j, s, b = streams[i]
            before = state[(0, s)] != state[(1, s)]
            state[(j, s)] = b
            n_bad += (state[(0, s)] != state[(1, s)]) - before
            i += 1
        if now >= from_time and n_bad:
            return AgreementReport(False, now, traj_full.horizon)
    if n_bad:
        return AgreementReport(False, float(from_time), traj_full.horizon)
    return AgreementReport(True, None, traj_full.horizon)


def race(log: EventLog, single: Iterable[int], x: int, start_time: float,
         horizon: float, stop: bool = True, record: bool = False,
         half_line_mask: bool = False):
    """Couple the start ``single`` with the half-line start (-inf, x] at
    ``start_time`` and compare right endpoints.  Returns the raw kernel
    output (see ``_kernels.race_kernel``)."""
    occ_a = _occ(log, single)
    occ_b = np.zeros(log.config.n_sites, np.uint8)
    occ_b[: x - log.x_min + 1] = 1
    i0 = log.index_after(start_time)
    return K.race_kernel(log.t, log.kind, log.src, log.dst, i0, horizon,
                         occ_a, occ_b, log.x_min, log.range_M, stop, record,
                         half_line_mask)


def endpoint_equality(log: EventLog,
                      mask_for_Zminus: EdgeMask | str = EdgeMask.FULL_GRAPH,
                      horizon: float | None = None, start: str = "origin",
                      record: bool = True) -> EndpointReport:
    """Compare r_t (single start) with R_t (truncated half-line start).

    ``start`` is "origin" for {0} or "block" for {-M, ..., 0}.  Extinction
    of the single start while R persists is a violation.
    """
    horizon = _horizon(log, horizon)
    if start == "origin":
        single = (0,)
    elif start == "block":
        single = tuple(range(-log.range_M, 1))
    else:
        raise ValidationError(f"unknown start {start!r}")
    half = EdgeMask(mask_for_Zminus) is EdgeMask.HALF_LINE
    viol, ca, cb, ev, ra, rb = race(log, single, 0, 0.0, horizon,
                                    stop=not record, record=record,
                                    half_line_mask=half)
    x_min = log.x_min
    times = np.concatenate([[0.0], log.t[ev]])
    r = np.concatenate([[0.0], np.where(ra < 0, NEG_INF, ra + x_min)])
    R = np.concatenate([[0.0], np.where(rb < 0, NEG_INF, rb + x_min)])
    if viol >= 0:
        rep = AgreementReport(False, float(log.t[viol]), horizon)
    else:
        rep = AgreementReport(True, None, horizon)
    return EndpointReport(rep, times, r.astype(float), R.astype(float),
                          bool(ca), bool(cb))


def bootstrap_event(log: EventLog, horizon_one: float = 1.0) -> bool:
    """{xi_1^0 contains [-M, 0]}, site 0 occupied throughout (0, 1], and the
    half-line start's right endpoint stays <= 0 on (0, 1]."""
    if log.horizon < horizon_one:
        raise ValidationError("log horizon must be >= 1")
    single = evolve(log, (0,), horizon_one)
    if np.any((single.sites == 0) & ~single.born):
        return False
    final = set(single.final())
    if not set(range(-log.range_M, 1)) <= final:
        return False
    full = evolve(log, half_line(log), horizon_one)
    return not np.any(full.born & (full.sites > 0))


def shape_agreement(traj_full: Trajectory, traj_F: Trajectory, speed_a: float,
                    t0: float) -> bool:
    """Whether the F-start and the half-line start agree on every site
    y in [-a t, 0] with y >= inf_{s<=t} l_s, for all t in [t0, horizon]."""
    if traj_full.horizon != traj_F.horizon or traj_full.window != traj_F.window:
        raise UsageError("trajectories must share window and horizon")
    if not speed_a > 0:
        raise ValidationError("speed_a must be > 0")
    return bool(K.shape_kernel(
        traj_F.times, traj_F.sites.astype(np.int64), traj_F.born.astype(np.uint8),
        traj_full.times, traj_full.sites.astype(np.int64),
        traj_full.born.astype(np.uint8), traj_F.initial_mask(),
        traj_full.initial_mask(), traj_full.window[0], float(speed_a),
        float(t0), float(traj_full.horizon)))


def _survival_replica(index, seed, config, mask, initial):
    log = masked_view(build_event_log(replace(config, seed=seed)), mask)
    traj = evolve(log, initial)
    return traj.survived, traj.boundary_contaminated


def survival_estimate(config: SimConfig, mask: EdgeMask | str,
                      initial: Iterable[int], replicas: int,
                      master_seed: int, level: float = 0.95,
                      workers: int = 1) -> EstimateReport:
    """Fraction of replicas whose process is nonempty at the horizon.

    Boundary-contaminated replicas are excluded and counted separately.
    """
    task = partial(_survival_replica, config=config, mask=EdgeMask(mask),
                   initial=tuple(initial))
    out = run_experiment(task, replicas, master_seed, workers)
    kept = [s for s, c in out if not c]
    excluded = len(out) - len(kept)
    if not kept:
        raise ValidationError("every replica was boundary-contaminated")
    note = (f"survival to T={config.horizon}; overestimates survival for all "
            "time, nonincreasing in T")
    return wilson_ci(sum(kept), len(kept), level, excluded, note)
