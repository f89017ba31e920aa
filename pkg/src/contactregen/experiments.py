"""Monte Carlo experiments behind the CLI commands.

Every experiment is a loop over seeded replicas (see ``stats.run_experiment``)
followed by an aggregation that does not depend on completion order.  Replica
tasks are module-level functions bound with ``functools.partial`` so that they
can be shipped to worker processes.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from functools import partial

import numpy as np

from . import breakpoints as bp
from . import percolation as pc
from ._hashrng import replica_seed
from .engine import (agreement_on_set, bootstrap_event, endpoint_equality,
                     evolve, half_line, race, shape_agreement)
from .errors import InsufficientDataError, ValidationError
from .graphical import (EdgeMask, SimConfig, build_event_log, masked_view,
                        thinned_view)
from .stats import (decay_fit, edge_speed, geometric_fit, ks_two_sample,
                    normality_test, pooled_lag_autocorrelation,
                    run_experiment, wilson_ci)

PILOT_STREAM = 1


def _sim(mu, M, horizon, seed, margin=None, doubled=False) -> SimConfig:
    if margin is None:
        cfg = SimConfig.with_default_window(mu, M, horizon, seed)
    else:
        cfg = SimConfig(mu, M, -int(margin), int(margin), horizon, seed)
    return cfg.doubled() if doubled else cfg


def _table_row(label: dict, rep) -> dict:
    row = dict(label)
    row.update(trials=rep.trials, successes=rep.successes, p_hat=rep.p_hat,
               ci_low=rep.ci_low, ci_high=rep.ci_high,
               excluded=rep.excluded_boundary)
    return row


def doubling_verdict(base: list[bool], doubled: list[bool],
                     level: float = 0.95) -> dict:
    """Compare an indicator on the same replicas under two windows."""
    b = wilson_ci(sum(base), len(base), level)
    d = wilson_ci(sum(doubled), len(doubled), level)
    diff = abs(d.p_hat - b.p_hat)
    return {"replicas": len(base), "p_hat": b.p_hat, "p_hat_doubled": d.p_hat,
            "difference": diff, "half_width": b.half_width,
            "stable": bool(diff < b.half_width or diff == 0)}


# -- survival --------------------------------------------------------------

def _survival_task(index, seed, mus, M, horizon, margin, doubled=False):
    top = max(mus)
    log = build_event_log(_sim(top, M, horizon, seed, margin, doubled))
    out = {}
    for mu in mus:
        view = thinned_view(log, mu)
        for mask in EdgeMask:
            traj = evolve(masked_view(view, mask), (0,), horizon)
            out[(mu, mask.value)] = (traj.survived, traj.boundary_contaminated)
    return out


def survival_comparison(mus, M, horizon, replicas, master_seed, margin=None,
                        level=0.95, workers=1, window_doubling=0) -> dict:
    """Survival to the horizon on the full and half-line views at several
    arrow rates, all thinned from one log per replica.

    A replica contaminated in any cell is dropped from every cell, so the
    per-realization orderings (in mu, and half-line <= full) carry over to
    the estimates exactly.
    """
    mus = sorted(float(m) for m in mus)
    task = partial(_survival_task, mus=tuple(mus), M=M, horizon=horizon,
                   margin=margin)
    res = run_experiment(task, replicas, master_seed, workers)
    clean = [r for r in res if not any(c for _, c in r.values())]
    excluded = len(res) - len(clean)
    if not clean:
        raise InsufficientDataError("every replica was boundary-contaminated")
    rows, order_viol, mask_viol = [], 0, 0
    for r in clean:
        for mask in EdgeMask:
            s = [r[(mu, mask.value)][0] for mu in mus]
            order_viol += sum(a and not b for a, b in zip(s, s[1:]))
        for mu in mus:
            mask_viol += r[(mu, "half_line")][0] and not r[(mu, "full_graph")][0]
    note = (f"survival to T={horizon}; overestimates survival for all time, "
            "nonincreasing in T")
    for mu in mus:
        for mask in EdgeMask:
            k = sum(r[(mu, mask.value)][0] for r in clean)
            rep = wilson_ci(k, len(clean), level, excluded, note)
            rows.append(_table_row({"mu": mu, "mask": mask.value}, rep))
    out = {"rows": rows, "excluded": excluded,
           "monotone_violations": order_viol,
           "half_line_violations": mask_viol, "horizon": horizon}
    if window_doubling:
        dtask = partial(task, doubled=True)
        dres = run_experiment(dtask, window_doubling, master_seed, workers)
        mu = mus[-1]
        out["window_doubling"] = doubling_verdict(
            [r[(mu, "full_graph")][0] for r in res[:window_doubling]],
            [r[(mu, "full_graph")][0] for r in dres], level)
    return out


# -- endpoint equality and the bootstrap event -----------------------------

def _endpoint_task(index, seed, mu, M, horizon, margin, start, doubled=False):
    log = build_event_log(_sim(mu, M, horizon, seed, margin, doubled))
    out = {}
    for mask in EdgeMask:
        rep = endpoint_equality(log, mask, horizon, start, record=False)
        out[mask.value] = (rep.agreement.first_violation_time,
                           rep.contaminated_single or rep.contaminated_half_line)
    out["bootstrap"] = bootstrap_event(log) if horizon >= 1 else None
    return out


def _holds(v, T):
    return v is None or v > T


def endpoint_experiment(mu, M, horizon, replicas, master_seed, start="origin",
                        horizons=None, margin=None, level=0.95, workers=1,
                        window_doubling=0) -> dict:
    """P(r_t = R_t for all t <= T) on both masks for every T in
    ``horizons`` (exactly nested per replica), plus the bootstrap event."""
    horizons = sorted(horizons or [horizon])
    if horizons[-1] > horizon:
        raise ValidationError("horizons must not exceed the horizon")
    task = partial(_endpoint_task, mu=mu, M=M, horizon=horizon, margin=margin,
                   start=start)
    res = run_experiment(task, replicas, master_seed, workers)
    rows = []
    note = "equality on [0, T]; overestimates the all-time event"
    for mask in EdgeMask:
        kept = [r[mask.value][0] for r in res if not r[mask.value][1]]
        excl = len(res) - len(kept)
        if not kept:
            raise InsufficientDataError("every replica was boundary-contaminated")
        for T in horizons:
            rep = wilson_ci(sum(_holds(v, T) for v in kept), len(kept), level,
                            excl, note)
            rows.append(_table_row({"mask": mask.value, "horizon": T}, rep))
    out = {"rows": rows, "start": start}
    if horizon >= 1:
        out["bootstrap"] = wilson_ci(sum(r["bootstrap"] for r in res),
                                     len(res), level).to_dict()
    if window_doubling:
        dres = run_experiment(partial(task, doubled=True), window_doubling,
                              master_seed, workers)
        out["window_doubling"] = doubling_verdict(
            [_holds(r["full_graph"][0], horizon) for r in res[:window_doubling]],
            [_holds(r["full_graph"][0], horizon) for r in dres], level)
    return out


# -- finite-set agreement and shape agreement ------------------------------

def _agreement_task(index, seed, mu, M, horizon, margin, set_size,
                    from_times):
    log = masked_view(build_event_log(_sim(mu, M, horizon, seed, margin)),
                      EdgeMask.HALF_LINE)
    F = tuple(range(-set_size + 1, 1))
    full = evolve(log, half_line(log), horizon)
    small = evolve(log, F, horizon)
    viol = {}
    for n in from_times:
        rep = agreement_on_set(full, small, F, n)
        viol[n] = rep.agrees
    return viol, full.boundary_contaminated or small.boundary_contaminated


def agreement_experiment(mu, M, horizon, replicas, master_seed, set_size=1,
                         from_times=None, margin=None, level=0.95,
                         workers=1) -> dict:
    """P(B_n): the half-line start and the F start agree on F at every time
    in [n, T], on the half-line view, F = {-|F|+1, ..., 0}."""
    from_times = sorted(from_times or [0.0])
    task = partial(_agreement_task, mu=mu, M=M, horizon=horizon, margin=margin,
                   set_size=set_size, from_times=tuple(from_times))
    res = run_experiment(task, replicas, master_seed, workers)
    kept = [v for v, c in res if not c]
    excl = len(res) - len(kept)
    if not kept:
        raise InsufficientDataError("every replica was boundary-contaminated")
    rows = []
    for n in from_times:
        rep = wilson_ci(sum(v[n] for v in kept), len(kept), level, excl,
                        f"agreement on [n, {horizon}]")
        rows.append(_table_row({"from_time": n}, rep))
    return {"rows": rows, "set_size": set_size}


def _shape_task(index, seed, mu, M, horizon, margin, set_size, speed, t0):
    log = masked_view(build_event_log(_sim(mu, M, horizon, seed, margin)),
                      EdgeMask.HALF_LINE)
    F = tuple(range(-set_size + 1, 1))
    small = evolve(log, F, horizon)
    if not small.survived:
        return None, small.boundary_contaminated
    full = evolve(log, half_line(log), horizon)
    return (shape_agreement(full, small, speed, t0),
            small.boundary_contaminated or full.boundary_contaminated)


def shape_experiment(mu, M, horizon, replicas, master_seed, speed=0.1,
                     t0=20.0, set_size=1, margin=None, level=0.95,
                     workers=1) -> dict:
    """Fraction of surviving F-start runs that agree with the half-line
    start on [-a t, 0] (above the running infimum) for all t in [t0, T]."""
    task = partial(_shape_task, mu=mu, M=M, horizon=horizon, margin=margin,
                   set_size=set_size, speed=speed, t0=t0)
    res = run_experiment(task, replicas, master_seed, workers)
    surv = [ok for ok, c in res if ok is not None and not c]
    excl = sum(1 for ok, c in res if ok is not None and c)
    if not surv:
        raise InsufficientDataError("no surviving uncontaminated runs")
    rep = wilson_ci(sum(surv), len(surv), level, excl,
                    f"agreement on [{t0}, {horizon}] among survivors")
    return {"rows": [_table_row({"speed": speed, "t0": t0}, rep)],
            "survivors": len(surv), "replicas": replicas}


# -- one pass over a contact replica ----------------------------------------

@dataclass(frozen=True)
class ContactSummary:
    index: int
    seed: int
    survived: bool
    contaminated: bool
    r_T: float | None
    N: int
    sigma_N: float
    final_position: int
    restart_censored: bool
    cse_violation: float | None   # first violation of (0, 0), None if none

    def to_dict(self) -> dict:
        return asdict(self)


def _contact_task(index, seed, mu, M, horizon, margin, doubled=False):
    log = build_event_log(_sim(mu, M, horizon, seed, margin, doubled))
    base = evolve(log, (0,), horizon)
    rec = bp.restart_construction(log, horizon)
    viol = race(log, (0,), 0, 0.0, horizon, stop=True)
    v = None if viol[0] < 0 else float(log.t[viol[0]])
    return ContactSummary(index, seed, base.survived,
                          base.boundary_contaminated or bool(viol[2]),
                          base.right_endpoint_at(horizon) if base.survived else None,
                          rec.N, rec.sigma_N, rec.final_position, rec.censored, v)


def contact_sample(mu, M, horizon, replicas, master_seed, margin=None,
                   workers=1, doubled=False) -> list[ContactSummary]:
    task = partial(_contact_task, mu=mu, M=M, horizon=horizon, margin=margin,
                   doubled=doubled)
    return run_experiment(task, replicas, master_seed, workers)


def restart_summary(sample: list[ContactSummary], level=0.01) -> dict:
    ns = [s.N for s in sample if not s.restart_censored]
    if not ns:
        raise InsufficientDataError("every restart record is censored")
    p, test = geometric_fit(ns, level)
    return {"p_hat": p, "mean_N": float(np.mean(ns)), "used": len(ns),
            "censored": len(sample) - len(ns), "test": test.to_dict()}


def clt_summary(sample: list[ContactSummary], horizon, level=0.01) -> dict:
    r = np.array([s.r_T for s in sample if s.survived and not s.contaminated],
                 float)
    if r.size < 20:
        raise InsufficientDataError("normality check needs 20 surviving runs")
    alpha = float(r.mean() / horizon)
    sigma = float(r.std(ddof=1) / math.sqrt(horizon))
    z = (r - alpha * horizon) / (sigma * math.sqrt(horizon))
    test = normality_test(z, level)
    return {"alpha_hat": alpha, "sigma_hat": sigma, "survivors": int(r.size),
            "test": test.to_dict(), "standardized": z.tolist()}


def cse_profile(sample: list[ContactSummary], horizons, level=0.95) -> list:
    """P((0, 0) is c.s.e. up to T) for each T, on one nested sample."""
    kept = [s.cse_violation for s in sample if not s.contaminated]
    excl = len(sample) - len(kept)
    rows = []
    for T in sorted(horizons):
        rep = wilson_ci(sum(_holds(v, T) for v in kept), len(kept), level,
                        excl, "c.s.e. up to T; nonincreasing in T")
        rows.append(_table_row({"horizon": T}, rep))
    return rows


# -- break points -----------------------------------------------------------

def _psi_task(index, seed, mu, M, horizon, margin, verification_margin):
    log = build_event_log(_sim(mu, M, horizon, seed, margin))
    return bp.psi_sequence(log, horizon, verification_margin)


def psi_runs(mu, M, horizon, master_seed, replicas, min_pairs=0, margin=None,
             verification_margin=None, max_replicas=None):
    """psi series for replicas 0, 1, ...: all ``replicas`` of them, or as
    many as it takes to pool ``min_pairs`` uncensored increments."""
    task = partial(_psi_task, mu=mu, M=M, horizon=horizon, margin=margin,
                   verification_margin=verification_margin)
    out = []
    pairs = 0
    limit = max_replicas or max(replicas, 10 * replicas)
    i = 0
    while i < limit and (i < replicas or pairs < min_pairs):
        series = task(i, replica_seed(master_seed, i))
        out.append(series)
        pairs += max(0, len(series.uncensored) - 1)
        i += 1
    return out


def increment_summary(series_list, level=0.01) -> dict:
    """Pooled increments, first-half vs second-half KS tests, lag-1
    autocorrelation and the ratio edge-speed estimate."""
    samples = []
    for s in series_list:
        try:
            samples.append(bp.increments(s))
        except InsufficientDataError:
            continue
    pooled = [p for smp in samples for p in smp.pairs]
    surviving = [s for s in series_list if s.extinction_time is None]
    out = {"runs": len(series_list), "surviving_runs": len(surviving),
           "pairs": len(pooled),
           "mean_points_per_surviving_run":
               float(np.mean([len(s.points) for s in surviving]))
               if surviving else 0.0}
    if len(pooled) < 2:
        return out
    first = [p for smp in samples for p in smp.pairs[: len(smp) // 2]]
    second = [p for smp in samples for p in smp.pairs[len(smp) // 2:]]
    for j, name in ((0, "dr"), (1, "dpsi")):
        a = [p[j] for p in first]
        b = [p[j] for p in second]
        if a and b:
            out[f"ks_{name}"] = ks_two_sample(a, b, level).to_dict()
        try:
            rho, n = pooled_lag_autocorrelation(
                [[p[j] for p in smp.pairs] for smp in samples])
            out[f"lag1_{name}"] = {"value": rho, "pairs": n,
                                   "bound": 2 / math.sqrt(n)}
        except ValidationError:
            pass
    try:
        alpha, ci = edge_speed(pooled)
        out["edge_speed"] = {"alpha_hat": alpha, "ci": list(ci)}
    except InsufficientDataError:
        pass
    return out


# -- percolation ------------------------------------------------------------

def _perc_task(index, seed, epsilon, mode, n_max, ns, beta, y_fraction,
               full=False, extent=0, scan=None):
    cfg = pc.PercConfig(epsilon, mode, n_max, seed,
                        extent=None if full else extent)
    field = pc.gen_field(cfg)
    run0 = pc.origin_run(field)
    out = {"tau": run0.tau, "rows": {}}
    for n in ns:
        Y = pc.row_sites(n, -y_fraction * n, y_fraction * n)
        tail, slow = pc.extinction_and_speed_events(run0, n, beta)
        row = {"alive": run0.alive_at(n), "size": int(run0.occ[n].sum()),
               "L": run0.L(n), "R": run0.R(n), "count_Y": None,
               "size_Y": int(Y.size), "tail": tail, "slow": slow}
        if Y.size:
            row["count_Y"] = pc.occupied_count(run0, Y, n)
        if scan is not None:
            b, rho = scan
            row["scan"] = pc.scan_consecutive_runs(run0, n, b, beta, rho)
        out["rows"][n] = row
    if full:
        identity = None
        if run0.survived:
            run_full = pc.evolve_percolation(field, pc.two_z_start(cfg))
            identity = all(pc.coupling_identity_check(field, n, run0, run_full)
                           for n in ns)
        out["identity"] = identity
    return out


def perc_sample(epsilon, mode, n_max, ns, replicas, master_seed, beta=0.5,
                y_fraction=0.5, full=False, scan=None, workers=1, stream=0):
    task = partial(_perc_task, epsilon=epsilon, mode=mode, n_max=n_max,
                   ns=tuple(ns), beta=beta, y_fraction=y_fraction, full=full,
                   scan=scan)
    return run_experiment(task, replicas, master_seed, workers, stream)


def _rate_table(sample, ns, flag, level=0.95):
    rows, points = [], []
    for n in ns:
        k = sum(bool(flag(r["rows"][n])) for r in sample)
        rep = wilson_ci(k, len(sample), level)
        rows.append(_table_row({"n": n}, rep))
        points.append((n, rep.p_hat, rep.trials))
    return rows, points


def _fit(points):
    try:
        return decay_fit(points).to_dict()
    except InsufficientDataError as exc:
        return {"error": str(exc)}


def percolation_experiment(epsilon, mode, n_max, ns, replicas, master_seed,
                           beta=0.5, level=0.95, workers=1) -> dict:
    """Coupling identity on surviving runs, the extinction tail
    {n <= tau < n_max} and the slow-edge event, per row n in ``ns``."""
    sample = perc_sample(epsilon, mode, n_max, ns, replicas, master_seed,
                         beta=beta, full=True, workers=workers)
    surv = [r for r in sample if r["identity"] is not None]
    tail_rows, tail_pts = _rate_table(sample, ns, lambda r: r["tail"], level)
    slow_rows, _ = _rate_table(sample, ns, lambda r: r["slow"], level)
    return {"sample": sample, "surviving": len(surv),
            "identity_violations": sum(not r["identity"] for r in surv),
            "tail_rows": tail_rows, "tail_fit": _fit(tail_pts),
            "slow_rows": slow_rows, "n_max": n_max,
            "proxy": f"tau = infinity read as survival to n_max = {n_max}"}


def _deficit(row, rho):
    return (row["alive"] and row["count_Y"] is not None
            and row["count_Y"] < rho * row["size_Y"])


RHO_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))


def calibrate_rho(epsilon, mode, n_max, pilot_n, replicas, master_seed,
                  y_fraction=0.5, target=(1e-3, 1e-1), workers=1) -> dict:
    """Largest rho on a 0.05 grid whose pilot deficit probability at row
    ``pilot_n`` lies in ``target``; the closest one (in log scale) if none
    does.  Pilot replicas use a seed family disjoint from the main run."""
    sample = perc_sample(epsilon, mode, n_max, (pilot_n,), replicas,
                         master_seed, y_fraction=y_fraction, workers=workers,
                         stream=PILOT_STREAM)
    lo, hi = target
    probs = {rho: sum(_deficit(r["rows"][pilot_n], rho) for r in sample)
             / len(sample) for rho in RHO_GRID}
    inside = [rho for rho, p in probs.items() if lo <= p <= hi]
    if inside:
        rho = max(inside)
    else:
        def dist(p):
            p = max(p, 0.5 / len(sample))
            return min(abs(math.log(p / lo)), abs(math.log(p / hi)))
        rho = min(RHO_GRID, key=lambda r: (dist(probs[r]), -r))
    return {"rho": rho, "pilot_p_hat": probs[rho], "in_target": bool(inside),
            "pilot_replicas": replicas, "pilot_n": pilot_n,
            "target": list(target)}


def deficit_decay_experiment(epsilon, mode, n_max, ns, replicas, master_seed,
                             rho=None, pilot_replicas=1000, pilot_n=None,
                             y_fraction=0.5, level=0.95, workers=1) -> dict:
    """p_n = P(#(Y_n occupied by W_n^0) < rho |Y_n|, W_n^0 nonempty) with
    Y_n = X(n) within [-y_fraction n, y_fraction n], and its log-linear fit."""
    ns = sorted(ns)
    pilot = None
    if rho is None:
        pilot = calibrate_rho(epsilon, mode, n_max, pilot_n or ns[0],
                              pilot_replicas, master_seed, y_fraction,
                              workers=workers)
        rho = pilot["rho"]
    sample = perc_sample(epsilon, mode, n_max, ns, replicas, master_seed,
                         y_fraction=y_fraction, workers=workers)
    rows, pts = _rate_table(sample, ns, lambda r: _deficit(r, rho), level)
    return {"sample": sample, "rho": rho, "pilot": pilot, "rows": rows,
            "fit": _fit(pts)}


def scan_runs_experiment(epsilon, mode, n_max, ns, replicas, master_seed, b,
                         beta, rho, level=0.95, workers=1) -> dict:
    sample = perc_sample(epsilon, mode, n_max, ns, replicas, master_seed,
                         beta=beta, scan=(b, rho), workers=workers)
    rows, pts = _rate_table(sample, ns, lambda r: r["scan"], level)
    return {"sample": sample, "rows": rows, "fit": _fit(pts)}
