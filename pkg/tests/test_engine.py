import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from contactregen import _kernels as K
from contactregen.engine import (agreement_on_set, bootstrap_event,
                                 endpoint_equality, evolve, evolve_family,
                                 half_line, shape_agreement,
                                 survival_estimate)
from contactregen.errors import UsageError, ValidationError
from contactregen.graphical import (EdgeMask, EventLog, SimConfig,
                                    build_event_log, masked_view)

from conftest import random_log, small_config


def replay(log, initial, horizon=None):
    """Plain-Python event replay: the oracle for the kernel."""
    occ = set(initial)
    out = [(0.0, frozenset(occ))]
    for t, k, s, d in zip(log.t, log.kind, log.src, log.dst):
        if horizon is not None and t > horizon:
            break
        if k == K.DEATH:
            occ.discard(int(s))
        elif int(s) in occ:
            occ.add(int(d))
        out.append((float(t), frozenset(occ)))
    return out


def hand_log():
    return EventLog.from_events(small_config(),
                                deaths={0: [0.7]}, arrows={(0, 1): [0.5]})


def test_hand_trace_single_site():
    traj = evolve(hand_log(), (0,), 1.0)
    assert traj.final() == (1,)
    assert traj.transitions == [(0.5, 1, "born"), (0.7, 0, "died")]
    assert traj.right_endpoint_at(1.0) == 1


def test_hand_trace_coalescence():
    traj = evolve(hand_log(), (0, 1), 1.0)
    assert traj.final() == (1,)
    assert traj.transitions == [(0.7, 0, "died")]


def test_empty_initial():
    traj = evolve(hand_log(), (), 1.0)
    assert traj.extinction_time == 0.0
    assert traj.transitions == []


def test_hand_family_union():
    a, b, ab = evolve_family(hand_log(), [(0,), (1,), (0, 1)])
    for t in (0.0, 0.5, 0.6, 0.7, 1.0):
        assert set(ab.occupied_at(t)) == set(a.occupied_at(t)) | set(b.occupied_at(t))


def test_horizon_beyond_log_rejected():
    with pytest.raises(ValidationError):
        evolve(hand_log(), (0,), 2.0)
    with pytest.raises(ValidationError):
        evolve(hand_log(), (9,))


@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_kernel_matches_replay(seed, M):
    rng = np.random.default_rng(seed)
    log = random_log(rng, M=M)
    init = tuple(sorted(set(rng.integers(-6, 7, 3).tolist())))
    traj = evolve(log, init)
    states = replay(log, init)
    for t, occ in states:
        assert set(traj.occupied_at(t)) == occ
    ext = next((t for t, occ in states if not occ), None)
    assert traj.extinction_time == ext
    if ext is not None:
        assert traj.times.size == 0 or traj.times[-1] <= ext


@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_transitions_valid(seed, M):
    rng = np.random.default_rng(seed)
    traj = evolve(random_log(rng, M=M), (0, 2))
    occ = set(traj.initial)
    for t, s, e in traj.transitions:
        if e == "born":
            assert s not in occ
            occ.add(s)
        else:
            assert s in occ
            occ.discard(s)


@given(st.integers(0, 2**32 - 1), st.integers(1, 3),
       st.sampled_from(list(EdgeMask)))
def test_additivity_and_monotonicity(seed, M, mask):
    rng = np.random.default_rng(seed)
    log = random_log(rng, M=M, n_deaths=15, n_arrows=60)
    A = set(rng.integers(-6, 7, 3).tolist())
    B = set(rng.integers(-6, 7, 2).tolist())
    ta, tb, tab = evolve_family(log, [A, B, A | B], mask)
    full = evolve(log, A)
    times = np.concatenate([[0.0], log.t])
    for t in times:
        oa, ob, oab = (set(x.occupied_at(t)) for x in (ta, tb, tab))
        assert oab == oa | ob
        assert oa <= oab
        assert oa <= set(full.occupied_at(t))   # half-line view <= full


@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_endpoint_domination(seed, M):
    rng = np.random.default_rng(seed)
    log = random_log(rng, M=M, n_arrows=60)
    rep = endpoint_equality(log)
    assert np.all(rep.r <= rep.R)


@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_light_cone(seed, M):
    rng = np.random.default_rng(seed)
    log = random_log(rng, M=M, lo=-20, hi=20, n_arrows=80)
    traj = evolve(log, (0,))
    arrow_t = log.t[log.kind == K.ARROW]
    for t, s, e in traj.transitions:
        k = int(np.searchsorted(arrow_t, t, side="right"))
        assert abs(s) <= M * k
    assert traj.births <= np.count_nonzero(log.kind == K.ARROW)


def test_light_cone_random_log():
    log = build_event_log(SimConfig(3.0, 2, -200, 200, 20.0, 5))
    traj = evolve(log, (0,))
    arrow_t = log.t[log.kind == K.ARROW]
    ks = np.searchsorted(arrow_t, traj.times, side="right")
    assert np.all(np.abs(traj.sites) <= 2 * ks)


def test_contamination_flag():
    cfg = small_config(lo=-3, hi=3, T=2.0)
    log = EventLog.from_events(cfg, arrows={(0, 1): [0.1], (1, 2): [0.2],
                                            (2, 3): [0.3]})
    assert evolve(log, (0,)).boundary_contaminated
    assert not evolve(log, (0,), 0.25).boundary_contaminated
    # the half-line start touches the left edge from the outset
    assert not evolve(log, half_line(log), 0.25).boundary_contaminated


# -- endpoint equality ---------------------------------------------------

def test_endpoint_no_events():
    log = EventLog.from_events(small_config(T=5.0))
    rep = endpoint_equality(log)
    assert rep.agreement.agrees
    assert np.all(rep.r == 0) and np.all(rep.R == 0)


def test_endpoint_sentinel_rule():
    # death(0, 0.2) empties the single start while the half-line start keeps
    # -1; the -inf sentinel differs from -1 at 0.2, before the arrow at 0.3
    cfg = small_config(M=2, T=1.0)
    log = EventLog.from_events(cfg, deaths={0: [0.2]},
                               arrows={(-1, 1): [0.3]})
    rep = endpoint_equality(log)
    assert not rep.agreement.agrees
    assert rep.agreement.first_violation_time == 0.2
    assert rep.r.tolist() == [0.0, -math.inf, -math.inf]
    assert rep.R.tolist() == [0.0, -1.0, 1.0]


def test_endpoint_half_line_mask():
    cfg = small_config(M=2, T=1.0)
    log = EventLog.from_events(cfg, arrows={(-1, 1): [0.3]})
    assert endpoint_equality(log, "half_line").agreement.agrees
    assert not endpoint_equality(log).agreement.agrees


def test_endpoint_monotone_in_horizon():
    for seed in range(20):
        log = build_event_log(SimConfig(3.0, 1, -150, 150, 10.0, seed))
        long = endpoint_equality(log, horizon=10.0, record=False).agreement
        short = endpoint_equality(log, horizon=5.0, record=False).agreement
        if long.agrees:
            assert short.agrees


def test_endpoint_block_start():
    log = EventLog.from_events(small_config(M=2, T=1.0))
    rep = endpoint_equality(log, start="block")
    assert rep.agreement.agrees


def test_endpoint_csv(tmp_path):
    cfg = small_config(M=2, T=1.0)
    log = EventLog.from_events(cfg, deaths={0: [0.2]}, arrows={(-1, 1): [0.3]})
    path = tmp_path / "e.csv"
    endpoint_equality(log).to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "time,r,R"
    assert lines[2] == "0.2,-inf,-1"


def test_trajectory_csv(tmp_path):
    path = tmp_path / "t.csv"
    evolve(hand_log(), (0,)).to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# initial: 0"
    assert lines[3] == "time,site,event"
    assert lines[4:] == ["0.5,1,born", "0.7,0,died"]


# -- agreement on a finite set -------------------------------------------

def _agree(log, F, start_F):
    full = evolve(log, half_line(log))
    small = evolve(log, start_F)
    return agreement_on_set(full, small, F)


def test_agreement_no_events():
    log = EventLog.from_events(small_config())
    assert _agree(log, (0, -1), (0, -1)).agrees


def test_agreement_shared_death():
    log = EventLog.from_events(small_config(), deaths={0: [0.2]})
    assert _agree(log, (0, -1), (0, -1)).agrees


def test_agreement_violation():
    log = EventLog.from_events(small_config(), deaths={0: [0.2]},
                               arrows={(-1, 0): [0.4]})
    rep = _agree(log, (0,), (0,))
    assert not rep.agrees and rep.first_violation_time == 0.4


def test_agreement_from_time():
    log = EventLog.from_events(small_config(T=2.0), deaths={0: [0.2, 1.5]},
                               arrows={(-1, 0): [0.4]})
    full = evolve(log, half_line(log))
    small = evolve(log, (0,))
    # disagreement on (0.4, 1.5) only
    assert not agreement_on_set(full, small, (0,), 1.0).agrees
    assert agreement_on_set(full, small, (0,), 1.5).agrees


def test_agreement_horizon_mismatch():
    log = EventLog.from_events(small_config(T=2.0))
    with pytest.raises(UsageError):
        agreement_on_set(evolve(log, (0,), 1.0), evolve(log, (0,), 2.0), (0,))


# -- bootstrap event and shape -------------------------------------------

def test_bootstrap_examples():
    cfg = small_config(T=1.0)
    assert not bootstrap_event(EventLog.from_events(cfg))
    assert bootstrap_event(EventLog.from_events(cfg, arrows={(0, -1): [0.5]}))
    assert not bootstrap_event(EventLog.from_events(
        cfg, arrows={(0, -1): [0.5]}, deaths={0: [0.8]}))
    assert not bootstrap_event(EventLog.from_events(
        cfg, arrows={(0, -1): [0.5], (-1, 0): [0.6]}, deaths={0: [0.55]}))
    # the half-line start may not rise above 0
    assert not bootstrap_event(EventLog.from_events(
        cfg, arrows={(0, -1): [0.5], (0, 1): [0.6]}))


def test_shape_no_events():
    log = masked_view(EventLog.from_events(small_config(T=2.0)), "half_line")
    full = evolve(log, half_line(log))
    assert shape_agreement(full, evolve(log, (0,)), 0.5, 0.0)


def test_shape_detects_gap():
    cfg = small_config(T=3.0)
    log = masked_view(EventLog.from_events(
        cfg, arrows={(0, -1): [0.3], (-2, -1): [0.6]}, deaths={-1: [0.4]}),
        "half_line")
    full = evolve(log, half_line(log))
    small = evolve(log, (0,))
    # after 0.6 site -1 (above inf l_s = -1) is refilled from -2 only in the
    # half-line start
    assert not shape_agreement(full, small, 2.0, 0.0)
    # with a = 1 the constraint reaches -1 at t = 1; the gap persists
    assert not shape_agreement(full, small, 1.0, 0.0)
    # a slope too small to reach -1 before the horizon sees nothing
    assert shape_agreement(full, small, 0.3, 0.0)


def test_shape_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(80):
        log = masked_view(random_log(rng, M=2, n_arrows=50), "half_line")
        full = evolve(log, half_line(log))
        small = evolve(log, (0,))
        if not small.survived:
            continue
        a, t0 = float(rng.uniform(0.3, 3)), float(rng.uniform(0, 1.5))
        assert shape_agreement(full, small, a, t0) == _shape_oracle(
            log, full, small, a, t0)


def _shape_oracle(log, full, small, a, t0):
    """Check every constant stretch at its right end (or the horizon)."""
    times = sorted(set([0.0] + log.t.tolist()))
    ends = times[1:] + [log.horizon]
    running = 0
    for left, right in zip(times, ends):
        occ_f = set(small.occupied_at(left))
        occ_z = set(full.occupied_at(left))
        running = min(running, min(occ_f)) if occ_f else running
        if right <= t0 and right != log.horizon:
            continue
        lo = max(running, math.ceil(-a * right))
        for y in range(lo, 1):
            if (y in occ_f) != (y in occ_z):
                return False
    return True


def test_survival_subcritical():
    cfg = SimConfig.with_default_window(0.01, 1, 100.0)
    rep = survival_estimate(cfg, EdgeMask.FULL_GRAPH, (0,), 1000, 11)
    assert rep.p_hat < 0.01 and rep.ci_high < 0.05
    again = survival_estimate(cfg, EdgeMask.FULL_GRAPH, (0,), 1000, 11)
    assert again == rep


def test_survival_supercritical():
    cfg = SimConfig.with_default_window(3.0, 1, 20.0)
    rep = survival_estimate(cfg, "full_graph", (0,), 60, 2)
    assert rep.ci_low > 0.3
