"""Numba kernels for the event-driven contact process.

The schedule is a set of parallel arrays sorted by (time, kind, src, dst):
``t`` float64, ``kind`` int8 (0 death, 1 arrow), ``src``/``dst`` int32 sites
(``dst == src`` for deaths) and ``idx`` int32, the ordinal of an arrow inside
its edge stream (used to derive thinning marks).  Occupancy arrays are uint8
indexed by ``site - x_min``.
"""
import math

import numpy as np
from numba import njit

from ._hashrng import TAG_ARROW, TAG_DEATH, TAG_MARK, stream_key, uniform

DEATH = 0
ARROW = 1


@njit(cache=True)
def _grow(a, n):
    out = np.empty(max(2 * a.size, 16), a.dtype)
    out[:n] = a[:n]
    return out


@njit(cache=True)
def _stream_keys(seed, M, x_min, x_max):
    n_sites = x_max - x_min + 1
    n = n_sites
    for x in range(x_min, x_max + 1):
        for y in range(x - M, x + M + 1):
            if y != x and x_min <= y <= x_max:
                n += 1
    keys = np.empty(n, np.uint64)
    kd = np.empty(n, np.int8)
    xs = np.empty(n, np.int32)
    ys = np.empty(n, np.int32)
    k = 0
    for x in range(x_min, x_max + 1):
        keys[k] = stream_key(seed, TAG_DEATH, x, 0)
        kd[k] = DEATH
        xs[k] = x
        ys[k] = x
        k += 1
    for x in range(x_min, x_max + 1):
        for y in range(x - M, x + M + 1):
            if y != x and x_min <= y <= x_max:
                keys[k] = stream_key(seed, TAG_ARROW, x, y - x)
                kd[k] = ARROW
                xs[k] = x
                ys[k] = y
                k += 1
    return keys, kd, xs, ys


@njit(cache=True)
def generate_schedule(seed, mu, M, x_min, x_max, horizon, cap, buf_size):
    """Time-sorted schedule of all streams of the window.

    Streams are enumerated in (kind, src, dst) order, so sorting each
    time slab on (time, stream index) realizes the tie-break rule.  Slabs
    hold a few thousand events and are sorted in cache.  Returns n = -1 if
    ``cap`` is too small and n = -2 if a slab overflows ``buf_size``.
    """
    keys, kinds, xs, ys = _stream_keys(seed, M, x_min, x_max)
    ns = keys.size
    nxt = np.empty(ns, np.float64)
    draws = np.zeros(ns, np.int64)
    ords = np.zeros(ns, np.int32)
    rates = np.empty(ns, np.float64)
    for k in range(ns):
        rates[k] = 1.0 if kinds[k] == DEATH else mu
        nxt[k] = _next_time(keys[k], rates[k], 0.0, draws, k)
    t = np.empty(cap, np.float64)
    kd = np.empty(cap, np.int8)
    src = np.empty(cap, np.int32)
    dst = np.empty(cap, np.int32)
    idx = np.empty(cap, np.int32)
    expected = 0.0
    for k in range(ns):
        expected += rates[k] * horizon
    n_slabs = max(1, int(expected / 4096.0))
    width = horizon / n_slabs
    buf_t = np.empty(buf_size, np.float64)
    buf_k = np.empty(buf_size, np.int64)
    buf_j = np.empty(buf_size, np.int32)
    n = 0
    for sl in range(n_slabs):
        hi = horizon if sl == n_slabs - 1 else (sl + 1) * width
        m = 0
        for k in range(ns):
            while nxt[k] <= hi:
                if m == buf_size:
                    return -2, t, kd, src, dst, idx
                buf_t[m] = nxt[k]
                buf_k[m] = k
                buf_j[m] = ords[k]
                ords[k] += 1
                m += 1
                nxt[k] = _next_time(keys[k], rates[k], nxt[k], draws, k)
        if n + m > cap:
            return -1, t, kd, src, dst, idx
        perm = _slab_order(buf_t, buf_k, m, sl * width, width)
        for q in range(m):
            i = perm[q]
            k = buf_k[i]
            t[n] = buf_t[i]
            kd[n] = kinds[k]
            src[n] = xs[k]
            dst[n] = ys[k]
            idx[n] = buf_j[i]
            n += 1
    return n, t, kd, src, dst, idx


@njit(cache=True, inline="always")
def _next_time(key, rate, time, draws, k):
    while True:
        u = uniform(key, draws[k])
        draws[k] += 1
        nt = time - math.log(1.0 - u) / rate
        if nt != time:
            return nt


@njit(cache=True)
def _slab_order(bt, bk, m, lo_t, width):
    nb = max(1, m // 2)
    scale = nb / width
    start = np.zeros(nb + 1, np.int64)
    bucket = np.empty(m, np.int64)
    for i in range(m):
        b = min(max(int((bt[i] - lo_t) * scale), 0), nb - 1)
        bucket[i] = b
        start[b + 1] += 1
    for b in range(nb):
        start[b + 1] += start[b]
    pos = start.copy()
    perm = np.empty(m, np.int64)
    for i in range(m):
        b = bucket[i]
        perm[pos[b]] = i
        pos[b] += 1
    for b in range(nb):
        lo = start[b]
        for i in range(lo + 1, start[b + 1]):
            cur = perm[i]
            j = i
            while j > lo and (bt[perm[j - 1]] > bt[cur] or (
                    bt[perm[j - 1]] == bt[cur] and bk[perm[j - 1]] > bk[cur])):
                perm[j] = perm[j - 1]
                j -= 1
            perm[j] = cur
    return perm


@njit(cache=True)
def arrow_marks(seed, src, dst, idx):
    out = np.empty(src.size, np.float64)
    for i in range(src.size):
        key = stream_key(seed, TAG_MARK, src[i], dst[i] - src[i])
        out[i] = uniform(key, idx[i])
    return out


# Hot loops never reassign arrays: growing a buffer inside the loop makes
# numba refcount it on every iteration, which costs ~20x.  Each kernel is a
# driver around an inner loop that returns when its buffers are full.

@njit(cache=True)
def _guards(occ, M):
    n_sites = occ.size
    lo = True
    hi = True
    for k in range(min(M, n_sites)):
        if occ[k]:
            lo = False
        if occ[n_sites - 1 - k]:
            hi = False
    return lo, hi


@njit(cache=True)
def _evolve_loop(t, kd, src, dst, t_end, occ, x_min, M, st, record,
                 tr_e, tr_s, tr_b, nt):
    # st: i, count, births, contaminated, extinct, guard_lo, guard_hi, done
    n_sites = occ.size
    i = st[0]
    count = st[1]
    births = st[2]
    contaminated = st[3]
    guard_lo = st[5]
    guard_hi = st[6]
    cap = tr_e.size
    n = t.size
    done = 1
    while i < n and t[i] <= t_end:
        if record and nt == cap:
            done = 0
            break
        changed = -1
        born = 0
        s = src[i] - x_min
        if kd[i] == DEATH:
            if occ[s]:
                occ[s] = 0
                count -= 1
                changed = s
        else:
            d = dst[i] - x_min
            if occ[s] and not occ[d]:
                occ[d] = 1
                count += 1
                changed = d
                born = 1
                births += 1
                if (guard_lo and d < M) or (guard_hi and d >= n_sites - M):
                    contaminated = 1
        if changed >= 0:
            if record:
                tr_e[nt] = i
                tr_s[nt] = changed + x_min
                tr_b[nt] = born
                nt += 1
            if count == 0:
                st[4] = i
                break
        i += 1
    st[0] = i
    st[1] = count
    st[2] = births
    st[3] = contaminated
    st[7] = done
    return nt


@njit(cache=True)
def evolve_kernel(t, kd, src, dst, i0, t_end, occ, x_min, M, record):
    """Evolve ``occ`` in place over events ``i0..`` with time <= t_end.

    Returns (n_trans, trans_event, trans_site, trans_born, extinct_event,
    contaminated, n_births).  ``extinct_event`` is -1 if the set is nonempty
    at the end.  Contamination is a birth within M of a window edge that the
    initial set did not already reach.
    """
    count = 0
    for k in range(occ.size):
        count += occ[k]
    cap = 1024 if record else 1
    tr_e = np.empty(cap, np.int64)
    tr_s = np.empty(cap, np.int32)
    tr_b = np.empty(cap, np.int8)
    if count == 0:
        return 0, tr_e[:0], tr_s[:0], tr_b[:0], i0 - 1, False, 0
    lo, hi = _guards(occ, M)
    st = np.array([i0, count, 0, 0, -1, int(lo), int(hi), 0], np.int64)
    nt = 0
    while True:
        nt = _evolve_loop(t, kd, src, dst, t_end, occ, x_min, M, st, record,
                          tr_e, tr_s, tr_b, nt)
        if st[7]:
            break
        tr_e = _grow(tr_e, nt)
        tr_s = _grow(tr_s, nt)
        tr_b = _grow(tr_b, nt)
    return (nt, tr_e[:nt], tr_s[:nt], tr_b[:nt], st[4], st[3] != 0,
            st[2])


@njit(cache=True, inline="always")
def _sup_below(occ, k):
    while k >= 0 and occ[k] == 0:
        k -= 1
    return k


@njit(cache=True)
def _race_loop(t, kd, src, dst, t_end, occ_a, occ_b, x_min, M, stop, record,
               b_half_line, st, rec_e, rec_a, rec_b, nr):
    # st: i, sup_a, sup_b, cont_a, cont_b, violation, ga_lo, ga_hi, gb_lo,
    #     gb_hi, done
    n_sites = occ_a.size
    i = st[0]
    sup_a = st[1]
    sup_b = st[2]
    cont_a = st[3]
    cont_b = st[4]
    violation = st[5]
    ga_lo = st[6]
    ga_hi = st[7]
    gb_lo = st[8]
    gb_hi = st[9]
    zero = -x_min
    cap = rec_e.size
    n = t.size
    done = 1
    while i < n and t[i] <= t_end:
        if record and nr == cap:
            done = 0
            break
        old_a = sup_a
        old_b = sup_b
        s = src[i] - x_min
        if kd[i] == DEATH:
            if occ_a[s]:
                occ_a[s] = 0
                if s == sup_a:
                    sup_a = _sup_below(occ_a, s - 1)
            if occ_b[s]:
                occ_b[s] = 0
                if s == sup_b:
                    sup_b = _sup_below(occ_b, s - 1)
        else:
            d = dst[i] - x_min
            if occ_a[s] and not occ_a[d]:
                occ_a[d] = 1
                if d > sup_a:
                    sup_a = d
                if (ga_lo and d < M) or (ga_hi and d >= n_sites - M):
                    cont_a = 1
            if occ_b[s] and not occ_b[d] and not (
                    b_half_line and (s > zero or d > zero)):
                occ_b[d] = 1
                if d > sup_b:
                    sup_b = d
                if (gb_lo and d < M) or (gb_hi and d >= n_sites - M):
                    cont_b = 1
        if sup_a != old_a or sup_b != old_b:
            if record:
                rec_e[nr] = i
                rec_a[nr] = sup_a
                rec_b[nr] = sup_b
                nr += 1
            if sup_a != sup_b and violation < 0:
                violation = i
                if stop:
                    i += 1
                    break
        i += 1
    st[0] = i
    st[1] = sup_a
    st[2] = sup_b
    st[3] = cont_a
    st[4] = cont_b
    st[5] = violation
    st[10] = done
    return nr


@njit(cache=True)
def race_kernel(t, kd, src, dst, i0, t_end, occ_a, occ_b, x_min, M, stop,
                record, b_half_line):
    """Evolve two coupled sets and compare their suprema.

    ``occ_a`` is the small start (single site), ``occ_b`` the half-line
    start.  An empty set has supremum -1 (the -inf sentinel in local
    coordinates).  Returns (violation_event, contaminated_a, contaminated_b,
    rec_event, rec_a, rec_b), where violation_event is the first event after
    which the suprema differ (-1 if none up to t_end), and the rec arrays
    list the endpoints after every event that changed either supremum when
    ``record`` is set.  With ``b_half_line`` the second set ignores arrows
    touching sites > 0.
    """
    n_sites = occ_a.size
    ga_lo, ga_hi = _guards(occ_a, M)
    gb_lo, gb_hi = _guards(occ_b, M)
    st = np.array([i0, _sup_below(occ_a, n_sites - 1),
                   _sup_below(occ_b, n_sites - 1), 0, 0, -1, int(ga_lo),
                   int(ga_hi), int(gb_lo), int(gb_hi), 0], np.int64)
    cap = 1024 if record else 1
    rec_e = np.empty(cap, np.int64)
    rec_a = np.empty(cap, np.int32)
    rec_b = np.empty(cap, np.int32)
    nr = 0
    while True:
        nr = _race_loop(t, kd, src, dst, t_end, occ_a, occ_b, x_min, M, stop,
                        record, b_half_line, st, rec_e, rec_a, rec_b, nr)
        if st[10]:
            break
        rec_e = _grow(rec_e, nr)
        rec_a = _grow(rec_a, nr)
        rec_b = _grow(rec_b, nr)
    return st[5], st[3] != 0, st[4] != 0, rec_e[:nr], rec_a[:nr], rec_b[:nr]


@njit(cache=True)
def shape_kernel(ta, sa, ba, tb, sb, bb, occ_f, occ_z, x_min, speed, t0,
                 horizon):
    """Shape-agreement check between an F-start and a half-line start.

    Transition streams (time, site, born) of both trajectories are merged
    in time order.  The constrained set at time t is the sites y with
    max(inf_{s<=t} l_s, -a t) <= y <= 0.  State is piecewise constant, and
    the constrained set only grows, so it suffices to check each constant
    stretch against the constraint at the stretch's right end.  Returns
    True iff no disagreement is found on [t0, horizon].
    """
    n_sites = occ_f.size
    zero = -x_min
    diff = np.empty(n_sites, np.int64)
    for k in range(n_sites):
        diff[k] = occ_f[k] ^ occ_z[k]
    minl = n_sites
    for k in range(n_sites):
        if occ_f[k]:
            minl = k
            break
    lo = zero + 1  # constraint is [lo, zero]; empty initially
    bad = 0
    ia = 0
    ib = 0
    na = ta.size
    nb = tb.size
    while True:
        pending = ia < na or ib < nb
        tn = horizon
        if ia < na and ta[ia] < tn:
            tn = ta[ia]
        if ib < nb and tb[ib] < tn:
            tn = tb[ib]
        if tn > t0 or (not pending and tn >= t0):
            new_lo = int(math.ceil(-speed * tn)) + zero
            if new_lo < minl:
                new_lo = minl
            if new_lo < 0:
                new_lo = 0
            while lo > new_lo:
                lo -= 1
                bad += diff[lo]
            if bad > 0:
                return False
        if not pending:
            break
        while ia < na and ta[ia] == tn:
            k = sa[ia] - x_min
            occ_f[k] = ba[ia]
            if ba[ia] and k < minl:
                minl = k
            old = diff[k]
            diff[k] = occ_f[k] ^ occ_z[k]
            if lo <= k <= zero:
                bad += diff[k] - old
            ia += 1
        while ib < nb and tb[ib] == tn:
            k = sb[ib] - x_min
            occ_z[k] = bb[ib]
            old = diff[k]
            diff[k] = occ_f[k] ^ occ_z[k]
            if lo <= k <= zero:
                bad += diff[k] - old
            ib += 1
    return True


@njit(cache=True)
def extremes_series(sites, born, occ, x_min):
    """Supremum and infimum after each transition (local sentinels -1 and
    occ.size for the empty set, converted by the caller)."""
    n_sites = occ.size
    occ = occ.copy()
    hi = _sup_below(occ, n_sites - 1)
    lo = 0
    while lo < n_sites and occ[lo] == 0:
        lo += 1
    sup = np.empty(sites.size, np.int64)
    inf = np.empty(sites.size, np.int64)
    for q in range(sites.size):
        k = sites[q] - x_min
        if born[q]:
            occ[k] = 1
            if k > hi:
                hi = k
            if k < lo:
                lo = k
        else:
            occ[k] = 0
            if k == hi:
                hi = _sup_below(occ, k - 1)
            if k == lo:
                while lo < n_sites and occ[lo] == 0:
                    lo += 1
        sup[q] = hi
        inf[q] = lo
    return sup, inf
