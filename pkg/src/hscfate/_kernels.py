"""Compiled inner loops.

Paths are passed as parallel arrays ``(times, kinds, labels)`` and states as
``(z_d, z_G, x_d, x_G)``. A negative ``cap`` means no niche cap. All
randomness is supplied by the caller as arrays of uniforms so results do not
depend on thread scheduling.
"""
import numpy as np
from numba import njit

S, C, D, AS, AP = 0, 1, 2, 3, 4
DELETE, INSERT, SHUFFLE = 0, 1, 2

_jit = dict(cache=True, nogil=True, error_model="numpy")


@njit(**_jit)
def acting_count(kind, label, zd, zg, xd, xg):
    if kind == D:
        return xd if label == 0 else xg
    return zd if label == 0 else zg


@njit(**_jit)
def apply_kind(kind, label, zd, zg, xd, xg, cap):
    """Returns (ok, zd, zg, xd, xg)."""
    if acting_count(kind, label, zd, zg, xd, xg) <= 0:
        return False, zd, zg, xd, xg
    if kind == S:
        if cap < 0 or zd + zg < cap:
            if label == 0:
                zd += 1
            else:
                zg += 1
    elif kind == C:
        if label == 0:
            zd -= 1
            xd += 1
        else:
            zg -= 1
            xg += 1
    elif kind == D:
        if label == 0:
            xd -= 1
        else:
            xg -= 1
    elif kind == AS:
        if label == 0:
            xd += 1
        else:
            xg += 1
    else:
        if label == 0:
            zd -= 1
        else:
            zg -= 1
    return True, zd, zg, xd, xg


@njit(**_jit)
def obs_term(n, y, const, xd, xg, impossible):
    if n == 0:
        return 0.0
    tot = xd + xg
    if tot == 0:
        return impossible
    out = const
    if y > 0:
        if xd == 0:
            return impossible
        out += y * np.log(xd / tot)
    if n - y > 0:
        if xg == 0:
            return impossible
        out += (n - y) * np.log(xg / tot)
    return out


@njit(**_jit)
def prefix_states(times, kinds, labels, init, cap):
    """Row i is the state just before event i; the last row is the final state.

    Rows after an infeasible event are left at the last feasible state; the
    caller only uses this on feasible paths.
    """
    n = times.shape[0]
    out = np.empty((n + 1, 4), dtype=np.int64)
    zd, zg, xd, xg = init[0], init[1], init[2], init[3]
    for i in range(n):
        out[i, 0] = zd
        out[i, 1] = zg
        out[i, 2] = xd
        out[i, 3] = xg
        ok, zd, zg, xd, xg = apply_kind(kinds[i], labels[i], zd, zg, xd, xg, cap)
    out[n, 0] = zd
    out[n, 1] = zg
    out[n, 2] = xd
    out[n, 3] = xg
    return out


@njit(**_jit)
def replay_suffix(
    times, kinds, labels, start, zd, zg, xd, xg, t0, horizon, cap,
    obs_t, obs_n, obs_y, obs_c, j0, impossible,
):
    """Replay events ``start:`` from a known state at time ``t0``.

    Returns (ok, sum of log acting counts, z exposure, x exposure,
    observation log likelihood for observations at or after ``t0``).
    """
    logc = 0.0
    sz = 0.0
    sx = 0.0
    ll = 0.0
    t_prev = t0
    j = j0
    nobs = obs_t.shape[0]
    for i in range(start, times.shape[0]):
        t = times[i]
        while j < nobs and obs_t[j] < t:
            ll += obs_term(obs_n[j], obs_y[j], obs_c[j], xd, xg, impossible)
            j += 1
        sz += (zd + zg) * (t - t_prev)
        sx += (xd + xg) * (t - t_prev)
        t_prev = t
        c = acting_count(kinds[i], labels[i], zd, zg, xd, xg)
        if c <= 0:
            return False, 0.0, 0.0, 0.0, 0.0
        logc += np.log(c)
        ok, zd, zg, xd, xg = apply_kind(kinds[i], labels[i], zd, zg, xd, xg, cap)
    while j < nobs:
        ll += obs_term(obs_n[j], obs_y[j], obs_c[j], xd, xg, impossible)
        j += 1
    sz += (zd + zg) * (horizon - t_prev)
    sx += (xd + xg) * (horizon - t_prev)
    return True, logc, sz, sx, ll


@njit(**_jit)
def path_totals(times, kinds, labels, init, horizon, cap, obs_t, obs_n, obs_y, obs_c, impossible):
    """(ok, event counts per kind, sum log counts, z exposure, x exposure, loglik)."""
    counts = np.zeros(5, dtype=np.int64)
    for i in range(kinds.shape[0]):
        counts[kinds[i]] += 1
    if cap >= 0 and init[0] + init[1] > cap:
        return False, counts, 0.0, 0.0, 0.0, 0.0
    ok, logc, sz, sx, ll = replay_suffix(
        times, kinds, labels, 0, init[0], init[1], init[2], init[3], 0.0, horizon,
        cap, obs_t, obs_n, obs_y, obs_c, 0, impossible,
    )
    return ok, counts, logc, sz, sx, ll


_LOGTAB = np.log(np.maximum(np.arange(65536, dtype=np.float64), 1.0))


@njit(**_jit)
def log_count(c):
    if c < 65536:
        return _LOGTAB[c]
    return np.log(c)


@njit(**_jit)
def rebuild(
    times, kinds, labels, n, start, init, horizon, cap, obs_t, obs_n, obs_y, obs_c,
    impossible, pre, cum_logc, cum_sz, cum_sx, obs_cum,
):
    """Refresh the replay cache of a path from event ``start`` on, in place.

    Cache layout: ``pre[i]`` state before event i (``pre[n]`` final state);
    ``cum_logc[i]`` sum of log acting counts of events before i;
    ``cum_sz[i]``/``cum_sx[i]`` exposure up to event i's time (entry n: up
    to the horizon); ``obs_cum[j]`` log likelihood of observations before j.
    Entries below ``start`` must already be valid. Returns feasibility of
    the refreshed part.
    """
    nobs = obs_t.shape[0]
    if start == 0:
        zd, zg, xd, xg = init[0], init[1], init[2], init[3]
        pre[0, 0] = zd
        pre[0, 1] = zg
        pre[0, 2] = xd
        pre[0, 3] = xg
        cum_logc[0] = 0.0
        obs_cum[0] = 0.0
        t_prev = 0.0
        acc_z = 0.0
        acc_x = 0.0
        ok = not (cap >= 0 and zd + zg > cap)
    else:
        zd, zg, xd, xg = pre[start, 0], pre[start, 1], pre[start, 2], pre[start, 3]
        t_prev = times[start - 1]
        acc_z = cum_sz[start - 1]
        acc_x = cum_sx[start - 1]
        ok = True
    j = np.searchsorted(obs_t, t_prev) if start > 0 else 0
    acc_o = obs_cum[j]
    acc_c = cum_logc[start]
    for i in range(start, n):
        t = times[i]
        while j < nobs and obs_t[j] < t:
            acc_o += obs_term(obs_n[j], obs_y[j], obs_c[j], xd, xg, impossible)
            j += 1
            obs_cum[j] = acc_o
        acc_z += (zd + zg) * (t - t_prev)
        acc_x += (xd + xg) * (t - t_prev)
        t_prev = t
        pre[i, 0] = zd
        pre[i, 1] = zg
        pre[i, 2] = xd
        pre[i, 3] = xg
        cum_sz[i] = acc_z
        cum_sx[i] = acc_x
        cum_logc[i] = acc_c
        c = acting_count(kinds[i], labels[i], zd, zg, xd, xg)
        if c <= 0:
            ok = False
            acc_c = -np.inf
        else:
            acc_c += log_count(c)
        good, zd, zg, xd, xg = apply_kind(kinds[i], labels[i], zd, zg, xd, xg, cap)
    while j < nobs:
        acc_o += obs_term(obs_n[j], obs_y[j], obs_c[j], xd, xg, impossible)
        j += 1
        obs_cum[j] = acc_o
    pre[n, 0] = zd
    pre[n, 1] = zg
    pre[n, 2] = xd
    pre[n, 3] = xg
    cum_logc[n] = acc_c
    cum_sz[n] = acc_z + (zd + zg) * (horizon - t_prev)
    cum_sx[n] = acc_x + (xd + xg) * (horizon - t_prev)
    return ok


@njit(**_jit)
def build_cache(times, kinds, labels, init, horizon, cap, obs_t, obs_n, obs_y, obs_c, impossible):
    """Full replay cache of a path: (ok, pre, cum_logc, cum_sz, cum_sx, obs_cum)."""
    n = times.shape[0]
    pre = np.empty((n + 1, 4), dtype=np.int64)
    cum_logc = np.empty(n + 1)
    cum_sz = np.empty(n + 1)
    cum_sx = np.empty(n + 1)
    obs_cum = np.empty(obs_t.shape[0] + 1)
    ok = rebuild(
        times, kinds, labels, n, 0, init, horizon, cap, obs_t, obs_n, obs_y, obs_c,
        impossible, pre, cum_logc, cum_sz, cum_sx, obs_cum,
    )
    return ok, pre, cum_logc, cum_sz, cum_sx, obs_cum


@njit(**_jit)
def replay_candidate(
    times, kinds, labels, start, skip, has_ins, ins_t, ins_k, ins_l,
    zd, zg, xd, xg, t0, horizon, cap, obs_t, obs_n, obs_y, obs_c, j0, impossible,
):
    """Replay the candidate from index ``start`` without materialising it.

    The candidate is the current path with event ``skip`` removed (if
    ``skip >= 0``) and one event inserted (if ``has_ins``).
    """
    logc = 0.0
    sz = 0.0
    sx = 0.0
    ll = 0.0
    t_prev = t0
    j = j0
    nobs = obs_t.shape[0]
    n = times.shape[0]
    i = start
    pending = has_ins
    while True:
        if i < n and i == skip:
            i += 1
            continue
        if pending and (i >= n or ins_t < times[i]):
            t = ins_t
            k = ins_k
            lab = ins_l
            pending = False
        elif i < n:
            t = times[i]
            k = kinds[i]
            lab = labels[i]
            i += 1
        else:
            break
        while j < nobs and obs_t[j] < t:
            ll += obs_term(obs_n[j], obs_y[j], obs_c[j], xd, xg, impossible)
            j += 1
        sz += (zd + zg) * (t - t_prev)
        sx += (xd + xg) * (t - t_prev)
        t_prev = t
        c = acting_count(k, lab, zd, zg, xd, xg)
        if c <= 0:
            return False, 0.0, 0.0, 0.0, 0.0
        logc += log_count(c)
        ok, zd, zg, xd, xg = apply_kind(k, lab, zd, zg, xd, xg, cap)
    while j < nobs:
        ll += obs_term(obs_n[j], obs_y[j], obs_c[j], xd, xg, impossible)
        j += 1
    sz += (zd + zg) * (horizon - t_prev)
    sx += (xd + xg) * (horizon - t_prev)
    return True, logc, sz, sx, ll


@njit(**_jit)
def factored_log_ratio(
    times, kinds, labels, pre, cum_logc, cum_sz, cum_sx, obs_cum,
    start, t0, skip, has_ins, ins_t, ins_k, ins_l, move, kind, log_q,
    rates, horizon, cap, obs_t, obs_n, obs_y, obs_c, impossible,
):
    """Log acceptance ratio of a single-event move.

    The prior ratio is split into (i) the change in log acting counts, (ii)
    plus or minus the log rate of the moved event, and (iii) the change in
    exposure times the rates. Only the candidate's events from ``start`` on
    are replayed; the current path's suffix comes from its cache and the
    shared prefix cancels.
    """
    n = times.shape[0]
    zd, zg, xd, xg = pre[start, 0], pre[start, 1], pre[start, 2], pre[start, 3]
    j0 = np.searchsorted(obs_t, t0)
    ok_c, logc_c, sz_c, sx_c, ll_c = replay_candidate(
        times, kinds, labels, start, skip, has_ins, ins_t, ins_k, ins_l,
        zd, zg, xd, xg, t0, horizon, cap, obs_t, obs_n, obs_y, obs_c, j0, impossible,
    )
    if not ok_c or ll_c == -np.inf:
        return -np.inf
    t_next = times[start] if start < n else horizon
    sz_0 = cum_sz[n] - cum_sz[start] + (zd + zg) * (t_next - t0)
    sx_0 = cum_sx[n] - cum_sx[start] + (xd + xg) * (t_next - t0)
    logc_0 = cum_logc[n] - cum_logc[start]
    ll_0 = obs_cum[obs_t.shape[0]] - obs_cum[j0]
    part1 = logc_c - logc_0
    if move == INSERT:
        part2 = np.log(rates[kind])
    elif move == DELETE:
        part2 = -np.log(rates[kind])
    else:
        part2 = 0.0
    z_rate = rates[S] + rates[C] + rates[AS] + rates[AP]
    part3 = -z_rate * (sz_c - sz_0) - rates[D] * (sx_c - sx_0)
    return part1 + part2 + part3 + (ll_c - ll_0) + log_q


@njit(**_jit)
def delete_at(times, kinds, labels, j):
    n = times.shape[0]
    t = np.empty(n - 1)
    k = np.empty(n - 1, dtype=np.int64)
    lab = np.empty(n - 1, dtype=np.int64)
    t[:j] = times[:j]
    k[:j] = kinds[:j]
    lab[:j] = labels[:j]
    t[j:] = times[j + 1 :]
    k[j:] = kinds[j + 1 :]
    lab[j:] = labels[j + 1 :]
    return t, k, lab


@njit(**_jit)
def insert_sorted(times, kinds, labels, t_new, kind, label):
    n = times.shape[0]
    p = np.searchsorted(times, t_new)
    t = np.empty(n + 1)
    k = np.empty(n + 1, dtype=np.int64)
    lab = np.empty(n + 1, dtype=np.int64)
    t[:p] = times[:p]
    k[:p] = kinds[:p]
    lab[:p] = labels[:p]
    t[p] = t_new
    k[p] = kind
    lab[p] = label
    t[p + 1 :] = times[p:]
    k[p + 1 :] = kinds[p:]
    lab[p + 1 :] = labels[p:]
    return t, k, lab


@njit(**_jit)
def materialise(times, kinds, labels, skip, has_ins, ins_t, ins_k, ins_l):
    if skip >= 0:
        times, kinds, labels = delete_at(times, kinds, labels, skip)
    if has_ins:
        times, kinds, labels = insert_sorted(times, kinds, labels, ins_t, ins_k, ins_l)
    return times, kinds, labels


@njit(**_jit)
def propose(times, kinds, labels, u, weights, active, horizon):
    """Turn four uniforms into a move.

    Returns (valid, move, kind, skip, has_ins, ins_t, ins_k, ins_l, start,
    t0, log proposal ratio). ``valid`` is False for auto-rejected proposals:
    deletion or shuffle on an empty path, or an exact time tie.
    """
    n = times.shape[0]
    m = active.shape[0]
    if u[0] < weights[0]:
        move = DELETE
    elif u[0] < weights[0] + weights[1]:
        move = INSERT
    else:
        move = SHUFFLE
    if move != INSERT and n == 0:
        return False, move, -1, -1, False, 0.0, -1, -1, 0, 0.0, 0.0
    if move == INSERT:
        kind = active[min(int(u[1] * m), m - 1)]
        label = 0 if u[2] < 0.5 else 1
        t_new = u[3] * horizon
        p = np.searchsorted(times, t_new)
        if t_new <= 0.0 or (p < n and times[p] == t_new):
            return False, move, kind, -1, False, 0.0, -1, -1, 0, 0.0, 0.0
        log_q = np.log(weights[0]) - np.log(weights[1]) + np.log(2.0 * m * horizon) - np.log(n + 1.0)
        return True, move, kind, -1, True, t_new, kind, label, p, t_new, log_q
    j = min(int(u[1] * n), n - 1)
    kind = kinds[j]
    if move == DELETE:
        log_q = np.log(weights[1]) - np.log(weights[0]) + np.log(n) - np.log(2.0 * m * horizon)
        return True, move, kind, j, False, 0.0, -1, -1, j, times[j], log_q
    t_new = u[3] * horizon
    p = np.searchsorted(times, t_new)
    if t_new <= 0.0 or (p < n and times[p] == t_new and p != j):
        return False, move, kind, -1, False, 0.0, -1, -1, 0, 0.0, 0.0
    t0 = min(times[j], t_new)
    start = min(j, p)
    return True, move, kind, j, True, t_new, kind, labels[j], start, t0, 0.0


@njit(**_jit)
def sweep(
    times, kinds, labels, init, horizon, rates, active, cap,
    obs_t, obs_n, obs_y, obs_c, weights, uniforms, impossible,
):
    """Run ``len(uniforms)`` propose/accept steps; five uniforms per step.

    Works in fixed-capacity buffers: an accepted move shifts the arrays in
    place and refreshes the cache from the first changed event only.
    Returns the final path arrays and per-move proposal and acceptance counts.
    """
    n = times.shape[0]
    size = n + uniforms.shape[0] + 1
    bt = np.empty(size)
    bk = np.empty(size, dtype=np.int64)
    bl = np.empty(size, dtype=np.int64)
    bt[:n] = times
    bk[:n] = kinds
    bl[:n] = labels
    pre = np.empty((size + 1, 4), dtype=np.int64)
    cum_logc = np.empty(size + 1)
    cum_sz = np.empty(size + 1)
    cum_sx = np.empty(size + 1)
    obs_cum = np.empty(obs_t.shape[0] + 1)
    rebuild(bt, bk, bl, n, 0, init, horizon, cap, obs_t, obs_n, obs_y, obs_c,
            impossible, pre, cum_logc, cum_sz, cum_sx, obs_cum)
    proposed = np.zeros(3, dtype=np.int64)
    accepted = np.zeros(3, dtype=np.int64)
    for s in range(uniforms.shape[0]):
        u = uniforms[s]
        t_n = bt[:n]
        k_n = bk[:n]
        l_n = bl[:n]
        valid, move, kind, skip, has_ins, ins_t, ins_k, ins_l, start, t0, log_q = propose(
            t_n, k_n, l_n, u, weights, active, horizon
        )
        proposed[move] += 1
        if not valid:
            continue
        log_r = factored_log_ratio(
            t_n, k_n, l_n, pre, cum_logc, cum_sz, cum_sx, obs_cum,
            start, t0, skip, has_ins, ins_t, ins_k, ins_l, move, kind, log_q,
            rates, horizon, cap, obs_t, obs_n, obs_y, obs_c, impossible,
        )
        if np.log(u[4]) < log_r:
            if skip >= 0:
                for i in range(skip, n - 1):
                    bt[i] = bt[i + 1]
                    bk[i] = bk[i + 1]
                    bl[i] = bl[i + 1]
                n -= 1
            if has_ins:
                q = np.searchsorted(bt[:n], ins_t)
                for i in range(n, q, -1):
                    bt[i] = bt[i - 1]
                    bk[i] = bk[i - 1]
                    bl[i] = bl[i - 1]
                bt[q] = ins_t
                bk[q] = ins_k
                bl[q] = ins_l
                n += 1
            rebuild(bt, bk, bl, n, start, init, horizon, cap, obs_t, obs_n, obs_y, obs_c,
                    impossible, pre, cum_logc, cum_sz, cum_sx, obs_cum)
            accepted[move] += 1
    return bt[:n].copy(), bk[:n].copy(), bl[:n].copy(), proposed, accepted


@njit(**_jit)
def ssa_chunk(state, t, horizon, rates, cap, uniforms, out_t, out_k, out_l):
    """Exact stochastic simulation from ``(state, t)``.

    Consumes uniforms in pairs (waiting time, channel). Stops when the
    horizon is passed, the total rate is zero, the output buffer is full, or
    the uniforms run out. Returns (n_events, t, used uniforms, finished).
    """
    zd, zg, xd, xg = state[0], state[1], state[2], state[3]
    z_rate = rates[S] + rates[C] + rates[AS] + rates[AP]
    n_out = 0
    used = 0
    finished = False
    cap_out = out_t.shape[0]
    while used + 2 <= uniforms.shape[0] and n_out < cap_out:
        total = (zd + zg) * z_rate + (xd + xg) * rates[D]
        if total <= 0.0:
            finished = True
            break
        dt = -np.log1p(-uniforms[used]) / total
        target = uniforms[used + 1] * total
        used += 2
        if t + dt >= horizon:
            finished = True
            break
        if dt <= 0.0:
            continue
        t += dt
        acc = 0.0
        kind = AP
        label = 1
        found = False
        for k in range(5):
            for lab in range(2):
                if k == D:
                    w = (xd if lab == 0 else xg) * rates[D]
                else:
                    w = (zd if lab == 0 else zg) * rates[k]
                acc += w
                if target < acc and w > 0.0:
                    kind = k
                    label = lab
                    found = True
                    break
            if found:
                break
        if not found:
            # rounding put target at the very top; take the last live channel
            for k in range(4, -1, -1):
                for lab in range(1, -1, -1):
                    if acting_count(k, lab, zd, zg, xd, xg) * rates[k] > 0.0:
                        kind = k
                        label = lab
                        found = True
                        break
                if found:
                    break
        ok, zd, zg, xd, xg = apply_kind(kind, label, zd, zg, xd, xg, cap)
        out_t[n_out] = t
        out_k[n_out] = kind
        out_l[n_out] = label
        n_out += 1
    state[0] = zd
    state[1] = zg
    state[2] = xd
    state[3] = xg
    return n_out, t, used, finished
