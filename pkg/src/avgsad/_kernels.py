"""Numba kernels shared by the schedule, engines and experiments.

All randomness is counter based (SplitMix64 finalizer applied to a per-object
stream), so a clock or an initial value depends only on (seed, edge) or
(seed, vertex) and never on the order in which objects are visited.  This is
what makes lazy exploration of an infinite graph agree bit for bit with an
eager run on a finite truncation.
"""

import heapq

import numpy as np
from numba import njit, types
from numba.typed import Dict

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
ROT = np.uint64(32)
TWO53 = 1.0 / 9007199254740992.0

KIND_FINITE = 0
KIND_LATTICE = 1
KIND_TREE = 2

MU_FIXED = 0
MU_UNIFORM = 1

LAW_DIRAC = 0
LAW_BERNOULLI = 1
LAW_UNIFORM = 2
LAW_GAUSSIAN = 3
LAW_PARETO = 4
LAW_DELTA = 5

STATUS_OK = 0
STATUS_CAP = 1
STATUS_OVERFLOW = 2


@njit(cache=True)
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * MIX1
    z = (z ^ (z >> np.uint64(27))) * MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def unit(z):
    """Map a 64-bit word to a double in [0, 1)."""
    return np.float64(z >> np.uint64(11)) * TWO53


@njit(cache=True)
def derive(seed, tag):
    return mix64(mix64(np.uint64(seed)) ^ mix64(np.uint64(tag) + GOLDEN))


@njit(cache=True)
def edge_key(seed, a, b):
    if a > b:
        a, b = b, a
    h = mix64(np.uint64(seed) ^ mix64(np.uint64(a) + GOLDEN))
    lo = mix64(np.uint64(b) * MIX1 + GOLDEN)
    return mix64(h ^ ((lo << ROT) | (lo >> ROT)))


@njit(cache=True)
def edge_keys(seed, a, b):
    out = np.empty(a.shape[0], dtype=np.uint64)
    for i in range(a.shape[0]):
        out[i] = edge_key(seed, a[i], b[i])
    return out


@njit(cache=True)
def vertex_key(seed, v):
    return mix64(np.uint64(seed) ^ mix64(np.uint64(v) + MIX2))


@njit(cache=True)
def stream(key, j):
    return unit(mix64(key + np.uint64(j) * GOLDEN))


@njit(cache=True)
def draw_mu(mu_kind, mu_a, mu_b, u):
    if mu_kind == MU_FIXED:
        return mu_a
    # (a, b]: u in [0, 1) never yields a
    return mu_b - (mu_b - mu_a) * u


@njit(cache=True)
def draw_initial(law_kind, p0, p1, r, seed, v):
    if law_kind == LAW_DIRAC:
        return p0
    if law_kind == LAW_DELTA:
        return 1.0 if v == r else 0.0
    k = vertex_key(seed, v)
    u1 = stream(k, 1)
    if law_kind == LAW_BERNOULLI:
        return 1.0 if u1 < p0 else 0.0
    if law_kind == LAW_UNIFORM:
        return p0 + (p1 - p0) * u1
    if law_kind == LAW_GAUSSIAN:
        u2 = stream(k, 2)
        return p0 + np.sqrt(p1) * np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
    # pareto: p0 = alpha, p1 = scale
    return p1 * np.exp(-np.log1p(-u1) / p0)


@njit(cache=True)
def draw_initial_many(law_kind, p0, p1, r, seed, ids):
    out = np.empty(ids.shape[0])
    for i in range(ids.shape[0]):
        out[i] = draw_initial(law_kind, p0, p1, r, seed, ids[i])
    return out


# ---------------------------------------------------------------------------
# neighbourhoods


@njit(cache=True)
def lattice_coord(v, k, bits):
    mask = (np.int64(1) << bits) - 1
    return ((v >> (k * bits)) & mask) - (np.int64(1) << (bits - 1))


@njit(cache=True)
def neighbors(kind, p0, p1, ids, indptr, indices, v, out):
    """Fill ``out`` with the neighbours of ``v``; return the count or -1 on id overflow."""
    if kind == KIND_FINITE:
        pos = np.searchsorted(ids, v)
        n = 0
        for j in range(indptr[pos], indptr[pos + 1]):
            out[n] = ids[indices[j]]
            n += 1
        return n
    if kind == KIND_LATTICE:
        d = p0
        bits = p1
        top = np.int64(1) << bits
        n = 0
        for k in range(d):
            shift = k * bits
            raw = (v >> shift) & (top - 1)
            if raw <= 0 or raw >= top - 1:
                return -1
            step = np.int64(1) << shift
            out[n] = v + step
            out[n + 1] = v - step
            n += 2
        return n
    # trees: p0 = branching b, p1 = 1 when the root also has b + 1 children
    b = p0
    if v > (np.int64(1) << 61) // (b + 1):
        return -1
    n = 0
    if p1 == 1:
        if v == 0:
            for j in range(b + 1):
                out[n] = 1 + j
                n += 1
            return n
        out[0] = 0 if v <= b + 1 else (v - 2) // b
        n = 1
        for j in range(b):
            out[n] = b * v + 2 + j
            n += 1
        return n
    if v > 0:
        out[0] = (v - 1) // b
        n = 1
    for j in range(b):
        out[n] = b * v + 1 + j
        n += 1
    return n


# ---------------------------------------------------------------------------
# per-edge Poisson clocks


@njit(cache=True)
def edge_events(key, lam, mu_kind, mu_a, mu_b, horizon, t_out, mu_out):
    """Events of one edge clock on [0, horizon]; returns how many were written.

    Event i uses stream slots 2i+1 (gap) and 2i+2 (weight), so the clock is a
    prefix-consistent function of the key: a longer horizon only appends.
    """
    t = 0.0
    n = 0
    i = 0
    while True:
        t += -np.log1p(-stream(key, 2 * i + 1)) / lam
        if t > horizon:
            return n
        if n == t_out.shape[0]:
            return -1
        t_out[n] = t
        mu_out[n] = draw_mu(mu_kind, mu_a, mu_b, stream(key, 2 * i + 2))
        n += 1
        i += 1


@njit(cache=True)
def _grow_f(a, n):
    b = np.empty(max(2 * a.shape[0], n + 16))
    b[: a.shape[0]] = a
    return b


@njit(cache=True)
def _grow_i(a, n):
    b = np.empty(max(2 * a.shape[0], n + 16), dtype=np.int64)
    b[: a.shape[0]] = a
    return b


@njit(cache=True)
def time_order(ev_t):
    """Argsort of event times: bucket pass plus insertion sort within buckets.

    Clock times are spread over [0, horizon], so buckets hold O(1) events on
    average and this runs in linear expected time.  Stable.
    """
    n = ev_t.shape[0]
    order = np.empty(n, dtype=np.int64)
    if n == 0:
        return order
    lo = ev_t.min()
    hi = ev_t.max()
    if hi == lo:
        for i in range(n):
            order[i] = i
        return order
    scale = n / (hi - lo)
    count = np.zeros(n + 1, dtype=np.int64)
    bucket = np.empty(n, dtype=np.int64)
    for i in range(n):
        k = int((ev_t[i] - lo) * scale)
        if k >= n:
            k = n - 1
        bucket[i] = k
        count[k + 1] += 1
    for k in range(n):
        count[k + 1] += count[k]
    for i in range(n):
        k = bucket[i]
        order[count[k]] = i
        count[k] += 1
    # count[k] now marks the end of bucket k
    start = 0
    for k in range(n):
        end = count[k]
        for p in range(start + 1, end):
            x = order[p]
            q = p
            while q > start and ev_t[order[q - 1]] > ev_t[x]:
                order[q] = order[q - 1]
                q -= 1
            order[q] = x
        start = end
    return order


@njit(cache=True)
def sort_events(ev_t, ev_a, ev_b, ev_mu, gid):
    """Sort by time; exact ties fall back to canonical (global) edge order."""
    order = time_order(ev_t)
    t = ev_t[order]
    a = ev_a[order]
    b = ev_b[order]
    mu = ev_mu[order]
    ties = 0
    i = 0
    n = t.shape[0]
    while i < n:
        j = i + 1
        while j < n and t[j] == t[i]:
            j += 1
        if j - i > 1:
            ties += j - i - 1
            for p in range(i + 1, j):
                q = p
                while q > i:
                    ka = min(gid[a[q]], gid[b[q]])
                    kb = max(gid[a[q]], gid[b[q]])
                    la = min(gid[a[q - 1]], gid[b[q - 1]])
                    lb = max(gid[a[q - 1]], gid[b[q - 1]])
                    if ka < la or (ka == la and kb < lb):
                        a[q], a[q - 1] = a[q - 1], a[q]
                        b[q], b[q - 1] = b[q - 1], b[q]
                        mu[q], mu[q - 1] = mu[q - 1], mu[q]
                        q -= 1
                    else:
                        break
        i = j
    return t, a, b, mu, ties


@njit(cache=True)
def finite_events(keys, ea, eb, lam, mu_kind, mu_a, mu_b, horizon, gid):
    """Merged, time-sorted events of every edge clock of a finite graph."""
    cap = int(keys.shape[0] * (lam * horizon + 4.0)) + 16
    ev_t = np.empty(cap)
    ev_mu = np.empty(cap)
    ev_a = np.empty(cap, dtype=np.int64)
    ev_b = np.empty(cap, dtype=np.int64)
    buf_t = np.empty(64)
    buf_mu = np.empty(64)
    n = 0
    for e in range(keys.shape[0]):
        m = edge_events(keys[e], lam, mu_kind, mu_a, mu_b, horizon, buf_t, buf_mu)
        while m < 0:
            buf_t = np.empty(2 * buf_t.shape[0])
            buf_mu = np.empty(2 * buf_mu.shape[0])
            m = edge_events(keys[e], lam, mu_kind, mu_a, mu_b, horizon, buf_t, buf_mu)
        if n + m > ev_t.shape[0]:
            ev_t = _grow_f(ev_t, n + m)
            ev_mu = _grow_f(ev_mu, n + m)
            ev_a = _grow_i(ev_a, n + m)
            ev_b = _grow_i(ev_b, n + m)
        for i in range(m):
            ev_t[n] = buf_t[i]
            ev_mu[n] = buf_mu[i]
            ev_a[n] = ea[e]
            ev_b[n] = eb[e]
            n += 1
    return sort_events(ev_t[:n], ev_a[:n], ev_b[:n], ev_mu[:n], gid)


# ---------------------------------------------------------------------------
# first-passage exploration


@njit(cache=True)
def explore(kind, p0, p1, ids, indptr, indices, maxdeg, root, seed, lam,
            mu_kind, mu_a, mu_b, horizon, backward, cap):
    """Dijkstra over the realised edge clocks.

    backward=True: a vertex is reached at reversed time s when an edge event
    at forward time horizon - s links it to an already reached vertex; these
    are the vertices whose initial value can reach ``root`` by ``horizon``.
    backward=False: forward spreading from ``root`` starting at time 0.

    Every edge incident to a reached vertex has its clock generated exactly
    once, and all its events in [0, horizon] are emitted.
    """
    local = Dict.empty(types.int64, types.int64)
    gid = np.empty(64, dtype=np.int64)
    passage = np.empty(64)
    done = np.zeros(64, dtype=np.bool_)
    best = np.empty(64)
    n_local = 0

    local[root] = 0
    gid[0] = root
    passage[0] = np.inf
    best[0] = 0.0
    n_local = 1

    ev_cap = 1024
    ev_t = np.empty(ev_cap)
    ev_mu = np.empty(ev_cap)
    ev_a = np.empty(ev_cap, dtype=np.int64)
    ev_b = np.empty(ev_cap, dtype=np.int64)
    n_ev = 0
    buf_t = np.empty(64)
    buf_mu = np.empty(64)
    nb = np.empty(maxdeg, dtype=np.int64)

    heap = [(0.0, np.int64(0))]
    n_done = 0
    status = STATUS_OK
    while len(heap) > 0:
        s, x = heapq.heappop(heap)
        if done[x]:
            continue
        if s > horizon:
            break
        done[x] = True
        passage[x] = s
        n_done += 1
        if n_done > cap:
            status = STATUS_CAP
            break
        deg = neighbors(kind, p0, p1, ids, indptr, indices, gid[x], nb)
        if deg < 0:
            status = STATUS_OVERFLOW
            break
        for j in range(deg):
            yg = nb[j]
            if yg in local:
                y = local[yg]
                if done[y]:
                    continue
            else:
                y = n_local
                if y == gid.shape[0]:
                    gid = _grow_i(gid, y + 1)
                    passage = _grow_f(passage, y + 1)
                    best = _grow_f(best, y + 1)
                    nd = np.zeros(gid.shape[0], dtype=np.bool_)
                    nd[: done.shape[0]] = done
                    done = nd
                local[yg] = y
                gid[y] = yg
                passage[y] = np.inf
                best[y] = np.inf
                n_local += 1
            key = edge_key(seed, gid[x], yg)
            m = edge_events(key, lam, mu_kind, mu_a, mu_b, horizon, buf_t, buf_mu)
            while m < 0:
                buf_t = np.empty(2 * buf_t.shape[0])
                buf_mu = np.empty(2 * buf_mu.shape[0])
                m = edge_events(key, lam, mu_kind, mu_a, mu_b, horizon, buf_t, buf_mu)
            if n_ev + m > ev_t.shape[0]:
                ev_t = _grow_f(ev_t, n_ev + m)
                ev_mu = _grow_f(ev_mu, n_ev + m)
                ev_a = _grow_i(ev_a, n_ev + m)
                ev_b = _grow_i(ev_b, n_ev + m)
            cand = np.inf
            if backward:
                cut = horizon - s
                for i in range(m):
                    if buf_t[i] < cut:
                        cand = horizon - buf_t[i]
            else:
                for i in range(m):
                    if buf_t[i] > s:
                        cand = buf_t[i]
                        break
            for i in range(m):
                ev_t[n_ev] = buf_t[i]
                ev_mu[n_ev] = buf_mu[i]
                ev_a[n_ev] = x
                ev_b[n_ev] = y
                n_ev += 1
            if cand <= horizon and cand < best[y]:
                best[y] = cand
                heapq.heappush(heap, (cand, y))

    t, a, b, mu, ties = sort_events(ev_t[:n_ev], ev_a[:n_ev], ev_b[:n_ev], ev_mu[:n_ev], gid[:n_local])
    return (gid[:n_local].copy(), done[:n_local].copy(), passage[:n_local].copy(),
            t, a, b, mu, ties, status)


# ---------------------------------------------------------------------------
# dynamics


@njit(cache=True)
def apply_events(values, ev_a, ev_b, ev_mu, reverse):
    """Pairwise averaging folded over the events (in reverse order if asked).

    The increment form keeps both new values inside [min, max] of the old ones
    exactly, so extrema are monotone even in floating point.
    """
    n = ev_a.shape[0]
    for k in range(n):
        i = n - 1 - k if reverse else k
        a = ev_a[i]
        b = ev_b[i]
        d = ev_mu[i] * (values[b] - values[a])
        values[a] = values[a] + d
        values[b] = values[b] - d


@njit(cache=True)
def apply_events_observed(values, ev_t, ev_a, ev_b, ev_mu, obs_times, watch):
    """Forward fold recording values[watch] just after each observation time."""
    out = np.empty((obs_times.shape[0], watch.shape[0]))
    k = 0
    n = ev_a.shape[0]
    for o in range(obs_times.shape[0]):
        while k < n and ev_t[k] <= obs_times[o]:
            a = ev_a[k]
            b = ev_b[k]
            d = ev_mu[k] * (values[b] - values[a])
            values[a] = values[a] + d
            values[b] = values[b] - d
            k += 1
        for j in range(watch.shape[0]):
            out[o, j] = values[watch[j]]
    return out


@njit(cache=True)
def forward_max_trajectory(values, ev_t, ev_a, ev_b, ev_mu, obs_times):
    """Forward fold returning max(values) at each observation time."""
    out = np.empty(obs_times.shape[0])
    k = 0
    n = ev_a.shape[0]
    for o in range(obs_times.shape[0]):
        while k < n and ev_t[k] <= obs_times[o]:
            a = ev_a[k]
            b = ev_b[k]
            d = ev_mu[k] * (values[b] - values[a])
            values[a] = values[a] + d
            values[b] = values[b] - d
            k += 1
        out[o] = values.max()
    return out


@njit(cache=True)
def envelope_violations(values, ev_a, ev_b, ev_mu):
    """Count steps where the global max rises or the global min falls.

    The extremes are rescanned only when the updated pair held one of them.
    """
    hi = values.max()
    lo = values.min()
    up = 0
    down = 0
    for i in range(ev_a.shape[0]):
        a = ev_a[i]
        b = ev_b[i]
        xa = values[a]
        xb = values[b]
        d = ev_mu[i] * (xb - xa)
        na = xa + d
        nb = xb - d
        values[a] = na
        values[b] = nb
        if na > hi or nb > hi:
            up += 1
            hi = max(na, nb)
        elif xa == hi or xb == hi:
            hi = values.max()
        if na < lo or nb < lo:
            down += 1
            lo = min(na, nb)
        elif xa == lo or xb == lo:
            lo = values.min()
    return up, down


@njit(cache=True)
def energy_ledger(values, ev_a, ev_b, ev_mu):
    """Per-step (predicted, observed, local scale) energy decrements."""
    n = ev_a.shape[0]
    pred = np.empty(n)
    obs = np.empty(n)
    scale = np.empty(n)
    for i in range(n):
        a = ev_a[i]
        b = ev_b[i]
        x = values[a]
        y = values[b]
        mu = ev_mu[i]
        d = mu * (y - x)
        nx = x + d
        ny = y - d
        values[a] = nx
        values[b] = ny
        pred[i] = 2.0 * mu * (1.0 - mu) * (x - y) * (x - y)
        obs[i] = (x * x + y * y) - (nx * nx + ny * ny)
        scale[i] = x * x + y * y
    return pred, obs, scale


@njit(cache=True)
def stream_until_consensus(ea, eb, keys, lam, mu_kind, mu_a, mu_b, values,
                           tol, max_steps, check_every):
    """Event-driven run: a heap holds the next ring of every edge clock.

    Stops once max - min < tol (checked every ``check_every`` steps) or after
    ``max_steps`` updates. Returns (steps, time, spread).
    """
    m = keys.shape[0]
    counter = np.zeros(m, dtype=np.int64)
    heap = [(0.0, np.int64(0))]
    heap.pop()
    for e in range(m):
        t0 = -np.log1p(-stream(keys[e], 1)) / lam
        heap.append((t0, np.int64(e)))
    heapq.heapify(heap)
    spread = values.max() - values.min()
    steps = 0
    now = 0.0
    if spread < tol or m == 0:
        return steps, now, spread
    while steps < max_steps:
        now, e = heapq.heappop(heap)
        i = counter[e]
        mu = draw_mu(mu_kind, mu_a, mu_b, stream(keys[e], 2 * i + 2))
        a = ea[e]
        b = eb[e]
        d = mu * (values[b] - values[a])
        values[a] = values[a] + d
        values[b] = values[b] - d
        counter[e] = i + 1
        nxt = now - np.log1p(-stream(keys[e], 2 * (i + 1) + 1)) / lam
        heapq.heappush(heap, (nxt, e))
        steps += 1
        if steps % check_every == 0:
            spread = values.max() - values.min()
            if spread < tol:
                break
    spread = values.max() - values.min()
    return steps, now, spread
