"""Compiled successive-shortest-path kernel (same algorithm as ``measures._ssp``).

Returns ``(flow, status)``; a non-zero status maps to ``SolverFailure`` in the
caller.  Feeder lists are stored densely per column and edited by swap-remove.
"""
import numpy as np
from numba import njit

OK = 0
NO_PATH = 1
ZERO_BOTTLENECK = 2
UNMET_DEMAND = 3


@njit(cache=True)
def _refresh(t, cost, feed, nfeed, reroute, reroute_row):
    nt = cost.shape[1]
    for u in range(nt):
        reroute[t, u] = np.inf
        reroute_row[t, u] = -1
    for q in range(nfeed[t]):
        r = feed[t, q]
        base = cost[r, t]
        for u in range(nt):
            d = cost[r, u] - base
            if d < reroute[t, u] or (d == reroute[t, u] and r < reroute_row[t, u]):
                reroute[t, u] = d
                reroute_row[t, u] = r
    reroute[t, t] = np.inf


@njit(cache=True)
def _toggle(r, c, before, after, feed, nfeed):
    if before == 0 and after > 0:
        feed[c, nfeed[c]] = r
        nfeed[c] += 1
        return True
    if before > 0 and after == 0:
        for q in range(nfeed[c]):
            if feed[c, q] == r:
                nfeed[c] -= 1
                feed[c, q] = feed[c, nfeed[c]]
                break
        return True
    return False


@njit(cache=True)
def ssp_kernel(supply, demand, cost):
    ns, nt = cost.shape
    flow = np.zeros((ns, nt), dtype=np.int64)
    sup = supply.copy()
    dem = demand.copy()
    pi = np.zeros(nt)
    feed = np.empty((nt, ns), dtype=np.int64)
    nfeed = np.zeros(nt, dtype=np.int64)
    reroute = np.full((nt, nt), np.inf)
    reroute_row = np.full((nt, nt), -1, dtype=np.int64)
    dist = np.empty(nt)
    pred = np.empty(nt, dtype=np.int64)
    settled = np.empty(nt, dtype=np.bool_)
    arc_r = np.empty(2 * nt + 2, dtype=np.int64)
    arc_c = np.empty(2 * nt + 2, dtype=np.int64)
    arc_k = np.empty(2 * nt + 2, dtype=np.int64)
    touched = np.zeros(nt, dtype=np.bool_)

    for s in range(ns):
        while sup[s] > 0:
            m = np.inf
            for t in range(nt):
                dist[t] = cost[s, t] - pi[t]
                if dist[t] < m:
                    m = dist[t]
            for t in range(nt):
                dist[t] -= m
                pred[t] = -1
                settled[t] = False
            while True:
                best = np.inf
                tb = -1
                for t in range(nt):
                    if not settled[t] and dist[t] < best:
                        best = dist[t]
                        tb = t
                if tb < 0:
                    return flow, NO_PATH
                if dem[tb] > 0:
                    break
                settled[tb] = True
                base = best + pi[tb]
                for u in range(nt):
                    if not settled[u]:
                        c = base + reroute[tb, u] - pi[u]
                        if c < dist[u]:
                            dist[u] = c
                            pred[u] = tb
            D = best
            t_end = tb
            for u in range(nt):
                if settled[u]:
                    pi[u] += dist[u] - D

            # collect arcs with net coefficients
            na = 0
            u = t_end
            while pred[u] >= 0:
                v = pred[u]
                r = reroute_row[v, u]
                arc_r[na] = r
                arc_c[na] = v
                arc_k[na] = -1
                na += 1
                arc_r[na] = r
                arc_c[na] = u
                arc_k[na] = 1
                na += 1
                u = v
            arc_r[na] = s
            arc_c[na] = u
            arc_k[na] = 1
            na += 1
            for a in range(na):
                for b in range(a + 1, na):
                    if arc_k[b] != 0 and arc_r[a] == arc_r[b] and arc_c[a] == arc_c[b]:
                        arc_k[a] += arc_k[b]
                        arc_k[b] = 0

            delta = min(sup[s], dem[t_end])
            for a in range(na):
                if arc_k[a] < 0:
                    cap = flow[arc_r[a], arc_c[a]] // (-arc_k[a])
                    if cap < delta:
                        delta = cap
            if delta <= 0:
                return flow, ZERO_BOTTLENECK
            for a in range(na):
                if arc_k[a] == 0:
                    continue
                r = arc_r[a]
                c = arc_c[a]
                before = flow[r, c]
                flow[r, c] = before + arc_k[a] * delta
                if _toggle(r, c, before, flow[r, c], feed, nfeed):
                    touched[c] = True
            for c in range(nt):
                if touched[c]:
                    _refresh(c, cost, feed, nfeed, reroute, reroute_row)
                    touched[c] = False
            sup[s] -= delta
            dem[t_end] -= delta
    for t in range(nt):
        if dem[t] != 0:
            return flow, UNMET_DEMAND
    return flow, OK
