"""Exact max-flow / min-cut on float64 capacities (Dinic's algorithm).

Arcs are stored in pairs: arc ``a`` and its reverse ``a ^ 1`` share an
index pair, so pushing flow is ``cap[a] -= f; cap[a ^ 1] += f``.  Undirected
(symmetric) edges are simply pairs whose both capacities start positive.
The bottleneck subtraction zeroes the minimum arc exactly (IEEE ``x - x``),
so every augmentation removes at least one arc from the level graph and
termination needs no epsilon thresholds.

The solver is JIT-compiled with numba; the first call in a fresh
environment pays a one-time compilation cost (cached on disk afterwards).
"""

from __future__ import annotations

import numba
import numpy as np

__all__ = ["max_flow"]


@numba.njit(cache=True)
def _dinic(n, head, cap, adj_start, adj_arc, s, t):  # pragma: no cover - jitted
    level = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    it = np.empty(n, dtype=np.int64)
    path_arcs = np.empty(n, dtype=np.int64)
    total = 0.0
    while True:
        # BFS: level graph over arcs with residual capacity.
        level[:] = -1
        level[s] = 0
        queue[0] = s
        qh, qt = 0, 1
        while qh < qt:
            u = queue[qh]
            qh += 1
            for idx in range(adj_start[u], adj_start[u + 1]):
                a = adj_arc[idx]
                v = head[a]
                if cap[a] > 0.0 and level[v] < 0:
                    level[v] = level[u] + 1
                    queue[qt] = v
                    qt += 1
        if level[t] < 0:
            break
        # Blocking flow via iterative DFS with current-arc pointers.
        for u in range(n):
            it[u] = adj_start[u]
        u = s
        depth = 0
        while True:
            if u == t:
                b = np.inf
                for d in range(depth):
                    a = path_arcs[d]
                    if cap[a] < b:
                        b = cap[a]
                retreat = depth
                for d in range(depth):
                    a = path_arcs[d]
                    cap[a] -= b
                    cap[a ^ 1] += b
                    if cap[a] <= 0.0 and d < retreat:
                        retreat = d
                total += b
                depth = retreat
                u = s if depth == 0 else head[path_arcs[depth - 1]]
                continue
            advanced = False
            while it[u] < adj_start[u + 1]:
                a = adj_arc[it[u]]
                v = head[a]
                if cap[a] > 0.0 and level[v] == level[u] + 1:
                    path_arcs[depth] = a
                    depth += 1
                    u = v
                    advanced = True
                    break
                it[u] += 1
            if not advanced:
                if u == s:
                    break
                depth -= 1
                pu = s if depth == 0 else head[path_arcs[depth - 1]]
                it[pu] += 1
                u = pu
    # After the failed BFS, `level` marks exactly the source side of a
    # minimum cut.
    return total, level >= 0


def _build_csr(
    n_nodes: int, u: np.ndarray, v: np.ndarray, cap_uv: np.ndarray, cap_vu: np.ndarray
):
    m = 2 * len(u)
    head = np.empty(m, dtype=np.int64)
    head[0::2] = v
    head[1::2] = u
    cap = np.empty(m, dtype=np.float64)
    cap[0::2] = cap_uv
    cap[1::2] = cap_vu
    frm = np.empty(m, dtype=np.int64)
    frm[0::2] = u
    frm[1::2] = v
    order = np.argsort(frm, kind="stable")
    adj_start = np.zeros(n_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(frm, minlength=n_nodes), out=adj_start[1:])
    return head, cap, adj_start, order


def max_flow(
    n_nodes: int,
    u,
    v,
    cap_uv,
    cap_vu,
    source: int,
    sink: int,
) -> tuple[float, np.ndarray]:
    """Max flow from ``source`` to ``sink``; returns ``(flow, source_side)``.

    ``u[i] -> v[i]`` carries capacity ``cap_uv[i]`` and the reverse direction
    ``cap_vu[i]`` (0 for a purely directed arc).  ``source_side`` is a bool
    array over nodes marking the source component of a minimum cut.
    """
    u = np.ascontiguousarray(u, dtype=np.int64)
    v = np.ascontiguousarray(v, dtype=np.int64)
    cap_uv = np.ascontiguousarray(cap_uv, dtype=np.float64)
    cap_vu = np.ascontiguousarray(cap_vu, dtype=np.float64)
    if not (len(u) == len(v) == len(cap_uv) == len(cap_vu)):
        raise ValueError("edge arrays must have equal length")
    if np.any(cap_uv < 0) or np.any(cap_vu < 0):
        raise ValueError("capacities must be non-negative")
    head, cap, adj_start, order = _build_csr(n_nodes, u, v, cap_uv, cap_vu)
    flow, side = _dinic(n_nodes, head, cap, adj_start, order, source, sink)
    return float(flow), side
