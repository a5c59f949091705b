"""Exact minimization of submodular pairwise binary energies via s-t min cut.

Cut convention: a node on the sink side takes label 1. Among several minimum
cuts the largest source side is returned, so ties resolve toward label 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit


class NonSubmodularError(ValueError):
    pass


class BinaryEnergy:
    """E(y) = sum_i unary[i, y_i] + sum_k table_k[y_i, y_j] over binary y.

    ``pairwise`` rows are ``(i, j, f00, f01, f10, f11)``. Every pairwise term
    must satisfy f00 + f11 <= f01 + f10.
    """

    def __init__(self, unary, pairwise=()):
        unary = np.array(unary, dtype=np.float64).reshape(-1, 2)
        pw = np.asarray(pairwise, dtype=np.float64).reshape(-1, 6)
        n = unary.shape[0]
        i = pw[:, 0].astype(np.int64)
        j = pw[:, 1].astype(np.int64)
        if np.any(pw[:, :2] != np.stack([i, j], axis=1)):
            raise ValueError("pairwise variable indices must be integers")
        if len(pw):
            if i.min() < 0 or j.min() < 0 or max(i.max(), j.max()) >= n:
                raise ValueError("pairwise index out of range")
            if np.any(i == j):
                raise ValueError("pairwise term on a single variable")
            key = np.minimum(i, j) * n + np.maximum(i, j)
            if len(np.unique(key)) != len(key):
                raise ValueError("duplicate pairwise term for the same variable pair")
        table = pw[:, 2:].copy()
        if not (np.all(np.isfinite(unary)) and np.all(np.isfinite(table))):
            raise ValueError("energy terms must be finite")
        bad = table[:, 0] + table[:, 3] > table[:, 1] + table[:, 2]
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise NonSubmodularError(f"pairwise term {k} on ({i[k]}, {j[k]}) is not submodular: {table[k].tolist()}")
        self.n = n
        self.unary = unary
        self.i = i
        self.j = j
        self.table = table
        for a in (self.unary, self.i, self.j, self.table):
            a.setflags(write=False)

    def evaluate(self, y) -> float:
        y = np.asarray(y, dtype=np.int64)
        total = self.unary[np.arange(self.n), y].sum()
        if len(self.i):
            total += self.table[np.arange(len(self.i)), 2 * y[self.i] + y[self.j]].sum()
        return float(total)


@dataclass
class FlowGraph:
    """Terminal capacities per node plus paired directed edges between nodes.

    ``source_cap[v]`` is paid when v ends on the sink side, ``sink_cap[v]``
    when it stays on the source side, ``cap_ij[k]`` when edge_i[k] is on the
    source side and edge_j[k] on the sink side, ``cap_ji[k]`` the reverse.
    """
    n: int
    source_cap: np.ndarray
    sink_cap: np.ndarray
    edge_i: np.ndarray
    edge_j: np.ndarray
    cap_ij: np.ndarray
    cap_ji: np.ndarray

    def cut_capacity(self, y) -> float:
        y = np.asarray(y, dtype=np.int64)
        yi, yj = y[self.edge_i], y[self.edge_j]
        return float(
            self.source_cap[y == 1].sum()
            + self.sink_cap[y == 0].sum()
            + self.cap_ij[(yi == 0) & (yj == 1)].sum()
            + self.cap_ji[(yi == 1) & (yj == 0)].sum()
        )


def reduce(e: BinaryEnergy) -> tuple[FlowGraph, float]:
    """Flow graph whose cut capacity plus the returned offset equals E(y) for all y.

    Each pairwise table is split symmetrically: the submodularity gap
    (f01 + f10 - f00 - f11) / 2 goes to both directed edges and the rest
    is folded into the unaries.
    """
    c0 = e.unary[:, 0].copy()
    c1 = e.unary[:, 1].copy()
    A, B, C, D = e.table.T
    offset = float(A.sum())
    np.add.at(c1, e.i, (C - A + D - B) / 2.0)
    np.add.at(c1, e.j, (B - A + D - C) / 2.0)
    # validated submodular, so a negative gap is only round-off
    gap = np.maximum((B + C - A - D) / 2.0, 0.0)
    low = np.minimum(c0, c1)
    offset += float(low.sum())
    g = FlowGraph(
        n=e.n,
        source_cap=c1 - low,
        sink_cap=c0 - low,
        edge_i=e.i.copy(),
        edge_j=e.j.copy(),
        cap_ij=gap.copy(),
        cap_ji=gap.copy(),
    )
    return g, offset


@njit(cache=True)
def _dinic(n_nodes, s, t, start, head, cap, partner, eps):
    flow = 0.0
    level = np.empty(n_nodes, np.int64)
    it = np.empty(n_nodes, np.int64)
    queue = np.empty(n_nodes, np.int64)
    path = np.empty(n_nodes, np.int64)
    while True:
        level[:] = -1
        level[s] = 0
        qh = 0
        qt = 1
        queue[0] = s
        while qh < qt:
            u = queue[qh]
            qh += 1
            for a in range(start[u], start[u + 1]):
                v = head[a]
                if level[v] < 0 and cap[a] > eps:
                    level[v] = level[u] + 1
                    queue[qt] = v
                    qt += 1
        if level[t] < 0:
            break
        for u in range(n_nodes):
            it[u] = start[u]
        depth = 0
        u = s
        while True:
            if u == t:
                f = np.inf
                for k in range(depth):
                    if cap[path[k]] < f:
                        f = cap[path[k]]
                for k in range(depth):
                    a = path[k]
                    cap[a] -= f
                    cap[partner[a]] += f
                flow += f
                # resume from the tail of the first arc the augmentation saturated
                k0 = 0
                for k in range(depth):
                    if cap[path[k]] <= eps:
                        k0 = k
                        break
                depth = k0
                u = s if depth == 0 else head[path[depth - 1]]
                continue
            advanced = False
            while it[u] < start[u + 1]:
                a = it[u]
                v = head[a]
                if cap[a] > eps and level[v] == level[u] + 1:
                    path[depth] = a
                    depth += 1
                    u = v
                    advanced = True
                    break
                it[u] += 1
            if not advanced:
                if u == s:
                    break
                level[u] = -1
                depth -= 1
                a = path[depth]
                u = head[partner[a]]
                it[u] += 1
    return flow


@njit(cache=True)
def _reaches_sink(n_nodes, t, start, head, cap, partner, eps):
    mark = np.zeros(n_nodes, np.bool_)
    queue = np.empty(n_nodes, np.int64)
    mark[t] = True
    queue[0] = t
    qh = 0
    qt = 1
    while qh < qt:
        v = queue[qh]
        qh += 1
        for a in range(start[v], start[v + 1]):
            u = head[a]
            if not mark[u] and cap[partner[a]] > eps:
                mark[u] = True
                queue[qt] = u
                qt += 1
    return mark


def maxflow(g: FlowGraph) -> tuple[float, np.ndarray]:
    """Maximum flow value and the minimum-cut labeling (1 = sink side)."""
    n = g.n
    for name in ("source_cap", "sink_cap", "cap_ij", "cap_ji"):
        if np.any(getattr(g, name) < 0):
            raise ValueError(f"negative capacity in {name}")
    s, t = n, n + 1
    sc = np.asarray(g.source_cap, dtype=np.float64).copy()
    tc = np.asarray(g.sink_cap, dtype=np.float64).copy()
    # saturate direct s -> v -> t paths up front
    direct = np.minimum(sc, tc)
    base = float(direct.sum())
    sc -= direct
    tc -= direct

    nodes = np.arange(n, dtype=np.int64)
    has_s = sc > 0
    has_t = tc > 0
    ei = np.asarray(g.edge_i, dtype=np.int64)
    ej = np.asarray(g.edge_j, dtype=np.int64)
    tails = [np.full(has_s.sum(), s), nodes[has_t], ei]
    heads = [nodes[has_s], np.full(has_t.sum(), t), ej]
    fwd = [sc[has_s], tc[has_t], np.asarray(g.cap_ij, dtype=np.float64)]
    bwd = [np.zeros(has_s.sum()), np.zeros(has_t.sum()), np.asarray(g.cap_ji, dtype=np.float64)]
    tl = np.concatenate(tails).astype(np.int64)
    hd = np.concatenate(heads).astype(np.int64)
    m = len(tl)
    arc_tail = np.empty(2 * m, np.int64)
    arc_head = np.empty(2 * m, np.int64)
    arc_cap = np.empty(2 * m, np.float64)
    arc_tail[0::2], arc_tail[1::2] = tl, hd
    arc_head[0::2], arc_head[1::2] = hd, tl
    arc_cap[0::2] = np.concatenate(fwd)
    arc_cap[1::2] = np.concatenate(bwd)

    order = np.argsort(arc_tail, kind="stable")
    pos = np.empty(2 * m, np.int64)
    pos[order] = np.arange(2 * m)
    partner = pos[order ^ 1]
    head = arc_head[order]
    cap = arc_cap[order].copy()
    start = np.zeros(n + 3, np.int64)
    start[1:] = np.cumsum(np.bincount(arc_tail, minlength=n + 2))

    top = float(cap.max()) if len(cap) else 0.0
    eps = 1e-12 * max(1.0, top)
    flow = base
    if m:
        flow += _dinic(n + 2, s, t, start, head, cap, partner, eps)
    reach = _reaches_sink(n + 2, t, start, head, cap, partner, eps)
    return flow, reach[:n].astype(np.uint8)


def minimize_binary(e: BinaryEnergy) -> tuple[np.ndarray, float]:
    g, _ = reduce(e)
    _, y = maxflow(g)
    return y, e.evaluate(y)
