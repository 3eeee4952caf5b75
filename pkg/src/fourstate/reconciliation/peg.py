"""Progressive edge-growth (PEG) construction of LDPC parity-check matrices.

Each new edge of a variable node is attached to the check node that is
farthest from it in the current Tanner graph, ties broken by lowest check
degree and then by a seeded random draw. This maximises local girth.
"""
from __future__ import annotations

import numba
import numpy as np

from .ldpc import LdpcCode


@numba.njit(cache=True)
def _peg(var_degrees, m, check_cap, seed):
    np.random.seed(seed)
    n = var_degrees.shape[0]
    dmax = var_degrees.max()
    var_adj = np.full((n, dmax), -1, np.int64)
    var_cnt = np.zeros(n, np.int64)
    chk_adj = np.full((m, check_cap), -1, np.int64)
    chk_cnt = np.zeros(m, np.int64)

    chk_mark = np.zeros(m, np.int64)  # stamp of the BFS that reached a check
    var_mark = np.zeros(n, np.int64)
    frontier = np.empty(n, np.int64)
    nxt = np.empty(n, np.int64)
    layer = np.empty(m, np.int64)
    cand = np.empty(m, np.int64)
    stamp = 0

    for v in range(n):
        for k in range(var_degrees[v]):
            stamp += 1
            if k == 0:
                ncand = 0
                for c in range(m):
                    if chk_cnt[c] < check_cap:
                        cand[ncand] = c
                        ncand += 1
            else:
                # breadth-first search over the current graph from v
                var_mark[v] = stamp
                frontier[0] = v
                nf = 1
                reached = 0
                while True:
                    nl = 0
                    for a in range(nf):
                        u = frontier[a]
                        for b in range(var_cnt[u]):
                            c = var_adj[u, b]
                            if chk_mark[c] != stamp:
                                chk_mark[c] = stamp
                                layer[nl] = c
                                nl += 1
                    if nl == 0:
                        # depth stopped growing: any unreached check qualifies
                        ncand = 0
                        for c in range(m):
                            if chk_mark[c] != stamp and chk_cnt[c] < check_cap:
                                cand[ncand] = c
                                ncand += 1
                        break
                    reached += nl
                    if reached == m:
                        # everything reachable: pick among the farthest layer
                        ncand = 0
                        for a in range(nl):
                            c = layer[a]
                            if chk_cnt[c] < check_cap:
                                cand[ncand] = c
                                ncand += 1
                        # v's own neighbours are never farthest once it has edges
                        break
                    nn = 0
                    for a in range(nl):
                        c = layer[a]
                        for b in range(chk_cnt[c]):
                            u = chk_adj[c, b]
                            if var_mark[u] != stamp:
                                var_mark[u] = stamp
                                nxt[nn] = u
                                nn += 1
                    for a in range(nn):
                        frontier[a] = nxt[a]
                    nf = nn
                # never reconnect to a check already adjacent to v
                j = 0
                for a in range(ncand):
                    c = cand[a]
                    dup = False
                    for b in range(var_cnt[v]):
                        if var_adj[v, b] == c:
                            dup = True
                    if not dup:
                        cand[j] = c
                        j += 1
                ncand = j
                if ncand == 0:
                    for c in range(m):
                        dup = False
                        for b in range(var_cnt[v]):
                            if var_adj[v, b] == c:
                                dup = True
                        if not dup and chk_cnt[c] < check_cap:
                            cand[ncand] = c
                            ncand += 1
            if ncand == 0:
                return var_adj, var_cnt, False
            best = check_cap + 1
            for a in range(ncand):
                d = chk_cnt[cand[a]]
                if d < best:
                    best = d
            j = 0
            for a in range(ncand):
                if chk_cnt[cand[a]] == best:
                    cand[j] = cand[a]
                    j += 1
            c = cand[np.random.randint(0, j)]
            var_adj[v, var_cnt[v]] = c
            var_cnt[v] += 1
            chk_adj[c, chk_cnt[c]] = v
            chk_cnt[c] += 1
    return var_adj, var_cnt, True


def peg_construct(var_degrees, m_checks: int, seed: int = 0, check_cap: int = 64, name: str = "") -> LdpcCode:
    """Build a code with the given column-degree sequence and ``m_checks`` rows.

    Columns are processed in nondecreasing degree order (the input order is
    kept if already sorted). Check degrees come out nearly concentrated
    because ties go to the lowest-degree check.
    """
    var_degrees = np.asarray(var_degrees, dtype=np.int64)
    if var_degrees.ndim != 1 or var_degrees.min() < 1:
        raise ValueError("variable degrees must be a 1-D sequence of positive ints")
    if var_degrees.max() > m_checks:
        raise ValueError("a variable degree exceeds the number of checks")
    order = np.argsort(var_degrees, kind="stable")
    var_adj, var_cnt, ok = _peg(var_degrees[order], int(m_checks), int(check_cap), int(seed))
    if not ok:
        raise RuntimeError("PEG ran out of admissible check nodes; raise check_cap")
    rows: list[list[int]] = [[] for _ in range(m_checks)]
    for pos, v in enumerate(order):
        for b in range(var_cnt[pos]):
            rows[var_adj[pos, b]].append(int(v))
    return LdpcCode(
        n=len(var_degrees),
        m_checks=int(m_checks),
        rows=tuple(tuple(sorted(r)) for r in rows),
        name=name,
    )


def regular_code(n: int, dv: int, dc: int, seed: int = 0) -> LdpcCode:
    """PEG-built (dv, dc)-regular code of length ``n``."""
    if (n * dv) % dc:
        raise ValueError("n*dv must be divisible by dc")
    return peg_construct(np.full(n, dv), n * dv // dc, seed=seed, check_cap=dc, name=f"peg_{dv}_{dc}_n{n}")


def degrees_from_edge_distribution(n: int, lam: dict[int, float]) -> np.ndarray:
    """Column-degree sequence of length ``n`` realising an edge-perspective
    variable-degree distribution ``lam`` (degree -> fraction of edges)."""
    degs = np.array(sorted(lam))
    node_frac = np.array([lam[d] / d for d in degs])
    node_frac /= node_frac.sum()
    counts = np.floor(node_frac * n).astype(int)
    # largest-remainder rounding
    rem = node_frac * n - counts
    for i in np.argsort(-rem)[: n - counts.sum()]:
        counts[i] += 1
    return np.repeat(degs, counts)
