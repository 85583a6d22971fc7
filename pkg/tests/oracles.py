"""Independent oracles used to pin down solver outputs.

These deliberately re-derive results by exhaustive enumeration with no code
shared with the package's solvers.  Keep them dumb: correctness here anchors
the whole test suite.
"""

from __future__ import annotations

import math
from itertools import combinations

INF = float("inf")


# ---------------------------------------------------------------------------
# Operator scheduling: minimum makespan by exhaustive enumeration.
#
# A schedule is generated by (a) a linear extension of the precedence DAG,
# (b) a per-op mode choice (single-core vs whole-chip intra-op), and (c) a
# core choice for single-core ops.  Ops are placed at their earliest start
# implied by: finished predecessors, every earlier intra-op op, the global
# barrier an intra-op op itself must wait for, and the chosen core's previous
# finish.  Enumerating all of those and taking the minimum makespan is the
# defining semantics; memoization on the exact search state only collapses
# identical subproblems.

def oracle_min_makespan(
    n: int,
    preds: list[list[int]],
    ell: list[int],
    ell_hat: list[int],
    uses: list[str],  # per op: "tc", "vc", or "both"
    num_tc: int,
    num_vc: int,
) -> int:
    # A core's index carries no state beyond its availability time (plus its
    # partner's, for the paired cores fused ops run on), so core choices are
    # enumerated per distinct availability state instead of per index, and
    # states are kept sorted.  That is relabeling symmetry, not pruning:
    # every distinct schedule shape is still visited.
    n_pairs = min(num_tc, num_vc)
    full = (1 << n) - 1
    succs: list[list[int]] = [[] for _ in range(n)]
    for v in range(n):
        for p in preds[v]:
            succs[p].append(v)
    memo: dict[tuple, float] = {}

    def replaced(tup: tuple, old, new) -> tuple:
        lst = list(tup)
        lst.remove(old)
        lst.append(new)
        lst.sort()
        return tuple(lst)

    def rec(mask: int, release: tuple[int, ...], pair_av: tuple, utc: tuple,
            uvc: tuple, barrier: int, max_f: int) -> float:
        if mask == full:
            return max_f
        key = (mask, release, pair_av, utc, uvc, barrier, max_f)
        hit = memo.get(key)
        if hit is not None:
            return hit
        best = INF
        for o in range(n):
            if mask >> o & 1:
                continue
            if any(not (mask >> p & 1) for p in preds[o]):
                continue
            nm = mask | (1 << o)
            base = max(release[o], barrier)

            def finished(f: int) -> tuple[int, ...]:
                rel2 = list(release)
                rel2[o] = 0
                for v in succs[o]:
                    if not (nm >> v & 1):
                        rel2[v] = max(rel2[v], f)
                return tuple(rel2)

            # intra-op: waits for everything so far, blocks everything after
            f = max(base, max_f) + ell_hat[o]
            best = min(best, rec(nm, finished(f), pair_av, utc, uvc,
                                 max(barrier, f), max(max_f, f)))
            # single-core, one branch per distinct core state
            u = uses[o]
            if u == "both":
                for st in sorted(set(pair_av)):
                    f = max(base, st[0], st[1]) + ell[o]
                    best = min(best, rec(nm, finished(f), replaced(pair_av, st, (f, f)),
                                         utc, uvc, barrier, max(max_f, f)))
            elif u == "tc":
                for st in sorted(set(pair_av)):
                    f = max(base, st[0]) + ell[o]
                    best = min(best, rec(nm, finished(f), replaced(pair_av, st, (f, st[1])),
                                         utc, uvc, barrier, max(max_f, f)))
                for av in sorted(set(utc)):
                    f = max(base, av) + ell[o]
                    best = min(best, rec(nm, finished(f), pair_av, replaced(utc, av, f),
                                         uvc, barrier, max(max_f, f)))
            else:
                for st in sorted(set(pair_av)):
                    f = max(base, st[1]) + ell[o]
                    best = min(best, rec(nm, finished(f), replaced(pair_av, st, (st[0], f)),
                                         utc, uvc, barrier, max(max_f, f)))
                for av in sorted(set(uvc)):
                    f = max(base, av) + ell[o]
                    best = min(best, rec(nm, finished(f), pair_av, utc,
                                         replaced(uvc, av, f), barrier, max(max_f, f)))
        memo[key] = best
        return best

    release0 = tuple(0 for _ in range(n))
    out = rec(0, release0, ((0, 0),) * n_pairs,
              (0,) * (num_tc - n_pairs), (0,) * (num_vc - n_pairs), 0, 0)
    assert out != INF
    return int(out)


# ---------------------------------------------------------------------------
# Pipeline placement: minimum time-per-minibatch by exhaustive enumeration.
#
# Layers form a chain.  A candidate is (tmp width t, data-parallel width d,
# stage count s, contiguous partition, microbatch b, recompute flag, hbm).
# Stage latency, memory, and the flush/sync terms are recomputed here from
# first principles.

def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _common_divisors(x: int, y: int) -> list[int]:
    g = math.gcd(x, y)
    return [d for d in range(1, g + 1) if g % d == 0]


def _compositions(n: int, s: int):
    """All ways to split range(n) into s non-empty contiguous parts."""
    for cuts in combinations(range(1, n), s - 1):
        bounds = (0,) + cuts + (n,)
        yield [(bounds[i], bounds[i + 1]) for i in range(s)]


def placement_oracle(
    layers: dict[int, list[dict]],  # t -> list of per-layer dicts (sizes, sliceable)
    lat: dict[tuple[int, int], list[tuple[int, int]]],  # (t, b) -> [(fw, bw)] per layer
    tmp_widths: list[int],
    microbatch_sizes: list[int],
    K: int,
    B: int,
    bandwidth: int,
    hbm_candidates: list[int],
    recompute_modes: list[bool],
    gpipe: bool = False,
):
    """Return (F, t, d, s, bounds, b, recompute, hbm) minimizing F.

    Ties resolve by smaller d, then s, then t, then b, then recompute False
    first, then smaller hbm, then lexicographic stage bounds.
    """
    best = None
    n = len(next(iter(layers.values())))
    for t in tmp_widths:
        lls = layers[t]
        for b in microbatch_sizes:
            lat_tb = lat[(t, b)]
            for recompute in recompute_modes:
                for hbm in hbm_candidates:
                    for d in _common_divisors(K, B):
                        k_pipe = K // d
                        for s in range(1, n + 1):
                            for bounds in _compositions(n, s):
                                used = 0
                                max_load = 0
                                ok = True
                                for pos_from_start, (lo, hi) in enumerate(bounds):
                                    stage = lls[lo:hi]
                                    pos_from_end = s - pos_from_start
                                    a = t if any(x["sliceable"] for x in stage) else 1
                                    used += a
                                    # latency
                                    fw = sum(lat_tb[i][0] for i in range(lo, hi))
                                    bw = sum(lat_tb[i][1] for i in range(lo, hi))
                                    transfer = _ceil_div(lls[lo]["in_edge"], bandwidth) if lo > 0 else 0
                                    load = transfer + fw + bw
                                    if recompute and pos_from_end != 1:
                                        load += fw
                                    # memory
                                    steady = sum(2 * x["weights"] + x["opt"] + x["act"] for x in stage)
                                    stash = lls[lo]["in_edge"] if recompute else sum(x["act"] for x in stage)
                                    inflight = (B // d) if gpipe else (pos_from_end - 1)
                                    if steady + inflight * stash > hbm:
                                        ok = False
                                        break
                                    max_load = max(max_load, load)
                                if not ok or used > k_pipe:
                                    continue
                                first_lo, first_hi = bounds[0]
                                w_first = sum(x["weights"] for x in lls[first_lo:first_hi])
                                sync = 0
                                if d > 1 and w_first > 0:
                                    sync = _ceil_div(4 * w_first * (d - 1), d * bandwidth)
                                F = (B // d + s - 1) * max_load + sync
                                key = (F, d, s, t, b, recompute, hbm, tuple(bounds))
                                if best is None or key < best:
                                    best = key
    return best
