"""Pipeline placement over a linear layer graph.

Given per-layer latencies and sizes for every (tensor-model width, microbatch
size) pair, finds the device placement minimizing time per minibatch: the
data-parallel width d, stage count s, contiguous stage partition, per-stage
accelerator counts, microbatch size, recomputation mode, and HBM capacity.

The table dp[i, k, m] is the minimal max-load over ways of running the layer
suffix starting at i as the last m pipeline stages with at most k accelerators
per pipeline.  The first stage is peeled explicitly in the final-time sweep
because the gradient-sync term and its memory position depend on the split.
Stage position matters twice: a stage m positions from the end stashes m-1
in-flight microbatches (a full minibatch share when the pipeline never
drains mid-batch), and the last stage skips the recomputation forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .costmodel import allreduce_ticks, transfer_ticks
from .workload import TrainingParams

INF = 1 << 62


class InfeasibleError(Exception):
    """No placement fits the memory/accelerator budget."""


@dataclass(frozen=True)
class LayerCosts:
    """One layer's numbers at a fixed (t, b): latencies in ticks, sizes in
    bytes, already per-accelerator shares for the sliced variants."""

    fw: int
    bw: int
    weights: int
    optimizer: int
    activations: int
    input_edge: int
    sliceable: bool


@dataclass(frozen=True)
class StageLoad:
    latency: int
    max_s: int  # largest position-from-end at which the stage fits; 0 = never

    def __post_init__(self) -> None:
        if self.latency < 0 or self.max_s < 0:
            raise ValueError("negative stage load fields")


def stage_width(costs: Sequence[LayerCosts], lo: int, hi: int, t: int) -> int:
    """Accelerators a stage occupies: t when anything in it slices, else 1."""
    return t if any(c.sliceable for c in costs[lo:hi]) else 1


def stage_memory(costs: Sequence[LayerCosts], lo: int, hi: int, s: int,
                 recompute: bool, inflight: int | None = None) -> int:
    """Bytes per accelerator for the stage s positions from the pipeline end.

    Steady state keeps two weight copies plus optimizer state plus one set of
    activations; on top, one stash per in-flight microbatch, s-1 of them
    unless the caller overrides the count.  Recomputation stashes only the
    bytes entering the stage; otherwise every activation in it is kept.
    """
    if inflight is None:
        inflight = s - 1
    steady = sum(2 * c.weights + c.optimizer + c.activations for c in costs[lo:hi])
    if recompute:
        stash = costs[lo].input_edge
    else:
        stash = sum(c.activations for c in costs[lo:hi])
    return steady + inflight * stash


def stage_load(costs: Sequence[LayerCosts], lo: int, hi: int, *, recompute: bool,
               last: bool, bandwidth: int, hbm_bytes: int,
               gpipe_inflight: int | None = None) -> StageLoad:
    """Per-microbatch latency of a stage plus its memory-feasibility bound.

    Latency counts the incoming activation transfer (none for the stage that
    starts the model), the forward and backward passes, and the forward pass
    again when recomputing anywhere but the last stage.
    """
    fw = sum(c.fw for c in costs[lo:hi])
    bw = sum(c.bw for c in costs[lo:hi])
    transfer = transfer_ticks(costs[lo].input_edge, bandwidth) if lo > 0 else 0
    latency = transfer + fw + bw
    if recompute and not last:
        latency += fw
    steady = sum(2 * c.weights + c.optimizer + c.activations for c in costs[lo:hi])
    if recompute:
        stash = costs[lo].input_edge
    else:
        stash = sum(c.activations for c in costs[lo:hi])
    if gpipe_inflight is not None:
        max_s = len(costs) if steady + gpipe_inflight * stash <= hbm_bytes else 0
    elif steady > hbm_bytes:
        max_s = 0
    elif stash == 0:
        max_s = len(costs)
    else:
        max_s = min(len(costs), (hbm_bytes - steady) // stash + 1)
    return StageLoad(latency=latency, max_s=max_s)


@dataclass
class DpTable:
    """Suffix table plus the per-span matrices reconstruction needs."""

    n: int
    t: int
    recompute: bool
    k_max: int
    s_max: int
    dp: np.ndarray          # (n+1, k_max+1, s_max+1) int64, INF = infeasible
    load_mid: np.ndarray    # (n+1, n+1) stage load at positions >= 2
    load_last: np.ndarray   # (n+1, n+1) stage load at position 1
    max_pos: np.ndarray     # (n+1, n+1) largest feasible position-from-end
    width: np.ndarray       # (n+1, n+1) accelerators the stage occupies
    steady: np.ndarray      # (n+1, n+1) position-independent bytes
    stash: np.ndarray       # (n+1, n+1) bytes per in-flight microbatch
    w_prefix: tuple[int, ...]  # w_prefix[j] = total weights of layers[0:j]

    def value(self, i: int, k: int, m: int) -> int:
        if k < 0 or m < 0 or m > self.s_max:
            return INF
        return int(self.dp[i, min(k, self.k_max), m])

    def memory_of(self, lo: int, hi: int, inflight: int) -> int:
        return int(self.steady[lo, hi]) + inflight * int(self.stash[lo, hi])


def dp_solve(costs: Sequence[LayerCosts], k_per_pipeline: int, *, t: int,
             recompute: bool, bandwidth: int, hbm_bytes: int,
             gpipe_inflight: int | None = None) -> DpTable:
    """Fill the suffix table bottom-up, vectorized over (split point, k)."""
    n = len(costs)
    k_max = k_per_pipeline
    s_max = min(k_per_pipeline, n)
    lm = np.full((n + 1, n + 1), INF, dtype=np.int64)
    ll = np.full((n + 1, n + 1), INF, dtype=np.int64)
    mp = np.zeros((n + 1, n + 1), dtype=np.int64)
    wd = np.ones((n + 1, n + 1), dtype=np.int64)
    steady = np.zeros((n + 1, n + 1), dtype=np.int64)
    stash = np.zeros((n + 1, n + 1), dtype=np.int64)
    for lo in range(n):
        for hi in range(lo + 1, n + 1):
            sl = stage_load(costs, lo, hi, recompute=recompute, last=False,
                            bandwidth=bandwidth, hbm_bytes=hbm_bytes,
                            gpipe_inflight=gpipe_inflight)
            lm[lo, hi] = sl.latency
            ll[lo, hi] = stage_load(costs, lo, hi, recompute=recompute, last=True,
                                    bandwidth=bandwidth, hbm_bytes=hbm_bytes,
                                    gpipe_inflight=gpipe_inflight).latency
            mp[lo, hi] = sl.max_s
            wd[lo, hi] = stage_width(costs, lo, hi, t)
            steady[lo, hi] = sum(2 * c.weights + c.optimizer + c.activations
                                 for c in costs[lo:hi])
            stash[lo, hi] = costs[lo].input_edge if recompute else \
                sum(c.activations for c in costs[lo:hi])
    dp = np.full((n + 1, k_max + 1, s_max + 1), INF, dtype=np.int64)
    dp[n, :, 0] = 0
    for m in range(1, s_max + 1):
        loads = lm if m >= 2 else ll
        prev = dp[:, :, m - 1]
        for i in range(n - 1, -1, -1):
            js = np.nonzero(mp[i, i + 1:] >= m)[0] + i + 1
            if js.size == 0:
                continue
            best = np.full(k_max + 1, INF, dtype=np.int64)
            for a in np.unique(wd[i, js]):
                a = int(a)
                if a > k_max:
                    continue
                jsa = js[wd[i, js] == a]
                shifted = np.full((jsa.size, k_max + 1), INF, dtype=np.int64)
                shifted[:, a:] = prev[jsa, : k_max + 1 - a]
                cand = np.maximum(shifted, loads[i, jsa][:, None])
                best = np.minimum(best, cand.min(axis=0))
            dp[i, :, m] = best
    w_prefix = [0]
    for c in costs:
        w_prefix.append(w_prefix[-1] + c.weights)
    return DpTable(n=n, t=t, recompute=recompute, k_max=k_max, s_max=s_max, dp=dp,
                   load_mid=lm, load_last=ll, max_pos=mp, width=wd,
                   steady=steady, stash=stash, w_prefix=tuple(w_prefix))


@dataclass(frozen=True)
class StagePlan:
    lo: int
    hi: int
    accelerators: int
    load: int
    memory: int
    max_s: int


@dataclass(frozen=True)
class PlacementSolution:
    t: int
    d: int
    s: int
    b: int
    recompute: bool
    hbm_bytes: int
    stages: tuple[StagePlan, ...]
    F: int
    sync_ticks: int
    throughput: Fraction  # samples per tick

    def bounds(self) -> tuple[tuple[int, int], ...]:
        return tuple((st.lo, st.hi) for st in self.stages)


def _reconstruct(table: DpTable, start: int, k: int, m: int,
                 allow: int) -> list[tuple[int, int, int]]:
    """Lexicographically smallest cut sequence for the suffix at ``start``
    running as the last ``m`` stages with max-load <= allow."""
    out: list[tuple[int, int, int]] = []
    i, kk = start, k
    for pos in range(m, 0, -1):
        loads = table.load_mid if pos >= 2 else table.load_last
        found = False
        for j in range(i + 1, table.n + 1):
            if table.max_pos[i, j] < pos:
                continue
            a = int(table.width[i, j])
            if a > kk:
                continue
            if loads[i, j] <= allow and table.value(j, kk - a, pos - 1) <= allow:
                out.append((i, j, a))
                i, kk = j, kk - a
                found = True
                break
        if not found:
            raise AssertionError("reconstruction lost the dp optimum")
    assert i == table.n
    return out


def _divisors(K: int, B: int) -> list[int]:
    return [d for d in range(1, min(K, B) + 1) if K % d == 0 and B % d == 0]


def final_time_per_batch(tables: Mapping[tuple, DpTable],
                         training: TrainingParams, *,
                         gpipe: bool = False) -> PlacementSolution:
    """Sweep (t, b, recompute, hbm, d, s, first-stage split) for minimal F.

    ``tables`` is keyed (t, b, recompute, hbm); when the in-flight count
    depends on d (GPipe), keys carry a trailing d: (t, b, recompute, hbm, d).
    Ties break toward smaller d, then s, then t, then b, stash-mode first,
    then smaller hbm, then the lexicographically smallest stage bounds.
    """
    K = training.num_accelerators
    B = training.minibatch_size
    bw = training.bandwidth_bytes_per_tick
    best_key = None
    best_pick = None
    for key in sorted(tables):
        table = tables[key]
        if gpipe:
            t, b, recompute, hbm, d_key = key
        else:
            t, b, recompute, hbm = key
            d_key = None
        n = table.n
        for d in _divisors(K, B):
            if d_key is not None and d != d_key:
                continue
            kp = K // d
            mb = B // d
            for s in range(1, min(kp, n) + 1):
                mult = mb + s - 1
                loads = table.load_mid if s >= 2 else table.load_last
                for j in range(1, n + 1):
                    if s == 1 and j != n:
                        continue
                    if table.max_pos[0, j] < s:
                        continue
                    a1 = int(table.width[0, j])
                    if a1 > kp:
                        continue
                    rest = table.value(j, kp - a1, s - 1)
                    if rest >= INF:
                        continue
                    load_first = int(loads[0, j])
                    max_load = max(load_first, rest)
                    sync = allreduce_ticks(table.w_prefix[j], d, bw)
                    F = mult * max_load + sync
                    cand = (F, d, s, t, b, recompute, hbm, j)
                    if best_key is None or cand < best_key:
                        best_key = cand
                        best_pick = table
    if best_key is None:
        raise InfeasibleError("no placement fits the accelerator and memory budget")
    return _materialize(best_pick, best_key, training, gpipe)


def _materialize(table: DpTable, key: tuple, training: TrainingParams,
                 gpipe: bool) -> PlacementSolution:
    F, d, s, t, b, recompute, hbm, j = key
    K = training.num_accelerators
    B = training.minibatch_size
    mb = B // d
    mult = mb + s - 1
    sync = allreduce_ticks(table.w_prefix[j], d, training.bandwidth_bytes_per_tick)
    allow = (F - sync) // mult
    kp = K // d
    a1 = int(table.width[0, j])
    cuts = [(0, j, a1)]
    cuts += _reconstruct(table, j, kp - a1, s - 1, allow)
    stages = []
    for pos_from_start, (lo, hi, a) in enumerate(cuts):
        pos = s - pos_from_start
        loads = table.load_mid if pos >= 2 else table.load_last
        inflight = mb if gpipe else pos - 1
        stages.append(StagePlan(lo=lo, hi=hi, accelerators=a, load=int(loads[lo, hi]),
                                memory=table.memory_of(lo, hi, inflight),
                                max_s=int(table.max_pos[lo, hi])))
    throughput = Fraction(B * b, F) if F > 0 else Fraction(0)
    return PlacementSolution(t=t, d=d, s=s, b=b, recompute=recompute, hbm_bytes=hbm,
                             stages=tuple(stages), F=F, sync_ticks=sync,
                             throughput=throughput)


def solve_placement(costs_by_tb: Mapping[tuple[int, int], Sequence[LayerCosts]],
                    training: TrainingParams, *, gpipe: bool = False,
                    recompute_modes: Iterable[bool] = (False, True)) -> PlacementSolution:
    """Build every table the sweep needs and return the best placement."""
    K = training.num_accelerators
    B = training.minibatch_size
    bw = training.bandwidth_bytes_per_tick
    tables: dict[tuple, DpTable] = {}
    for (t, b), costs in sorted(costs_by_tb.items()):
        for recompute in sorted(set(recompute_modes)):
            for hbm in sorted(training.hbm_candidates_bytes):
                if gpipe:
                    for d in _divisors(K, B):
                        table = dp_solve(costs, K // d, t=t, recompute=recompute,
                                         bandwidth=bw, hbm_bytes=hbm,
                                         gpipe_inflight=B // d)
                        tables[(t, b, recompute, hbm, d)] = table
                else:
                    table = dp_solve(costs, K, t=t, recompute=recompute,
                                     bandwidth=bw, hbm_bytes=hbm)
                    tables[(t, b, recompute, hbm)] = table
    return final_time_per_batch(tables, training, gpipe=gpipe)


def explain(sol: PlacementSolution) -> str:
    """Render every field of a solution as a fixed-width report fragment."""
    lines = [
        f"time per minibatch: {sol.F} ticks (sync {sol.sync_ticks})",
        f"throughput: {float(sol.throughput):.6g} samples/tick",
        f"tmp width t={sol.t}  data parallel d={sol.d}  stages s={sol.s}  "
        f"microbatch b={sol.b}",
        f"recompute: {'on' if sol.recompute else 'off'}  hbm: {sol.hbm_bytes} bytes",
        "stage  layers        accel  load(ticks)  memory(bytes)  max_s",
    ]
    for idx, st in enumerate(sol.stages, start=1):
        lines.append(f"{idx:>5}  [{st.lo:>4},{st.hi:>4})  {st.accelerators:>5}  "
                     f"{st.load:>11}  {st.memory:>13}  {st.max_s:>5}")
    return "\n".join(lines)
