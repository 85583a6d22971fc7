"""Per-layer operator scheduling.

Builds the exact makespan-minimization model over start times, per-op mode
(one core vs whole-chip intra-op) and core assignments, and solves it with an
embedded branch-and-bound.  The search enumerates (linear extension, mode
vector, core choice) with realized earliest starts, which reproduces the
model's optimum: any solution's start-time order is a linear extension whose
greedy realization is no worse.  Core-capacity (z) constraint families can be
left out and added lazily after a concurrency check of the relaxed schedule.

Models export to LP text for external solvers; the transitivity family is
part of the export but never needed internally, since positive durations make
ordering cycles infeasible through the big-M start rows.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping

from .archspace import AcceleratorConfig
from .costmodel import CostModelParams, OperatorEstimate, ceil_div, estimate_graph
from .lp_format import LpRow, render_lp
from .workload import Layer, OpKind, OperatorGraph

MODE_SINGLE = "single"
MODE_INTRA = "intra"


class ZFamilies(Enum):
    """Which core-capacity constraint families a model carries."""

    NONE = "none"
    TENSOR_ONLY = "tensor"
    VECTOR_ONLY = "vector"
    BOTH = "both"

    @property
    def tensor(self) -> bool:
        return self in (ZFamilies.TENSOR_ONLY, ZFamilies.BOTH)

    @property
    def vector(self) -> bool:
        return self in (ZFamilies.VECTOR_ONLY, ZFamilies.BOTH)


@dataclass(frozen=True)
class OpSchedule:
    """Placement of one operator: ``core`` is a pool index for single-core
    tensor/vector ops, a pair index for fused ops, and None for intra-op."""

    op_id: str
    start: int
    duration: int
    mode: str
    core: int | None


@dataclass(frozen=True)
class LayerSchedule:
    entries: tuple[OpSchedule, ...]
    makespan: int
    optimal: bool = True
    gap: float = 0.0
    invocations: int = 1
    nodes: int = 0

    def by_id(self) -> dict[str, OpSchedule]:
        return {e.op_id: e for e in self.entries}


def _uses(kind: OpKind) -> str:
    if kind is OpKind.TENSOR:
        return "tc"
    if kind is OpKind.VECTOR:
        return "vc"
    return "both"


@dataclass
class IlpModel:
    """Structured scheduling model; rows materialize on demand for export."""

    graph: OperatorGraph
    est: Mapping[str, OperatorEstimate]
    cfg: AcceleratorConfig
    with_z: ZFamilies
    ell: tuple[int, ...]
    ell_hat: tuple[int, ...]
    uses: tuple[str, ...]
    desc: tuple[int, ...]  # desc[i] = bitmask of strict successors (transitive)
    H: int

    @property
    def n(self) -> int:
        return len(self.graph.nodes)

    @property
    def pairs(self) -> int:
        return min(self.cfg.num_tc, self.cfg.num_vc)

    def _z_ops(self, pool: str) -> list[int]:
        want = ("tc", "both") if pool == "tc" else ("vc", "both")
        return [i for i, u in enumerate(self.uses) if u in want]

    def continuous_names(self) -> list[str]:
        names = ["T"]
        for i in range(self.n):
            names.append(f"t_{i}")
        for i in range(self.n):
            names.append(f"p_{i}")
        return names

    def binary_names(self) -> list[str]:
        names = [f"y_{i}" for i in range(self.n)]
        for i in range(self.n):
            for j in range(self.n):
                if i != j:
                    names.append(f"x_{i}_{j}")
        if self.with_z.tensor:
            for i in self._z_ops("tc"):
                names.extend(f"ztc_{i}_{c}" for c in range(self.cfg.num_tc))
        if self.with_z.vector:
            for i in self._z_ops("vc"):
                names.extend(f"zvc_{i}_{c}" for c in range(self.cfg.num_vc))
        return names

    def rows(self) -> list[LpRow]:
        n = self.n
        out: list[LpRow] = []
        for i in range(n):
            # (a) duration selection: p_i = ell + (ell_hat - ell) y_i
            out.append(LpRow(f"a_{i}", ((1, f"p_{i}"), (self.ell[i] - self.ell_hat[i], f"y_{i}")),
                             "=", self.ell[i]))
        for i in range(n):
            out.append(LpRow(f"b_{i}", ((1, "T"), (-1, f"t_{i}"), (-1, f"p_{i}")), ">=", 0))
        for i in range(n):
            for j in range(n):
                if self.desc[i] >> j & 1:
                    out.append(LpRow(f"c_{i}_{j}", ((1, f"x_{i}_{j}"),), "=", 1))
                    out.append(LpRow(f"d_{j}_{i}", ((1, f"x_{j}_{i}"),), "=", 0))
        for i in range(n):
            for j in range(i + 1, n):
                if not (self.desc[i] >> j & 1) and not (self.desc[j] >> i & 1):
                    out.append(LpRow(f"e_{i}_{j}", ((1, f"x_{i}_{j}"), (1, f"x_{j}_{i}")), "<=", 1))
        for i in range(n):
            for j in range(n):
                if j == i:
                    continue
                for k in range(n):
                    if k == i or k == j:
                        continue
                    out.append(LpRow(f"f_{i}_{j}_{k}",
                                     ((1, f"x_{i}_{j}"), (1, f"x_{j}_{k}"), (-1, f"x_{i}_{k}")),
                                     "<=", 1))
        for i in range(n):
            for j in range(n):
                if i != j:
                    out.append(LpRow(f"g_{i}_{j}",
                                     ((1, f"t_{i}"), (1, f"p_{i}"), (-1, f"t_{j}"), (self.H, f"x_{i}_{j}")),
                                     "<=", self.H))
        for i in range(n):
            for j in range(n):
                if i != j:
                    out.append(LpRow(f"h_{i}_{j}",
                                     ((1, f"x_{i}_{j}"), (1, f"x_{j}_{i}"), (-1, f"y_{i}")), ">=", 0))
        out.extend(self._z_rows())
        return out

    def _z_rows(self) -> list[LpRow]:
        out: list[LpRow] = []
        pairs = self.pairs
        if self.with_z.tensor:
            for i in self._z_ops("tc"):
                terms = [(1, f"ztc_{i}_{c}") for c in range(self.cfg.num_tc)] + [(1, f"y_{i}")]
                out.append(LpRow(f"itc_{i}", tuple(terms), "=", 1))
                if self.uses[i] == "both":
                    for c in range(pairs, self.cfg.num_tc):
                        out.append(LpRow(f"i0tc_{i}_{c}", ((1, f"ztc_{i}_{c}"),), "=", 0))
        if self.with_z.vector:
            for i in self._z_ops("vc"):
                terms = [(1, f"zvc_{i}_{c}") for c in range(self.cfg.num_vc)] + [(1, f"y_{i}")]
                out.append(LpRow(f"ivc_{i}", tuple(terms), "=", 1))
                if self.uses[i] == "both":
                    for c in range(pairs, self.cfg.num_vc):
                        out.append(LpRow(f"i0vc_{i}_{c}", ((1, f"zvc_{i}_{c}"),), "=", 0))
        if self.with_z.tensor and self.with_z.vector:
            for i in range(self.n):
                if self.uses[i] == "both":
                    for c in range(pairs):
                        out.append(LpRow(f"ipair_{i}_{c}",
                                         ((1, f"ztc_{i}_{c}"), (-1, f"zvc_{i}_{c}")), "=", 0))
        if self.with_z.tensor:
            ops = self._z_ops("tc")
            for a in range(len(ops)):
                for b in range(a + 1, len(ops)):
                    i, j = ops[a], ops[b]
                    for c in range(self.cfg.num_tc):
                        out.append(LpRow(f"jtc_{i}_{j}_{c}",
                                         ((1, f"ztc_{i}_{c}"), (1, f"ztc_{j}_{c}"),
                                          (-1, f"x_{i}_{j}"), (-1, f"x_{j}_{i}")), "<=", 1))
        if self.with_z.vector:
            ops = self._z_ops("vc")
            for a in range(len(ops)):
                for b in range(a + 1, len(ops)):
                    i, j = ops[a], ops[b]
                    for c in range(self.cfg.num_vc):
                        out.append(LpRow(f"jvc_{i}_{j}_{c}",
                                         ((1, f"zvc_{i}_{c}"), (1, f"zvc_{j}_{c}"),
                                          (-1, f"x_{i}_{j}"), (-1, f"x_{j}_{i}")), "<=", 1))
        return out

    def num_variables(self) -> int:
        return len(self.continuous_names()) + len(self.binary_names())

    def num_rows(self) -> int:
        return len(self.rows())


def build_model(g: OperatorGraph, est: Mapping[str, OperatorEstimate],
                cfg: AcceleratorConfig, with_z: ZFamilies = ZFamilies.BOTH) -> IlpModel:
    """Assemble the scheduling model for one operator graph on one config."""
    n = len(g.nodes)
    ids = [op.id for op in g.nodes]
    idx = g.index
    for op in g.nodes:
        if op.id not in est:
            raise KeyError(f"no estimate for operator {op.id!r}")
    ell = tuple(est[i].single_core for i in ids)
    ell_hat = tuple(est[i].intra_op for i in ids)
    uses = tuple(_uses(op.kind) for op in g.nodes)
    # strict-descendant bitmask per node, topological back-propagation
    desc = [0] * n
    for oid in reversed(g.toposort()):
        i = idx[oid]
        m = 0
        for s in g.successors(oid):
            j = idx[s]
            m |= (1 << j) | desc[j]
        desc[i] = m
    H = sum(max(a, b) for a, b in zip(ell, ell_hat))
    return IlpModel(graph=g, est=est, cfg=cfg, with_z=with_z,
                    ell=ell, ell_hat=ell_hat, uses=uses, desc=tuple(desc), H=H)


def export_lp(model: IlpModel, path: str | None = None) -> str:
    comments = [
        f"operator schedule: {model.n} ops, H={model.H}, z={model.with_z.value}",
    ]
    comments.extend(f"op {i}: {op.id}" for i, op in enumerate(model.graph.nodes))
    text = render_lp("T", model.rows(), model.continuous_names(), model.binary_names(), comments)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


# ---------------------------------------------------------------------------
# Validation


def validate_schedule(g: OperatorGraph, est: Mapping[str, OperatorEstimate],
                      cfg: AcceleratorConfig, sched: LayerSchedule) -> list[str]:
    """Check a schedule against the machine rules; return violations.

    Checks: completeness, durations vs mode, precedence on every edge,
    intra-op exclusivity, core index ranges, and per-core overlap on both
    pools (fused ops occupy the tensor and vector core of their pair).
    """
    bad: list[str] = []
    ids = [op.id for op in g.nodes]
    seen = [e.op_id for e in sched.entries]
    if sorted(seen) != sorted(ids):
        bad.append("schedule does not cover the operator set exactly once")
        return bad
    by_id = sched.by_id()
    pairs = min(cfg.num_tc, cfg.num_vc)
    for op in g.nodes:
        e = by_id[op.id]
        if e.start < 0:
            bad.append(f"{op.id}: negative start")
        want = est[op.id].intra_op if e.mode == MODE_INTRA else est[op.id].single_core
        if e.mode not in (MODE_SINGLE, MODE_INTRA):
            bad.append(f"{op.id}: unknown mode {e.mode!r}")
        elif e.duration != want:
            bad.append(f"{op.id}: duration {e.duration} != {want} for mode {e.mode}")
        if e.mode == MODE_INTRA:
            if e.core is not None:
                bad.append(f"{op.id}: intra-op entry carries a core id")
        else:
            if e.core is None or e.core < 0:
                bad.append(f"{op.id}: single-core entry without core id")
            else:
                u = _uses(op.kind)
                cap = {"tc": cfg.num_tc, "vc": cfg.num_vc, "both": pairs}[u]
                if e.core >= cap:
                    bad.append(f"{op.id}: core {e.core} out of range for {u} (cap {cap})")
    for u, v in g.edges:
        eu, ev = by_id[u], by_id[v]
        if eu.start + eu.duration > ev.start:
            bad.append(f"precedence violated on edge ({u}, {v})")
    entries = sorted(sched.entries, key=lambda e: (e.start, e.op_id))
    for e in entries:
        if e.mode != MODE_INTRA:
            continue
        for o in entries:
            if o is e:
                continue
            if e.start < o.start + o.duration and o.start < e.start + e.duration:
                bad.append(f"intra-op {e.op_id} overlaps {o.op_id}")
    for pool in ("tc", "vc"):
        groups: dict[int, list[OpSchedule]] = {}
        for op in g.nodes:
            e = by_id[op.id]
            if e.mode != MODE_SINGLE or e.core is None or e.core < 0:
                continue
            u = _uses(op.kind)
            if u == pool or u == "both":
                groups.setdefault(e.core, []).append(e)
        for core, grp in groups.items():
            grp.sort(key=lambda e: (e.start, e.op_id))
            for prev, nxt in zip(grp, grp[1:]):
                if prev.start + prev.duration > nxt.start:
                    bad.append(f"{pool} core {core}: {prev.op_id} overlaps {nxt.op_id}")
    max_f = max((e.start + e.duration for e in sched.entries), default=0)
    if sched.makespan != max_f:
        bad.append(f"makespan {sched.makespan} != max finish {max_f}")
    return bad


# ---------------------------------------------------------------------------
# Embedded branch-and-bound


class _Timeout(Exception):
    pass


class _Search:
    """Depth-first search over (next op, mode, core) decisions.

    Sound prunings only: a critical-path bound on intra-op latencies, a
    work-per-core bound, relabeling symmetry between cores in identical
    states, and dominance between states reaching the same scheduled set.
    """

    CHECK_EVERY = 1024
    MEMO_PER_MASK = 64
    MEMO_TOTAL = 400_000

    def __init__(self, model: IlpModel, fixed_modes: dict[int, str] | None = None,
                 deadline: float | None = None, bound: int | None = None,
                 reconstruct: bool = False):
        g = model.graph
        self.n = n = model.n
        self.ell = model.ell
        self.ell_hat = model.ell_hat
        self.uses = model.uses
        self.fixed = fixed_modes or {}
        self.deadline = deadline
        self.bound = bound            # None: optimize; else: find completion <= bound
        self.reconstruct = reconstruct
        idx = g.index
        self.preds = [[idx[p] for p in g.predecessors(op.id)] for op in g.nodes]
        self.succs = [[idx[s] for s in g.successors(op.id)] for op in g.nodes]
        self.cap_tc = model.cfg.num_tc if model.with_z.tensor else None
        self.cap_vc = model.cfg.num_vc if model.with_z.vector else None
        self.pairs = model.pairs
        self.fused_present = any(u == "both" for u in model.uses)
        # static tails over intra-op latencies for the critical-path bound
        tails = [0] * n
        order = [idx[o] for o in g.toposort()]
        for i in reversed(order):
            t = 0
            for s in self.succs[i]:
                t = max(t, tails[s])
            tails[i] = t + self.ell_hat[i]
        self.tail_hat = tails
        # work-per-core bound numerators
        self.m_tc0 = sum(min(self.ell[i], self.ell_hat[i] * (self.cap_tc or 1))
                         for i in range(n) if self.uses[i] != "vc") if self.cap_tc else 0
        self.m_vc0 = sum(min(self.ell[i], self.ell_hat[i] * (self.cap_vc or 1))
                         for i in range(n) if self.uses[i] != "tc") if self.cap_vc else 0
        # mutable search state
        self.mask = 0
        self.release = [0] * n
        self.av_tc = [0] * (self.cap_tc or 0)
        self.av_vc = [0] * (self.cap_vc or 0)
        self.barrier = 0
        self.max_f = 0
        self.m_tc = self.m_tc0
        self.m_vc = self.m_vc0
        self.path: list[tuple[int, str, int, int]] = []   # (op, mode, core, start)
        self.best_t: int | None = None
        self.best_path: list[tuple[int, str, int, int]] | None = None
        self.nodes = 0
        self.memo: dict[int, list[tuple]] = {}
        self.memo_size = 0
        self.found = False

    # -- bounds -------------------------------------------------------------

    def root_lower_bound(self) -> int:
        lb = max(self.tail_hat) if self.n else 0
        if self.cap_tc:
            lb = max(lb, ceil_div(self.m_tc0, self.cap_tc) if self.m_tc0 else 0)
        if self.cap_vc:
            lb = max(lb, ceil_div(self.m_vc0, self.cap_vc) if self.m_vc0 else 0)
        return lb

    def _lower_bound(self) -> int:
        lb = self.max_f
        barrier = self.barrier
        for o in range(self.n):
            if not (self.mask >> o & 1):
                r = self.release[o]
                if barrier > r:
                    r = barrier
                v = r + self.tail_hat[o]
                if v > lb:
                    lb = v
        if self.cap_tc and self.m_tc:
            v = ceil_div(self.m_tc, self.cap_tc)
            if v > lb:
                lb = v
        if self.cap_vc and self.m_vc:
            v = ceil_div(self.m_vc, self.cap_vc)
            if v > lb:
                lb = v
        return lb

    # -- dominance memo -----------------------------------------------------

    def _project(self) -> tuple:
        if self.fused_present and self.cap_tc and self.cap_vc:
            pair_state = tuple(sorted(zip(self.av_tc[: self.pairs], self.av_vc[: self.pairs])))
            utc = tuple(sorted(self.av_tc[self.pairs:]))
            uvc = tuple(sorted(self.av_vc[self.pairs:]))
        else:
            pair_state = ()
            utc = tuple(sorted(self.av_tc))
            uvc = tuple(sorted(self.av_vc))
        rel = tuple(self.release[o] for o in range(self.n) if not (self.mask >> o & 1))
        return (self.max_f, self.barrier, pair_state, utc, uvc, rel)

    @staticmethod
    def _dominates(a: tuple, b: tuple) -> bool:
        # a <= b componentwise; pair states compare on both coordinates
        if a[0] > b[0] or a[1] > b[1]:
            return False
        for pa, pb in zip(a[2], b[2]):
            if pa[0] > pb[0] or pa[1] > pb[1]:
                return False
        for xa, xb in zip(a[3], b[3]):
            if xa > xb:
                return False
        for xa, xb in zip(a[4], b[4]):
            if xa > xb:
                return False
        for xa, xb in zip(a[5], b[5]):
            if xa > xb:
                return False
        return True

    def _memo_check(self) -> bool:
        """True if a previously explored state dominates the current one."""
        state = self._project()
        kept = self.memo.get(self.mask)
        if kept is None:
            if self.memo_size < self.MEMO_TOTAL:
                self.memo[self.mask] = [state]
                self.memo_size += 1
            return False
        for s in kept:
            if self._dominates(s, state):
                return True
        if len(kept) < self.MEMO_PER_MASK and self.memo_size < self.MEMO_TOTAL:
            kept.append(state)
            self.memo_size += 1
        return False

    # -- choice enumeration ---------------------------------------------------

    def _single_options(self, o: int) -> list[tuple[int, int]]:
        """Distinct (core, ready_at) choices for single-core execution.

        Cores in identical states are interchangeable, so one representative
        (the lowest index) per state is enumerated.  With fused ops around,
        a paired core's state includes its partner, and paired cores are
        never collapsed with unpaired ones.
        """
        u = self.uses[o]
        opts: list[tuple[int, int]] = []
        if u == "both":
            if self.cap_tc and self.cap_vc:
                seen = set()
                for c in range(self.pairs):
                    key = (self.av_tc[c], self.av_vc[c])
                    if key not in seen:
                        seen.add(key)
                        opts.append((c, max(key)))
            elif self.cap_tc:
                seen = set()
                for c in range(self.pairs):
                    if self.av_tc[c] not in seen:
                        seen.add(self.av_tc[c])
                        opts.append((c, self.av_tc[c]))
            elif self.cap_vc:
                seen = set()
                for c in range(self.pairs):
                    if self.av_vc[c] not in seen:
                        seen.add(self.av_vc[c])
                        opts.append((c, self.av_vc[c]))
            else:
                opts.append((-1, 0))
        else:
            cap = self.cap_tc if u == "tc" else self.cap_vc
            av = self.av_tc if u == "tc" else self.av_vc
            other = self.av_vc if u == "tc" else self.av_tc
            other_on = (self.cap_vc if u == "tc" else self.cap_tc) is not None
            if cap is None:
                opts.append((-1, 0))
            else:
                seen = set()
                for c in range(cap):
                    if self.fused_present and c < self.pairs:
                        key = (av[c], other[c] if other_on else 0, True)
                    else:
                        key = (av[c], 0, False)
                    if key not in seen:
                        seen.add(key)
                        opts.append((c, av[c]))
        opts.sort(key=lambda co: (co[1], co[0]))
        return opts

    # -- state transitions ----------------------------------------------------

    def _apply(self, o: int, mode: str, core: int, start: int) -> tuple:
        dur = self.ell_hat[o] if mode == MODE_INTRA else self.ell[o]
        f = start + dur
        undo_rel = []
        for v in self.succs[o]:
            if self.release[v] < f:
                undo_rel.append((v, self.release[v]))
                self.release[v] = f
        undo = (o, undo_rel, self.barrier, self.max_f, self.m_tc, self.m_vc, core, mode)
        self.mask |= 1 << o
        if mode == MODE_INTRA:
            self.barrier = max(self.barrier, f)
        else:
            u = self.uses[o]
            if core >= 0:
                if u in ("tc", "both") and self.cap_tc:
                    self.av_tc[core] = f
                if u in ("vc", "both") and self.cap_vc:
                    self.av_vc[core] = f
        self.max_f = max(self.max_f, f)
        if self.uses[o] != "vc" and self.cap_tc:
            self.m_tc -= min(self.ell[o], self.ell_hat[o] * self.cap_tc)
        if self.uses[o] != "tc" and self.cap_vc:
            self.m_vc -= min(self.ell[o], self.ell_hat[o] * self.cap_vc)
        self.path.append((o, mode, core, start))
        return undo + (self._saved_av(o, mode, core),)

    def _saved_av(self, o: int, mode: str, core: int) -> tuple:
        if mode == MODE_INTRA or core < 0:
            return ()
        u = self.uses[o]
        saved = []
        if u in ("tc", "both") and self.cap_tc:
            saved.append(("tc", core))
        if u in ("vc", "both") and self.cap_vc:
            saved.append(("vc", core))
        return tuple(saved)

    def _undo(self, undo: tuple, prev_av: dict) -> None:
        o, undo_rel, barrier, max_f, m_tc, m_vc, core, mode = undo[:8]
        self.mask &= ~(1 << o)
        for v, old in undo_rel:
            self.release[v] = old
        self.barrier = barrier
        self.max_f = max_f
        self.m_tc = m_tc
        self.m_vc = m_vc
        for pool, c in undo[8]:
            if pool == "tc":
                self.av_tc[c] = prev_av[("tc", c)]
            else:
                self.av_vc[c] = prev_av[("vc", c)]
        self.path.pop()

    # -- search ---------------------------------------------------------------

    def _tick(self) -> None:
        self.nodes += 1
        if self.deadline is not None and self.nodes % self.CHECK_EVERY == 0:
            if time.monotonic() > self.deadline:
                raise _Timeout

    def _prune_at(self) -> int:
        if self.bound is not None:
            return self.bound + 1
        return self.best_t if self.best_t is not None else (1 << 62)

    def run(self) -> None:
        self._dfs()

    def _dfs(self) -> bool:
        """Returns True when a feasibility/reconstruction search can stop."""
        self._tick()
        full = (1 << self.n) - 1
        if self.mask == full:
            t = self.max_f
            if self.bound is not None:
                if t <= self.bound:
                    self.found = True
                    self.best_t = t
                    self.best_path = list(self.path)
                    return True
                return False
            if self.best_t is None or t < self.best_t:
                self.best_t = t
                self.best_path = list(self.path)
            return False
        if self._lower_bound() >= self._prune_at():
            return False
        if self._memo_check():
            return False
        for o in range(self.n):
            if self.mask >> o & 1:
                continue
            ok = True
            for p in self.preds[o]:
                if not (self.mask >> p & 1):
                    ok = False
                    break
            if not ok:
                continue
            base = max(self.release[o], self.barrier)
            fixed = self.fixed.get(o)
            if fixed != MODE_INTRA:
                for core, ready in self._single_options(o):
                    start = max(base, ready)
                    prev_av = {("tc", core): self.av_tc[core] if 0 <= core < len(self.av_tc) else 0,
                               ("vc", core): self.av_vc[core] if 0 <= core < len(self.av_vc) else 0}
                    undo = self._apply(o, MODE_SINGLE, core, start)
                    stop = self._dfs()
                    self._undo(undo, prev_av)
                    if stop:
                        return True
            if fixed != MODE_SINGLE:
                # equal latencies make intra-op pointless: any such schedule
                # maps to a single-core one at the same times
                if self.ell_hat[o] < self.ell[o] or fixed == MODE_INTRA:
                    start = max(base, self.max_f)
                    undo = self._apply(o, MODE_INTRA, -1, start)
                    stop = self._dfs()
                    self._undo(undo, {})
                    if stop:
                        return True
        return False


def _assign_free_cores(model: IlpModel, path: list[tuple[int, str, int, int]]) -> list[tuple[int, str, int, int]]:
    """Fill in core ids the search left unassigned (uncapped pools).

    Deterministic left-edge sweep; may use indices beyond the config's core
    counts, which is exactly what the lazy-z concurrency check looks for.
    """
    ell = model.ell
    uses = model.uses
    pairs_cap = model.pairs
    done: dict[int, tuple[int, str, int, int]] = {p[0]: p for p in path}
    # busy intervals already pinned to cores
    busy_tc: dict[int, list[tuple[int, int]]] = {}
    busy_vc: dict[int, list[tuple[int, int]]] = {}
    for o, mode, core, start in path:
        if mode != MODE_SINGLE or core < 0:
            continue
        iv = (start, start + ell[o])
        if uses[o] in ("tc", "both"):
            busy_tc.setdefault(core, []).append(iv)
        if uses[o] in ("vc", "both"):
            busy_vc.setdefault(core, []).append(iv)

    def fits(busy: dict[int, list[tuple[int, int]]], c: int, iv: tuple[int, int]) -> bool:
        for s, e in busy.get(c, []):
            if iv[0] < e and s < iv[1]:
                return False
        return True

    out = []
    for o, mode, core, start in sorted(path, key=lambda p: (p[3], p[0])):
        if mode != MODE_SINGLE or core >= 0:
            out.append((o, mode, core, start))
            continue
        iv = (start, start + ell[o])
        u = uses[o]
        c = 0
        if u == "both":
            while not (fits(busy_tc, c, iv) and fits(busy_vc, c, iv)):
                c += 1
            busy_tc.setdefault(c, []).append(iv)
            busy_vc.setdefault(c, []).append(iv)
        elif u == "tc":
            while not fits(busy_tc, c, iv):
                c += 1
            busy_tc.setdefault(c, []).append(iv)
        else:
            while not fits(busy_vc, c, iv):
                c += 1
            busy_vc.setdefault(c, []).append(iv)
        out.append((o, mode, c, start))
    order = {p[0]: i for i, p in enumerate(path)}
    out.sort(key=lambda p: order[p[0]])
    return out


def _to_schedule(model: IlpModel, path: list[tuple[int, str, int, int]], *,
                 optimal: bool, gap: float, invocations: int, nodes: int) -> LayerSchedule:
    path = _assign_free_cores(model, path)
    entries = []
    for o, mode, core, start in sorted(path, key=lambda p: p[0]):
        op = model.graph.nodes[o]
        dur = model.ell_hat[o] if mode == MODE_INTRA else model.ell[o]
        entries.append(OpSchedule(op_id=op.id, start=start, duration=dur, mode=mode,
                                  core=None if mode == MODE_INTRA else core))
    makespan = max((e.start + e.duration for e in entries), default=0)
    return LayerSchedule(entries=tuple(entries), makespan=makespan, optimal=optimal,
                         gap=gap, invocations=invocations, nodes=nodes)


def _sequential_fallback(model: IlpModel) -> list[tuple[int, str, int, int]]:
    """All ops intra-op in topological order: always feasible."""
    idx = model.graph.index
    t = 0
    path = []
    for oid in model.graph.toposort():
        o = idx[oid]
        path.append((o, MODE_INTRA, -1, t))
        t += model.ell_hat[o]
    return path


def solve(model: IlpModel, time_limit: float | None = 60.0) -> LayerSchedule:
    """Minimize makespan exactly; on timeout, return the incumbent and gap.

    After proving the optimum, the returned schedule is canonicalized: the
    lexicographically smallest mode vector over op order, then a
    deterministic earliest-start reconstruction.
    """
    if model.n == 0:
        return LayerSchedule(entries=(), makespan=0)
    deadline = time.monotonic() + time_limit if time_limit is not None else None
    s = _Search(model, deadline=deadline)
    root_lb = s.root_lower_bound()
    fallback = _sequential_fallback(model)
    seq_t = sum(model.ell_hat)
    s.best_t = seq_t
    s.best_path = fallback
    nodes = 0
    try:
        s.run()
        nodes += s.nodes
    except _Timeout:
        assert s.best_t is not None and s.best_path is not None
        gap = 0.0 if s.best_t == 0 else max(0.0, (s.best_t - root_lb) / s.best_t)
        return _to_schedule(model, s.best_path, optimal=(gap == 0.0), gap=gap,
                            invocations=1, nodes=s.nodes)
    t_star = s.best_t
    best_path = s.best_path
    assert t_star is not None and best_path is not None
    # canonicalization; a timeout mid-way falls back to the proven schedule
    try:
        fixed: dict[int, str] = {}
        for i in range(model.n):
            if model.ell_hat[i] >= model.ell[i]:
                fixed[i] = MODE_SINGLE
                continue
            probe = _Search(model, fixed_modes={**fixed, i: MODE_SINGLE},
                            deadline=deadline, bound=t_star)
            probe.run()
            nodes += probe.nodes
            fixed[i] = MODE_SINGLE if probe.found else MODE_INTRA
        rec = _Search(model, fixed_modes=fixed, deadline=deadline, bound=t_star,
                      reconstruct=True)
        rec.run()
        nodes += rec.nodes
        if rec.found and rec.best_path is not None:
            best_path = rec.best_path
    except _Timeout:
        pass
    return _to_schedule(model, best_path, optimal=True, gap=0.0, invocations=1, nodes=nodes)


def solve_lazy(g: OperatorGraph, est: Mapping[str, OperatorEstimate],
               cfg: AcceleratorConfig, time_limit: float | None = 60.0) -> LayerSchedule:
    """Solve without core-capacity families, adding them only when the
    relaxed schedule over-uses a pool.  At most three solver invocations
    sharing one time budget; acceptance is by full re-validation, so the
    result matches a direct solve with both families."""
    deadline = None if time_limit is None else time.monotonic() + time_limit
    with_z = ZFamilies.NONE
    for attempt in range(1, 4):
        model = build_model(g, est, cfg, with_z)
        budget = None if deadline is None else \
            max(0.05, deadline - time.monotonic())
        sched = solve(model, budget)
        bad = validate_schedule(g, est, cfg, sched)
        if not bad:
            return replace(sched, invocations=attempt)
        if with_z is ZFamilies.BOTH:
            raise AssertionError(f"capacity-constrained schedule invalid: {bad}")
        over_tc, over_vc = _pool_overuse(g, cfg, sched)
        if with_z is ZFamilies.NONE:
            if over_tc and over_vc:
                with_z = ZFamilies.BOTH
            elif over_tc:
                with_z = ZFamilies.TENSOR_ONLY
            elif over_vc:
                with_z = ZFamilies.VECTOR_ONLY
            else:
                with_z = ZFamilies.BOTH   # count check passed, validation failed
        else:
            with_z = ZFamilies.BOTH
    raise AssertionError("unreachable")


def _pool_overuse(g: OperatorGraph, cfg: AcceleratorConfig, sched: LayerSchedule) -> tuple[bool, bool]:
    """Does concurrency of single-core ops exceed a pool's core count?"""
    events_tc: list[tuple[int, int]] = []
    events_vc: list[tuple[int, int]] = []
    by_id = sched.by_id()
    for op in g.nodes:
        e = by_id[op.id]
        if e.mode != MODE_SINGLE:
            continue
        u = _uses(op.kind)
        iv = [(e.start, 1), (e.start + e.duration, -1)]
        if u in ("tc", "both"):
            events_tc.extend(iv)
        if u in ("vc", "both"):
            events_vc.extend(iv)

    def over(events: list[tuple[int, int]], cap: int) -> bool:
        cur = 0
        for _, delta in sorted(events):
            cur += delta
            if cur > cap:
                return True
        return False

    return over(events_tc, cfg.num_tc), over(events_vc, cfg.num_vc)


# ---------------------------------------------------------------------------
# Layer latency cache


def _structural_key(g: OperatorGraph, cfg: AcceleratorConfig, params: CostModelParams) -> tuple:
    idx = g.index
    nodes = tuple((op.kind.value, op.flops, op.bytes_in, op.bytes_out, op.elementwise_len)
                  for op in g.nodes)
    edges = tuple(sorted((idx[u], idx[v]) for u, v in g.edges))
    return (nodes, edges, cfg.num_tc, cfg.num_vc, cfg.pe_x, cfg.pe_y, cfg.pe_vc,
            cfg.glb_bw_words, params.word_size, params.macs_per_pe_per_tick,
            params.hbm_bw_bytes_per_tick)


class LatencyCache:
    """Memoizes layer makespans by graph structure and the config fields the
    cost model reads.  Op id strings are ignored, so structurally identical
    layers (the common case in deep stacks) solve once per pass."""

    def __init__(self) -> None:
        self._data: dict[tuple, tuple[int, bool]] = {}
        self.hits = 0
        self.misses = 0

    def makespan(self, g: OperatorGraph, cfg: AcceleratorConfig,
                 params: CostModelParams, time_limit: float | None = 60.0) -> tuple[int, bool]:
        key = _structural_key(g, cfg, params)
        got = self._data.get(key)
        if got is not None:
            self.hits += 1
            return got
        self.misses += 1
        est = estimate_graph(g, cfg, params)
        sched = solve_lazy(g, est, cfg, time_limit)
        got = (sched.makespan, sched.optimal)
        self._data[key] = got
        return got


def layer_latencies(layer: Layer, cfg: AcceleratorConfig,
                    params: CostModelParams | None = None,
                    cache: LatencyCache | None = None,
                    time_limit: float | None = 60.0) -> tuple[int, int]:
    """(forward, backward) makespan of a layer on a config, via the cache."""
    p = params or CostModelParams()
    c = cache if cache is not None else _default_cache
    fw, _ = c.makespan(layer.fw, cfg, p, time_limit)
    bw, _ = c.makespan(layer.bw, cfg, p, time_limit)
    return fw, bw


_default_cache = LatencyCache()
