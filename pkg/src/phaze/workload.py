"""Workload data model.

A workload is a linear graph of layers, each layer carrying forward and
backward operator DAGs plus byte sizes, declared per tensor-model-parallel
width ``t`` and microbatch size ``b``.  The on-disk format is JSON; see
``parse_workload`` for the accepted shape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable


class WorkloadError(ValueError):
    """Raised for malformed workload files or graphs."""


class NotLinearError(WorkloadError):
    """Raised when a layer graph is not a single chain."""


class OpKind(str, Enum):
    TENSOR = "tensor"
    VECTOR = "vector"
    FUSED = "fused"


@dataclass(frozen=True)
class Operator:
    """One node of an operator graph.

    ``flops`` drives tensor-core time, ``elementwise_len`` vector-core time;
    fused operators use both.  Byte counts cover operand movement.
    """

    id: str
    kind: OpKind
    flops: int = 0
    bytes_in: int = 0
    bytes_out: int = 0
    elementwise_len: int = 0

    def __post_init__(self) -> None:
        if not self.id:
            raise WorkloadError("operator id must be non-empty")
        for name in ("flops", "bytes_in", "bytes_out", "elementwise_len"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise WorkloadError(f"operator {self.id!r}: {name} must be a non-negative int")


@dataclass(frozen=True)
class OperatorGraph:
    """Immutable operator DAG with string node ids."""

    nodes: tuple[Operator, ...]
    edges: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        index = {}
        for pos, op in enumerate(self.nodes):
            if op.id in index:
                raise WorkloadError(f"duplicate operator id {op.id!r}")
            index[op.id] = pos
        preds: dict[str, list[str]] = {op.id: [] for op in self.nodes}
        succs: dict[str, list[str]] = {op.id: [] for op in self.nodes}
        for u, v in self.edges:
            if u not in index or v not in index:
                raise WorkloadError(f"edge ({u!r}, {v!r}) references unknown operator")
            if u == v:
                raise WorkloadError(f"self-loop on operator {u!r}")
            succs[u].append(v)
            preds[v].append(u)
        order = _toposort(list(index), preds, succs)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_preds", preds)
        object.__setattr__(self, "_succs", succs)
        object.__setattr__(self, "_topo", tuple(order))

    @property
    def index(self) -> dict[str, int]:
        return self._index  # type: ignore[attr-defined]

    def predecessors(self, op_id: str) -> list[str]:
        return list(self._preds[op_id])  # type: ignore[attr-defined]

    def successors(self, op_id: str) -> list[str]:
        return list(self._succs[op_id])  # type: ignore[attr-defined]

    def toposort(self) -> tuple[str, ...]:
        return self._topo  # type: ignore[attr-defined]

    def node(self, op_id: str) -> Operator:
        return self.nodes[self.index[op_id]]


def _toposort(ids: list[str], preds: dict[str, list[str]], succs: dict[str, list[str]]) -> list[str]:
    indeg = {i: len(preds[i]) for i in ids}
    ready = [i for i in ids if indeg[i] == 0]
    out: list[str] = []
    while ready:
        n = ready.pop(0)
        out.append(n)
        for m in succs[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                ready.append(m)
    if len(out) != len(ids):
        raise WorkloadError("operator graph contains a cycle")
    return out


@dataclass(frozen=True)
class Layer:
    """A layer instance at one (t, b) point."""

    id: str
    fw: OperatorGraph
    bw: OperatorGraph
    weights_size: int
    optimizer_size: int
    activations_size: int
    input_edge_size: int
    sliceable: bool = True

    def __post_init__(self) -> None:
        for name in ("weights_size", "optimizer_size", "activations_size", "input_edge_size"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise WorkloadError(f"layer {self.id!r}: {name} must be a non-negative int")


@dataclass(frozen=True)
class LayerGraph:
    """Layers plus the edges between them, in declaration order."""

    layers: tuple[Layer, ...]
    edges: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        ids = {lyr.id for lyr in self.layers}
        if len(ids) != len(self.layers):
            raise WorkloadError("duplicate layer id")
        for u, v in self.edges:
            if u not in ids or v not in ids:
                raise WorkloadError(f"layer edge ({u!r}, {v!r}) references unknown layer")

    def layer(self, layer_id: str) -> Layer:
        for lyr in self.layers:
            if lyr.id == layer_id:
                return lyr
        raise KeyError(layer_id)


@dataclass(frozen=True)
class TrainingParams:
    """Global training setup shared by all layer variants."""

    minibatch_size: int                       # microbatches per minibatch (B)
    microbatch_sizes: tuple[int, ...]         # samples per microbatch candidates (b)
    num_accelerators: int                     # K
    bandwidth_bytes_per_tick: int             # inter-accelerator link bandwidth
    hbm_candidates_bytes: tuple[int, ...]
    tmp_widths: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.minibatch_size < 1 or self.num_accelerators < 1:
            raise WorkloadError("minibatch size and accelerator count must be >= 1")
        if self.bandwidth_bytes_per_tick < 1:
            raise WorkloadError("bandwidth must be >= 1 byte per tick")
        for name in ("microbatch_sizes", "hbm_candidates_bytes", "tmp_widths"):
            vals = getattr(self, name)
            if not vals or any(not isinstance(v, int) or v < 1 for v in vals):
                raise WorkloadError(f"{name} must be a non-empty list of positive ints")


@dataclass(frozen=True)
class Workload:
    """Parsed workload: one LayerGraph per declared (t, b) point."""

    name: str
    training: TrainingParams
    variants: dict[tuple[int, int], LayerGraph] = field(compare=True)

    def variant(self, t: int, b: int) -> LayerGraph:
        try:
            return self.variants[(t, b)]
        except KeyError:
            raise WorkloadError(f"no variant for t={t}, b={b}") from None

    @property
    def layer_ids(self) -> tuple[str, ...]:
        first = next(iter(self.variants.values()))
        return tuple(lyr.id for lyr in first.layers)


def derive_backward_graph(fw: OperatorGraph, multiplier: int | float | Fraction = 2) -> OperatorGraph:
    """Synthesize a backward graph: reversed edges, work scaled by ``multiplier``.

    Kinds and byte counts are preserved.  Scaling is exact rational with a
    ceiling, so nonzero work never rounds to zero.
    """
    m = Fraction(multiplier)
    if m <= 0:
        raise WorkloadError("backward multiplier must be positive")

    def scale(v: int) -> int:
        return int(-((-v * m.numerator) // m.denominator))

    nodes = tuple(
        Operator(
            id=op.id,
            kind=op.kind,
            flops=scale(op.flops),
            bytes_in=op.bytes_in,
            bytes_out=op.bytes_out,
            elementwise_len=scale(op.elementwise_len),
        )
        for op in fw.nodes
    )
    edges = tuple((v, u) for (u, v) in fw.edges)
    return OperatorGraph(nodes=nodes, edges=edges)


def validate_linear(lg: LayerGraph) -> tuple[Layer, ...]:
    """Return the layers of a chain-shaped graph in chain order.

    Raises ``NotLinearError`` for branching, disconnected, or cyclic layer
    graphs.  A single layer with no edges is a valid chain.
    """
    n = len(lg.layers)
    if n == 0:
        raise NotLinearError("layer graph is empty")
    succ: dict[str, str] = {}
    pred: dict[str, str] = {}
    for u, v in lg.edges:
        if u in succ or v in pred:
            raise NotLinearError("layer graph branches; placement needs a chain")
        succ[u] = v
        pred[v] = u
    heads = [lyr.id for lyr in lg.layers if lyr.id not in pred]
    if len(heads) != 1:
        raise NotLinearError("layer graph is not a single chain")
    order = [heads[0]]
    while order[-1] in succ:
        order.append(succ[order[-1]])
    if len(order) != n:
        raise NotLinearError("layer graph is not a single chain")
    by_id = {lyr.id: lyr for lyr in lg.layers}
    return tuple(by_id[i] for i in order)


# ---------------------------------------------------------------------------
# File format


def _parse_op(obj: dict[str, Any]) -> Operator:
    try:
        kind = OpKind(obj["kind"])
    except ValueError:
        raise WorkloadError(f"unknown operator kind {obj.get('kind')!r}") from None
    except KeyError:
        raise WorkloadError("operator missing 'kind'") from None
    return Operator(
        id=str(obj["id"]),
        kind=kind,
        flops=int(obj.get("flops", 0)),
        bytes_in=int(obj.get("bytes_in", 0)),
        bytes_out=int(obj.get("bytes_out", 0)),
        elementwise_len=int(obj.get("elementwise_len", 0)),
    )


def _parse_op_graph(obj: dict[str, Any]) -> OperatorGraph:
    nodes = tuple(_parse_op(n) for n in obj.get("nodes", []))
    edges = tuple((str(u), str(v)) for u, v in obj.get("edges", []))
    return OperatorGraph(nodes=nodes, edges=edges)


def _op_graph_to_json(g: OperatorGraph) -> dict[str, Any]:
    return {
        "nodes": [
            {
                "id": op.id,
                "kind": op.kind.value,
                "flops": op.flops,
                "bytes_in": op.bytes_in,
                "bytes_out": op.bytes_out,
                "elementwise_len": op.elementwise_len,
            }
            for op in g.nodes
        ],
        "edges": [[u, v] for u, v in g.edges],
    }


def parse_workload(source: str | Path | dict[str, Any], name: str | None = None) -> Workload:
    """Parse a workload from a JSON file path or an already-loaded dict.

    Top-level keys: ``training``, ``layers``, ``layer_edges``.  Each layer
    declares ``variants`` as a list of ``{t, b, sizes..., fw_ops, bw_ops}``
    records.  A missing ``bw_ops`` is synthesized by edge reversal with the
    layer's ``bw_multiplier`` (default 2).  Sliceable layers must declare a
    variant for every (t, b) in the training grid; non-sliceable layers fall
    back to their t=1 graph, replicated unchanged.
    """
    if isinstance(source, (str, Path)):
        path = Path(source)
        raw = json.loads(path.read_text())
        name = name or path.stem
    else:
        raw = source
        name = name or str(raw.get("name", "workload"))
    if not isinstance(raw, dict):
        raise WorkloadError("workload file must contain a JSON object")
    for key in ("training", "layers"):
        if key not in raw:
            raise WorkloadError(f"workload file missing top-level {key!r}")

    tr = raw["training"]
    try:
        training = TrainingParams(
            minibatch_size=int(tr["B"]),
            microbatch_sizes=tuple(int(x) for x in tr["microbatch_sizes"]),
            num_accelerators=int(tr["K"]),
            bandwidth_bytes_per_tick=int(tr["bandwidth_bytes_per_tick"]),
            hbm_candidates_bytes=tuple(int(x) for x in tr["hbm_candidates_bytes"]),
            tmp_widths=tuple(int(x) for x in tr["tmp_widths"]),
        )
    except KeyError as e:
        raise WorkloadError(f"training section missing key {e.args[0]!r}") from None

    layer_edges = tuple((str(u), str(v)) for u, v in raw.get("layer_edges", []))

    # Variant records keyed (layer, t, b), with sizes and graphs resolved.
    parsed: dict[str, dict[tuple[int, int], Layer]] = {}
    order: list[str] = []
    sliceable_by_id: dict[str, bool] = {}
    for lobj in raw["layers"]:
        lid = str(lobj["id"])
        order.append(lid)
        sliceable = bool(lobj.get("sliceable", True))
        sliceable_by_id[lid] = sliceable
        mult = lobj.get("bw_multiplier", 2)
        entries: dict[tuple[int, int], Layer] = {}
        for var in lobj.get("variants", []):
            t, b = int(var["t"]), int(var["b"])
            fw = _parse_op_graph(var["fw_ops"])
            bw_raw = var.get("bw_ops")
            bw = _parse_op_graph(bw_raw) if bw_raw else derive_backward_graph(fw, mult)
            entries[(t, b)] = Layer(
                id=lid,
                fw=fw,
                bw=bw,
                weights_size=int(var["weights_size"]),
                optimizer_size=int(var["optimizer_size"]),
                activations_size=int(var["activations_size"]),
                input_edge_size=int(var["input_edge_size"]),
                sliceable=sliceable,
            )
        parsed[lid] = entries

    variants: dict[tuple[int, int], LayerGraph] = {}
    for t in training.tmp_widths:
        for b in training.microbatch_sizes:
            layers = []
            for lid in order:
                entries = parsed[lid]
                if (t, b) in entries:
                    layers.append(entries[(t, b)])
                elif not sliceable_by_id[lid] and (1, b) in entries:
                    layers.append(entries[(1, b)])
                else:
                    raise WorkloadError(
                        f"layer {lid!r}: missing slice variant for t={t}, b={b}"
                    )
            variants[(t, b)] = LayerGraph(layers=tuple(layers), edges=layer_edges)
    return Workload(name=name, training=training, variants=variants)


def serialize_workload(w: Workload) -> dict[str, Any]:
    """Inverse of ``parse_workload`` over declared fields.

    Derived backward graphs are written out explicitly, so a round trip
    reproduces the same parsed object.
    """
    tr = w.training
    first_lg = next(iter(w.variants.values()))
    layers_json = []
    for lid in w.layer_ids:
        variants_json = []
        sliceable = True
        for (t, b), lg in sorted(w.variants.items()):
            lyr = lg.layer(lid)
            sliceable = lyr.sliceable
            variants_json.append(
                {
                    "t": t,
                    "b": b,
                    "weights_size": lyr.weights_size,
                    "optimizer_size": lyr.optimizer_size,
                    "activations_size": lyr.activations_size,
                    "input_edge_size": lyr.input_edge_size,
                    "fw_ops": _op_graph_to_json(lyr.fw),
                    "bw_ops": _op_graph_to_json(lyr.bw),
                }
            )
        layers_json.append({"id": lid, "sliceable": sliceable, "variants": variants_json})
    return {
        "name": w.name,
        "training": {
            "B": tr.minibatch_size,
            "microbatch_sizes": list(tr.microbatch_sizes),
            "K": tr.num_accelerators,
            "bandwidth_bytes_per_tick": tr.bandwidth_bytes_per_tick,
            "hbm_candidates_bytes": list(tr.hbm_candidates_bytes),
            "tmp_widths": list(tr.tmp_widths),
        },
        "layer_edges": [[u, v] for u, v in first_lg.edges],
        "layers": layers_json,
    }


def write_workload(w: Workload, path: str | Path) -> None:
    Path(path).write_text(json.dumps(serialize_workload(w), indent=2, sort_keys=True) + "\n")
