"""Deterministic synthetic workloads shaped like decoder-only LLMs.

No randomness: every quantity is an integer function of the requested shape,
so generated workloads are stable across runs and suitable for golden tests.
The layer chain is embedding, N-2 identical transformer blocks, head; the
embedding and head do not slice across tensor-model widths, blocks do.
"""

from __future__ import annotations

from .workload import (Layer, LayerGraph, Operator, OperatorGraph, OpKind,
                       TrainingParams, Workload, derive_backward_graph)

WORD = 2  # bytes per activation/weight element


def _pos(x: int) -> int:
    return max(1, x)


def synth_block_graph(t: int, b: int, *, hidden: int = 1024, seq: int = 256,
                      branches: int = 1, tag: str = "blk") -> OperatorGraph:
    """Forward graph of one transformer block sliced across t accelerators.

    Attention runs ``branches`` parallel head-group chains between the qkv
    projection and the output projection; widening it scales the op count
    without changing the overall shape.  A cross-slice reduction op appears
    when t > 1.  Node count: 9 + 3*branches + (1 if t > 1 else 0).
    """
    if hidden % (t * branches) != 0:
        raise ValueError("hidden must divide evenly across t and branches")
    tok = b * seq
    h_t = hidden // t
    h_br = hidden // (t * branches)
    nodes: list[Operator] = []
    edges: list[tuple[str, str]] = []

    def add(name: str, kind: OpKind, flops: int = 0, bi: int = 0, bo: int = 0,
            el: int = 0, after: list[str] | None = None) -> str:
        oid = f"{tag}.{name}"
        nodes.append(Operator(id=oid, kind=kind, flops=flops, bytes_in=_pos(bi),
                              bytes_out=_pos(bo), elementwise_len=el))
        for a in after or []:
            edges.append((f"{tag}.{a}", oid))
        return oid

    add("ln1", OpKind.VECTOR, bi=tok * hidden * WORD // t, bo=tok * hidden * WORD // t,
        el=_pos(tok * h_t))
    add("qkv", OpKind.TENSOR, flops=2 * tok * hidden * 3 * h_t,
        bi=tok * hidden * WORD, bo=tok * 3 * h_t * WORD, after=["ln1"])
    for br in range(branches):
        add(f"score{br}", OpKind.TENSOR, flops=2 * tok * seq * h_br,
            bi=2 * tok * h_br * WORD, bo=_pos(b * seq * seq * WORD // branches),
            after=["qkv"])
        add(f"smax{br}", OpKind.VECTOR, bi=_pos(b * seq * seq * WORD // branches),
            bo=_pos(b * seq * seq * WORD // branches),
            el=_pos(b * seq * seq // (t * branches)), after=[f"score{br}"])
        add(f"ctx{br}", OpKind.TENSOR, flops=2 * tok * seq * h_br,
            bi=_pos(b * seq * seq * WORD // branches) + tok * h_br * WORD,
            bo=tok * h_br * WORD, after=[f"smax{br}"])
    add("proj", OpKind.TENSOR, flops=2 * tok * h_t * hidden,
        bi=tok * h_t * WORD, bo=tok * hidden * WORD,
        after=[f"ctx{br}" for br in range(branches)])
    add("add1", OpKind.FUSED, flops=tok * h_t, bi=2 * tok * hidden * WORD // t,
        bo=tok * hidden * WORD // t, el=_pos(tok * h_t), after=["proj"])
    add("ln2", OpKind.VECTOR, bi=tok * hidden * WORD // t, bo=tok * hidden * WORD // t,
        el=_pos(tok * h_t), after=["add1"])
    add("up", OpKind.TENSOR, flops=2 * tok * hidden * 4 * h_t,
        bi=tok * hidden * WORD, bo=tok * 4 * h_t * WORD, after=["ln2"])
    add("gelu", OpKind.FUSED, flops=tok * 4 * h_t, bi=tok * 4 * h_t * WORD,
        bo=tok * 4 * h_t * WORD, el=_pos(tok * 4 * h_t), after=["up"])
    add("down", OpKind.TENSOR, flops=2 * tok * 4 * h_t * hidden,
        bi=tok * 4 * h_t * WORD, bo=tok * hidden * WORD, after=["gelu"])
    last = "down"
    if t > 1:
        add("reduce", OpKind.VECTOR, bi=tok * hidden * WORD, bo=tok * hidden * WORD,
            el=tok * hidden, after=["down"])
        last = "reduce"
    add("add2", OpKind.FUSED, flops=tok * h_t, bi=2 * tok * hidden * WORD // t,
        bo=tok * hidden * WORD // t, el=_pos(tok * h_t), after=[last])
    return OperatorGraph(nodes=tuple(nodes), edges=tuple(edges))


def _embed_graph(b: int, hidden: int, seq: int, tag: str) -> OperatorGraph:
    tok = b * seq
    nodes = (
        Operator(id=f"{tag}.lookup", kind=OpKind.TENSOR, flops=tok * hidden,
                 bytes_in=tok * 4, bytes_out=tok * hidden * WORD, elementwise_len=0),
        Operator(id=f"{tag}.scale", kind=OpKind.VECTOR, flops=0,
                 bytes_in=tok * hidden * WORD, bytes_out=tok * hidden * WORD,
                 elementwise_len=tok * hidden),
    )
    return OperatorGraph(nodes=nodes, edges=((f"{tag}.lookup", f"{tag}.scale"),))


def _head_graph(b: int, hidden: int, seq: int, vocab: int, tag: str) -> OperatorGraph:
    tok = b * seq
    nodes = (
        Operator(id=f"{tag}.logits", kind=OpKind.TENSOR, flops=2 * tok * hidden * vocab,
                 bytes_in=tok * hidden * WORD, bytes_out=tok * vocab * WORD,
                 elementwise_len=0),
        Operator(id=f"{tag}.loss", kind=OpKind.VECTOR, flops=0,
                 bytes_in=tok * vocab * WORD, bytes_out=tok * WORD,
                 elementwise_len=tok * vocab),
    )
    return OperatorGraph(nodes=nodes, edges=((f"{tag}.logits", f"{tag}.loss"),))


def synth_workload(name: str, num_layers: int, *, hidden: int = 1024, seq: int = 256,
                   vocab: int = 8192, branches: int = 1,
                   tmp_widths: tuple[int, ...] = (1, 2, 4),
                   microbatch_sizes: tuple[int, ...] = (1, 2),
                   minibatch_size: int = 16, num_accelerators: int = 16,
                   bandwidth_bytes_per_tick: int = 4096,
                   hbm_candidates_bytes: tuple[int, ...] = (32 << 30, 80 << 30)) -> Workload:
    """A chain of ``num_layers`` layers: embed, blocks, head."""
    if num_layers < 3:
        raise ValueError("need at least embed, one block, and head")
    training = TrainingParams(minibatch_size=minibatch_size,
                              microbatch_sizes=tuple(microbatch_sizes),
                              num_accelerators=num_accelerators,
                              bandwidth_bytes_per_tick=bandwidth_bytes_per_tick,
                              hbm_candidates_bytes=tuple(hbm_candidates_bytes),
                              tmp_widths=tuple(tmp_widths))
    names = ["embed"] + [f"block{i:03d}" for i in range(num_layers - 2)] + ["head"]
    chain_edges = tuple((names[i], names[i + 1]) for i in range(num_layers - 1))
    variants: dict[tuple[int, int], LayerGraph] = {}
    for t in tmp_widths:
        for b in microbatch_sizes:
            tok = b * seq
            edge_bytes = tok * hidden * WORD
            layers = []
            for pos, lname in enumerate(names):
                if lname == "embed":
                    fw = _embed_graph(b, hidden, seq, lname)
                    w = vocab * hidden * WORD
                    act = tok * hidden * WORD
                    sliceable = False
                elif lname == "head":
                    fw = _head_graph(b, hidden, seq, vocab, lname)
                    w = vocab * hidden * WORD
                    act = tok * vocab * WORD
                    sliceable = False
                else:
                    fw = synth_block_graph(t, b, hidden=hidden, seq=seq,
                                           branches=branches, tag=lname)
                    w = 12 * hidden * hidden * WORD // t
                    act = 10 * tok * hidden * WORD // t
                    sliceable = True
                layers.append(Layer(
                    id=lname, fw=fw, bw=derive_backward_graph(fw),
                    weights_size=w, optimizer_size=2 * w, activations_size=act,
                    input_edge_size=0 if pos == 0 else edge_bytes,
                    sliceable=sliceable))
            variants[(t, b)] = LayerGraph(layers=tuple(layers), edges=chain_edges)
    return Workload(name=name, training=training, variants=variants)
