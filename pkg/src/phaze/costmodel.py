"""Analytical operator cost model.

Latencies are integer ticks, derived roofline-style: compute and global-buffer
bandwidth overlap (max), HBM traffic is additive.  All divisions are ceilings
so a nonzero cost never rounds away; every estimate is clamped at one tick.
"""

from __future__ import annotations

from dataclasses import dataclass

from .workload import OpKind, Operator


def ceil_div(a: int, b: int) -> int:
    if b <= 0:
        raise ValueError("division by non-positive value")
    return -(-a // b)


@dataclass(frozen=True)
class CostModelParams:
    """Technology constants shared by all accelerator configs."""

    word_size: int = 2                 # bytes per element
    macs_per_pe_per_tick: int = 1
    hbm_bw_bytes_per_tick: int = 512

    def __post_init__(self) -> None:
        if self.word_size < 1 or self.macs_per_pe_per_tick < 1 or self.hbm_bw_bytes_per_tick < 1:
            raise ValueError("cost model parameters must be positive")


@dataclass(frozen=True)
class OperatorEstimate:
    """Latency of one operator on one config, in ticks.

    ``single_core`` runs on one core of the matching type; ``intra_op`` spreads
    the compute across all cores of that type while the whole chip is held.
    """

    single_core: int
    intra_op: int

    def __post_init__(self) -> None:
        if not (1 <= self.intra_op <= self.single_core):
            raise ValueError("estimate must satisfy 1 <= intra_op <= single_core")


def _tensor_ticks(flops: int, nbytes: int, pe_product: int, glb_bw_bytes: int, hbm_bw: int) -> int:
    compute = ceil_div(flops, pe_product) if flops else 0
    buffer_io = ceil_div(nbytes, glb_bw_bytes) if nbytes else 0
    hbm_io = ceil_div(nbytes, hbm_bw) if nbytes else 0
    return max(compute, buffer_io) + hbm_io


def _vector_ticks(length: int, nbytes: int, lanes: int, glb_bw_bytes: int, hbm_bw: int) -> int:
    compute = ceil_div(length, lanes) if length else 0
    buffer_io = ceil_div(nbytes, glb_bw_bytes) if nbytes else 0
    hbm_io = ceil_div(nbytes, hbm_bw) if nbytes else 0
    return max(compute, buffer_io) + hbm_io


def estimate(op: Operator, cfg: "AcceleratorConfig", params: CostModelParams | None = None) -> OperatorEstimate:
    """Estimate single-core and intra-op latency of ``op`` on ``cfg``."""
    from .archspace import AcceleratorConfig  # local import to avoid a cycle

    assert isinstance(cfg, AcceleratorConfig)
    p = params or CostModelParams()
    glb_bw_bytes = cfg.glb_bw_words * p.word_size
    hbm_bw = p.hbm_bw_bytes_per_tick
    pe = cfg.pe_x * cfg.pe_y * p.macs_per_pe_per_tick

    if op.kind is OpKind.TENSOR:
        nbytes = op.bytes_in + op.bytes_out
        single = _tensor_ticks(op.flops, nbytes, pe, glb_bw_bytes, hbm_bw)
        intra = _tensor_ticks(op.flops, nbytes, cfg.num_tc * pe, glb_bw_bytes, hbm_bw)
    elif op.kind is OpKind.VECTOR:
        nbytes = op.bytes_in + op.bytes_out
        single = _vector_ticks(op.elementwise_len, nbytes, cfg.pe_vc, glb_bw_bytes, hbm_bw)
        intra = _vector_ticks(op.elementwise_len, nbytes, cfg.num_vc * cfg.pe_vc, glb_bw_bytes, hbm_bw)
    elif op.kind is OpKind.FUSED:
        # Tensor stage feeds the vector stage through the buffer; the
        # intermediate never touches HBM, so its write and read are refunded.
        mid = op.elementwise_len * p.word_size
        t_bytes = op.bytes_in + mid
        v_bytes = mid + op.bytes_out
        bypass = 2 * ceil_div(mid, hbm_bw) if mid else 0
        pairs = min(cfg.num_tc, cfg.num_vc)
        single = (
            _tensor_ticks(op.flops, t_bytes, pe, glb_bw_bytes, hbm_bw)
            + _vector_ticks(op.elementwise_len, v_bytes, cfg.pe_vc, glb_bw_bytes, hbm_bw)
            - bypass
        )
        intra = (
            _tensor_ticks(op.flops, t_bytes, pairs * pe, glb_bw_bytes, hbm_bw)
            + _vector_ticks(op.elementwise_len, v_bytes, pairs * cfg.pe_vc, glb_bw_bytes, hbm_bw)
            - bypass
        )
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown operator kind {op.kind!r}")

    single = max(1, single)
    intra = max(1, min(intra, single))
    return OperatorEstimate(single_core=single, intra_op=intra)


def estimate_graph(graph, cfg, params: CostModelParams | None = None) -> dict[str, OperatorEstimate]:
    """Estimates for every operator of a graph, keyed by op id."""
    return {op.id: estimate(op, cfg, params) for op in graph.nodes}


def allreduce_ticks(tensor_bytes: int, num_devices: int, bandwidth_bytes_per_tick: int) -> int:
    """Ring all-reduce latency: each device moves tensor_bytes/n per step for
    2(n-1) steps, i.e. 4(n-1)/n * tensor_bytes over the link, in ticks.

    One device needs no communication at all.
    """
    if num_devices < 1:
        raise ValueError("num_devices must be >= 1")
    if tensor_bytes < 0:
        raise ValueError("tensor_bytes must be >= 0")
    if num_devices == 1 or tensor_bytes == 0:
        return 0
    return ceil_div(4 * tensor_bytes * (num_devices - 1), num_devices * bandwidth_bytes_per_tick)


def transfer_ticks(nbytes: int, bandwidth_bytes_per_tick: int) -> int:
    """Point-to-point transfer latency in ticks; zero bytes cost nothing."""
    if nbytes < 0:
        raise ValueError("nbytes must be >= 0")
    if nbytes == 0:
        return 0
    return ceil_div(nbytes, bandwidth_bytes_per_tick)
