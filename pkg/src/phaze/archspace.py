"""Accelerator architecture space: configs, area model, enumeration, pruning.

The search space is a grid over core counts, PE array shape, and global
buffer size.  L2 capacities and global-buffer bandwidth are derived, not
enumerated.  Area is exact rational arithmetic so that sorting and grouping
by area never depend on float rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

KIB = 1024
MIB = 1024 * KIB
GIB = 1024 * MIB


@dataclass(frozen=True)
class AcceleratorConfig:
    """One point of the architecture space.

    ``pe_vc`` (vector lane count) always equals ``pe_x`` for enumerated
    configs; it is kept as a field so hand-built configs stay explicit.
    """

    num_tc: int
    num_vc: int
    pe_x: int
    pe_y: int
    pe_vc: int
    glb_bytes: int
    l2_tc_bytes: int
    l2_vc_bytes: int
    glb_bw_words: int
    hbm_bytes: int

    def __post_init__(self) -> None:
        for name in ("num_tc", "num_vc", "pe_x", "pe_y", "pe_vc",
                     "glb_bytes", "l2_tc_bytes", "l2_vc_bytes", "glb_bw_words", "hbm_bytes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def with_hbm(self, hbm_bytes: int) -> "AcceleratorConfig":
        return AcceleratorConfig(
            num_tc=self.num_tc, num_vc=self.num_vc, pe_x=self.pe_x, pe_y=self.pe_y,
            pe_vc=self.pe_vc, glb_bytes=self.glb_bytes, l2_tc_bytes=self.l2_tc_bytes,
            l2_vc_bytes=self.l2_vc_bytes, glb_bw_words=self.glb_bw_words, hbm_bytes=hbm_bytes,
        )

    def key(self) -> tuple[int, int, int, int, int]:
        return (self.num_tc, self.num_vc, self.pe_x, self.pe_y, self.glb_bytes)


def derived_l2(pe_x: int, pe_y: int, word_size: int = 2) -> tuple[int, int]:
    """L2 sizes in bytes implied by the PE array shape.

    Tensor-core L2 scales with the array footprint (16 bytes per PE, i.e.
    1 MiB at 256x256) with a 1 KiB floor.  Vector-core L2 holds one row of
    lanes, floored at 1 KiB and capped at 4 KiB.
    """
    if pe_x < 1 or pe_y < 1 or (pe_x & (pe_x - 1)) or (pe_y & (pe_y - 1)):
        raise ValueError("pe_x and pe_y must be positive powers of two")
    l2_tc = max(KIB, pe_x * pe_y * 16)
    l2_vc = min(4 * KIB, max(KIB, pe_x * word_size))
    return l2_tc, l2_vc


def derived_glb_bw(num_tc: int, pe_x: int) -> int:
    """Global-buffer bandwidth in words per tick: enough to feed every tensor
    core a row per tick, capped at 4096."""
    return min(4096, num_tc * pe_x)


@dataclass(frozen=True)
class AreaModel:
    """Linear area model over MACs, vector lanes, and on-chip SRAM.

    Units are arbitrary; only the ordering of areas (and the budget test)
    matters to the search.  HBM is off-chip and never counted.
    """

    unit_area_mac: Fraction = Fraction(1)
    unit_area_vec_lane: Fraction = Fraction(1, 20)
    unit_area_sram_per_byte: Fraction = Fraction(1, 500)

    def area_of(self, cfg: AcceleratorConfig) -> Fraction:
        macs = cfg.num_tc * cfg.pe_x * cfg.pe_y
        lanes = cfg.num_vc * cfg.pe_vc
        sram = cfg.glb_bytes + cfg.num_tc * cfg.l2_tc_bytes + cfg.num_vc * cfg.l2_vc_bytes
        return (
            macs * self.unit_area_mac
            + lanes * self.unit_area_vec_lane
            + sram * self.unit_area_sram_per_byte
        )


def _pow2_range(lo: int, hi: int) -> tuple[int, ...]:
    vals = []
    v = lo
    while v <= hi:
        vals.append(v)
        v *= 2
    return tuple(vals)


@dataclass(frozen=True)
class SearchBounds:
    """Enumeration grid.  HBM capacities are not part of the area budget and
    are swept separately by the driver."""

    num_tc: tuple[int, ...] = (1, 2, 4, 8)
    num_vc: tuple[int, ...] = _pow2_range(2, 1024)
    pe_x: tuple[int, ...] = _pow2_range(8, 256)
    pe_y: tuple[int, ...] = _pow2_range(2, 256)
    glb_bytes: tuple[int, ...] = _pow2_range(4 * MIB, 128 * MIB)
    hbm_bytes: tuple[int, ...] = (32 * GIB, 64 * GIB, 80 * GIB)


def make_config(num_tc: int, num_vc: int, pe_x: int, pe_y: int, glb_bytes: int,
                hbm_bytes: int, word_size: int = 2) -> AcceleratorConfig:
    """Build a config with derived L2 and buffer bandwidth, pe_vc = pe_x."""
    l2_tc, l2_vc = derived_l2(pe_x, pe_y, word_size)
    return AcceleratorConfig(
        num_tc=num_tc, num_vc=num_vc, pe_x=pe_x, pe_y=pe_y, pe_vc=pe_x,
        glb_bytes=glb_bytes, l2_tc_bytes=l2_tc, l2_vc_bytes=l2_vc,
        glb_bw_words=derived_glb_bw(num_tc, pe_x), hbm_bytes=hbm_bytes,
    )


def reference_config(bounds: SearchBounds | None = None, word_size: int = 2) -> AcceleratorConfig:
    """The maximal-area anchor: 8 tensor cores of 128x128, 2 vector cores,
    128 MiB global buffer.  Its area defines the search budget."""
    b = bounds or SearchBounds()
    return make_config(8, 2, 128, 128, 128 * MIB, max(b.hbm_bytes), word_size)


def enumerate_configs(bounds: SearchBounds | None = None,
                      area_model: AreaModel | None = None,
                      word_size: int = 2) -> list[AcceleratorConfig]:
    """All in-budget configs, largest area first.

    The budget is the area of ``reference_config``; with default bounds the
    reference itself is the first element.  Ties are broken toward more tensor
    cores, then
    wider PE rows, then the remaining fields descending, making the order a
    total one.
    """
    b = bounds or SearchBounds()
    am = area_model or AreaModel()
    budget = am.area_of(reference_config(b, word_size))
    hbm = max(b.hbm_bytes)
    out: list[tuple[Fraction, AcceleratorConfig]] = []
    for num_tc in b.num_tc:
        for num_vc in b.num_vc:
            for pe_x in b.pe_x:
                for pe_y in b.pe_y:
                    for glb in b.glb_bytes:
                        cfg = make_config(num_tc, num_vc, pe_x, pe_y, glb, hbm, word_size)
                        area = am.area_of(cfg)
                        if area <= budget:
                            out.append((area, cfg))
    out.sort(key=lambda ac: (-ac[0], -ac[1].num_tc, -ac[1].pe_x, -ac[1].num_vc,
                             -ac[1].pe_y, -ac[1].glb_bytes))
    return [cfg for _, cfg in out]


def group_by_area(configs: Sequence[AcceleratorConfig],
                  area_model: AreaModel | None = None) -> list[tuple[Fraction, list[AcceleratorConfig]]]:
    """Group an area-descending config list into exact-area levels."""
    am = area_model or AreaModel()
    levels: list[tuple[Fraction, list[AcceleratorConfig]]] = []
    for cfg in configs:
        a = am.area_of(cfg)
        if levels and levels[-1][0] == a:
            levels[-1][1].append(cfg)
        else:
            levels.append((a, [cfg]))
    return levels


def check_converge(level_best: Sequence, hysteresis: int) -> bool:
    """Stop criterion over per-area-level best average throughputs, ordered
    from largest explored area to smallest.

    Converged once at least ``hysteresis`` levels are fully explored and the
    most recent ``hysteresis`` of them are strictly decreasing.
    """
    if hysteresis < 1:
        raise ValueError("hysteresis must be >= 1")
    if len(level_best) < hysteresis:
        return False
    tail = list(level_best[-hysteresis:])
    return all(tail[i] > tail[i + 1] for i in range(len(tail) - 1))
