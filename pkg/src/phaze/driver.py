"""Outer architecture search and report plumbing.

Walks accelerator configs in descending-area levels, scores each config by
the placement throughput of every model, and stops once the per-level best
has strictly decreased for a configured number of consecutive levels.  A
model a config cannot place (memory-infeasible everywhere) scores zero for
that config rather than aborting the search.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

from .archspace import (AcceleratorConfig, AreaModel, SearchBounds,
                        check_converge, enumerate_configs, group_by_area,
                        reference_config)
from .costmodel import CostModelParams
from .placement_dp import (InfeasibleError, LayerCosts, PlacementSolution,
                           solve_placement)
from .schedule_ilp import LatencyCache, layer_latencies
from .workload import Workload, validate_linear


@dataclass(frozen=True)
class ModelEval:
    """One model's outcome on one config; zero throughput = infeasible."""

    throughput: Fraction
    solution: PlacementSolution | None
    error: str | None = None


@dataclass(frozen=True)
class ConfigRecord:
    cfg: AcceleratorConfig
    area: Fraction
    per_model: dict[str, ModelEval]
    mean: Fraction


@dataclass(frozen=True)
class LevelTrace:
    index: int
    area: Fraction
    configs: int
    best_mean: Fraction
    decision: str  # "continue" | "converged" | "exhausted"


@dataclass
class SearchReport:
    records: list[ConfigRecord]
    trace: list[LevelTrace]
    best_common: ConfigRecord | None
    best_per_model: dict[str, ConfigRecord | None]
    baseline: ConfigRecord | None
    speedups: dict[str, Fraction | None]
    geomean_speedup: float | None
    converged: bool
    hysteresis: int
    explored_levels: int
    total_levels: int

    @property
    def feasible(self) -> bool:
        return self.best_common is not None and self.best_common.mean > 0


def model_costs(model: Workload, cfg: AcceleratorConfig,
                params: CostModelParams | None = None,
                cache: LatencyCache | None = None,
                time_limit: float | None = 60.0) -> dict[tuple[int, int], list[LayerCosts]]:
    """Per-(t, b) LayerCosts rows for one model on one config, in chain order."""
    out: dict[tuple[int, int], list[LayerCosts]] = {}
    tr = model.training
    for t in tr.tmp_widths:
        for b in tr.microbatch_sizes:
            chain = validate_linear(model.variant(t, b))
            rows = []
            for layer in chain:
                fw, bw = layer_latencies(layer, cfg, params, cache, time_limit)
                rows.append(LayerCosts(fw=fw, bw=bw, weights=layer.weights_size,
                                       optimizer=layer.optimizer_size,
                                       activations=layer.activations_size,
                                       input_edge=layer.input_edge_size,
                                       sliceable=layer.sliceable))
            out[(t, b)] = rows
    return out


def evaluate_config(models: Sequence[Workload], cfg: AcceleratorConfig, *,
                    params: CostModelParams | None = None,
                    gpipe: bool = False,
                    recompute_modes: Iterable[bool] = (False, True),
                    cache: LatencyCache | None = None,
                    time_limit: float | None = 60.0) -> dict[str, ModelEval]:
    """Best placement throughput of every model on one config."""
    out: dict[str, ModelEval] = {}
    for model in models:
        costs = model_costs(model, cfg, params, cache, time_limit)
        try:
            sol = solve_placement(costs, model.training, gpipe=gpipe,
                                  recompute_modes=recompute_modes)
            out[model.name] = ModelEval(throughput=sol.throughput, solution=sol)
        except InfeasibleError as e:
            out[model.name] = ModelEval(throughput=Fraction(0), solution=None,
                                        error=str(e))
    return out


def _weighted_mean(per_model: Mapping[str, ModelEval],
                   weights: Mapping[str, Fraction]) -> Fraction:
    total_w = sum(weights.values(), Fraction(0))
    if total_w == 0:
        return Fraction(0)
    acc = Fraction(0)
    for name, ev in per_model.items():
        acc += weights[name] * ev.throughput
    return acc / total_w


# process-pool plumbing: each worker holds the models and its own cache
_POOL_STATE: dict = {}


def _pool_init(models, params, gpipe, recompute_modes, time_limit) -> None:
    _POOL_STATE["args"] = (models, params, gpipe, recompute_modes, time_limit)
    _POOL_STATE["cache"] = LatencyCache()


def _pool_eval(cfg: AcceleratorConfig) -> dict[str, ModelEval]:
    models, params, gpipe, recompute_modes, time_limit = _POOL_STATE["args"]
    return evaluate_config(models, cfg, params=params, gpipe=gpipe,
                           recompute_modes=recompute_modes,
                           cache=_POOL_STATE["cache"], time_limit=time_limit)


def run_search(models: Sequence[Workload], *,
               bounds: SearchBounds | None = None,
               area_model: AreaModel | None = None,
               params: CostModelParams | None = None,
               hysteresis: int = 6,
               exhaustive: bool = False,
               gpipe: bool = False,
               recompute_modes: Iterable[bool] = (False, True),
               weights: Mapping[str, int | Fraction] | None = None,
               evaluator: Callable[[AcceleratorConfig], dict[str, ModelEval]] | None = None,
               baseline_cfg: AcceleratorConfig | None = None,
               workers: int | None = None,
               time_limit: float | None = 60.0) -> SearchReport:
    """Area-descending search with hysteresis pruning.

    ``evaluator`` substitutes the whole config-scoring step (used by tests);
    it forces serial execution.  Worker count comes from PHAZE_WORKERS when
    not given; results are collected in submission order either way, so the
    report does not depend on scheduling.
    """
    if not models:
        raise ValueError("no models to search over")
    names = [m.name for m in models]
    if len(set(names)) != len(names):
        raise ValueError("model names must be unique")
    w = {n: Fraction(weights[n]) if weights and n in weights else Fraction(1)
         for n in names}
    if hysteresis < 1:
        raise ValueError("hysteresis must be >= 1")
    b = bounds or SearchBounds()
    configs = enumerate_configs(b, area_model)
    levels = group_by_area(configs, area_model)
    if workers is None:
        workers = int(os.environ.get("PHAZE_WORKERS", "1"))
    if evaluator is not None:
        workers = 1
    recompute_modes = tuple(recompute_modes)

    shared_cache = LatencyCache()

    def default_eval(cfg: AcceleratorConfig) -> dict[str, ModelEval]:
        return evaluate_config(models, cfg, params=params, gpipe=gpipe,
                               recompute_modes=recompute_modes,
                               cache=shared_cache, time_limit=time_limit)

    score = evaluator or default_eval
    records: list[ConfigRecord] = []
    trace: list[LevelTrace] = []
    level_best: list[Fraction] = []
    converged = False
    pool = None
    try:
        if workers > 1:
            from concurrent.futures import ProcessPoolExecutor
            pool = ProcessPoolExecutor(
                max_workers=workers, initializer=_pool_init,
                initargs=(tuple(models), params, gpipe, recompute_modes, time_limit))
        for li, (area, cfgs) in enumerate(levels):
            if pool is not None:
                evals = list(pool.map(_pool_eval, cfgs))
            else:
                evals = [score(cfg) for cfg in cfgs]
            best_here = Fraction(0)
            for cfg, per_model in zip(cfgs, evals):
                mean = _weighted_mean(per_model, w)
                records.append(ConfigRecord(cfg=cfg, area=area,
                                            per_model=per_model, mean=mean))
                if mean > best_here:
                    best_here = mean
            level_best.append(best_here)
            done = (li == len(levels) - 1)
            if not exhaustive and check_converge(level_best, hysteresis):
                converged = True
                decision = "converged"
            elif done:
                decision = "exhausted"
            else:
                decision = "continue"
            trace.append(LevelTrace(index=li, area=area, configs=len(cfgs),
                                    best_mean=best_here, decision=decision))
            if converged:
                break
    finally:
        if pool is not None:
            pool.shutdown()

    best_common = None
    for rec in records:
        if rec.mean > 0 and (best_common is None or rec.mean > best_common.mean):
            best_common = rec
    best_per_model: dict[str, ConfigRecord | None] = {}
    for name in names:
        best = None
        for rec in records:
            tput = rec.per_model[name].throughput
            if tput > 0 and (best is None or tput > best.per_model[name].throughput):
                best = rec
        best_per_model[name] = best

    base_cfg = baseline_cfg or reference_config(b)
    baseline = next((r for r in records if r.cfg == base_cfg), None)
    if baseline is None:
        per_model = score(base_cfg)
        baseline = ConfigRecord(cfg=base_cfg,
                                area=(area_model or AreaModel()).area_of(base_cfg),
                                per_model=per_model,
                                mean=_weighted_mean(per_model, w))
    speedups: dict[str, Fraction | None] = {}
    for name in names:
        if best_common is None:
            speedups[name] = None
            continue
        base_t = baseline.per_model[name].throughput
        got_t = best_common.per_model[name].throughput
        speedups[name] = (got_t / base_t) if base_t > 0 else None
    defined = [speedups[n] for n in sorted(names) if speedups[n] is not None]
    if not defined:
        geomean = None
    elif any(r == 0 for r in defined):
        geomean = 0.0
    else:
        geomean = math.exp(sum(math.log(float(r)) for r in defined) / len(defined))
    return SearchReport(records=records, trace=trace, best_common=best_common,
                        best_per_model=best_per_model, baseline=baseline,
                        speedups=speedups, geomean_speedup=geomean,
                        converged=converged, hysteresis=hysteresis,
                        explored_levels=len(trace), total_levels=len(levels))


# ---------------------------------------------------------------------------
# Serialization


def config_to_dict(cfg: AcceleratorConfig) -> dict:
    return {
        "num_tc": cfg.num_tc, "num_vc": cfg.num_vc, "pe_x": cfg.pe_x,
        "pe_y": cfg.pe_y, "pe_vc": cfg.pe_vc, "glb_bytes": cfg.glb_bytes,
        "l2_tc_bytes": cfg.l2_tc_bytes, "l2_vc_bytes": cfg.l2_vc_bytes,
        "glb_bw_words": cfg.glb_bw_words, "hbm_bytes": cfg.hbm_bytes,
    }


def solution_to_dict(sol: PlacementSolution) -> dict:
    return {
        "t": sol.t, "d": sol.d, "s": sol.s, "b": sol.b,
        "recompute": sol.recompute, "hbm_bytes": sol.hbm_bytes,
        "F_ticks": sol.F, "sync_ticks": sol.sync_ticks,
        "throughput": str(sol.throughput),
        "stages": [{
            "layers": [st.lo, st.hi], "accelerators": st.accelerators,
            "load_ticks": st.load, "memory_bytes": st.memory, "max_s": st.max_s,
        } for st in sol.stages],
    }


def _eval_to_dict(ev: ModelEval) -> dict:
    return {
        "throughput": str(ev.throughput),
        "feasible": ev.throughput > 0,
        "solution": solution_to_dict(ev.solution) if ev.solution else None,
        "error": ev.error,
    }


def _record_to_dict(rec: ConfigRecord) -> dict:
    return {
        "config": config_to_dict(rec.cfg),
        "area": str(rec.area),
        "mean_throughput": str(rec.mean),
        "models": {n: _eval_to_dict(ev) for n, ev in sorted(rec.per_model.items())},
    }


def report_to_dict(r: SearchReport) -> dict:
    return {
        "converged": r.converged,
        "hysteresis": r.hysteresis,
        "explored_levels": r.explored_levels,
        "total_levels": r.total_levels,
        "explored_configs": len(r.records),
        "best_common": _record_to_dict(r.best_common) if r.best_common else None,
        "best_per_model": {n: _record_to_dict(rec) if rec else None
                           for n, rec in sorted(r.best_per_model.items())},
        "baseline": _record_to_dict(r.baseline) if r.baseline else None,
        "speedups": {
            "per_model": {n: (str(v) if v is not None else None)
                          for n, v in sorted(r.speedups.items())},
            "geomean": r.geomean_speedup,
        },
        "records": [_record_to_dict(rec) for rec in r.records],
    }


def _summary_text(r: SearchReport) -> str:
    lines = []
    lines.append("architecture search summary")
    lines.append(f"levels explored: {r.explored_levels} of {r.total_levels} "
                 f"(hysteresis {r.hysteresis}, "
                 f"{'converged' if r.converged else 'exhausted'})")
    lines.append(f"configs scored: {len(r.records)}")
    if r.best_common is not None:
        c = r.best_common.cfg
        lines.append(f"best common config: tc={c.num_tc} vc={c.num_vc} "
                     f"pe={c.pe_x}x{c.pe_y} glb={c.glb_bytes} "
                     f"(mean throughput {float(r.best_common.mean):.6g}/tick)")
    else:
        lines.append("best common config: none feasible")
    for name in sorted(r.best_per_model):
        rec = r.best_per_model[name]
        if rec is None:
            lines.append(f"  {name}: infeasible everywhere")
        else:
            c = rec.cfg
            ev = rec.per_model[name]
            lines.append(f"  {name}: tc={c.num_tc} vc={c.num_vc} pe={c.pe_x}x{c.pe_y} "
                         f"glb={c.glb_bytes} throughput {float(ev.throughput):.6g}/tick")
    sp = ", ".join(f"{n}={float(v):.4g}x" for n, v in sorted(r.speedups.items())
                   if v is not None)
    if sp:
        lines.append(f"speedups vs baseline: {sp}")
    if r.geomean_speedup is not None:
        lines.append(f"geomean speedup: {r.geomean_speedup:.4g}x")
    return "\n".join(lines) + "\n"


def report_write(r: SearchReport, out_dir: str) -> list[str]:
    """Write report.json, trace.csv, and summary.txt; byte-deterministic."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    p = os.path.join(out_dir, "report.json")
    with open(p, "w", newline="\n") as fh:
        json.dump(report_to_dict(r), fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(p)
    p = os.path.join(out_dir, "trace.csv")
    buf = io.StringIO()
    wcsv = csv.writer(buf, lineterminator="\n")
    wcsv.writerow(["level", "area", "configs", "best_mean_throughput", "decision"])
    for t in r.trace:
        wcsv.writerow([t.index, str(t.area), t.configs, str(t.best_mean), t.decision])
    with open(p, "w", newline="\n") as fh:
        fh.write(buf.getvalue())
    paths.append(p)
    p = os.path.join(out_dir, "summary.txt")
    with open(p, "w", newline="\n") as fh:
        fh.write(_summary_text(r))
    paths.append(p)
    return paths
