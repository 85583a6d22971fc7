"""Command-line entry points: search, ilp, place."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from fractions import Fraction
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10
    import tomli as tomllib

from .archspace import (AcceleratorConfig, AreaModel, SearchBounds, MIB, GIB,
                        make_config)
from .costmodel import CostModelParams, estimate_graph
from .driver import (config_to_dict, model_costs, report_write, run_search,
                     solution_to_dict)
from .placement_dp import InfeasibleError, explain, solve_placement
from .schedule_ilp import (LatencyCache, ZFamilies, build_model, export_lp,
                           solve_lazy)
from .workload import Workload, WorkloadError, parse_workload

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2


def _load_toml(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _bytes_field(section: dict, base: str) -> int | None:
    if f"{base}_bytes" in section:
        return int(section[f"{base}_bytes"])
    if f"{base}_mib" in section:
        return int(section[f"{base}_mib"]) * MIB
    if f"{base}_gib" in section:
        return int(section[f"{base}_gib"]) * GIB
    return None


def _bytes_list(section: dict, base: str) -> tuple[int, ...] | None:
    if f"{base}_bytes" in section:
        return tuple(int(x) for x in section[f"{base}_bytes"])
    if f"{base}_mib" in section:
        return tuple(int(x) * MIB for x in section[f"{base}_mib"])
    if f"{base}_gib" in section:
        return tuple(int(x) * GIB for x in section[f"{base}_gib"])
    return None


def _engine_params(conf: dict) -> CostModelParams:
    c = conf.get("costmodel", {})
    kw = {}
    for key in ("word_size", "macs_per_pe_per_tick", "hbm_bw_bytes_per_tick"):
        if key in c:
            kw[key] = int(c[key])
    return CostModelParams(**kw)


def _engine_bounds(conf: dict) -> SearchBounds:
    a = conf.get("archspace", {})
    kw = {}
    for key in ("num_tc", "num_vc", "pe_x", "pe_y"):
        if key in a:
            kw[key] = tuple(int(x) for x in a[key])
    glb = _bytes_list(a, "glb")
    if glb is not None:
        kw["glb_bytes"] = glb
    hbm = _bytes_list(a, "hbm")
    if hbm is not None:
        kw["hbm_bytes"] = hbm
    return SearchBounds(**kw)


def _engine_area(conf: dict) -> AreaModel:
    a = conf.get("archspace", {})
    kw = {}
    for key in ("unit_area_mac", "unit_area_vec_lane", "unit_area_sram_per_byte"):
        if key in a:
            kw[key] = Fraction(str(a[key]))
    return AreaModel(**kw)


def _accelerator_from(section: dict, word_size: int) -> AcceleratorConfig:
    try:
        glb = _bytes_field(section, "glb")
        hbm = _bytes_field(section, "hbm")
        if glb is None or hbm is None:
            raise KeyError("glb/hbm")
        return make_config(int(section["num_tc"]), int(section["num_vc"]),
                           int(section["pe_x"]), int(section["pe_y"]),
                           glb, hbm, word_size)
    except KeyError:
        raise SystemExit(
            "config file needs an [accelerator] section with num_tc, num_vc, "
            "pe_x, pe_y, glb_bytes (or _mib), hbm_bytes (or _gib)")


def _engine_accelerator(conf: dict, params: CostModelParams) -> AcceleratorConfig:
    if "accelerator" not in conf:
        raise SystemExit("this command requires an [accelerator] section in --config")
    return _accelerator_from(conf["accelerator"], params.word_size)


def _recompute_modes(choice: str) -> tuple[bool, ...]:
    return {"auto": (False, True), "on": (True,), "off": (False,)}[choice]


def _load_workload(path: str) -> Workload:
    try:
        return parse_workload(path)
    except (OSError, json.JSONDecodeError, WorkloadError) as e:
        raise SystemExit(f"cannot load workload {path}: {e}")


def _write_or_print(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")


def _cmd_search(args: argparse.Namespace) -> int:
    conf = _load_toml(args.config)
    params = _engine_params(conf)
    bounds = _engine_bounds(conf)
    area = _engine_area(conf)
    drv = conf.get("driver", {})
    hysteresis = args.hysteresis if args.hysteresis is not None else \
        int(drv.get("hysteresis", 6))
    weights = {str(k): Fraction(str(v)) for k, v in drv.get("weights", {}).items()}
    baseline = None
    if "baseline" in drv:
        baseline = _accelerator_from(drv["baseline"], params.word_size)
    models = [_load_workload(p) for p in args.workloads]
    if args.dump_configs:
        from .archspace import enumerate_configs
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["num_tc", "num_vc", "pe_x", "pe_y", "pe_vc", "glb_bytes",
                    "l2_tc_bytes", "l2_vc_bytes", "glb_bw_words", "area"])
        for cfg in enumerate_configs(bounds, area):
            w.writerow([cfg.num_tc, cfg.num_vc, cfg.pe_x, cfg.pe_y, cfg.pe_vc,
                        cfg.glb_bytes, cfg.l2_tc_bytes, cfg.l2_vc_bytes,
                        cfg.glb_bw_words, str(area.area_of(cfg))])
        Path(args.dump_configs).write_text(buf.getvalue())
    report = run_search(models, bounds=bounds, area_model=area, params=params,
                        hysteresis=hysteresis, exhaustive=args.exhaustive,
                        gpipe=args.gpipe,
                        recompute_modes=_recompute_modes(args.recompute),
                        weights=weights or None, baseline_cfg=baseline,
                        time_limit=args.time_limit)
    paths = report_write(report, args.out)
    sys.stdout.write(Path(paths[-1]).read_text())
    return EXIT_OK if report.feasible else EXIT_INFEASIBLE


def _cmd_ilp(args: argparse.Namespace) -> int:
    conf = _load_toml(args.config)
    params = _engine_params(conf)
    cfg = _engine_accelerator(conf, params)
    model = _load_workload(args.workload)
    tr = model.training
    t = args.tmp if args.tmp is not None else min(tr.tmp_widths)
    b = args.microbatch if args.microbatch is not None else min(tr.microbatch_sizes)
    try:
        lg = model.variant(t, b)
    except WorkloadError as e:
        raise SystemExit(str(e))
    layer = next((l for l in lg.layers if l.id == args.layer), None)
    if layer is None:
        raise SystemExit(f"no layer {args.layer!r}; have: "
                         + ", ".join(l.id for l in lg.layers))
    g = layer.fw if args.direction == "fw" else layer.bw
    est = estimate_graph(g, cfg, params)
    if args.dump_estimates:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["op", "single_core", "intra_op"])
        for op in g.nodes:
            w.writerow([op.id, est[op.id].single_core, est[op.id].intra_op])
        Path(args.dump_estimates).write_text(buf.getvalue())
    if args.export_lp:
        model_full = build_model(g, est, cfg, ZFamilies.BOTH)
        export_lp(model_full, args.export_lp)
    sched = solve_lazy(g, est, cfg, time_limit=args.time_limit)
    doc = {
        "layer": layer.id,
        "direction": args.direction,
        "t": t,
        "b": b,
        "makespan": sched.makespan,
        "optimal": sched.optimal,
        "gap": sched.gap,
        "invocations": sched.invocations,
        "schedule": {e.op_id: {"start": e.start, "duration": e.duration,
                               "mode": e.mode, "core": e.core}
                     for e in sched.entries},
    }
    _write_or_print(json.dumps(doc, indent=2, sort_keys=True), args.out)
    return EXIT_OK


def _cmd_place(args: argparse.Namespace) -> int:
    conf = _load_toml(args.config)
    params = _engine_params(conf)
    cfg = _engine_accelerator(conf, params)
    model = _load_workload(args.workload)
    cache = LatencyCache()
    costs = model_costs(model, cfg, params, cache, args.time_limit)
    try:
        sol = solve_placement(costs, model.training, gpipe=args.gpipe,
                              recompute_modes=_recompute_modes(args.recompute))
    except InfeasibleError as e:
        sys.stderr.write(f"infeasible: {e}\n")
        return EXIT_INFEASIBLE
    doc = {"model": model.name, "config": config_to_dict(cfg),
           "solution": solution_to_dict(sol)}
    _write_or_print(json.dumps(doc, indent=2, sort_keys=True), args.out)
    sys.stderr.write(explain(sol) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="phaze",
                                 description="accelerator architecture and "
                                             "device-placement co-search")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("search", help="area-descending architecture search")
    sp.add_argument("--workloads", nargs="+", required=True, metavar="JSON")
    sp.add_argument("--config", default=None, metavar="TOML")
    sp.add_argument("--out", required=True, metavar="DIR")
    sp.add_argument("--hysteresis", type=int, default=None)
    sp.add_argument("--exhaustive", action="store_true")
    sp.add_argument("--gpipe", action="store_true")
    sp.add_argument("--recompute", choices=("auto", "on", "off"), default="auto")
    sp.add_argument("--dump-configs", default=None, metavar="CSV")
    sp.add_argument("--time-limit", type=float, default=60.0,
                    help="per-layer scheduling budget in seconds")
    sp.set_defaults(fn=_cmd_search)

    ip = sub.add_parser("ilp", help="schedule one layer's operator graph")
    ip.add_argument("--workload", required=True, metavar="JSON")
    ip.add_argument("--config", default=None, metavar="TOML")
    ip.add_argument("--layer", required=True)
    ip.add_argument("--tmp", type=int, default=None)
    ip.add_argument("--microbatch", type=int, default=None)
    ip.add_argument("--direction", choices=("fw", "bw"), default="fw")
    ip.add_argument("--export-lp", default=None, metavar="PATH")
    ip.add_argument("--dump-estimates", default=None, metavar="CSV")
    ip.add_argument("--out", default=None, metavar="JSON")
    ip.add_argument("--time-limit", type=float, default=60.0)
    ip.set_defaults(fn=_cmd_ilp)

    pp = sub.add_parser("place", help="pipeline placement for one model")
    pp.add_argument("--workload", required=True, metavar="JSON")
    pp.add_argument("--config", default=None, metavar="TOML")
    pp.add_argument("--gpipe", action="store_true")
    pp.add_argument("--recompute", choices=("auto", "on", "off"), default="auto")
    pp.add_argument("--out", default=None, metavar="JSON")
    pp.add_argument("--time-limit", type=float, default=60.0)
    pp.set_defaults(fn=_cmd_place)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit as e:
        if isinstance(e.code, str):
            sys.stderr.write(e.code + "\n")
            return EXIT_USAGE
        raise


if __name__ == "__main__":
    sys.exit(main())
