import json
from fractions import Fraction

import pytest

from phaze.archspace import MIB, AreaModel, SearchBounds, group_by_area, \
    enumerate_configs, make_config
from phaze.driver import (ModelEval, evaluate_config, model_costs,
                          report_write, run_search)
from phaze.schedule_ilp import LatencyCache
from phaze.synth import synth_workload

TINY = synth_workload("tiny", 3, hidden=128, seq=16, vocab=64,
                      tmp_widths=(1,), microbatch_sizes=(1,),
                      minibatch_size=4, num_accelerators=2,
                      bandwidth_bytes_per_tick=1024,
                      hbm_candidates_bytes=(32 << 30,))

SMALL = SearchBounds(num_tc=(1, 2), num_vc=(2,), pe_x=(8, 16), pe_y=(8,),
                     glb_bytes=(4 * MIB,), hbm_bytes=(32 << 30,))


def ladder_bounds(n):
    """n area levels of one config each, area strictly rising with glb."""
    return SearchBounds(num_tc=(1,), num_vc=(2,), pe_x=(8,), pe_y=(8,),
                        glb_bytes=tuple((4 + i) * MIB for i in range(n)),
                        hbm_bytes=(32 << 30,))


def curve_evaluator(bounds, values):
    """Evaluator whose throughput depends only on the config's area level."""
    am = AreaModel()
    levels = group_by_area(enumerate_configs(bounds, am), am)
    by_area = {area: Fraction(values[i]) for i, (area, _) in enumerate(levels)}

    def ev(cfg):
        # configs off the ladder (the reference baseline) score a constant
        tput = by_area.get(am.area_of(cfg), Fraction(1))
        return {"tiny": ModelEval(throughput=tput, solution=None)}
    return ev


def test_model_costs_covers_grid():
    cfg = make_config(2, 2, 16, 8, 4 * MIB, 32 << 30)
    costs = model_costs(TINY, cfg)
    assert set(costs) == {(1, 1)}
    assert len(costs[(1, 1)]) == 3
    assert all(c.fw >= 1 and c.bw >= 1 for c in costs[(1, 1)])


def test_evaluate_config_feasible():
    cfg = make_config(2, 2, 16, 8, 4 * MIB, 32 << 30)
    out = evaluate_config([TINY], cfg, params=None, gpipe=False,
                          recompute_modes=(False, True),
                          cache=LatencyCache(), time_limit=10.0)
    ev = out["tiny"]
    assert ev.throughput > 0 and ev.solution is not None
    assert ev.error is None


def test_evaluate_config_infeasible_scores_zero():
    starved = synth_workload("tiny", 3, hidden=128, seq=16, vocab=64,
                             tmp_widths=(1,), microbatch_sizes=(1,),
                             minibatch_size=4, num_accelerators=2,
                             bandwidth_bytes_per_tick=1024,
                             hbm_candidates_bytes=(1,))
    cfg = make_config(2, 2, 16, 8, 4 * MIB, 32 << 30)
    out = evaluate_config([starved], cfg, params=None, gpipe=False,
                          recompute_modes=(False, True),
                          cache=LatencyCache(), time_limit=10.0)
    ev = out["tiny"]
    assert ev.throughput == 0 and ev.solution is None
    assert ev.error


def test_unimodal_curve_hysteresis_six_finds_peak():
    bounds = ladder_bounds(12)
    values = [2, 3, 9, 9, 9, 8, 7, 6, 5, 4, 3, 2]
    rep = run_search([TINY], bounds=bounds, hysteresis=6,
                     evaluator=curve_evaluator(bounds, values))
    assert rep.converged
    # the plateau's last level heads the strictly-decreasing window
    # [9, 8, 7, 6, 5, 4], so the search stops two levels early
    assert rep.explored_levels == 10
    assert rep.best_common.mean == 9
    # level 2 is the third-largest area, i.e. the third-largest buffer
    assert rep.best_common.cfg.glb_bytes == (4 + 9) * MIB


def test_unimodal_curve_hysteresis_one_stops_at_largest_area():
    bounds = ladder_bounds(12)
    values = [2, 3, 9, 9, 9, 8, 7, 6, 5, 4, 3, 2]
    rep = run_search([TINY], bounds=bounds, hysteresis=1,
                     evaluator=curve_evaluator(bounds, values))
    assert rep.converged and rep.explored_levels == 1
    assert rep.best_common.cfg.glb_bytes == (4 + 11) * MIB
    assert rep.best_common.mean == 2


def test_exhaustive_ignores_convergence():
    bounds = ladder_bounds(12)
    values = [2, 3, 9, 9, 9, 8, 7, 6, 5, 4, 3, 2]
    rep = run_search([TINY], bounds=bounds, hysteresis=1, exhaustive=True,
                     evaluator=curve_evaluator(bounds, values))
    assert not rep.converged
    assert rep.explored_levels == rep.total_levels == 12
    assert rep.trace[-1].decision == "exhausted"
    assert rep.best_common.mean == 9


def test_weighted_mean_ranks_configs():
    bounds = ladder_bounds(2)
    am = AreaModel()
    levels = group_by_area(enumerate_configs(bounds, am), am)
    big, small = levels[0][0], levels[1][0]

    def ev(cfg):
        if am.area_of(cfg) == big:
            return {"a": ModelEval(Fraction(4), None),
                    "b": ModelEval(Fraction(1), None)}
        return {"a": ModelEval(Fraction(1), None),
                "b": ModelEval(Fraction(10), None)}

    a = synth_workload("a", 3, hidden=128, seq=16, vocab=64)
    b = synth_workload("b", 3, hidden=128, seq=16, vocab=64)
    rep = run_search([a, b], bounds=bounds, hysteresis=1, exhaustive=True,
                     evaluator=ev, weights={"a": 3, "b": 1})
    # big: (3*4 + 1)/4 = 13/4; small: (3 + 10)/4 = 13/4 -> tie, larger area
    assert rep.best_common.mean == Fraction(13, 4)
    assert am.area_of(rep.best_common.cfg) == big
    # per-model bests differ from the common best
    assert rep.best_per_model["a"].cfg == rep.best_common.cfg
    assert am.area_of(rep.best_per_model["b"].cfg) == small


def test_all_infeasible_report():
    bounds = ladder_bounds(3)

    def ev(cfg):
        return {"tiny": ModelEval(Fraction(0), None, error="no fit")}

    rep = run_search([TINY], bounds=bounds, hysteresis=1, exhaustive=True,
                     evaluator=ev)
    assert rep.best_common is None
    assert not rep.feasible
    assert rep.best_per_model["tiny"] is None
    assert rep.speedups["tiny"] is None
    assert rep.geomean_speedup is None


def test_duplicate_model_names_rejected():
    with pytest.raises(ValueError):
        run_search([TINY, TINY], bounds=ladder_bounds(2))


def test_search_real_models_and_report_files(tmp_path):
    rep = run_search([TINY], bounds=SMALL, hysteresis=2, time_limit=10.0)
    assert rep.feasible
    paths = report_write(rep, str(tmp_path / "out"))
    names = [p.rsplit("/", 1)[-1] for p in paths]
    assert names == ["report.json", "trace.csv", "summary.txt"]
    doc = json.loads((tmp_path / "out" / "report.json").read_text())
    assert doc["converged"] == rep.converged
    assert doc["best_common"]["config"]["num_tc"] == rep.best_common.cfg.num_tc
    trace_lines = (tmp_path / "out" / "trace.csv").read_text().splitlines()
    assert len(trace_lines) == rep.explored_levels + 1
    summary = (tmp_path / "out" / "summary.txt").read_text()
    assert "best common config" in summary


def test_report_bytes_deterministic(tmp_path):
    rep1 = run_search([TINY], bounds=SMALL, hysteresis=2, time_limit=10.0)
    rep2 = run_search([TINY], bounds=SMALL, hysteresis=2, time_limit=10.0)
    p1 = report_write(rep1, str(tmp_path / "r1"))
    p2 = report_write(rep2, str(tmp_path / "r2"))
    for a, b in zip(p1, p2):
        assert open(a, "rb").read() == open(b, "rb").read()


def test_parallel_workers_match_serial(tmp_path):
    serial = run_search([TINY], bounds=SMALL, hysteresis=2, workers=1,
                        time_limit=10.0)
    parallel = run_search([TINY], bounds=SMALL, hysteresis=2, workers=3,
                          time_limit=10.0)
    p1 = report_write(serial, str(tmp_path / "s"))
    p2 = report_write(parallel, str(tmp_path / "p"))
    assert open(p1[0], "rb").read() == open(p2[0], "rb").read()


def test_workers_come_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("PHAZE_WORKERS", "2")
    rep = run_search([TINY], bounds=SMALL, hysteresis=2, time_limit=10.0)
    assert rep.feasible


def test_speedups_vs_explicit_baseline():
    bounds = ladder_bounds(2)
    am = AreaModel()
    levels = group_by_area(enumerate_configs(bounds, am), am)
    base_cfg = levels[1][1][0]  # the small config

    def ev(cfg):
        v = 6 if am.area_of(cfg) == levels[0][0] else 2
        return {"tiny": ModelEval(Fraction(v), None)}

    rep = run_search([TINY], bounds=bounds, hysteresis=1, exhaustive=True,
                     evaluator=ev, baseline_cfg=base_cfg)
    assert rep.baseline.cfg == base_cfg
    assert rep.speedups["tiny"] == Fraction(3)
    assert rep.geomean_speedup == pytest.approx(3.0)
