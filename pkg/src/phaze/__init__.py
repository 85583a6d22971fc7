"""Joint search over accelerator configurations and device placement.

The pipeline, bottom to top:

- :mod:`phaze.workload` models per-layer operator graphs and training setup;
- :mod:`phaze.costmodel` turns operators into tick latencies on a config;
- :mod:`phaze.schedule_ilp` schedules one layer's graph exactly;
- :mod:`phaze.placement_dp` splits the layer chain into pipeline stages and
  picks parallelization degrees;
- :mod:`phaze.archspace` enumerates configs in descending area order;
- :mod:`phaze.driver` runs the whole search and writes reports.
"""

from .archspace import (AcceleratorConfig, AreaModel, SearchBounds,
                        check_converge, derived_l2, enumerate_configs,
                        group_by_area, make_config, reference_config)
from .costmodel import (CostModelParams, OperatorEstimate, allreduce_ticks,
                        estimate, estimate_graph, transfer_ticks)
from .driver import (ConfigRecord, ModelEval, SearchReport, evaluate_config,
                     model_costs, report_write, run_search)
from .placement_dp import (InfeasibleError, LayerCosts, PlacementSolution,
                           StagePlan, dp_solve, explain, final_time_per_batch,
                           solve_placement, stage_load, stage_memory)
from .schedule_ilp import (IlpModel, LatencyCache, LayerSchedule, OpSchedule,
                           ZFamilies, build_model, export_lp, layer_latencies,
                           solve, solve_lazy, validate_schedule)
from .workload import (Layer, LayerGraph, Operator, OperatorGraph,
                       TrainingParams, Workload, WorkloadError,
                       derive_backward_graph, parse_workload,
                       serialize_workload, validate_linear, write_workload)

__all__ = [
    "AcceleratorConfig", "AreaModel", "SearchBounds", "check_converge",
    "derived_l2", "enumerate_configs", "group_by_area", "make_config",
    "reference_config",
    "CostModelParams", "OperatorEstimate", "allreduce_ticks", "estimate",
    "estimate_graph", "transfer_ticks",
    "ConfigRecord", "ModelEval", "SearchReport", "evaluate_config",
    "model_costs", "report_write", "run_search",
    "InfeasibleError", "LayerCosts", "PlacementSolution", "StagePlan",
    "dp_solve", "explain", "final_time_per_batch", "solve_placement",
    "stage_load", "stage_memory",
    "IlpModel", "LatencyCache", "LayerSchedule", "OpSchedule", "ZFamilies",
    "build_model", "export_lp", "layer_latencies", "solve", "solve_lazy",
    "validate_schedule",
    "Layer", "LayerGraph", "Operator", "OperatorGraph", "TrainingParams",
    "Workload", "WorkloadError", "derive_backward_graph", "parse_workload",
    "serialize_workload", "validate_linear", "write_workload",
]

__version__ = "0.1.0"
