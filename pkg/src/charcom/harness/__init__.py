"""Benchmark harness: world building, experiment runs, persistence, reports."""

from .bench import StoryBenchmark, gen_benchmark, read_benchmark, write_benchmark
from .run import (
    ExperimentRecord,
    MethodSpec,
    SummaryRow,
    ablation_suite,
    compare_methods,
    refcount_sweep,
    run_method,
    scaling_sweep,
    sign_test_p,
    summarize,
)
from .store import (
    AdapterFormatError,
    adapter_file_size,
    load_adapter,
    load_backbone,
    save_adapter,
    save_backbone,
)
from .world import World, WorldConfig, build_world, retrain_adapters
from .report import emit_report, write_csv, write_markdown

__all__ = [
    "AdapterFormatError",
    "ExperimentRecord",
    "MethodSpec",
    "StoryBenchmark",
    "SummaryRow",
    "World",
    "WorldConfig",
    "ablation_suite",
    "adapter_file_size",
    "build_world",
    "compare_methods",
    "emit_report",
    "gen_benchmark",
    "load_adapter",
    "load_backbone",
    "read_benchmark",
    "refcount_sweep",
    "retrain_adapters",
    "run_method",
    "save_adapter",
    "save_backbone",
    "scaling_sweep",
    "sign_test_p",
    "summarize",
    "write_benchmark",
    "write_csv",
    "write_markdown",
]
