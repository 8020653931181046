"""Block-sparse x dense matmul on a simulated bulk-synchronous tile machine.

Static plans split the k dimension unevenly to balance non-zeros at compile
time; dynamic plans fix a uniform grid and encode runtime patterns into
fixed-capacity buckets, propagating overflow between tiles.  Both execute on
a cost-modeled tile machine, and a sweep harness benchmarks the parameter
grid and fits a power-law speedup model.
"""

from .bench import (
    PowerLawFit,
    SweepRecord,
    best_over_batch,
    crossover_density,
    fit_power_law,
    fit_power_law_points,
    parse_density,
    read_records_csv,
    speedup_grid,
    sweep,
)
from .costmodel import Phase, compute_cycles, exchange_cycles
from .dynamic_plan import (
    BucketSet,
    DynamicPlan,
    MetaInfoEntry,
    bucket_distance,
    encode_buckets,
    make_dynamic_plan,
    partition_sizes,
    place_blocks,
    plan_dynamic,
)
from .machine import MachineConfig, load_machine_config, save_machine_config
from .matrices import (
    BlockMask,
    BlockSparseMatrix,
    dense_matmul,
    densify,
    density,
    flop_count,
    random_block_mask,
    random_block_values,
    random_dense,
    spmm_oracle,
)
from .simulate import (
    ExecutionTrace,
    relative_close,
    run_dense_baseline,
    run_dynamic,
    run_static,
    spmm_cost_trace,
    trace_dynamic,
    trace_static,
)
from .static_plan import (
    StaticPlan,
    balanced_k_splits,
    build_static_plan,
    choose_static_grid,
    reorder_values,
)

__version__ = "0.1.0"

__all__ = [
    "BlockMask",
    "BlockSparseMatrix",
    "BucketSet",
    "DynamicPlan",
    "ExecutionTrace",
    "MachineConfig",
    "MetaInfoEntry",
    "Phase",
    "PowerLawFit",
    "StaticPlan",
    "SweepRecord",
    "balanced_k_splits",
    "best_over_batch",
    "bucket_distance",
    "build_static_plan",
    "choose_static_grid",
    "compute_cycles",
    "crossover_density",
    "dense_matmul",
    "densify",
    "density",
    "encode_buckets",
    "exchange_cycles",
    "fit_power_law",
    "fit_power_law_points",
    "flop_count",
    "load_machine_config",
    "make_dynamic_plan",
    "parse_density",
    "partition_sizes",
    "place_blocks",
    "plan_dynamic",
    "random_block_mask",
    "random_block_values",
    "random_dense",
    "read_records_csv",
    "relative_close",
    "reorder_values",
    "run_dense_baseline",
    "run_dynamic",
    "run_static",
    "save_machine_config",
    "speedup_grid",
    "spmm_cost_trace",
    "spmm_oracle",
    "sweep",
    "trace_dynamic",
    "trace_static",
]
