"""Bulk-synchronous execution of static and dynamic plans.

Runs compute real numeric results (float64) and, independently, account every
phase with the analytic cost model.  The same phase builders also back the
cost-only traces the benchmark sweep records, so a numeric run and a
cost-only run of the same configuration report identical cycle counts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import costmodel
from .costmodel import Phase, compute_cycles, exchange_cycles  # noqa: F401 (re-export)
from .dynamic_plan import BucketSet, DynamicPlan
from .machine import MachineConfig
from .matrices import BlockSparseMatrix, density, flop_count
from .static_plan import StaticPlan

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExecutionTrace:
    """Per-phase cycle and byte accounting of one simulated run.

    achieved_flops counts only non-zero-element work (2*m*k*n*d) against
    total wall cycles at the configured clock.  per_tile_macs lists compute
    MACs per participating tile in tile-id order; reduction adds are
    reported on the reduce phase, not here.
    """

    phases: tuple[Phase, ...]
    propagation_steps: int
    per_tile_macs: tuple[int, ...]
    total_cycles: int
    achieved_flops: float
    access_log: tuple | None = None


def _make_trace(phases, steps, per_tile_macs, useful_flops, machine, access_log=None):
    total = int(sum(p.cycles for p in phases))
    flops = useful_flops / (total / machine.clock_hz) if total else 0.0
    return ExecutionTrace(
        phases=tuple(phases),
        propagation_steps=steps,
        per_tile_macs=tuple(int(v) for v in per_tile_macs),
        total_cycles=total,
        achieved_flops=flops,
        access_log=access_log,
    )


class _AccessAudit:
    """Records which tile received which resource and checks that compute
    phases only read resources delivered (or pre-placed) earlier."""

    def __init__(self):
        self.events: list[tuple] = []
        self._have: set[tuple] = set()

    def deliver(self, phase: int, owner, resource):
        self.events.append(("deliver", phase, owner, resource))
        self._have.add((owner, resource))

    def read(self, phase: int, owner, resource):
        self.events.append(("read", phase, owner, resource))
        if (owner, resource) not in self._have:
            raise AssertionError(
                f"BSP violation: {owner} read {resource} in phase {phase} before delivery"
            )


def _tree_reduce(parts: list[np.ndarray]) -> np.ndarray:
    """Binary-tree sum in partition-index order (pairs (0,1), (2,3), ...)."""
    while len(parts) > 1:
        nxt = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def _warn_memory(kind: str, demand: int, machine: MachineConfig) -> None:
    if demand > machine.tile_memory_bytes:
        logger.warning(
            "%s run exceeds modeled tile memory: %d > %d bytes per tile",
            kind,
            int(demand),
            machine.tile_memory_bytes,
        )


# ---------------------------------------------------------------------------
# static


def trace_static(plan: StaticPlan, machine: MachineConfig, dtype: str) -> ExecutionTrace:
    """Cost-only trace of a static plan (no values needed)."""
    mask = plan.mask
    counts = plan.partition_block_counts()
    max_blocks = max(counts)
    max_span = max(hi - lo for lo, hi in zip(plan.k_boundaries, plan.k_boundaries[1:]))
    phases = costmodel.static_phases(
        mask.m, mask.k, plan.n, mask.b, plan.qk, plan.qn, max_blocks, mask.nblocks, dtype, machine
    )
    _warn_memory(
        "static",
        costmodel.static_audit_bytes(
            mask.m, mask.k, plan.n, mask.b, plan.qk, plan.qn,
            max_blocks, max_span, mask.nblocks, dtype, machine,
        ),
        machine,
    )
    b2 = mask.b * mask.b
    per_tile = [
        counts[pk] * b2 * plan.n_width(pn)
        for pk in range(plan.qk)
        for pn in range(plan.qn)
    ]
    useful = flop_count(mask.m, mask.k, plan.n, density(mask))
    return _make_trace(phases, 0, per_tile, useful, machine)


def run_static(
    plan: StaticPlan,
    s: BlockSparseMatrix,
    x: np.ndarray,
    machine: MachineConfig,
    dtype: str,
    audit: bool = False,
) -> tuple[np.ndarray, ExecutionTrace]:
    """Execute a static plan: per-partition block products, one sync, then a
    tree reduction of the qk partials.  The numeric result matches the dense
    oracle to 1e-9 relative (reduction order may differ)."""
    mask = plan.mask
    if s.mask is not plan.mask and not (
        (s.mask.m, s.mask.k, s.mask.b) == (mask.m, mask.k, mask.b)
        and np.array_equal(s.mask.coords, mask.coords)
    ):
        raise ValueError("operand pattern differs from the plan's pattern")
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape != (mask.k, plan.n):
        raise ValueError(f"dense operand must be {mask.k}x{plan.n}, got {x.shape}")
    b = mask.b
    log = _AccessAudit() if audit else None
    if log:
        for pk in range(plan.qk):
            for pn in range(plan.qn):
                log.deliver(-1, ("tile", pk, pn), ("values", pk))  # host pre-placed
                log.deliver(0, ("tile", pk, pn), ("x", pk, pn))
    blocks3 = s.blocks3()
    cols = mask.coords[:, 1]
    partials = []
    for pk, (lo, hi) in enumerate(zip(plan.k_boundaries, plan.k_boundaries[1:])):
        if log:
            for pn in range(plan.qn):
                log.read(1, ("tile", pk, pn), ("values", pk))
                log.read(1, ("tile", pk, pn), ("x", pk, pn))
        # Densify just this partition's column span; with qk = 1 this is
        # exactly the oracle's densify-then-multiply computation.
        span = np.zeros((mask.m, (hi - lo) * b))
        idx = np.flatnonzero((cols >= lo) & (cols < hi))
        if len(idx):
            view = span.reshape(mask.block_rows, b, hi - lo, b).transpose(0, 2, 1, 3)
            view[mask.coords[idx, 0], cols[idx] - lo] = blocks3[idx]
        partials.append(span @ x[lo * b : hi * b])
    y = _tree_reduce(partials)
    trace = trace_static(plan, machine, dtype)
    if log:
        trace = replace(trace, access_log=tuple(log.events))
    return y, trace


# ---------------------------------------------------------------------------
# dynamic


def _dynamic_stats(plan: DynamicPlan, home_flat: np.ndarray, bucket_of: np.ndarray):
    q_mk = plan.num_buckets
    occupancy = np.bincount(bucket_of, minlength=q_mk)
    dist = (bucket_of - home_flat) % q_mk
    steps = int(dist.max()) if len(dist) else 0
    matches = np.zeros((q_mk, steps + 1), dtype=np.int64)
    np.add.at(matches, (home_flat, dist), 1)
    return occupancy, matches, steps


def trace_dynamic_stats(
    plan: DynamicPlan,
    home_flat: np.ndarray,
    bucket_of: np.ndarray,
    machine: MachineConfig,
    dtype: str,
) -> ExecutionTrace:
    """Cost-only dynamic trace from block placements alone."""
    occupancy, matches, steps = _dynamic_stats(plan, home_flat, bucket_of)
    phases = costmodel.dynamic_phases(
        plan.m, plan.k, plan.n, plan.b, plan.qm, plan.qk, plan.qn,
        max(plan.part_m), max(plan.part_k),
        plan.bucket_value_capacity, plan.bucket_meta_capacity,
        occupancy, matches, dtype, machine,
    )
    _warn_memory(
        "dynamic",
        costmodel.dynamic_audit_bytes(
            plan.m, plan.k, plan.n, plan.b, plan.qm, plan.qk, plan.qn,
            plan.bucket_value_capacity, plan.bucket_meta_capacity, dtype, machine,
        ),
        machine,
    )
    b2 = plan.b * plan.b
    home_counts = np.bincount(home_flat, minlength=plan.num_buckets)
    per_tile = [
        int(home_counts[pm * plan.qk + pk]) * b2 * plan.part_n[pn]
        for pm in range(plan.qm)
        for pk in range(plan.qk)
        for pn in range(plan.qn)
    ]
    nb = len(home_flat)
    useful = flop_count(plan.m, plan.k, plan.n, nb * b2 / (plan.m * plan.k))
    return _make_trace(phases, steps, per_tile, useful, machine)


def trace_dynamic(buckets: BucketSet, machine: MachineConfig, dtype: str) -> ExecutionTrace:
    return trace_dynamic_stats(buckets.plan, buckets.home_flat, buckets.bucket_of, machine, dtype)


def run_dynamic(
    plan: DynamicPlan,
    buckets: BucketSet,
    x: np.ndarray,
    machine: MachineConfig,
    dtype: str,
    audit: bool = False,
) -> tuple[np.ndarray, ExecutionTrace]:
    """Execute encoded buckets: a distribution step computes every entry
    already home, then buckets shift one slot backward per propagation step
    until all entries have been processed, then partials reduce across qk.

    Raises RuntimeError if the loop would exceed qm*qk steps (an encoding or
    shift inconsistency).
    """
    if buckets.plan is not plan:
        raise ValueError("bucket set was encoded under a different plan")
    if buckets.values is None:
        raise ValueError("bucket set carries no values; encode with values to run")
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape != (plan.k, plan.n):
        raise ValueError(f"dense operand must be {plan.k}x{plan.n}, got {x.shape}")
    b = plan.b
    q_mk = plan.num_buckets
    log = _AccessAudit() if audit else None
    if log:
        for cell in range(q_mk):
            log.deliver(-1, ("group", cell), ("bucket", cell))  # host upload
            pm, pk = divmod(cell, plan.qk)
            log.deliver(0, ("group", cell), ("x", pk))
    x3 = x.reshape(plan.k // b, b, plan.n)
    col_starts = plan.block_col_starts()
    row_blocks = [p // b for p in plan.part_m]
    # per bucket: entry fields as arrays, grouped lazily by home cell
    bucket_home = []
    bucket_rows = []
    bucket_gcols = []
    bucket_vals3 = []
    for j, entry_list in enumerate(buckets.entries):
        home = np.array([e.home_pm * plan.qk + e.home_pk for e in entry_list], dtype=np.int64)
        rows = np.array([e.block_row for e in entry_list], dtype=np.int64)
        gcols = np.array(
            [col_starts[e.home_pk] + e.block_col for e in entry_list], dtype=np.int64
        )
        bucket_home.append(home)
        bucket_rows.append(rows)
        bucket_gcols.append(gcols)
        bucket_vals3.append(buckets.values[j].reshape(-1, b, b))
    partial3 = {
        (pm, pk): np.zeros((row_blocks[pm], b, plan.n))
        for pm in range(plan.qm)
        for pk in range(plan.qk)
    }
    remaining = [len(e) for e in buckets.entries]

    def process(step: int, phase: int) -> None:
        for cell in range(q_mk):
            j = (cell + step) % q_mk
            if not len(bucket_home[j]):
                continue
            sel = np.flatnonzero(bucket_home[j] == cell)
            if not len(sel):
                continue
            if log:
                log.read(phase, ("group", cell), ("bucket", j))
                log.read(phase, ("group", cell), ("x", cell % plan.qk))
            pm, pk = divmod(cell, plan.qk)
            prods = bucket_vals3[j][sel] @ x3[bucket_gcols[j][sel]]
            np.add.at(partial3[(pm, pk)], bucket_rows[j][sel], prods)
            remaining[j] -= len(sel)

    process(0, 1)
    steps = 0
    phase = 1
    while any(remaining):
        steps += 1
        if steps > q_mk:
            raise RuntimeError(
                f"propagation did not terminate within {q_mk} steps; "
                "bucket encoding and shift schedule are inconsistent"
            )
        if log:
            for cell in range(q_mk):
                log.deliver(phase + 1, ("group", cell), ("bucket", (cell + steps) % q_mk))
        phase += 2
        process(steps, phase)
    ys = []
    for pm in range(plan.qm):
        parts = [
            partial3[(pm, pk)].reshape(row_blocks[pm] * b, plan.n) for pk in range(plan.qk)
        ]
        ys.append(_tree_reduce(parts))
    y = np.concatenate(ys, axis=0)
    trace = trace_dynamic(buckets, machine, dtype)
    if trace.propagation_steps != steps:
        raise AssertionError("executed steps disagree with placement distances")
    if log:
        trace = replace(trace, access_log=tuple(log.events))
    return y, trace


# ---------------------------------------------------------------------------
# dense baseline


def run_dense_baseline(
    m: int, k: int, n: int, machine: MachineConfig, dtype: str
) -> ExecutionTrace:
    """Cost-only dense matmul spread evenly over a searched (qm, qk, qn) grid."""
    if m <= 0 or k <= 0 or n <= 0:
        raise ValueError("dimensions must be positive")
    best = costmodel.search_dense_grid(m, k, n, dtype, machine)
    if best is None:
        logger.warning("no dense grid fits modeled memory; costing the best grid anyway")
        roomy = replace(machine, tile_memory_bytes=1 << 62)
        best = costmodel.search_dense_grid(m, k, n, dtype, roomy)
    qm, qk, qn, _ = best
    phases = costmodel.dense_phases(m, k, n, qm, qk, qn, dtype, machine)
    _warn_memory(
        "dense", costmodel.dense_audit_bytes(m, k, n, qm, qk, qn, dtype, machine), machine
    )

    def balanced(dim, q):
        base, extra = divmod(dim, q)
        return [base + 1] * extra + [base] * (q - extra)

    per_tile = [
        sm * sk * sn
        for sm in balanced(m, qm)
        for sk in balanced(k, qk)
        for sn in balanced(n, qn)
    ]
    return _make_trace(phases, 0, per_tile, flop_count(m, k, n, 1.0), machine)


def spmm_cost_trace(mask, n: int, mode: str, machine: MachineConfig, dtype: str):
    """Plan one sparse matmul point and cost it without values.

    Returns (trace, plan); for dynamic mode the pattern's own density is the
    planned maximum.
    """
    from .dynamic_plan import place_blocks, plan_dynamic
    from .static_plan import build_static_plan, choose_static_grid

    if mode == "static":
        qk, qn = choose_static_grid(mask.m, mask.k, n, mask.b, mask, machine, dtype)
        plan = build_static_plan(mask, qk, qn, n, machine)
        return trace_static(plan, machine, dtype), plan
    if mode == "dynamic":
        plan = plan_dynamic(mask.m, mask.k, n, mask.b, density(mask), machine, dtype=dtype)
        home, bucket = place_blocks(mask, plan)
        return trace_dynamic_stats(plan, home, bucket, machine, dtype), plan
    raise ValueError(f"unknown sparse mode {mode!r}")


def relative_close(a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> bool:
    """Elementwise |a-b| <= tol*|b| + tol, the comparison used for oracle checks."""
    return bool(np.allclose(a, b, rtol=tol, atol=tol))
