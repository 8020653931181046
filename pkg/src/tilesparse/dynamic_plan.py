"""Planning and bucket encoding for runtime-varying sparsity patterns.

The plan fixes an (m, k, n) partition grid and bucket capacities from the
worst-case density alone.  At runtime a concrete pattern is encoded into
fixed-size buckets: every block goes to the bucket of its home (m, k)
partition, or, when that bucket is full, to the nearest following bucket in
the nested partition order.  Blocks placed away from home are what the
propagation steps later walk back.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import costmodel
from .machine import MachineConfig
from .matrices import BlockMask


def partition_sizes(dim: int, q: int) -> list[int]:
    """Split `dim` into q parts: q-1 of floor(dim/q) plus the remainder last."""
    if not 1 <= q <= dim:
        raise ValueError(f"q must be in [1, {dim}], got {q}")
    base = dim // q
    return [base] * (q - 1) + [dim - (q - 1) * base]


class MetaInfoEntry(NamedTuple):
    """Bookkeeping for one block inside a bucket.

    Block coordinates are relative to the home partition; value_offset indexes
    the bucket's value storage at block granularity.
    """

    home_pm: int
    home_pk: int
    block_row: int
    block_col: int
    value_offset: int


@dataclass(frozen=True)
class DynamicPlan:
    """Partition grid, bucket capacities and tile map for dynamic execution.

    part_m / part_k are element sizes rounded to whole blocks (each partition
    owns complete block rows/columns); part_n follows the plain
    equal-except-last rule.  bucket_value_capacity counts elements (a whole
    number of b*b blocks), bucket_meta_capacity counts entries.
    """

    m: int
    k: int
    n: int
    b: int
    d_max: float
    qm: int
    qk: int
    qn: int
    part_m: tuple[int, ...]
    part_k: tuple[int, ...]
    part_n: tuple[int, ...]
    bucket_value_capacity: int
    bucket_meta_capacity: int
    headroom: float
    tile_of: dict[tuple[int, int, int], int]

    @property
    def q_total(self) -> int:
        return self.qm * self.qk * self.qn

    @property
    def num_buckets(self) -> int:
        return self.qm * self.qk

    @property
    def capacity_blocks(self) -> int:
        return self.bucket_value_capacity // (self.b * self.b)

    def block_row_starts(self) -> np.ndarray:
        sizes = np.asarray(self.part_m, dtype=np.int64) // self.b
        return np.concatenate(([0], np.cumsum(sizes)))

    def block_col_starts(self) -> np.ndarray:
        sizes = np.asarray(self.part_k, dtype=np.int64) // self.b
        return np.concatenate(([0], np.cumsum(sizes)))


def make_dynamic_plan(
    m: int,
    k: int,
    n: int,
    b: int,
    d_max,
    machine: MachineConfig,
    qm: int,
    qk: int,
    qn: int,
    headroom: float | None = None,
) -> DynamicPlan:
    """Build the plan for an explicit grid (no search)."""
    if not 0 < d_max <= 1:
        raise ValueError(f"d_max must be in (0, 1], got {d_max}")
    if m % b or k % b:
        raise ValueError(f"b={b} must divide m={m} and k={k}")
    if qm * qk * qn > machine.tiles:
        raise ValueError(f"grid {qm}x{qk}x{qn} exceeds {machine.tiles} tiles")
    if headroom is None:
        headroom = machine.headroom
    mb, kb = m // b, k // b
    part_m = tuple(s * b for s in partition_sizes(mb, qm))
    part_k = tuple(s * b for s in partition_sizes(kb, qk))
    part_n = tuple(partition_sizes(n, qn))
    cap_v, cap_m = costmodel.bucket_capacity(m, k, b, d_max, qm * qk, headroom)
    tile_of = {
        (pm, pk, pn): (pm * qk + pk) * qn + pn
        for pm in range(qm)
        for pk in range(qk)
        for pn in range(qn)
    }
    return DynamicPlan(
        m=m,
        k=k,
        n=n,
        b=b,
        d_max=float(d_max),
        qm=qm,
        qk=qk,
        qn=qn,
        part_m=part_m,
        part_k=part_k,
        part_n=part_n,
        bucket_value_capacity=cap_v,
        bucket_meta_capacity=cap_m,
        headroom=headroom,
        tile_of=tile_of,
    )


def plan_dynamic(
    m: int,
    k: int,
    n: int,
    b: int,
    d_max,
    machine: MachineConfig,
    headroom: float | None = None,
    dtype: str = "fp16",
) -> DynamicPlan:
    """Search all feasible grids for the one with the lowest modeled cycles,
    assuming non-zeros spread uniformly at the worst-case density.  Ties
    break lexicographically on (qm, qk, qn)."""
    if not 0 < d_max <= 1:
        raise ValueError(f"d_max must be in (0, 1], got {d_max}")
    if m % b or k % b:
        raise ValueError(f"b={b} must divide m={m} and k={k}")
    if headroom is None:
        headroom = machine.headroom
    best = costmodel.search_dynamic_grid(m, k, n, b, d_max, headroom, dtype, machine)
    if best is None:
        raise ValueError("no memory-feasible dynamic grid exists for this configuration")
    qm, qk, qn, _ = best
    return make_dynamic_plan(m, k, n, b, d_max, machine, qm, qk, qn, headroom)


def bucket_distance(
    from_partition: tuple[int, int, int],
    to_partition: tuple[int, int, int],
    plan: DynamicPlan,
) -> int:
    """Forward cyclic steps between partitions in nested order (n innermost,
    then k, then m)."""
    for p in (from_partition, to_partition):
        pm, pk, pn = p
        if not (0 <= pm < plan.qm and 0 <= pk < plan.qk and 0 <= pn < plan.qn):
            raise ValueError(f"partition {p} outside grid {(plan.qm, plan.qk, plan.qn)}")
    idx_from = (from_partition[0] * plan.qk + from_partition[1]) * plan.qn + from_partition[2]
    idx_to = (to_partition[0] * plan.qk + to_partition[1]) * plan.qn + to_partition[2]
    return (idx_to - idx_from) % plan.q_total


@dataclass(frozen=True)
class BucketSet:
    """Per-(m,k)-partition buckets of entries plus their block values.

    Values are stored once per home grid cell and broadcast over the n
    partitions at runtime.  `values` is None for cost-only encodings.
    Processed flags live in the execution engine, not here.
    """

    plan: DynamicPlan
    entries: list[list[MetaInfoEntry]]
    values: list[np.ndarray] | None
    home_flat: np.ndarray  # per mask block, home cell index pm*qk+pk
    bucket_of: np.ndarray  # per mask block, bucket it was placed in

    @property
    def total_blocks(self) -> int:
        return len(self.home_flat)

    def spill_distances(self) -> np.ndarray:
        """Forward cyclic distance from home cell to placed bucket, per block."""
        return (self.bucket_of - self.home_flat) % self.plan.num_buckets

    def occupancy(self) -> np.ndarray:
        return np.bincount(self.bucket_of, minlength=self.plan.num_buckets)


def place_blocks(mask: BlockMask, plan: DynamicPlan):
    """Assign every block a bucket: home cell first, else the nearest
    following bucket with space, processing blocks in mask order.

    Returns (home_flat, bucket_of) index arrays.
    """
    if (mask.m, mask.k, mask.b) != (plan.m, plan.k, plan.b):
        raise ValueError("mask shape does not match plan")
    nb = mask.nblocks
    d = nb * mask.b * mask.b / (mask.m * mask.k)
    if d > plan.d_max + 1e-12:
        raise ValueError(f"pattern density {d} exceeds planned maximum {plan.d_max}")
    q_mk = plan.num_buckets
    row_starts = plan.block_row_starts()
    col_starts = plan.block_col_starts()
    pm = np.searchsorted(row_starts, mask.coords[:, 0], side="right") - 1
    pk = np.searchsorted(col_starts, mask.coords[:, 1], side="right") - 1
    home_flat = (pm * plan.qk + pk).astype(np.int64)
    cap = plan.capacity_blocks
    if cap * q_mk < nb:
        raise AssertionError("total bucket capacity below block count; planner bug")
    free = [cap] * q_mk
    bucket_of = np.empty(nb, dtype=np.int64)
    for i, h in enumerate(home_flat.tolist()):
        j = h
        while free[j] == 0:
            j = (j + 1) % q_mk
        free[j] -= 1
        bucket_of[i] = j
    return home_flat, bucket_of


def encode_buckets(mask: BlockMask, values, plan: DynamicPlan) -> BucketSet:
    """Encode a concrete pattern (and optionally its values) into buckets.

    Every block appears in exactly one bucket; capacity arithmetic guarantees
    success whenever the pattern's density is within the planned maximum.
    """
    home_flat, bucket_of = place_blocks(mask, plan)
    b = mask.b
    if values is not None:
        values = np.ascontiguousarray(np.asarray(values, dtype=np.float64))
        if values.shape != (mask.nblocks * b * b,):
            raise ValueError(f"values must be flat with {mask.nblocks * b * b} entries")
        blocks3 = values.reshape(mask.nblocks, b, b)
    row_starts = plan.block_row_starts()
    col_starts = plan.block_col_starts()
    entries: list[list[MetaInfoEntry]] = [[] for _ in range(plan.num_buckets)]
    chunks: list[list[np.ndarray]] = [[] for _ in range(plan.num_buckets)]
    for i in range(mask.nblocks):
        h = int(home_flat[i])
        j = int(bucket_of[i])
        pm, pk = divmod(h, plan.qk)
        brow = int(mask.coords[i, 0] - row_starts[pm])
        bcol = int(mask.coords[i, 1] - col_starts[pk])
        entries[j].append(MetaInfoEntry(pm, pk, brow, bcol, len(entries[j])))
        if values is not None:
            chunks[j].append(blocks3[i])
    for bucket, entry_list in enumerate(entries):
        if len(entry_list) > plan.bucket_meta_capacity:
            raise AssertionError(f"bucket {bucket} overflows its entry capacity")
    bucket_values = None
    if values is not None:
        empty = np.empty((0, b, b))
        bucket_values = [
            np.concatenate(c).reshape(-1) if c else empty.reshape(-1) for c in chunks
        ]
    return BucketSet(
        plan=plan,
        entries=entries,
        values=bucket_values,
        home_flat=home_flat,
        bucket_of=bucket_of,
    )
