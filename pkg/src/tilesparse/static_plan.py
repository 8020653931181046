"""Compile-time partitioning for a fixed sparsity pattern.

The k dimension is split at block-column granularity into qk ranges chosen
to balance block counts; the n dimension into qn equal-except-last ranges.
Values are then reordered so each k-partition's blocks are contiguous.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass

import numpy as np

from . import costmodel
from .machine import MachineConfig
from .matrices import BlockMask, BlockSparseMatrix


@dataclass(frozen=True)
class StaticPlan:
    """Partition grid and block ownership for static execution.

    k_boundaries are qk+1 strictly increasing block-column indices;
    n_boundaries are qn+1 column indices.  tile_of maps (k-partition,
    n-partition) to a distinct tile, n-partition innermost.
    per_partition_blocks[pk] lists the owned block coordinates in mask
    order.
    """

    mask: BlockMask
    n: int
    qk: int
    qn: int
    k_boundaries: tuple[int, ...]
    n_boundaries: tuple[int, ...]
    tile_of: dict[tuple[int, int], int]
    per_partition_blocks: list[np.ndarray]

    @property
    def tiles_used(self) -> int:
        return self.qk * self.qn

    def partition_block_counts(self) -> list[int]:
        return [len(c) for c in self.per_partition_blocks]

    def n_width(self, pn: int) -> int:
        return self.n_boundaries[pn + 1] - self.n_boundaries[pn]


def _greedy_boundaries(cum: list[int], ncols: int, q: int) -> list[int]:
    # Close a partition once its block count reaches ceil(total/q), or when
    # the columns left are needed one-per-remaining-partition (which keeps
    # boundaries strictly increasing).
    total = cum[-1]
    target = max(1, -(-total // q))
    bounds = [0]
    for j in range(q - 1):
        prev = bounds[-1]
        natural = bisect_left(cum, cum[prev] + target)
        forced = ncols - (q - 1 - j)
        bounds.append(max(min(natural, forced), prev + 1))
    bounds.append(ncols)
    return bounds


def balanced_k_splits(mask: BlockMask, qk: int) -> list[int]:
    """Block-column boundaries of qk partitions with balanced block counts.

    Greedy prefix-sum walk; every partition ends up with at most
    ceil(total/qk) + max_column_count - 1 blocks.  Trailing partitions may
    own no blocks.
    """
    ncols = mask.block_cols
    if not 1 <= qk <= ncols:
        raise ValueError(f"qk must be in [1, {ncols}], got {qk}")
    cum = [0]
    for c in mask.col_counts().tolist():
        cum.append(cum[-1] + c)
    return _greedy_boundaries(cum, ncols, qk)


def split_stats(col_counts: np.ndarray, qk_max: int):
    """For every qk in [1, qk_max]: the largest partition block count and the
    widest partition column span, indexed by qk (entry 0 unused)."""
    ncols = len(col_counts)
    cum = [0]
    for c in col_counts.tolist():
        cum.append(cum[-1] + c)
    max_blocks = np.zeros(qk_max + 1, dtype=np.int64)
    max_span = np.zeros(qk_max + 1, dtype=np.int64)
    for qk in range(1, qk_max + 1):
        bounds = _greedy_boundaries(cum, ncols, qk)
        max_blocks[qk] = max(cum[hi] - cum[lo] for lo, hi in zip(bounds, bounds[1:]))
        max_span[qk] = max(hi - lo for lo, hi in zip(bounds, bounds[1:]))
    return max_blocks, max_span


def choose_static_grid(
    m: int,
    k: int,
    n: int,
    b: int,
    mask: BlockMask,
    machine: MachineConfig,
    dtype: str = "fp16",
) -> tuple[int, int]:
    """Pick the (qk, qn) pair with the lowest modeled cycle count.

    Exhaustive over qk*qn <= tiles, qk <= block columns, qn <= n, skipping
    grids the memory audit rejects; ties prefer smaller qk, then smaller qn.
    (1, 1) is always feasible on desk-scale problems.
    """
    if (mask.m, mask.k, mask.b) != (m, k, b):
        raise ValueError("mask does not match the given dimensions")
    qk_limit = min(mask.block_cols, machine.tiles)
    max_blocks, max_span = split_stats(mask.col_counts(), qk_limit)
    best = costmodel.search_static_grid(
        m, k, n, b, mask.nblocks, max_blocks, max_span, dtype, machine
    )
    if best is None:
        raise ValueError("no memory-feasible static grid exists for this configuration")
    return best[0], best[1]


def build_static_plan(
    mask: BlockMask, qk: int, qn: int, n: int, machine: MachineConfig
) -> StaticPlan:
    """Materialize the plan for a given grid: boundaries, tile map, ownership."""
    if qk * qn > machine.tiles:
        raise ValueError(f"grid {qk}x{qn} exceeds {machine.tiles} tiles")
    if not 1 <= qn <= n:
        raise ValueError(f"qn must be in [1, {n}], got {qn}")
    k_bounds = balanced_k_splits(mask, qk)
    # balanced n-split: the remainder is spread one column at a time, so no
    # partition is more than one column wider than another
    base, extra = divmod(n, qn)
    widths = [base + 1] * extra + [base] * (qn - extra)
    n_bounds = [0]
    for w in widths:
        n_bounds.append(n_bounds[-1] + w)
    tile_of = {(pk, pn): pk * qn + pn for pk in range(qk) for pn in range(qn)}
    cols = mask.coords[:, 1]
    per_partition = [
        mask.coords[(cols >= lo) & (cols < hi)]
        for lo, hi in zip(k_bounds, k_bounds[1:])
    ]
    return StaticPlan(
        mask=mask,
        n=n,
        qk=qk,
        qn=qn,
        k_boundaries=tuple(k_bounds),
        n_boundaries=tuple(n_bounds),
        tile_of=tile_of,
        per_partition_blocks=per_partition,
    )


def reorder_values(s: BlockSparseMatrix, plan: StaticPlan) -> list[np.ndarray]:
    """Slice values so each k-partition's blocks are contiguous in plan order.

    Returns one flat array per k-partition; their concatenation is a
    block-level permutation of s.values.  The pattern is fixed at plan time,
    so the mask must be the one the plan was built from.
    """
    if s.mask is not plan.mask and (
        (s.mask.m, s.mask.k, s.mask.b) != (plan.mask.m, plan.mask.k, plan.mask.b)
        or not np.array_equal(s.mask.coords, plan.mask.coords)
    ):
        raise ValueError("sparsity pattern differs from the one the plan was built for")
    blocks = s.blocks3()
    cols = s.mask.coords[:, 1]
    slices = []
    for lo, hi in zip(plan.k_boundaries, plan.k_boundaries[1:]):
        idx = np.flatnonzero((cols >= lo) & (cols < hi))
        slices.append(blocks[idx].reshape(-1).copy())
    return slices
