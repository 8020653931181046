"""Analytic cycle-cost model for the bulk-synchronous tile machine.

One set of formulas serves three callers: the grid searches in the planners,
the cost-only traces recorded by the benchmark sweep, and the numeric runs.
A phase's cycle count is gated by its slowest tile; exchange counts each
distinct datum once (the fabric multicasts), so weights pre-placed at
compile time move no bytes.

Cycle counts are integers.  Ceilings are taken on IEEE double quotients,
which is deterministic across platforms for the magnitudes involved.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .machine import META_ENTRY_BYTES, MachineConfig

_INFEASIBLE = 1 << 62


class Phase(NamedTuple):
    kind: str  # exchange | compute | sync | reduce
    cycles: int
    bytes_moved: int
    macs_done: int


def compute_cycles(macs: int, b: int, dtype: str, machine: MachineConfig) -> int:
    """Cycles for `macs` multiply-accumulates on one tile; zero work is free."""
    if macs < 0:
        raise ValueError("macs must be non-negative")
    if macs == 0:
        return 0
    return math.ceil(macs / machine.macs_per_cycle(dtype, b))


def exchange_cycles(nbytes: int, machine: MachineConfig) -> int:
    """Cycles to move `nbytes` through the exchange fabric."""
    if nbytes < 0:
        raise ValueError("bytes must be non-negative")
    if nbytes == 0:
        return 0
    return math.ceil(nbytes / machine.exchange_bytes_per_cycle)


def _ceil_rate(amount, rate):
    """Elementwise ceil(amount / rate) as int64, with 0 -> 0."""
    arr = np.ceil(np.asarray(amount, dtype=np.float64) / rate)
    return np.where(np.asarray(amount) > 0, arr, 0).astype(np.int64)


def last_part_size(dim: int, q) -> np.ndarray | int:
    """Largest partition size under the equal-except-last rule (the whole
    remainder lands on the last partition)."""
    q_arr = np.asarray(q, dtype=np.int64)
    out = dim - (q_arr - 1) * (dim // q_arr)
    return out if out.ndim else int(out)


def balanced_part_max(dim: int, q) -> np.ndarray | int:
    """Largest partition size under a balanced split (remainder spread one
    element at a time), i.e. ceil(dim/q)."""
    q_arr = np.asarray(q, dtype=np.int64)
    out = -(-dim // q_arr)
    return out if out.ndim else int(out)


def _exchange_cycles_h(agg_bytes, h_bytes, machine):
    """Exchange cycles under the h-relation: the phase lasts as long as the
    busiest tile's traffic at its port share of the fabric, never less than
    the aggregate-bandwidth bound."""
    agg = _ceil_rate(agg_bytes, machine.exchange_bytes_per_cycle)
    port = machine.exchange_bytes_per_cycle / machine.tiles
    return np.maximum(agg, _ceil_rate(h_bytes, port))


def _reduce_phase(q, total_elems, max_tile_partial, dtype, machine, h_priced=False) -> Phase:
    """One gather superstep summing q partials of `total_elems` total each:
    every output chunk's owner pulls the q-1 foreign copies and adds them.
    Generic (runtime-planned) reductions additionally pay the h-relation on
    the busiest tile's receive traffic."""
    bpe = machine.bytes_per_element(dtype)
    nbytes = (q - 1) * total_elems * bpe
    chunk = -(-max_tile_partial // q)
    if h_priced:
        exch = int(_exchange_cycles_h(nbytes, (q - 1) * chunk * bpe, machine))
    else:
        exch = exchange_cycles(nbytes, machine)
    add_c = compute_cycles((q - 1) * chunk, 16, dtype, machine)
    adds = (q - 1) * total_elems
    return Phase("reduce", exch + machine.sync_cycles + add_c, nbytes, adds)


# ---------------------------------------------------------------------------
# static execution


def static_phases(
    m: int,
    k: int,
    n: int,
    b: int,
    qk: int,
    qn: int,
    max_blocks: int,
    total_blocks: int,
    dtype: str,
    machine: MachineConfig,
) -> list[Phase]:
    """Phase schedule for a static plan whose fullest partition holds
    `max_blocks` blocks: input broadcast, local block products, sync, and a
    tree reduction of the per-partition partials when qk > 1."""
    bpe = machine.bytes_per_element(dtype)
    w_max = balanced_part_max(n, qn)
    bytes_in = k * n * bpe
    phases = [
        Phase("exchange", exchange_cycles(bytes_in, machine), bytes_in, 0),
        Phase(
            "compute",
            compute_cycles(max_blocks * b * b * w_max, b, dtype, machine),
            0,
            total_blocks * b * b * n,
        ),
        Phase("sync", machine.sync_cycles, 0, 0),
    ]
    if qk > 1:
        phases.append(_reduce_phase(qk, m * n, m * w_max, dtype, machine))
    return phases


def static_audit_bytes(m, k, n, b, qk, qn, max_blocks, max_span_cols, total_blocks, dtype, machine):
    """Modeled per-tile memory demand of a static plan.

    Chip-level residency (one copy of the values and the input, plus qk
    output partials) averaged over all tiles, floored by the busiest tile's
    working set (its input slice and output partial).  Values are placed at
    compile time and modeled as streaming through consumers, like the dense
    baseline's weights.
    """
    bpe = machine.bytes_per_element(dtype)
    w_max = balanced_part_max(n, qn)
    values_total = total_blocks * b * b * bpe
    aggregate = values_total + k * n * bpe + qk * m * n * bpe
    floor = max_span_cols * b * w_max * bpe + m * w_max * bpe
    return np.maximum(floor, -(-aggregate // machine.tiles))


def search_static_grid(m, k, n, b, total_blocks, max_blocks_by_qk, max_span_by_qk, dtype, machine):
    """Exhaustive (qk, qn) search minimizing modeled cycles.

    max_blocks_by_qk / max_span_by_qk are indexed by qk (entry 0 unused).
    Only memory-feasible grids are considered.  Ties break to smaller qk,
    then smaller qn.  Returns (qk, qn, cycles) or None if nothing fits.
    """
    bpe = machine.bytes_per_element(dtype)
    rate_b = machine.macs_per_cycle(dtype, b)
    rate16 = machine.macs_per_cycle(dtype, 16)
    tiles = machine.tiles
    qk_limit = len(max_blocks_by_qk) - 1
    in_c = exchange_cycles(k * n * bpe, machine)
    best = None
    for qk in range(1, qk_limit + 1):
        qn_max = min(n, tiles // qk)
        if qn_max < 1:
            break
        qn = np.arange(1, qn_max + 1, dtype=np.int64)
        w_max = balanced_part_max(n, qn)
        mb = int(max_blocks_by_qk[qk])
        cost = in_c + machine.sync_cycles + _ceil_rate(mb * b * b * w_max, rate_b)
        if qk > 1:
            chunk = -(-(m * w_max) // qk)
            cost = (
                cost
                + exchange_cycles((qk - 1) * m * n * bpe, machine)
                + machine.sync_cycles
                + _ceil_rate((qk - 1) * chunk, rate16)
            )
        demand = static_audit_bytes(
            m, k, n, b, qk, qn, mb, int(max_span_by_qk[qk]), total_blocks, dtype, machine
        )
        cost = np.where(demand <= machine.tile_memory_bytes, cost, _INFEASIBLE)
        i = int(np.argmin(cost))  # argmin takes the first minimum: smallest qn
        if cost[i] < _INFEASIBLE and (best is None or cost[i] < best[2]):
            best = (qk, int(qn[i]), int(cost[i]))
    return best


# ---------------------------------------------------------------------------
# dynamic execution


def bucket_capacity(m: int, k: int, b: int, d_max, q_mk, headroom: float):
    """(value capacity in elements, bookkeeping-entry capacity) per bucket.

    Value capacity is the even share of the worst-case non-zero count,
    rounded up to whole b x b blocks; entry capacity gets multiplicative
    headroom on the block count.
    """
    q_arr = np.asarray(q_mk, dtype=np.int64)
    share = np.ceil(m * k * float(d_max) / q_arr)
    cap_blocks = np.ceil(share / (b * b)).astype(np.int64)
    cap_v = cap_blocks * b * b
    cap_m = np.ceil(headroom * cap_blocks).astype(np.int64)
    if q_arr.ndim:
        return cap_v, cap_m
    return int(cap_v), int(cap_m)


def dynamic_phases(
    m: int,
    k: int,
    n: int,
    b: int,
    qm: int,
    qk: int,
    qn: int,
    part_m_max: int,
    part_k_max: int,
    cap_v: int,
    cap_m: int,
    occupancy: np.ndarray,
    matches: np.ndarray,
    dtype: str,
    machine: MachineConfig,
) -> list[Phase]:
    """Phase schedule for a dynamic run.

    occupancy[j] is the entry count of bucket j; matches[p, s] the number of
    blocks the tile group of partition p processes at step s (s = 0 is the
    distribution step).  Each propagation step shifts every bucket one slot
    backward along the nested partition order, so matches[:, s] is exactly
    the set of entries placed s slots from home.

    Runtime-generic costs are provisioned for the worst case: bucket moves
    are sized at full capacity regardless of fill, every compute step scans
    the whole metaInfo region at the per-entry charge, and exchanges pay the
    h-relation on per-tile traffic (each receiving tile gets its own copy;
    only the compile-time-scheduled modes enjoy optimized multicast).
    """
    del occupancy  # fill level does not matter: the full region is scanned
    bpe = machine.bytes_per_element(dtype)
    w_max = last_part_size(n, qn)
    q_mk = qm * qk
    q_total = q_mk * qn
    bucket_bytes = int(cap_v) * bpe + int(cap_m) * META_ENTRY_BYTES
    bytes_in = qm * k * n * bpe + (qn - 1) * q_mk * bucket_bytes
    h_in = part_k_max * w_max * bpe + (bucket_bytes if qn > 1 else 0)
    phases = [
        Phase("exchange", int(_exchange_cycles_h(bytes_in, h_in, machine)), bytes_in, 0),
        Phase("sync", machine.sync_cycles, 0, 0),
    ]
    shift_bytes = q_total * bucket_bytes
    shift_c = int(_exchange_cycles_h(shift_bytes, bucket_bytes, machine))
    scan = math.ceil(int(cap_m) * machine.meta_overhead_cycles)
    steps = matches.shape[1] - 1
    for s in range(steps + 1):
        if s > 0:
            phases.append(Phase("exchange", shift_c, shift_bytes, 0))
            phases.append(Phase("sync", machine.sync_cycles, 0, 0))
        per_cell = _ceil_rate(
            matches[:, s] * (b * b * w_max), machine.macs_per_cycle(dtype, b)
        ) + scan
        phases.append(
            Phase("compute", int(per_cell.max()), 0, int(matches[:, s].sum()) * b * b * n)
        )
    if qk > 1:
        phases.append(
            _reduce_phase(qk, m * n, part_m_max * w_max, dtype, machine, h_priced=True)
        )
    return phases


def dynamic_audit_bytes(m, k, n, b, qm, qk, qn, cap_v, cap_m, dtype, machine):
    """Modeled per-tile memory demand of a dynamic plan (chip average with a
    single-tile floor: own bucket, input slice, partial slice)."""
    bpe = machine.bytes_per_element(dtype)
    w_max = last_part_size(n, qn)
    mb, kb = m // b, k // b
    part_m_max = b * last_part_size(mb, qm)
    part_k_max = b * last_part_size(kb, qk)
    bucket_bytes = cap_v * bpe + cap_m * META_ENTRY_BYTES
    aggregate = qm * qk * qn * bucket_bytes + qm * k * n * bpe + qk * m * n * bpe
    floor = bucket_bytes + part_k_max * w_max * bpe + part_m_max * w_max * bpe
    return np.maximum(floor, -(-aggregate // machine.tiles))


def search_dynamic_grid(m, k, n, b, d_max, headroom, dtype, machine):
    """Exhaustive (qm, qk, qn) search assuming non-zeros uniformly spread at
    the worst-case density.  Ties break lexicographically on (qm, qk, qn).
    Returns (qm, qk, qn, cycles) or None."""
    bpe = machine.bytes_per_element(dtype)
    rate_b = machine.macs_per_cycle(dtype, b)
    qm_arr, qk_arr, qn_arr = _candidate_triples(m // b, k // b, n, machine.tiles)
    q_mk = qm_arr * qk_arr
    w_max = last_part_size(n, qn_arr)
    cap_v, cap_m = bucket_capacity(m, k, b, d_max, q_mk, headroom)
    bucket_bytes = cap_v * bpe + cap_m * META_ENTRY_BYTES
    occ_est = np.ceil(m * k * float(d_max) / (b * b) / q_mk).astype(np.int64)
    part_m_max = b * last_part_size(m // b, qm_arr)
    part_k_max = b * last_part_size(k // b, qk_arr)

    bytes_in = qm_arr * k * n * bpe + (qn_arr - 1) * q_mk * bucket_bytes
    h_in = part_k_max * w_max * bpe + np.where(qn_arr > 1, bucket_bytes, 0)
    cost = _exchange_cycles_h(bytes_in, h_in, machine) + machine.sync_cycles
    cost = cost + _ceil_rate(occ_est * (b * b) * w_max, rate_b)
    cost = cost + np.ceil(cap_m * machine.meta_overhead_cycles).astype(np.int64)
    cost = cost + _reduce_cost_arr(
        qk_arr, m * n, part_m_max * w_max, dtype, machine, h_priced=True
    )

    demand = dynamic_audit_bytes(m, k, n, b, qm_arr, qk_arr, qn_arr, cap_v, cap_m, dtype, machine)
    cost = np.where(demand <= machine.tile_memory_bytes, cost, _INFEASIBLE)
    order = np.lexsort((qn_arr, qk_arr, qm_arr, cost))
    i = order[0]
    if cost[i] >= _INFEASIBLE:
        return None
    return int(qm_arr[i]), int(qk_arr[i]), int(qn_arr[i]), int(cost[i])


def _reduce_cost_arr(qk_arr, total_elems, partial_arr, dtype, machine, h_priced=False):
    """Vectorized twin of _reduce_phase over candidate arrays."""
    bpe = machine.bytes_per_element(dtype)
    rate16 = machine.macs_per_cycle(dtype, 16)
    q = qk_arr.astype(np.int64)
    nbytes = (q - 1) * total_elems * bpe
    chunk = -(-partial_arr // q)
    if h_priced:
        exch = _exchange_cycles_h(nbytes, (q - 1) * chunk * bpe, machine)
    else:
        exch = _ceil_rate(nbytes, machine.exchange_bytes_per_cycle)
    cost = exch + machine.sync_cycles + _ceil_rate((q - 1) * chunk, rate16)
    return np.where(q > 1, cost, 0)


# ---------------------------------------------------------------------------
# dense baseline


def dense_phases(m, k, n, qm, qk, qn, dtype, machine) -> list[Phase]:
    """Phase schedule for the cost-only dense matmul baseline."""
    bpe = machine.bytes_per_element(dtype)
    w_max = balanced_part_max(n, qn)
    pm_max = balanced_part_max(m, qm)
    pk_max = balanced_part_max(k, qk)
    bytes_in = k * n * bpe
    phases = [
        Phase("exchange", exchange_cycles(bytes_in, machine), bytes_in, 0),
        Phase(
            "compute",
            compute_cycles(pm_max * pk_max * w_max, 16, dtype, machine),
            0,
            m * k * n,
        ),
        Phase("sync", machine.sync_cycles, 0, 0),
    ]
    if qk > 1:
        phases.append(_reduce_phase(qk, m * n, pm_max * w_max, dtype, machine))
    return phases


def dense_audit_bytes(m, k, n, qm, qk, qn, dtype, machine):
    """Per-tile memory demand of the dense baseline.  The dense kernel is
    modeled as streaming its operands, so only the one logical copy of each
    (plus qk output partials) counts, floored by the tile's output slice."""
    bpe = machine.bytes_per_element(dtype)
    w_max = balanced_part_max(n, qn)
    pm_max = balanced_part_max(m, qm)
    aggregate = (m * k + k * n + qk * m * n) * bpe
    floor = pm_max * w_max * bpe
    return np.maximum(floor, -(-aggregate // machine.tiles))


def search_dense_grid(m, k, n, dtype, machine):
    """Exhaustive (qm, qk, qn) search for the dense baseline."""
    bpe = machine.bytes_per_element(dtype)
    rate16 = machine.macs_per_cycle(dtype, 16)
    qm_arr, qk_arr, qn_arr = _candidate_triples(m, k, n, machine.tiles)
    w_max = balanced_part_max(n, qn_arr)
    pm_max = balanced_part_max(m, qm_arr)
    pk_max = balanced_part_max(k, qk_arr)
    cost = exchange_cycles(k * n * bpe, machine) + machine.sync_cycles
    cost = cost + _ceil_rate(pm_max * pk_max * w_max, rate16)
    cost = cost + _reduce_cost_arr(qk_arr, m * n, pm_max * w_max, dtype, machine)
    demand = dense_audit_bytes(m, k, n, qm_arr, qk_arr, qn_arr, dtype, machine)
    cost = np.where(demand <= machine.tile_memory_bytes, cost, _INFEASIBLE)
    order = np.lexsort((qn_arr, qk_arr, qm_arr, cost))
    i = order[0]
    if cost[i] >= _INFEASIBLE:
        return None
    return int(qm_arr[i]), int(qk_arr[i]), int(qn_arr[i]), int(cost[i])


@lru_cache(maxsize=64)
def _candidate_triples(limit_m: int, limit_k: int, limit_n: int, tiles: int):
    """All (qm, qk, qn) with qm <= limit_m, qk <= limit_k, qn <= limit_n and
    qm*qk*qn <= tiles, in lexicographic order."""
    qm_parts, qk_parts, qn_parts = [], [], []
    for qm in range(1, min(limit_m, tiles) + 1):
        for qk in range(1, min(limit_k, tiles // qm) + 1):
            qn_max = min(limit_n, tiles // (qm * qk))
            if qn_max < 1:
                break
            qn_range = np.arange(1, qn_max + 1, dtype=np.int64)
            qn_parts.append(qn_range)
            qm_parts.append(np.full(qn_max, qm, dtype=np.int64))
            qk_parts.append(np.full(qn_max, qk, dtype=np.int64))
    qm_arr = np.concatenate(qm_parts)
    qk_arr = np.concatenate(qk_parts)
    qn_arr = np.concatenate(qn_parts)
    for arr in (qm_arr, qk_arr, qn_arr):
        arr.setflags(write=False)
    return qm_arr, qk_arr, qn_arr
