"""Benchmark sweep, CSV reporting, best-over-batch reduction, power-law fit.

The sweep walks a parameter grid, costs every (mode, config) point with the
analytic model, and writes one CSV row per point.  Configurations whose
memory audit fails are recorded as skip markers ("NA" fields).  Sweep output
is byte-identical for a given (config, machine, seed), whatever the worker
count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import costmodel
from .dynamic_plan import make_dynamic_plan, place_blocks
from .machine import MachineConfig
from .matrices import flop_count, random_block_mask
from .rng import GOLDEN, MASK64, mix64
from .simulate import trace_dynamic_stats
from .static_plan import split_stats

TABLE_M = (256, 512, 1024, 2048, 4096, 8192)
TABLE_N = (4, 16, 64, 256, 1024, 4096, 16384, 65536)
TABLE_B = (1, 4, 8, 16)
TABLE_D = (Fraction(1), Fraction(1, 4), Fraction(1, 8), Fraction(1, 16), Fraction(1, 32))
TABLE_DTYPES = ("fp16", "fp32")

CSV_HEADER = "m,k,n,b,d,mode,dtype,seed,total_cycles,achieved_tflops,speedup"

_MODE_ORDER = {"dense": 0, "static": 1, "dynamic": 2}


@dataclass(frozen=True)
class SweepRecord:
    """One benchmark point.  b is 0 for dense rows (block size n/a);
    speedup is dense cycles over this mode's cycles at the same (m, k, n,
    dtype).  Skipped points (memory audit failure) keep None in the numeric
    fields."""

    m: int
    k: int
    n: int
    b: int
    d: float
    mode: str
    dtype: str
    seed: int
    total_cycles: int | None
    achieved_tflops: float | None
    speedup: float | None
    skipped: bool = False


def _fmt(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _sort_key(r: SweepRecord):
    return (r.m, r.n, r.b, r.d, _MODE_ORDER[r.mode], r.dtype)


def config_seed(base: int, *values: int) -> int:
    """Per-configuration seed derived from the sweep seed and config values."""
    h = base & MASK64
    for v in values:
        h = mix64((h + v * GOLDEN) & MASK64)
    return h


def parse_density(text: str) -> Fraction:
    """Accept densities as rationals like 1/16 or decimals like 0.0625."""
    text = text.strip()
    if "/" in text:
        num, _, den = text.partition("/")
        frac = Fraction(int(num), int(den))
    else:
        frac = Fraction(text)
    if not 0 < frac <= 1:
        raise ValueError(f"density must be in (0, 1], got {text}")
    return frac


def _cycles_to_tflops(useful_flops: float, cycles: int, machine: MachineConfig) -> float:
    return useful_flops / (cycles / machine.clock_hz) / 1e12


def _dense_group(m, n_list, dtype, machine, seed):
    records = []
    for n in n_list:
        best = costmodel.search_dense_grid(m, m, n, dtype, machine)
        if best is None:
            records.append(
                SweepRecord(m, m, n, 0, 1.0, "dense", dtype, seed, None, None, None, True)
            )
            continue
        qm, qk, qn, _ = best
        cycles = sum(p.cycles for p in costmodel.dense_phases(m, m, n, qm, qk, qn, dtype, machine))
        tflops = _cycles_to_tflops(flop_count(m, m, n, 1.0), cycles, machine)
        records.append(
            SweepRecord(m, m, n, 0, 1.0, "dense", dtype, seed, int(cycles), tflops, None)
        )
    return records


def _sparse_group(m, b, d, n_list, dtype_list, machine, base_seed):
    """All static and dynamic records sharing one random pattern."""
    mask_seed = config_seed(base_seed, m, m, b, d.numerator, d.denominator)
    mask = random_block_mask(m, m, b, d, mask_seed)
    d_float = float(d)
    qk_limit = min(mask.block_cols, machine.tiles)
    max_blocks, max_span = split_stats(mask.col_counts(), qk_limit)
    useful = {n: flop_count(m, m, n, d_float) for n in n_list}
    placements: dict[tuple[int, int], tuple] = {}
    records = []
    for n in n_list:
        for dtype in dtype_list:
            best = costmodel.search_static_grid(
                m, m, n, b, mask.nblocks, max_blocks, max_span, dtype, machine
            )
            if best is None:
                records.append(
                    SweepRecord(m, m, n, b, d_float, "static", dtype, mask_seed,
                                None, None, None, True)
                )
            else:
                qk, qn, cycles = best
                tflops = _cycles_to_tflops(useful[n], cycles, machine)
                records.append(
                    SweepRecord(m, m, n, b, d_float, "static", dtype, mask_seed,
                                int(cycles), tflops, None)
                )
            dyn = costmodel.search_dynamic_grid(
                m, m, n, b, d, machine.headroom, dtype, machine
            )
            if dyn is None:
                records.append(
                    SweepRecord(m, m, n, b, d_float, "dynamic", dtype, mask_seed,
                                None, None, None, True)
                )
            else:
                qm, qk, qn, _ = dyn
                plan = make_dynamic_plan(m, m, n, b, d, machine, qm, qk, qn)
                key = (qm, qk)
                if key not in placements:
                    placements[key] = place_blocks(mask, plan)
                home, bucket = placements[key]
                trace = trace_dynamic_stats(plan, home, bucket, machine, dtype)
                records.append(
                    SweepRecord(m, m, n, b, d_float, "dynamic", dtype, mask_seed,
                                trace.total_cycles,
                                trace.achieved_flops / 1e12, None)
                )
    return records


def _fill_speedups(records: list[SweepRecord]) -> list[SweepRecord]:
    dense_cycles = {
        (r.m, r.n, r.dtype): r.total_cycles
        for r in records
        if r.mode == "dense" and not r.skipped
    }
    out = []
    for r in records:
        if r.skipped:
            out.append(r)
            continue
        base = dense_cycles.get((r.m, r.n, r.dtype))
        speedup = None if base is None else base / r.total_cycles
        out.append(
            SweepRecord(r.m, r.k, r.n, r.b, r.d, r.mode, r.dtype, r.seed,
                        r.total_cycles, r.achieved_tflops, speedup, r.skipped)
        )
    return out


def sweep(
    out,
    machine: MachineConfig | None = None,
    m_list=TABLE_M,
    n_list=TABLE_N,
    b_list=TABLE_B,
    d_list=TABLE_D,
    dtype_list=TABLE_DTYPES,
    seed: int = 0,
    workers: int = 1,
) -> int:
    """Run the grid and write the CSV; returns the non-skipped record count.

    Rows appear in canonical (m, n, b, d, mode, dtype) order regardless of
    worker scheduling; skipped configurations are emitted as NA markers.
    """
    if machine is None:
        machine = MachineConfig()
    d_list = [d if isinstance(d, Fraction) else Fraction(d) for d in d_list]
    for b in b_list:
        for m in m_list:
            if b > m:
                raise ValueError(f"block size {b} exceeds feature size {m}")
    tasks = []
    for m in m_list:
        for dtype in dtype_list:
            tasks.append(lambda m=m, dtype=dtype: _dense_group(m, n_list, dtype, machine, seed))
    for m in m_list:
        for b in b_list:
            for d in d_list:
                if round(float(d) * (m // b) * (m // b)) < 1:
                    continue  # pattern would be empty; not a sweepable point
                tasks.append(
                    lambda m=m, b=b, d=d: _sparse_group(
                        m, b, d, n_list, dtype_list, machine, seed
                    )
                )
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda t: t(), tasks))
    else:
        chunks = [t() for t in tasks]
    records = [r for chunk in chunks for r in chunk]
    records = _fill_speedups(records)
    records.sort(key=_sort_key)
    write_records_csv(records, out)
    return sum(1 for r in records if not r.skipped)


def write_records_csv(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in records:
            dense_self = 1.0 if (r.mode == "dense" and not r.skipped) else r.speedup
            fields = [
                r.m, r.k, r.n, r.b, _fmt(float(r.d)), r.mode, r.dtype, r.seed,
                r.total_cycles if not r.skipped else None,
                _fmt(r.achieved_tflops) if not r.skipped else "NA",
                _fmt(dense_self),
            ]
            fh.write(",".join(_fmt(f) if not isinstance(f, str) else f for f in fields) + "\n")


def read_records_csv(path) -> list[SweepRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header!r}")
        for line in fh:
            f = line.strip().split(",")
            if len(f) != 11:
                raise ValueError(f"bad CSV row: {line!r}")
            skipped = f[8] == "NA"
            records.append(
                SweepRecord(
                    m=int(f[0]), k=int(f[1]), n=int(f[2]), b=int(f[3]), d=float(f[4]),
                    mode=f[5], dtype=f[6], seed=int(f[7]),
                    total_cycles=None if skipped else int(f[8]),
                    achieved_tflops=None if f[9] == "NA" else float(f[9]),
                    speedup=None if f[10] == "NA" else float(f[10]),
                    skipped=skipped,
                )
            )
    return records


def best_over_batch(records) -> list[SweepRecord]:
    """Keep, per (m, d, b, mode, dtype), the record with the best throughput
    over the batch sizes n."""
    records = [r for r in records if not r.skipped]
    if not records:
        raise ValueError("no usable records")
    best: dict[tuple, SweepRecord] = {}
    for r in sorted(records, key=_sort_key):
        key = (r.m, r.d, r.b, r.mode, r.dtype)
        cur = best.get(key)
        if cur is None or r.achieved_tflops > cur.achieved_tflops:
            best[key] = r
    return sorted(best.values(), key=_sort_key)


@dataclass(frozen=True)
class PowerLawFit:
    """speedup ~ c * m**alpha * d**beta * b**gamma, fitted in log space."""

    c: float
    alpha: float
    beta: float
    gamma: float
    residual_rms: float


def fit_power_law_points(m, d, b, ratio) -> PowerLawFit:
    """Ordinary least squares of log(ratio) on (1, log m, log d, log b)."""
    m = np.asarray(m, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ratio = np.asarray(ratio, dtype=np.float64)
    if len(ratio) < 4:
        raise ValueError("need at least 4 points to fit 4 parameters")
    if (ratio <= 0).any():
        raise ValueError("speedup ratios must be positive")
    design = np.column_stack([np.ones(len(ratio)), np.log(m), np.log(d), np.log(b)])
    if np.linalg.matrix_rank(design) < 4:
        raise ValueError(
            "rank-deficient design matrix: the points must vary in m, d and b"
        )
    coef, _, _, _ = np.linalg.lstsq(design, np.log(ratio), rcond=None)
    resid = design @ coef - np.log(ratio)
    rms = float(np.sqrt(np.mean(resid**2)))
    return PowerLawFit(
        c=float(np.exp(coef[0])),
        alpha=float(coef[1]),
        beta=float(coef[2]),
        gamma=float(coef[3]),
        residual_rms=rms,
    )


def fit_power_law(records) -> PowerLawFit:
    """Fit the speedup model to best-over-batch records (speedup vs dense)."""
    pts = [(r.m, r.d, r.b, r.speedup) for r in records if not r.skipped and r.speedup]
    if not pts:
        raise ValueError("no records with a dense speedup to fit")
    arr = np.asarray(pts, dtype=np.float64)
    return fit_power_law_points(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


def speedup_grid(records, out, dtype: str = "fp16") -> list[list[str]]:
    """Write the static-vs-dense speedup table: one row per (b, d), one
    column per (m, n); cells without data are NA.  Returns the body rows."""
    rows = {}
    col_keys = set()
    row_keys = set()
    for r in records:
        if r.mode != "static" or r.dtype != dtype:
            continue
        row_keys.add((r.b, r.d))
        col_keys.add((r.m, r.n))
        rows[(r.b, r.d, r.m, r.n)] = None if r.skipped else r.speedup
    row_order = sorted(row_keys, key=lambda x: (x[0], -x[1]))
    col_order = sorted(col_keys)
    body = []
    for b, d in row_order:
        cells = [_fmt(b), _fmt(float(d))]
        for m, n in col_order:
            cells.append(_fmt(rows.get((b, d, m, n))))
        body.append(cells)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["b", "d"] + [f"m{m}_n{n}" for m, n in col_order]) + "\n")
        for cells in body:
            fh.write(",".join(cells) + "\n")
    return body


def crossover_density(records, m: int, b: int, dtype: str) -> float | None:
    """Density at which static catches dense (speedup = 1) for one (m, b,
    dtype), log-linearly interpolated between the bracketing best-over-batch
    densities; None when no bracket exists."""
    mine = [
        r for r in records
        if r.mode == "static" and r.m == m and r.b == b and r.dtype == dtype
        and not r.skipped and r.speedup
    ]
    if not mine:
        return None
    points = sorted((r.d, r.speedup) for r in best_over_batch(mine))
    for (d1, r1), (d2, r2) in zip(points, points[1:]):
        if r1 == 1.0:
            return d1
        if r2 == 1.0:
            return d2
        if (r1 - 1.0) * (r2 - 1.0) < 0:
            t = (0.0 - math.log(r1)) / (math.log(r2) - math.log(r1))
            return math.exp(math.log(d1) + t * (math.log(d2) - math.log(d1)))
    return None
