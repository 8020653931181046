"""Command line: single-point runs, grid sweeps, fitting and reporting.

Subcommands: spmm, sweep, fit, grid, crossover.  Densities are accepted as
rationals ("1/16") or decimals ("0.0625").  Exit code 0 on success; non-zero
with a diagnostic on error, including when --verify finds an oracle mismatch.
"""

from __future__ import annotations

import argparse
import sys

from . import bench
from .bench import parse_density
from .dynamic_plan import encode_buckets, plan_dynamic
from .machine import DTYPES, MachineConfig, load_machine_config
from .matrices import random_block_mask, random_block_values, random_dense
from .simulate import (
    relative_close,
    run_dense_baseline,
    run_dynamic,
    run_static,
    spmm_cost_trace,
)
from .static_plan import build_static_plan, choose_static_grid


def _machine_from(args) -> MachineConfig:
    return load_machine_config(args.machine) if args.machine else MachineConfig()


def _cmd_spmm(args) -> int:
    machine = _machine_from(args)
    m, k, n, b = args.m, args.k, args.n, args.block
    d = parse_density(args.density)
    if args.mode == "dense":
        trace = run_dense_baseline(m, k, n, machine, args.dtype)
        print(f"mode=dense m={m} k={k} n={n} dtype={args.dtype}")
        print(f"total_cycles={trace.total_cycles} achieved_tflops={trace.achieved_flops / 1e12:.6g}")
        return 0
    mask = random_block_mask(m, k, b, d, args.seed)
    trace, plan = spmm_cost_trace(mask, n, args.mode, machine, args.dtype)
    grid = (
        f"qk={plan.qk} qn={plan.qn}"
        if args.mode == "static"
        else f"qm={plan.qm} qk={plan.qk} qn={plan.qn}"
    )
    print(f"mode={args.mode} m={m} k={k} n={n} b={b} d={float(d):.6g} seed={args.seed} {grid}")
    print(
        f"total_cycles={trace.total_cycles} achieved_tflops={trace.achieved_flops / 1e12:.6g} "
        f"propagation_steps={trace.propagation_steps}"
    )
    if args.verify:
        from .matrices import spmm_oracle

        s = random_block_values(mask, args.seed)
        x = random_dense(k, n, args.seed)
        if args.mode == "static":
            y, _ = run_static(plan, s, x, machine, args.dtype)
        else:
            buckets = encode_buckets(mask, s.values, plan)
            y, _ = run_dynamic(plan, buckets, x, machine, args.dtype)
        if not relative_close(y, spmm_oracle(s, x)):
            print("verify: FAIL (result differs from oracle beyond 1e-9)", file=sys.stderr)
            return 1
        print("verify: OK")
    return 0


def _cmd_sweep(args) -> int:
    machine = _machine_from(args)
    count = bench.sweep(
        args.out,
        machine=machine,
        m_list=args.m_list,
        n_list=args.n_list,
        b_list=args.b_list,
        d_list=[parse_density(d) for d in args.d_list],
        dtype_list=args.dtype_list,
        seed=args.seed,
        workers=args.workers,
    )
    print(f"wrote {count} records to {args.out}")
    return 0


def _cmd_fit(args) -> int:
    records = bench.read_records_csv(args.infile)
    chosen = [r for r in records if r.mode == args.mode and r.dtype == "fp16"]
    fit = bench.fit_power_law(bench.best_over_batch(chosen))
    print(
        f"c={fit.c:.6g} alpha={fit.alpha:.6g} beta={fit.beta:.6g} "
        f"gamma={fit.gamma:.6g} residual_rms={fit.residual_rms:.6g}"
    )
    return 0


def _cmd_grid(args) -> int:
    records = bench.read_records_csv(args.infile)
    body = bench.speedup_grid(records, args.out)
    print(f"wrote {len(body)} grid rows to {args.out}")
    return 0


def _cmd_crossover(args) -> int:
    records = bench.read_records_csv(args.infile)
    d = bench.crossover_density(records, args.m, args.block, args.dtype)
    if d is None:
        print("no-bracket")
    else:
        print(f"crossover_density={d:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tilesparse", description="block-sparse matmul simulator and benchmark harness"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spmm", help="cost one sparse or dense matmul point")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--block", type=int, required=True)
    p.add_argument("--density", type=str, required=True)
    p.add_argument("--mode", choices=("dense", "static", "dynamic"), required=True)
    p.add_argument("--dtype", choices=DTYPES, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--machine", type=str, default=None)
    p.add_argument("--verify", action="store_true", help="run numerically and compare to the oracle")
    p.set_defaults(func=_cmd_spmm)

    p = sub.add_parser("sweep", help="run the benchmark grid and write a CSV")
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--machine", type=str, default=None)
    p.add_argument("--m-list", type=int, nargs="+", default=list(bench.TABLE_M))
    p.add_argument("--n-list", type=int, nargs="+", default=list(bench.TABLE_N))
    p.add_argument("--b-list", type=int, nargs="+", default=list(bench.TABLE_B))
    p.add_argument(
        "--d-list", type=str, nargs="+", default=[str(d) for d in bench.TABLE_D]
    )
    p.add_argument("--dtype-list", type=str, nargs="+", choices=DTYPES, default=list(DTYPES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("fit", help="fit the power-law speedup model to a sweep CSV")
    p.add_argument("--in", dest="infile", type=str, required=True)
    p.add_argument("--mode", type=str, default="static")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("grid", help="write the static/dense speedup grid")
    p.add_argument("--in", dest="infile", type=str, required=True)
    p.add_argument("--out", type=str, required=True)
    p.set_defaults(func=_cmd_grid)

    p = sub.add_parser("crossover", help="density where static catches dense")
    p.add_argument("--in", dest="infile", type=str, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--block", type=int, required=True)
    p.add_argument("--dtype", type=str, required=True)
    p.set_defaults(func=_cmd_crossover)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
