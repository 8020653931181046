from dataclasses import replace

import numpy as np
import pytest

from tilesparse import (
    BlockMask,
    MachineConfig,
    build_static_plan,
    choose_static_grid,
    compute_cycles,
    encode_buckets,
    exchange_cycles,
    make_dynamic_plan,
    plan_dynamic,
    random_block_mask,
    random_block_values,
    random_dense,
    relative_close,
    run_dense_baseline,
    run_dynamic,
    run_static,
    spmm_oracle,
    trace_dynamic,
    trace_static,
)
from tilesparse.costmodel import search_static_grid
from tilesparse.static_plan import split_stats

MC = MachineConfig()


def mask_from(m, k, b, coords):
    return BlockMask(m=m, k=k, b=b, coords=np.array(sorted(map(tuple, coords))))


class TestCycleOps:
    def test_compute_ceiling(self):
        assert compute_cycles(0, 16, "fp16", MC) == 0
        assert compute_cycles(64, 16, "fp16", MC) == 1
        assert compute_cycles(65, 16, "fp16", MC) == 2

    def test_exchange_ceiling(self):
        assert exchange_cycles(0, MC) == 0
        assert exchange_cycles(5888, MC) == 1
        assert exchange_cycles(5889, MC) == 2

    def test_unknown_dtype(self):
        with pytest.raises(ValueError):
            compute_cycles(10, 16, "fp64", MC)


class TestRunStatic:
    def test_single_tile_exact_and_single_compute_phase(self):
        mask = random_block_mask(16, 16, 4, 0.5, 3)
        s = random_block_values(mask, 3)
        x = random_dense(16, 8, 3)
        plan = build_static_plan(mask, 1, 1, 8, MC)
        y, trace = run_static(plan, s, x, MC, "fp16")
        assert np.array_equal(y, spmm_oracle(s, x))  # bitwise: same accumulation
        kinds = [p.kind for p in trace.phases]
        assert kinds.count("compute") == 1
        assert "reduce" not in kinds
        assert list(trace.per_tile_macs) == [mask.nblocks * 16 * 8]
        assert trace.propagation_steps == 0

    def test_three_partition_reduction(self):
        # three k-partitions produce three partials reduced into the output
        coords = [(i, i) for i in range(9)]
        mask = mask_from(9, 9, 1, coords)
        s = random_block_values(mask, 1)
        x = random_dense(9, 4, 1)
        plan = build_static_plan(mask, 3, 1, 4, MC)
        y, trace = run_static(plan, s, x, MC, "fp16")
        assert relative_close(y, spmm_oracle(s, x))
        assert [p.kind for p in trace.phases] == ["exchange", "compute", "sync", "reduce"]

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_matches_oracle_on_random_grids(self, seed):
        mask = random_block_mask(64, 64, 4, 1 / 8, seed)
        s = random_block_values(mask, seed)
        x = random_dense(64, 16, seed)
        qk, qn = choose_static_grid(64, 64, 16, 4, mask, MC)
        plan = build_static_plan(mask, qk, qn, 16, MC)
        y, trace = run_static(plan, s, x, MC, "fp16")
        assert relative_close(y, spmm_oracle(s, x))
        assert trace.total_cycles == sum(p.cycles for p in trace.phases)

    def test_operand_mismatch_rejected(self):
        mask = random_block_mask(16, 16, 4, 0.5, 3)
        other = random_block_mask(16, 16, 4, 0.5, 4)
        plan = build_static_plan(mask, 2, 1, 8, MC)
        with pytest.raises(ValueError):
            run_static(plan, random_block_values(other, 3), random_dense(16, 8, 3), MC, "fp16")
        with pytest.raises(ValueError):
            run_static(plan, random_block_values(mask, 3), random_dense(16, 4, 3), MC, "fp16")

    def test_trace_matches_grid_search_cost(self):
        # the planner's objective is exactly the simulated cycle count
        for seed in range(5):
            mask = random_block_mask(64, 64, 4, 1 / 4, seed)
            max_blocks, max_span = split_stats(mask.col_counts(), min(16, MC.tiles))
            best = search_static_grid(64, 64, 16, 4, mask.nblocks, max_blocks, max_span, "fp16", MC)
            qk, qn, cost = best
            plan = build_static_plan(mask, qk, qn, 16, MC)
            assert trace_static(plan, MC, "fp16").total_cycles == cost


def four_cell_plan(n=4):
    machine = replace(MachineConfig(), tiles=16)
    return make_dynamic_plan(16, 16, n, 4, 1 / 4, machine, 2, 2, 1)


class TestRunDynamic:
    def test_balanced_needs_no_propagation(self):
        plan = four_cell_plan()
        mask = mask_from(16, 16, 4, [(0, 0), (0, 2), (2, 0), (2, 2)])
        s = random_block_values(mask, 2)
        x = random_dense(16, 4, 2)
        y, trace = run_dynamic(plan, encode_buckets(mask, s.values, plan), x, MC, "fp16")
        assert trace.propagation_steps == 0
        assert relative_close(y, spmm_oracle(s, x))

    def test_adversarial_single_cell_runs_qmk_minus_one_steps(self):
        plan = four_cell_plan()
        mask = mask_from(16, 16, 4, [(0, 0), (0, 1), (1, 0), (1, 1)])
        s = random_block_values(mask, 4)
        x = random_dense(16, 4, 4)
        y, trace = run_dynamic(plan, encode_buckets(mask, s.values, plan), x, MC, "fp16")
        assert trace.propagation_steps == 3
        assert relative_close(y, spmm_oracle(s, x))

    @pytest.mark.parametrize("seed", [1, 2, 3, 4])
    def test_matches_oracle_on_searched_plans(self, seed):
        mask = random_block_mask(64, 64, 4, 1 / 8, seed)
        d = mask.nblocks * 16 / (64 * 64)
        plan = plan_dynamic(64, 64, 16, 4, d, MC)
        s = random_block_values(mask, seed)
        x = random_dense(64, 16, seed)
        y, trace = run_dynamic(plan, encode_buckets(mask, s.values, plan), x, MC, "fp16")
        assert relative_close(y, spmm_oracle(s, x))
        assert trace.propagation_steps <= plan.qm * plan.qk

    def test_propagation_bound_over_random_plans(self):
        for seed in range(25):
            mask = random_block_mask(32, 32, 4, 1 / 4, seed)
            plan = make_dynamic_plan(32, 32, 4, 4, 1 / 4, MC, 2, 4, 1)
            trace = trace_dynamic(encode_buckets(mask, None, plan), MC, "fp16")
            assert trace.propagation_steps <= plan.qm * plan.qk

    def test_foreign_buckets_rejected(self):
        plan_a = four_cell_plan()
        plan_b = four_cell_plan()
        mask = mask_from(16, 16, 4, [(0, 0)])
        buckets = encode_buckets(mask, random_block_values(mask, 1).values, plan_a)
        with pytest.raises(ValueError):
            run_dynamic(plan_b, buckets, random_dense(16, 4, 1), MC, "fp16")

    def test_cost_only_buckets_cannot_run(self):
        plan = four_cell_plan()
        mask = mask_from(16, 16, 4, [(0, 0)])
        buckets = encode_buckets(mask, None, plan)
        with pytest.raises(ValueError):
            run_dynamic(plan, buckets, random_dense(16, 4, 1), MC, "fp16")


class TestBspAudit:
    @staticmethod
    def replay(log):
        have = set()
        for kind, _phase, owner, resource in log:
            if kind == "deliver":
                have.add((owner, resource))
            else:
                assert (owner, resource) in have, (owner, resource)

    def test_static_compute_reads_only_delivered_data(self):
        mask = random_block_mask(32, 32, 4, 0.25, 5)
        s = random_block_values(mask, 5)
        x = random_dense(32, 8, 5)
        plan = build_static_plan(mask, 3, 2, 8, MC)
        _, trace = run_static(plan, s, x, MC, "fp16", audit=True)
        assert trace.access_log
        assert any(e[0] == "read" for e in trace.access_log)
        self.replay(trace.access_log)

    def test_dynamic_bucket_reads_follow_shifts(self):
        plan = four_cell_plan()
        mask = mask_from(16, 16, 4, [(0, 0), (0, 1), (1, 0), (1, 1)])
        s = random_block_values(mask, 6)
        x = random_dense(16, 4, 6)
        buckets = encode_buckets(mask, s.values, plan)
        _, trace = run_dynamic(plan, buckets, x, MC, "fp16", audit=True)
        self.replay(trace.access_log)
        # shifted buckets really are read by other partitions
        reads = {(o, r) for kind, _p, o, r in trace.access_log if kind == "read" and r[0] == "bucket"}
        assert (("group", 1), ("bucket", 2)) in reads or (("group", 0), ("bucket", 1)) in reads


class TestDenseBaseline:
    def test_peak_bound_holds(self):
        trace = run_dense_baseline(1024, 1024, 1024, MC, "fp16")
        peak = MC.tiles * MC.macs_per_cycle("fp16", 16) * 2 * MC.clock_hz
        assert 0 < trace.achieved_flops <= peak

    def test_single_tile_minimum(self):
        machine = replace(MachineConfig(), tiles=1)
        trace = run_dense_baseline(1, 1, 1, machine, "fp16")
        assert list(trace.per_tile_macs) == [1]
        assert trace.total_cycles >= 1

    def test_halving_n_halves_compute(self):
        machine = replace(MachineConfig(), tiles=1)
        full = run_dense_baseline(64, 64, 64, machine, "fp16")
        half = run_dense_baseline(64, 64, 32, machine, "fp16")
        compute = lambda t: sum(p.cycles for p in t.phases if p.kind == "compute")
        assert compute(half) * 2 == compute(full)

    def test_large_square_near_peak(self):
        trace = run_dense_baseline(4096, 4096, 4096, MC, "fp16")
        peak = MC.tiles * MC.macs_per_cycle("fp16", 16) * 2 * MC.clock_hz
        assert trace.achieved_flops >= 0.9 * peak
