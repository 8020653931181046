import numpy as np
import pytest

from tilesparse import (
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


def full_mask(m, k, b):
    rows, cols = m // b, k // b
    coords = np.array([(r, c) for r in range(rows) for c in range(cols)])
    return BlockMask(m=m, k=k, b=b, coords=coords)


def empty_mask(m, k, b):
    return BlockMask(m=m, k=k, b=b, coords=np.empty((0, 2), dtype=np.int64))


class TestRandomBlockMask:
    def test_full_density_has_all_blocks(self):
        for seed in (0, 1, 99):
            mask = random_block_mask(8, 8, 4, 1, seed)
            assert mask.coords.tolist() == [[0, 0], [0, 1], [1, 0], [1, 1]]

    def test_single_block_position_fixed_by_generator(self):
        mask = random_block_mask(8, 8, 4, 1 / 4, 7)
        # frozen: one block out of four, chosen by the deterministic sampler
        assert mask.coords.tolist() == [[0, 1]]

    def test_count_and_uniqueness_by_exhaustive_scan(self):
        mask = random_block_mask(64, 64, 1, 1 / 8, 3)
        assert mask.nblocks == 512
        seen = set()
        for r, c in mask.coords.tolist():
            assert 0 <= r < 64 and 0 <= c < 64
            assert (r, c) not in seen
            seen.add((r, c))
        assert len(seen) == 512

    def test_pure_function_of_arguments(self):
        a = random_block_mask(32, 64, 4, 0.5, 12345)
        b = random_block_mask(32, 64, 4, 0.5, 12345)
        assert np.array_equal(a.coords, b.coords)

    def test_rejections(self):
        with pytest.raises(ValueError):
            random_block_mask(8, 8, 4, 0.0, 1)
        with pytest.raises(ValueError):
            random_block_mask(8, 8, 4, 1.5, 1)
        with pytest.raises(ValueError):
            random_block_mask(10, 8, 4, 0.5, 1)  # b does not divide m
        with pytest.raises(ValueError):
            random_block_mask(8, 8, 8, 0.5, 1)  # rounds to zero blocks
        with pytest.raises(ValueError):
            random_block_mask(8, 8, 3, 0.5, 1)  # unsupported block size

    def test_density_count_identity(self):
        for seed in range(20):
            mask = random_block_mask(64, 32, 4, 0.25, seed)
            assert density(mask) * mask.m * mask.k / mask.b**2 == mask.nblocks


class TestBlockMaskValidation:
    def test_duplicate_coordinates_rejected(self):
        with pytest.raises(ValueError):
            BlockMask(8, 8, 4, np.array([[0, 0], [0, 0]]))

    def test_unsorted_rejected(self):
        with pytest.raises(ValueError):
            BlockMask(8, 8, 4, np.array([[0, 1], [0, 0]]))

    def test_out_of_bounds_rejected(self):
        with pytest.raises(ValueError):
            BlockMask(8, 8, 4, np.array([[0, 2]]))


class TestDensity:
    def test_full_and_empty(self):
        assert density(full_mask(16, 16, 4)) == 1.0
        assert density(empty_mask(16, 16, 4)) == 0.0

    def test_quarter(self):
        mask = BlockMask(8, 8, 4, np.array([[0, 1]]))
        assert density(mask) == 16 / 64


class TestFlopCount:
    def test_spot_value(self):
        assert flop_count(4096, 4096, 4096, 1 / 16) == 8_589_934_592

    def test_dense_case(self):
        assert flop_count(8, 8, 4, 1) == 2 * 8 * 8 * 4

    def test_small_case(self):
        assert flop_count(8, 8, 4, 1 / 4) == 128

    def test_halving_density_halves_flops(self):
        assert flop_count(64, 32, 16, 1) == 2 * flop_count(64, 32, 16, 1 / 2)


class TestDenseMatmul:
    def test_identity(self):
        x = random_dense(6, 5, 1)
        assert np.array_equal(dense_matmul(np.eye(6), x), x)

    def test_zero(self):
        x = random_dense(4, 3, 2)
        assert np.array_equal(dense_matmul(np.zeros((5, 4)), x), np.zeros((5, 3)))

    def test_hand_case(self):
        y = dense_matmul(np.array([[1, 2], [3, 4]]), np.array([[5, 6], [7, 8]]))
        assert y.tolist() == [[19, 22], [43, 50]]

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            dense_matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestDensify:
    def test_empty_mask_gives_zeros(self):
        s = BlockSparseMatrix(empty_mask(8, 8, 4), np.empty(0))
        assert not densify(s).any()

    def test_single_full_block_verbatim(self):
        mask = BlockMask(4, 4, 4, np.array([[0, 0]]))
        vals = np.arange(16, dtype=float)
        s = BlockSparseMatrix(mask, vals)
        assert np.array_equal(densify(s), vals.reshape(4, 4))

    def test_nonzero_count_matches_blocks(self):
        for seed in range(5):
            mask = random_block_mask(32, 32, 4, 0.25, seed)
            s = random_block_values(mask, seed)
            # uniform (-1,1) values never hit exactly zero
            assert np.count_nonzero(densify(s)) == mask.nblocks * 16


def brute_force_spmm(s, x):
    # Independent oracle: elementwise triple loop over the scattered blocks.
    mask = s.mask
    b = mask.b
    out = np.zeros((mask.m, x.shape[1]))
    blocks = s.blocks3()
    for idx, (br, bc) in enumerate(mask.coords.tolist()):
        for i in range(b):
            for j in range(b):
                for col in range(x.shape[1]):
                    out[br * b + i, col] += blocks[idx, i, j] * x[bc * b + j, col]
    return out


class TestSpmmOracle:
    def test_full_density_equals_dense(self):
        mask = full_mask(8, 8, 4)
        s = random_block_values(mask, 4)
        x = random_dense(8, 3, 4)
        assert np.array_equal(spmm_oracle(s, x), dense_matmul(densify(s), x))

    def test_empty_gives_zero(self):
        s = BlockSparseMatrix(empty_mask(8, 8, 4), np.empty(0))
        assert not spmm_oracle(s, random_dense(8, 5, 0)).any()

    def test_matches_brute_force(self):
        mask = random_block_mask(8, 8, 4, 1 / 4, 21)
        s = random_block_values(mask, 21)
        x = random_dense(8, 6, 21)
        assert np.allclose(spmm_oracle(s, x), brute_force_spmm(s, x), rtol=1e-12, atol=1e-14)

    def test_dimension_mismatch(self):
        mask = random_block_mask(8, 8, 4, 1 / 4, 2)
        s = random_block_values(mask, 2)
        with pytest.raises(ValueError):
            spmm_oracle(s, random_dense(12, 4, 0))
