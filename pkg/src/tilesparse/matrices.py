"""Dense and block-sparse matrix types, pattern generation and the dense oracle.

Dense matrices are plain 2-D float64 numpy arrays (row-major).  Block-sparse
matrices store only the non-zero b x b blocks of the masked weight matrix
together with their block coordinates.  All value arithmetic happens in
float64; the fp16/fp32 distinction exists only in the cost model.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Real

import numpy as np

from .rng import sample_without_replacement, stream_seed, uniform_open_values

BLOCK_SIZES = (1, 4, 8, 16)

_VALUES_STREAM = 1
_DENSE_STREAM = 2


@dataclass(frozen=True)
class BlockMask:
    """Block-level sparsity pattern of an m x k matrix with b x b blocks.

    coords is an (nblocks, 2) int array of (block_row, block_col) pairs,
    sorted lexicographically, without duplicates, all in bounds.  b must
    divide both m and k; ragged edge blocks are rejected.
    """

    m: int
    k: int
    b: int
    coords: np.ndarray

    def __post_init__(self):
        if self.b not in BLOCK_SIZES:
            raise ValueError(f"block size must be one of {BLOCK_SIZES}, got {self.b}")
        if self.m <= 0 or self.k <= 0:
            raise ValueError("matrix dimensions must be positive")
        if self.m % self.b or self.k % self.b:
            raise ValueError(f"b={self.b} must divide m={self.m} and k={self.k}")
        coords = np.ascontiguousarray(np.asarray(self.coords, dtype=np.int64))
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValueError("coords must have shape (nblocks, 2)")
        if coords.size:
            if coords.min() < 0 or (coords[:, 0] >= self.block_rows).any() or (
                coords[:, 1] >= self.block_cols
            ).any():
                raise ValueError("block coordinates out of bounds")
            ids = coords[:, 0] * self.block_cols + coords[:, 1]
            if (np.diff(ids) <= 0).any():
                raise ValueError("coords must be sorted lexicographically and unique")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def block_rows(self) -> int:
        return self.m // self.b

    @property
    def block_cols(self) -> int:
        return self.k // self.b

    @property
    def nblocks(self) -> int:
        return len(self.coords)

    def col_counts(self) -> np.ndarray:
        """Number of blocks in each block column (length block_cols)."""
        return np.bincount(self.coords[:, 1], minlength=self.block_cols)


@dataclass(frozen=True)
class BlockSparseMatrix:
    """Non-zero blocks of a masked weight matrix, values in mask order.

    values holds nblocks * b * b floats; block i occupies the row-major
    slice values[i*b*b : (i+1)*b*b].
    """

    mask: BlockMask
    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        expect = self.mask.nblocks * self.mask.b * self.mask.b
        if values.ndim != 1 or len(values) != expect:
            raise ValueError(f"values must be a flat array of length {expect}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def blocks3(self) -> np.ndarray:
        """Values viewed as (nblocks, b, b)."""
        b = self.mask.b
        return self.values.reshape(self.mask.nblocks, b, b)


def random_block_mask(m: int, k: int, b: int, d, seed: int) -> BlockMask:
    """Uniform random pattern of round(d*m*k/b^2) distinct blocks.

    Pure function of its arguments: the same inputs always return the same
    mask, on any platform.  d may be a float or a Fraction in (0, 1].
    """
    if not 0 < d <= 1:
        raise ValueError(f"density must be in (0, 1], got {d}")
    if b not in BLOCK_SIZES:
        raise ValueError(f"block size must be one of {BLOCK_SIZES}, got {b}")
    if m % b or k % b:
        raise ValueError(f"b={b} must divide m={m} and k={k}")
    total = (m // b) * (k // b)
    if isinstance(d, Fraction):
        count = round(d * total)
    else:
        count = round(float(d) * total)
    if count < 1:
        raise ValueError(f"density {d} yields zero blocks for {m}x{k} grid with b={b}")
    ids = sample_without_replacement(total, count, seed)
    block_cols = k // b
    coords = np.column_stack((ids // block_cols, ids % block_cols))
    return BlockMask(m=m, k=k, b=b, coords=coords)


def random_block_values(mask: BlockMask, seed: int) -> BlockSparseMatrix:
    """Values uniform in (-1, 1) from a stream derived from `seed`."""
    n = mask.nblocks * mask.b * mask.b
    return BlockSparseMatrix(mask, uniform_open_values(n, stream_seed(seed, _VALUES_STREAM)))


def random_dense(rows: int, cols: int, seed: int) -> np.ndarray:
    """Dense matrix with entries uniform in (-1, 1)."""
    vals = uniform_open_values(rows * cols, stream_seed(seed, _DENSE_STREAM))
    return vals.reshape(rows, cols)


def density(mask: BlockMask) -> float:
    """Fraction of non-zero elements: nblocks * b^2 / (m * k)."""
    return mask.nblocks * mask.b * mask.b / (mask.m * mask.k)


def flop_count(m: int, k: int, n: int, d) -> float:
    """Useful arithmetic work of the sparse product: 2*m*k*n*d.

    Counts multiply and add on non-zero values only; independent of block
    size.
    """
    if m <= 0 or k <= 0 or n <= 0:
        raise ValueError("dimensions must be positive")
    if isinstance(d, Real) and d < 0:
        raise ValueError("density must be non-negative")
    return 2.0 * m * k * n * float(d)


def dense_matmul(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Reference product of two dense matrices in float64."""
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or x.ndim != 2:
        raise ValueError("operands must be 2-D")
    if a.shape[1] != x.shape[0]:
        raise ValueError(f"inner dimensions disagree: {a.shape} x {x.shape}")
    return a @ x


def densify(s: BlockSparseMatrix) -> np.ndarray:
    """Scatter blocks into a full m x k matrix, zeros elsewhere."""
    mask = s.mask
    b = mask.b
    out = np.zeros((mask.m, mask.k), dtype=np.float64)
    if mask.nblocks:
        view = out.reshape(mask.block_rows, b, mask.block_cols, b).transpose(0, 2, 1, 3)
        view[mask.coords[:, 0], mask.coords[:, 1]] = s.blocks3()
    return out


def spmm_oracle(s: BlockSparseMatrix, x: np.ndarray) -> np.ndarray:
    """Ground-truth sparse product: densify then multiply."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != s.mask.k:
        raise ValueError(f"dense operand must have {s.mask.k} rows, got {x.shape}")
    return dense_matmul(densify(s), x)
