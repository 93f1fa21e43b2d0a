"""Sparse 0/1 aggregation operators and the matrix-free dual Hessian action.

Margin operators have one row per aggregate, each row being the set of
member-cell indices (all coefficients are 1, so rows are stored as sorted
index lists in a CSR-like layout rather than a general sparse matrix).
Summation always runs in ascending index order so results are reproducible
bit for bit.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, TooLarge

DENSE_ENTRY_CAP = 10**6


class WorkCounter:
    """Accumulates matvec-equivalent work units.

    One unit is one O(nnz) pass over an operator (forward or transpose
    application, or one IPF block sweep); a Hessian-vector product counts
    the passes it actually performs.
    """

    __slots__ = ("units",)

    def __init__(self):
        self.units = 0.0

    def add(self, units=1.0):
        self.units += units


class AggOperator:
    """A k-by-p aggregation operator with 0/1 rows.

    Parameters
    ----------
    rows : sequence of index arrays
        Member-cell indices of each aggregate. Stored sorted ascending.
    ncols : int
        Number of columns p (the number of granular cells).
    """

    def __init__(self, rows, ncols):
        self.ncols = int(ncols)
        self.nrows = len(rows)
        lens = np.array([len(r) for r in rows], dtype=np.int64)
        self.row_ptr = np.concatenate(([0], np.cumsum(lens)))
        if self.nrows:
            idx = np.concatenate([np.sort(np.asarray(r, dtype=np.int64)) for r in rows]) \
                if self.row_ptr[-1] else np.empty(0, dtype=np.int64)
        else:
            idx = np.empty(0, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.ncols):
            raise DimensionMismatch("row index outside [0, ncols)")
        self.col_idx = idx

    @property
    def nnz(self) -> int:
        return int(self.col_idx.size)

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    def row(self, i) -> np.ndarray:
        """Member indices of row i."""
        return self.col_idx[self.row_ptr[i]:self.row_ptr[i + 1]]

    def apply(self, x, counter=None) -> np.ndarray:
        """Row sums over member sets: (A x)_r = sum of x over row r."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.ncols,):
            raise DimensionMismatch(f"expected vector of length {self.ncols}, got {x.shape}")
        if counter is not None:
            counter.add(1.0)
        if self.nrows == 0:
            return np.zeros(0)
        out = np.add.reduceat(np.append(x[self.col_idx], 0.0), self.row_ptr[:-1])
        out[np.diff(self.row_ptr) == 0] = 0.0  # reduceat misreads empty segments
        return out

    def apply_transpose(self, u, counter=None) -> np.ndarray:
        """Scatter-add of u over member sets: (A^T u)_j = sum of u over rows containing j."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.nrows,):
            raise DimensionMismatch(f"expected vector of length {self.nrows}, got {u.shape}")
        if counter is not None:
            counter.add(1.0)
        out = np.zeros(self.ncols)
        np.add.at(out, self.col_idx, np.repeat(u, np.diff(self.row_ptr)))
        return out

    def assemble_dense(self, cap=DENSE_ENTRY_CAP) -> np.ndarray:
        """Exact dense 0/1 materialization (test oracle and small-scale direct solves)."""
        if self.nrows * self.ncols > cap:
            raise TooLarge(f"dense assembly of {self.nrows}x{self.ncols} exceeds cap {cap}")
        out = np.zeros((self.nrows, self.ncols))
        out[np.repeat(np.arange(self.nrows), np.diff(self.row_ptr)), self.col_idx] = 1.0
        return out


def stack(ops) -> AggOperator:
    """Vertically stack operators with a common column count."""
    ops = [op for op in ops if op is not None]
    if not ops:
        raise DimensionMismatch("nothing to stack")
    ncols = ops[0].ncols
    if any(op.ncols != ncols for op in ops):
        raise DimensionMismatch("stacked operators must share ncols")
    rows = [op.row(i) for op in ops for i in range(op.nrows)]
    return AggOperator(rows, ncols)


def hvp(op: AggOperator, s_diag, x, counter=None) -> np.ndarray:
    """Matrix-free A diag(S) A^T x for a (possibly stacked) operator.

    Cost is two O(nnz) passes; the matrix is never materialized.
    """
    s_diag = np.asarray(s_diag, dtype=float)
    if s_diag.shape != (op.ncols,):
        raise DimensionMismatch("S diagonal length must equal ncols")
    z = op.apply_transpose(x, counter=counter)
    return op.apply(s_diag * z, counter=counter)


def hvp_diagonal(op: AggOperator, s_diag, counter=None) -> np.ndarray:
    """Diagonal of A diag(S) A^T, i.e. per-row sums of S over member sets.

    Rows are 0/1 so the diagonal equals A S; used for Jacobi preconditioning.
    """
    return op.apply(np.asarray(s_diag, dtype=float), counter=counter)


def hvp_2d_reshape(m, n, s_diag, x) -> np.ndarray:
    """2D-margin specialization of the Hessian action via reshape.

    For the full row/column margin operator of an m-by-n table (rows first,
    then columns, cells flattened in C order) the product A diag(S) A^T x
    is a scale-then-double-margin of the reshaped table.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (m + n,):
        raise DimensionMismatch(f"expected vector of length {m + n}")
    z = np.asarray(s_diag, dtype=float).reshape(m, n) * (x[:m, None] + x[None, m:])
    return np.concatenate([z.sum(axis=1), z.sum(axis=0)])


def gram(op: AggOperator, diag=None) -> np.ndarray:
    """Dense A diag(S) A^T for a 0/1 operator without materializing A.

    Entry (i, j) sums S over the intersection of member sets i and j
    (the intersection cardinality when S is None). Cost is O(sum of
    per-cell membership counts squared), linear in nnz for margin
    operators where each cell belongs to at most d rows.
    """
    k = op.nrows
    out = np.zeros((k, k))
    members_of = [[] for _ in range(op.ncols)]
    row_ids = np.repeat(np.arange(k), np.diff(op.row_ptr))
    for rid, c in zip(row_ids, op.col_idx):
        members_of[c].append(rid)
    if diag is None:
        for members in members_of:
            for a in members:
                for b in members:
                    out[a, b] += 1.0
    else:
        diag = np.asarray(diag, dtype=float)
        for c, members in enumerate(members_of):
            for a in members:
                for b in members:
                    out[a, b] += diag[c]
    return out


def margins_2d(m, n) -> AggOperator:
    """Row-sum and column-sum operator of an m-by-n table in C order.

    First m rows sum over the column index, next n rows over the row index.
    """
    cells = np.arange(m * n).reshape(m, n)
    rows = [cells[i, :] for i in range(m)] + [cells[:, j] for j in range(n)]
    return AggOperator(rows, m * n)
