"""Minimal CSR sparse / dense linear algebra kernel.

Everything downstream (Laplacians, graph convolutions, Jacobian products)
is built on the three operations here: sparse-times-dense products,
power iteration for the dominant eigenvalue, and a self-contained cyclic
Jacobi eigensolver used as the spectral test oracle for small matrices.

All arithmetic is float64; the finite-difference gradient checks in the
training module are unreachable in single precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation


@dataclass(frozen=True)
class SparseMatrix:
    """Compressed sparse row matrix with canonical (sorted, unique) columns."""

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray  # int64, length n_rows+1
    col_indices: np.ndarray  # int64, length nnz
    values: np.ndarray       # float64, length nnz
    # row index of each stored entry, precomputed for vectorized products
    _row_ids: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ro = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        ci = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "row_offsets", ro)
        object.__setattr__(self, "col_indices", ci)
        object.__setattr__(self, "values", vals)
        if len(ro) != self.n_rows + 1 or ro[0] != 0 or ro[-1] != len(vals):
            raise ContractViolation("malformed row_offsets")
        if np.any(np.diff(ro) < 0):
            raise ContractViolation("row_offsets must be non-decreasing")
        if len(ci) != len(vals):
            raise ContractViolation("col_indices/values length mismatch")
        if len(ci) and (ci.min() < 0 or ci.max() >= self.n_cols):
            raise ContractViolation("column index out of range")
        for r in range(self.n_rows):
            cols = ci[ro[r]:ro[r + 1]]
            if np.any(np.diff(cols) <= 0):
                raise ContractViolation(f"row {r}: columns not strictly increasing")
        row_ids = np.repeat(np.arange(self.n_rows, dtype=np.int64), np.diff(ro))
        object.__setattr__(self, "_row_ids", row_ids)

    @property
    def nnz(self) -> int:
        return len(self.values)

    @staticmethod
    def from_coo(n_rows, n_cols, rows, cols, vals) -> "SparseMatrix":
        """Build from triplets; duplicate (i, j) entries are summed."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if len(rows):
            keep = np.ones(len(rows), dtype=bool)
            keep[1:] = (np.diff(rows) != 0) | (np.diff(cols) != 0)
            group = np.cumsum(keep) - 1
            merged = np.zeros(group[-1] + 1)
            np.add.at(merged, group, vals)
            rows, cols, vals = rows[keep], cols[keep], merged
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.add.at(offsets, rows + 1, 1)
        offsets = np.cumsum(offsets)
        return SparseMatrix(n_rows, n_cols, offsets, cols, vals)

    @staticmethod
    def from_dense(a, tol: float = 0.0) -> "SparseMatrix":
        a = np.asarray(a, dtype=np.float64)
        rows, cols = np.nonzero(np.abs(a) > tol)
        return SparseMatrix.from_coo(a.shape[0], a.shape[1], rows, cols, a[rows, cols])

    @staticmethod
    def identity(n: int) -> "SparseMatrix":
        idx = np.arange(n, dtype=np.int64)
        return SparseMatrix(n, n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols))
        out[self._row_ids, self.col_indices] = self.values
        return out

    def scale(self, c: float) -> "SparseMatrix":
        return SparseMatrix(self.n_rows, self.n_cols, self.row_offsets,
                            self.col_indices, c * self.values)


def spmm(a: SparseMatrix, x: np.ndarray) -> np.ndarray:
    """Sparse @ dense product; x may be (n,) or (n, f)."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if a.n_cols != x.shape[0]:
        raise ContractViolation(
            f"spmm: inner dims {a.n_cols} vs {x.shape[0]}")
    out = np.zeros((a.n_rows, x.shape[1]))
    if a.nnz:
        np.add.at(out, a._row_ids, a.values[:, None] * x[a.col_indices])
    return out[:, 0] if squeeze else out


def _check_symmetric_sampled(a: SparseMatrix, n_samples: int = 32, tol: float = 1e-10):
    if a.n_rows != a.n_cols:
        raise ContractViolation("power_iteration: matrix must be square")
    if a.nnz == 0:
        return
    dense_probe = a.to_dense() if a.n_rows <= 64 else None
    if dense_probe is not None:
        if np.max(np.abs(dense_probe - dense_probe.T)) > tol:
            raise ContractViolation("power_iteration: matrix not symmetric")
        return
    # sample stored entries and compare to their transposed counterparts
    step = max(1, a.nnz // n_samples)
    for k in range(0, a.nnz, step):
        i, j, v = a._row_ids[k], a.col_indices[k], a.values[k]
        lo, hi = a.row_offsets[j], a.row_offsets[j + 1]
        pos = np.searchsorted(a.col_indices[lo:hi], i)
        vt = a.values[lo + pos] if pos < hi - lo and a.col_indices[lo + pos] == i else 0.0
        if abs(v - vt) > tol:
            raise ContractViolation("power_iteration: matrix not symmetric")


def power_iteration(a: SparseMatrix, tol: float = 1e-12,
                    max_iter: int = 2000, seed: int = 0):
    """Largest-magnitude eigenvalue of a symmetric sparse matrix.

    Returns (estimate, converged). Convergence is successive Rayleigh
    quotients differing by less than tol.
    """
    _check_symmetric_sampled(a)
    n = a.n_rows
    if n < 1:
        raise ContractViolation("power_iteration: empty matrix")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = spmm(a, v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, True
        v = w / norm
        lam_new = float(v @ spmm(a, v))
        if abs(lam_new - lam) < tol:
            return lam_new, True
        lam = lam_new
    return lam, False


def dense_eig_sym(a: np.ndarray):
    """Eigendecomposition of a small symmetric matrix via cyclic Jacobi.

    Returns (eigenvalues ascending, eigenvector matrix V with columns
    matching the eigenvalue order). Self-contained so it can serve as an
    independent oracle for the spectral-domain convolution.
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape[0] != a.shape[1]:
        raise ContractViolation("dense_eig_sym: matrix must be square")
    if n > 64:
        raise ContractViolation("dense_eig_sym: intended for n <= 64")
    if n and np.max(np.abs(a - a.T)) > 1e-12:
        raise ContractViolation("dense_eig_sym: matrix not symmetric")
    m = a.copy()
    v = np.eye(n)
    norm = np.linalg.norm(a)
    if n <= 1 or norm == 0.0:
        order = np.argsort(np.diag(m))
        return np.diag(m)[order], v[:, order]
    off_tol = 1e-15 * norm
    for _ in range(100):  # sweeps
        off_entries = m - np.diag(np.diag(m))
        off = np.linalg.norm(off_entries)
        if off <= off_tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = m[p, q]
                if abs(apq) <= off_tol / (n * n):
                    continue
                theta = (m[q, q] - m[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # m <- J^T m J with the Givens pair applied to rows/cols p, q
                mp, mq = m[:, p].copy(), m[:, q].copy()
                m[:, p] = c * mp - s * mq
                m[:, q] = s * mp + c * mq
                rp, rq = m[p, :].copy(), m[q, :].copy()
                m[p, :] = c * rp - s * rq
                m[q, :] = s * rp + c * rq
                m[p, q] = m[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    eigvals = np.diag(m).copy()
    order = np.argsort(eigvals)
    return eigvals[order], v[:, order]
