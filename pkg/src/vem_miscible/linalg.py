"""Sparse assembly and linear solves.

Storage is ``scipy.sparse.csr_matrix`` with sorted, duplicate-free column
indices. Repeated assembly on a fixed sparsity pattern goes through
:class:`SparsityPattern`, which maps each contribution to its CSR slot once and
then sums values with ``np.bincount`` in a fixed order.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class LinearSolveError(RuntimeError):
    """Singular system, failed factorization or violated residual contract."""


class SparsityPattern:
    """Fixed ``(rows, cols)`` contribution list compiled to a CSR layout."""

    def __init__(self, rows, cols, shape: tuple[int, int]):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        n, m = shape
        if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= m):
            raise IndexError(f"triplet index outside shape {shape}")
        key = rows * m + cols
        uniq, slot = np.unique(key, return_inverse=True)
        self.shape = (n, m)
        self.slot = slot
        self.nnz = len(uniq)
        self.indices = (uniq % m).astype(np.int32)
        urows = uniq // m
        self.indptr = np.searchsorted(urows, np.arange(n + 1)).astype(np.int32)

    def assemble(self, values) -> sp.csr_matrix:
        data = np.bincount(self.slot, weights=np.asarray(values, dtype=float).ravel(),
                           minlength=self.nnz)
        A = sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)
        A.has_sorted_indices = True
        return A


def assemble(triplets, shape: tuple[int, int] | None = None) -> sp.csr_matrix:
    """CSR matrix from ``(rows, cols, values)``; duplicates are summed.

    Contributions are ordered by ``(row, col, value)`` before summation, so the
    result is bit-identical for any permutation of the input triplets.
    """
    rows, cols, vals = (np.asarray(a).ravel() for a in triplets)
    if shape is None:
        shape = (int(rows.max()) + 1 if rows.size else 0, int(cols.max()) + 1 if cols.size else 0)
    vals = vals.astype(float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite matrix entries")
    order = np.lexsort((vals, cols, rows))
    return SparsityPattern(rows[order], cols[order], shape).assemble(vals[order])


@dataclass
class SolveOptions:
    method: str = "direct"  # "direct" | "gmres" | "bicgstab"
    tol: float = 1e-11
    maxiter: int = 2000
    refine: int = 2


@dataclass
class SolveInfo:
    residual: float
    iterations: int = 0
    extra: dict = field(default_factory=dict)


def _structural_check(A: sp.csr_matrix) -> None:
    empty_rows = np.flatnonzero(np.diff(A.indptr) == 0)
    if empty_rows.size:
        raise LinearSolveError(f"structurally singular: empty row {empty_rows[0]}")
    col_count = np.bincount(A.indices, minlength=A.shape[1])
    empty_cols = np.flatnonzero(col_count == 0)
    if empty_cols.size:
        raise LinearSolveError(f"structurally singular: empty column {empty_cols[0]}")


def _relres(A, x, b) -> float:
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return r / nb if nb > 0 else r


def solve(A, b, opts: SolveOptions | None = None, info: SolveInfo | None = None) -> np.ndarray:
    """Solve ``A x = b`` and enforce ``||Ax - b|| / ||b|| <= opts.tol``."""
    opts = opts or SolveOptions()
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape[0] != A.shape[1] or b.shape != (n,):
        raise ValueError(f"nonconforming system: A{A.shape}, b{b.shape}")
    if n == 0:
        return np.zeros(0)
    _structural_check(A)
    if not np.any(b):
        return np.zeros(n)
    iters = 0
    if opts.method == "direct":
        try:
            lu = spla.splu(A.tocsc(), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise LinearSolveError(f"LU factorization failed ({exc}); n={n}") from exc
        x = lu.solve(b)
        for _ in range(opts.refine):
            if _relres(A, x, b) <= opts.tol:
                break
            x = x + lu.solve(b - A @ x)
        diag = np.abs(lu.U.diagonal())
        if np.any(diag == 0.0) or not np.all(np.isfinite(x)):
            raise LinearSolveError(
                f"numerically singular: zero pivot at position {int(np.argmin(diag))}"
            )
    elif opts.method in ("gmres", "bicgstab"):
        ilu = spla.spilu(A.tocsc(), drop_tol=1e-5, fill_factor=20)
        M = spla.LinearOperator(A.shape, ilu.solve)
        count = [0]

        def cb(_):
            count[0] += 1

        solver = spla.gmres if opts.method == "gmres" else spla.bicgstab
        kw = {"callback_type": "pr_norm"} if opts.method == "gmres" else {}
        x, flag = solver(A, b, M=M, rtol=opts.tol * 0.1, atol=0.0, maxiter=opts.maxiter,
                         callback=cb, **kw)
        iters = count[0]
        if flag != 0:
            raise LinearSolveError(
                f"{opts.method} did not converge after {iters} iterations, "
                f"residual {_relres(A, x, b):.3e}"
            )
    else:
        raise ValueError(f"unknown solver method {opts.method!r}")
    res = _relres(A, x, b)
    if info is not None:
        info.residual, info.iterations = res, iters
    if not res <= opts.tol:
        raise LinearSolveError(f"residual {res:.3e} exceeds tolerance {opts.tol:.1e} (n={n})")
    return x


def condition_estimate(A) -> float:
    """1-norm condition number estimate (cheap enough for diagnostics)."""
    A = sp.csc_matrix(A)
    try:
        lu = spla.splu(A)
    except RuntimeError:
        return float("inf")
    inv = spla.LinearOperator(A.shape, matvec=lu.solve, rmatvec=lambda v: lu.solve(v, trans="T"))
    return float(spla.norm(A, 1) * spla.onenormest(inv))
