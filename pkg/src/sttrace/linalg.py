"""Sparse solves for the per-slab systems.

The system matrix is a CSR sparse part plus a low-rank symmetric update
U diag(c) U^T coming from the mean-value stabilization, which is applied
matrix-free.  Rows whose diagonal is negligible (degenerate tiny cuts)
are replaced by identity rows with zero right-hand side before solving.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError

_DIRECT_LIMIT = 5000
_DEGENERATE_REL = 1e-14


def matvec(A, x) -> np.ndarray:
    """Sparse matrix-vector product with a dimension check."""
    x = np.asarray(x, dtype=float)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} @ {x.shape}")
    return A @ x


def rank_update_apply(U, c, x) -> np.ndarray:
    """Apply U diag(c) U^T to x."""
    U = np.asarray(U, dtype=float)
    x = np.asarray(x, dtype=float)
    if U.shape[0] != x.shape[0] or U.shape[1] != np.size(c):
        raise ValueError(f"dimension mismatch: U {U.shape}, c {np.shape(c)}, x {x.shape}")
    return U @ (np.asarray(c) * (U.T @ x))


@dataclass
class SolveStats:
    method: str
    iterations: int
    relative_residual: float
    n_replaced_rows: int


def _full_diagonal(A: sp.csr_matrix, U, c) -> np.ndarray:
    diag = A.diagonal().copy()
    if U is not None and U.shape[1]:
        diag = diag + (U ** 2 * np.asarray(c)[None, :]).sum(axis=1)
    return diag


def degenerate_rows(A: sp.csr_matrix, U=None, c=None) -> np.ndarray:
    """Rows whose full diagonal is negligible relative to the largest."""
    diag = np.abs(_full_diagonal(A, U, c))
    return diag < _DEGENERATE_REL * diag.max(initial=0.0)


class _Operator:
    """B = sparse + low rank, with degenerate rows replaced by identity."""

    def __init__(self, A: sp.csr_matrix, U, c, replaced: np.ndarray):
        self.A = A.tocsr()
        self.U = U if U is not None and U.size else None
        self.c = np.asarray(c, dtype=float) if self.U is not None else None
        self.replaced = replaced
        self.n = A.shape[0]

    def apply(self, x):
        y = self.A @ x
        if self.U is not None:
            y = y + rank_update_apply(self.U, self.c, x)
        if self.replaced.any():
            y[self.replaced] = x[self.replaced]
        return y

    def dense(self):
        B = self.A.toarray()
        if self.U is not None:
            B = B + (self.U * self.c) @ self.U.T
        if self.replaced.any():
            B[self.replaced, :] = 0.0
            B[self.replaced, self.replaced] = 1.0
        return B


def _gmres_kwargs():
    # scipy renamed tol -> rtol in 1.12
    params = inspect.signature(spla.gmres).parameters
    return "rtol" if "rtol" in params else "tol"


def solve(system, method: str = "gmres", tol: float = 1e-10, maxit: int = 500):
    """Solve one slab system; returns (x, SolveStats).

    system needs: .matrix (csr), .rhs, and optionally .rank_vectors /
    .rank_coefs for the low-rank part.  gmres is restarted GMRES(50) with
    Jacobi preconditioning; direct is a dense LU fallback limited to
    5000 dofs.
    """
    A = system.matrix.tocsr()
    U = getattr(system, "rank_vectors", None)
    c = getattr(system, "rank_coefs", None)
    b = np.asarray(system.rhs, dtype=float).copy()
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError("system is not square/consistent")
    replaced = degenerate_rows(A, U, c)
    b[replaced] = 0.0
    op = _Operator(A, U, c, replaced)
    n = A.shape[0]

    if method == "direct":
        if n > _DIRECT_LIMIT:
            raise SolverError(f"direct solver limited to {_DIRECT_LIMIT} dofs, got {n}")
        try:
            x = scipy.linalg.solve(op.dense(), b)
        except scipy.linalg.LinAlgError as exc:
            raise SolverError(f"singular direct factorization: {exc}") from exc
        rel = _relres(op, x, b)
        return x, SolveStats("direct", 1, rel, int(replaced.sum()))
    if method != "gmres":
        raise ValueError(f"unknown solver method {method!r}")

    diag = _full_diagonal(A, op.U, op.c)
    diag = np.where(replaced | (np.abs(diag) < 1e-300), 1.0, diag)
    M = spla.LinearOperator((n, n), matvec=lambda x: x / diag)
    lin = spla.LinearOperator((n, n), matvec=op.apply)
    history: list[float] = []
    kw = {_gmres_kwargs(): tol}
    x, info = spla.gmres(lin, b, M=M, restart=50, maxiter=maxit,
                         callback=lambda pr: history.append(float(pr)),
                         callback_type="pr_norm", **kw)
    rel = _relres(op, x, b)
    if rel > 10 * tol:
        raise SolverError(
            f"GMRES did not converge: relative residual {rel:.3e} after "
            f"{len(history)} iterations (info={info})", residuals=history)
    return x, SolveStats("gmres", len(history), rel, int(replaced.sum()))


def _relres(op: _Operator, x, b) -> float:
    nb = np.linalg.norm(b)
    if nb == 0:
        return float(np.linalg.norm(op.apply(x)))
    return float(np.linalg.norm(op.apply(x) - b) / nb)
