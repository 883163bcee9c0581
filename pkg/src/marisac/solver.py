"""Small conic-programming layer used by every subproblem.

Programs are expressed over a real decision vector ``x``::

    minimize    c @ x                (or maximize)
    subject to  A_eq x == b_eq
                G x <= h
                C_j + sum_i x_i F_ji  >= 0 (PSD, real symmetric)
                x' P_j x + q_j' x + r_j <= 0 (P_j PSD)

and handed to the Clarabel interior-point solver.  Complex Hermitian
matrix variables are parameterized by ``n**2`` real numbers and enter the
PSD cone through their real symmetric embedding, so the cone data stays
real.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

FEAS_TOL = 1e-7
GAP_TOL = 1e-7
MAX_ITER = 200


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class LinearMatrixInequality:
    """``const + reshape(op @ x) >= 0``; ``op`` is sparse with shape (d*d, n)."""

    const: np.ndarray
    op: sp.csr_matrix

    @property
    def dim(self) -> int:
        return self.const.shape[0]

    def evaluate(self, x) -> np.ndarray:
        d = self.dim
        return self.const + (self.op @ x).reshape(d, d)


@dataclass
class QuadraticConstraint:
    """``x' P x + q' x + r <= 0`` with ``P`` symmetric PSD."""

    P: np.ndarray
    q: np.ndarray
    r: float

    def evaluate(self, x) -> float:
        return float(x @ self.P @ x + self.q @ x + self.r)


@dataclass
class ConicProgram:
    n: int
    objective: np.ndarray
    maximize: bool = False
    eq_rows: list = field(default_factory=list)
    eq_rhs: list = field(default_factory=list)
    ineq_rows: list = field(default_factory=list)
    ineq_rhs: list = field(default_factory=list)
    lmis: list = field(default_factory=list)
    quadratics: list = field(default_factory=list)

    def add_eq(self, row, rhs: float) -> None:
        self.eq_rows.append(np.asarray(row, dtype=float))
        self.eq_rhs.append(float(rhs))

    def add_le(self, row, rhs: float) -> None:
        self.ineq_rows.append(np.asarray(row, dtype=float))
        self.ineq_rhs.append(float(rhs))

    def add_ge(self, row, rhs: float) -> None:
        self.add_le(-np.asarray(row, dtype=float), -rhs)

    def add_lmi(self, const, op) -> None:
        const = np.asarray(const, dtype=float)
        if const.ndim != 2 or const.shape[0] != const.shape[1]:
            raise ValueError("PSD blocks must be square")
        op = sp.csr_matrix(op)
        if op.shape != (const.size, self.n):
            raise ValueError(f"LMI operator shape {op.shape} != {(const.size, self.n)}")
        self.lmis.append(LinearMatrixInequality(const, op))

    def add_quadratic(self, P, q, r: float) -> None:
        P = np.asarray(P, dtype=float)
        if P.shape != (self.n, self.n):
            raise ValueError("quadratic form has wrong shape")
        P = 0.5 * (P + P.T)
        if np.linalg.eigvalsh(P).min() < -1e-12 * max(1.0, np.abs(P).max()):
            raise ValueError("quadratic constraints must be convex")
        self.quadratics.append(QuadraticConstraint(P, np.asarray(q, dtype=float), float(r)))

    def violation(self, x) -> float:
        """Largest constraint violation of ``x`` (0 when feasible)."""
        v = 0.0
        if self.eq_rows:
            v = max(v, float(np.max(np.abs(np.array(self.eq_rows) @ x - self.eq_rhs))))
        if self.ineq_rows:
            v = max(v, float(np.max(np.array(self.ineq_rows) @ x - self.ineq_rhs)))
        for lmi in self.lmis:
            S = lmi.evaluate(x)
            v = max(v, -float(np.linalg.eigvalsh(0.5 * (S + S.T))[0]))
        for qc in self.quadratics:
            v = max(v, qc.evaluate(x))
        return v


@dataclass
class SolverReport:
    status: Status
    objective: float
    x: np.ndarray | None
    max_violation: float
    iterations: int = 0
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


# -- Hermitian <-> real helpers ----------------------------------------------


def hermitian_to_real_embedding(X) -> np.ndarray:
    """[[Re X, -Im X], [Im X, Re X]]."""
    X = np.asarray(X, dtype=complex)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(np.abs(X).max(initial=0.0), 1e-300)
    if np.abs(X - X.conj().T).max(initial=0.0) > 1e-10 * scale:
        raise ValueError("matrix is not Hermitian")
    re, im = X.real, X.imag
    return np.block([[re, -im], [im, re]])


def real_embedding_to_hermitian(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[0] // 2
    return Y[:n, :n] + 1j * Y[n:, :n]


class HermitianBlock:
    """An n x n Hermitian variable occupying ``n**2`` slots of ``x``.

    Slot order: the n diagonal entries, then real and imaginary parts of the
    strictly upper triangle (row-major).
    """

    def __init__(self, offset: int, n: int):
        self.offset = offset
        self.n = n
        self.iu = np.triu_indices(n, 1)

    @property
    def size(self) -> int:
        return self.n * self.n

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.size)

    def trace_coeffs(self, A) -> np.ndarray:
        """Real coefficients c with tr(A X) = c @ x_block for Hermitian A."""
        A = np.asarray(A, dtype=complex)
        upper = A[self.iu]
        return np.concatenate([np.diag(A).real, 2.0 * upper.real, 2.0 * upper.imag])

    def trace_row(self, A, n_total: int) -> np.ndarray:
        row = np.zeros(n_total)
        row[self.slice] = self.trace_coeffs(A)
        return row

    def value(self, x) -> np.ndarray:
        n = self.n
        xs = np.asarray(x)[self.slice]
        m = len(self.iu[0])
        X = np.diag(xs[:n]).astype(complex)
        X[self.iu] = xs[n : n + m] + 1j * xs[n + m :]
        X[self.iu[1], self.iu[0]] = xs[n : n + m] - 1j * xs[n + m :]
        return X

    def pack(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=complex)
        upper = X[self.iu]
        return np.concatenate([np.diag(X).real, upper.real, upper.imag])

    def embedding_op(self, n_total: int, sign: float = 1.0) -> sp.csr_matrix:
        """Sparse map from x to the row-major flattened 2n x 2n embedding."""
        n = self.n
        d = 2 * n
        rows, cols, vals = [], [], []

        def put(i, j, col, val):
            rows.append(i * d + j)
            cols.append(col)
            vals.append(sign * val)

        off = self.offset
        for i in range(n):
            put(i, i, off + i, 1.0)
            put(i + n, i + n, off + i, 1.0)
        m = len(self.iu[0])
        for p, (i, j) in enumerate(zip(*self.iu)):
            cr = off + n + p
            ci = off + n + m + p
            for a, b in ((i, j), (j, i)):
                put(a, b, cr, 1.0)
                put(a + n, b + n, cr, 1.0)
            # Im part: lower-left block holds Im X, upper-right -Im X
            put(i + n, j, ci, 1.0)
            put(j + n, i, ci, -1.0)
            put(i, j + n, ci, -1.0)
            put(j, i + n, ci, 1.0)
        return sp.csr_matrix((vals, (rows, cols)), shape=(d * d, n_total))


def leading_eigvec(X) -> tuple[float, np.ndarray]:
    """Largest eigenvalue of a Hermitian matrix and a unit eigenvector."""
    X = np.asarray(X)
    w, U = np.linalg.eigh(0.5 * (X + X.conj().T))
    return float(w[-1]), U[:, -1]


# -- Clarabel translation -------------------------------------------------------


def _svec_selector(d: int) -> sp.csr_matrix:
    """Rows picking the upper triangle column-wise with sqrt(2) off-diagonal scaling."""
    rows, cols, vals = [], [], []
    r = 0
    for j in range(d):
        for i in range(j + 1):
            rows.append(r)
            cols.append(i * d + j)
            vals.append(1.0 if i == j else np.sqrt(2.0))
            r += 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(r, d * d))


_SVEC_CACHE: dict[int, sp.csr_matrix] = {}


def _svec(d: int) -> sp.csr_matrix:
    if d not in _SVEC_CACHE:
        _SVEC_CACHE[d] = _svec_selector(d)
    return _SVEC_CACHE[d]


_STATUS_MAP = {
    "Solved": Status.OPTIMAL,
    "AlmostSolved": Status.OPTIMAL,
    "PrimalInfeasible": Status.INFEASIBLE,
    "AlmostPrimalInfeasible": Status.INFEASIBLE,
    "DualInfeasible": Status.UNBOUNDED,
    "AlmostDualInfeasible": Status.UNBOUNDED,
    "MaxIterations": Status.ITERATION_LIMIT,
    "MaxTime": Status.ITERATION_LIMIT,
}


def _solve(program: ConicProgram, feas_tol: float = FEAS_TOL, max_iter: int = MAX_ITER) -> SolverReport:
    n = program.n
    blocks_A, blocks_b, cones = [], [], []
    if program.eq_rows:
        blocks_A.append(sp.csr_matrix(np.array(program.eq_rows)))
        blocks_b.append(np.array(program.eq_rhs))
        cones.append(clarabel.ZeroConeT(len(program.eq_rows)))
    if program.ineq_rows:
        blocks_A.append(sp.csr_matrix(np.array(program.ineq_rows)))
        blocks_b.append(np.array(program.ineq_rhs))
        cones.append(clarabel.NonnegativeConeT(len(program.ineq_rows)))
    for qc in program.quadratics:
        w, V = np.linalg.eigh(qc.P)
        keep = w > 1e-14 * max(1.0, w.max(initial=0.0))
        Lf = (np.sqrt(w[keep])[:, None] * V[:, keep].T) if keep.any() else np.zeros((0, n))
        # ||L x||^2 <= u with u = -q'x - r  <=>  ||(u - 1, 2 L x)|| <= u + 1
        A = np.vstack([qc.q, qc.q, -2.0 * Lf])
        b = np.concatenate([[1.0 - qc.r, -1.0 - qc.r], np.zeros(Lf.shape[0])])
        blocks_A.append(sp.csr_matrix(A))
        blocks_b.append(b)
        cones.append(clarabel.SecondOrderConeT(A.shape[0]))
    for lmi in program.lmis:
        S = _svec(lmi.dim)
        blocks_A.append(-(S @ lmi.op))
        blocks_b.append(S @ lmi.const.ravel())
        cones.append(clarabel.PSDTriangleConeT(lmi.dim))

    if not cones:
        raise ValueError("program has no constraints")
    A = sp.vstack(blocks_A).tocsc()
    b = np.concatenate(blocks_b)
    c = -program.objective if program.maximize else program.objective
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_feas = min(1e-8, feas_tol)
    settings.tol_gap_abs = min(1e-8, GAP_TOL)
    settings.tol_gap_rel = min(1e-8, GAP_TOL)
    settings.max_threads = 1
    try:
        sol = clarabel.DefaultSolver(sp.csc_matrix((n, n)), np.asarray(c, dtype=float), A, b, cones, settings).solve()
    except Exception as exc:  # solver-side panic surfaces as a failed report
        log.warning("conic solver raised: %s", exc)
        return SolverReport(Status.NUMERICAL_FAILURE, float("nan"), None, float("inf"), message=str(exc))

    name = str(sol.status)
    status = _STATUS_MAP.get(name, Status.NUMERICAL_FAILURE)
    x = np.asarray(sol.x, dtype=float)
    if status is Status.OPTIMAL:
        viol = program.violation(x)
        obj = float(program.objective @ x)
        if not np.isfinite(viol) or viol > feas_tol:
            status = Status.NUMERICAL_FAILURE
        return SolverReport(status, obj, x, viol, int(sol.iterations), name)
    return SolverReport(status, float("nan"), x if x.size else None, float("inf"), int(sol.iterations), name)


def solve_sdp(program: ConicProgram, feas_tol: float = FEAS_TOL) -> SolverReport:
    """Solve a program with PSD blocks (linear and quadratic constraints allowed)."""
    return _solve(program, feas_tol)


def solve_qcp(program: ConicProgram, feas_tol: float = FEAS_TOL) -> SolverReport:
    """Solve a convex quadratically-constrained program."""
    if program.lmis:
        raise ValueError("QCP must not contain PSD blocks; use solve_sdp")
    return _solve(program, feas_tol)
