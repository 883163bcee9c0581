"""Transmit covariance design by semidefinite relaxation.

With the RIS phases and antenna positions fixed, the covariance subproblem
is a max-min over sensing angles subject to per-user SINR constraints and a
power budget.  Dropping the rank-one requirement on the per-user
covariances leaves a convex SDP; a rank-one solution with the same
objective is then recovered in closed form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization, compose
from .config import ScenarioConfig
from .metrics import CovarianceSolution, steering_vector
from .solver import ConicProgram, HermitianBlock, Status, solve_sdp

log = logging.getLogger(__name__)


class CovarianceInfeasible(RuntimeError):
    """No covariance meets the SINR targets; ``binding`` is "sinr" or "power"."""

    def __init__(self, binding: str, message: str = ""):
        super().__init__(message or f"covariance subproblem infeasible ({binding} constraints)")
        self.binding = binding


class DegenerateUser(ValueError):
    """A user receives no useful signal power, so no rank-one component exists."""


def sensing_matrices(H, reflect, a) -> np.ndarray:
    """A(theta_l) = H^H Phi^H a a^H Phi H for each column of ``a`` (L x M x M)."""
    b = (a.conj().T * reflect) @ H  # L x M, rows a^H Phi H
    return np.einsum("li,lj->lij", b.conj(), b)


def user_matrices(rows) -> np.ndarray:
    """H_k = h_k h_k^H from the channel rows h_k^H (K x M x M)."""
    rows = np.atleast_2d(rows)
    return np.einsum("ki,kj->kij", rows.conj(), rows)


@dataclass
class CovarianceProgram:
    """The relaxed covariance SDP with its variable layout and scalings.

    Internally ``R = p0 * X`` and the epigraph variable is measured in units
    of ``p0 * gain_scale`` so the conic data is O(1).
    """

    program: ConicProgram
    R: HermitianBlock
    Rk: list
    chi_index: int
    p0: float
    gain_scale: float

    def unpack(self, x) -> CovarianceSolution:
        R = self.p0 * self.R.value(x)
        Rk = np.array([self.p0 * b.value(x) for b in self.Rk]).reshape(len(self.Rk), *R.shape)
        obj = self.p0 * self.gain_scale * float(x[self.chi_index])
        return CovarianceSolution(R=R, Rk=Rk, objective=obj, status="optimal")


def covariance_program(A, Hk, p0: float, gamma: float, noise, with_power: bool = True) -> CovarianceProgram:
    """Epigraph form of the relaxed covariance problem.

    maximize chi  s.t.  tr(A_l R) >= chi,
                        (1 + 1/gamma) tr(R_k H_k) >= tr(R H_k) + noise_k,
                        tr(R) <= p0,  R >= 0,  R_k >= 0,  R - sum_k R_k >= 0.
    """
    A = np.asarray(A)
    Hk = np.asarray(Hk).reshape(-1, A.shape[1], A.shape[1])
    L, M, _ = A.shape
    K = Hk.shape[0]
    noise = np.broadcast_to(np.asarray(noise, dtype=float), (K,))
    blocks = [HermitianBlock(i * M * M, M) for i in range(K + 1)]
    chi = (K + 1) * M * M
    n = chi + 1

    gain_scale = max(float(np.max([np.linalg.eigvalsh(Al)[-1] for Al in A])), 1e-300)
    obj = np.zeros(n)
    obj[chi] = 1.0
    prog = ConicProgram(n=n, objective=obj, maximize=True)
    Rb, Rks = blocks[0], blocks[1:]
    for Al in A:
        row = Rb.trace_row(Al / gain_scale, n)
        row[chi] = -1.0
        prog.add_ge(row, 0.0)
    for k in range(K):
        hn = np.real(np.trace(Hk[k]))
        if hn <= 0:
            raise DegenerateUser(f"user {k} has a zero channel")
        Hn = Hk[k] / hn
        row = (1.0 + 1.0 / gamma) * Rks[k].trace_row(Hn, n) - Rb.trace_row(Hn, n)
        prog.add_ge(row, noise[k] / (p0 * hn))
    if with_power:
        prog.add_le(Rb.trace_row(np.eye(M), n), 1.0)
    d = 2 * M
    prog.add_lmi(np.zeros((d, d)), Rb.embedding_op(n))
    residual = Rb.embedding_op(n)
    for b in Rks:
        prog.add_lmi(np.zeros((d, d)), b.embedding_op(n))
        residual = residual + b.embedding_op(n, sign=-1.0)
    if K:
        prog.add_lmi(np.zeros((d, d)), residual)
    return CovarianceProgram(prog, Rb, Rks, chi, p0, gain_scale)


def build_subproblem(realization: ChannelRealization, layout, reflect, config: ScenarioConfig) -> CovarianceProgram:
    ch = compose(realization, layout)
    a = steering_vector(config.sensing_angles, realization.N, config.d_ris, realization.wavelength)
    A = sensing_matrices(ch.H, reflect, a)
    Hk = user_matrices(ch.user_rows(reflect)) if realization.K else np.zeros((0, *A.shape[1:]))
    return covariance_program(A, Hk, config.p0, config.gamma, config.noise)


def min_sinr_power(A, Hk, gamma: float, noise) -> float:
    """Smallest tr(R) meeting every SINR target; inf when no power suffices.

    The SDP is solved at the power scale where the SINR rows are O(1), so
    it stays well posed however far the answer is from the budget.
    """
    Hk = np.asarray(Hk)
    hn = np.real(np.trace(Hk, axis1=1, axis2=2))
    if hn.size == 0:
        return 0.0
    scale = gamma * float(np.max(np.broadcast_to(noise, hn.shape) / np.maximum(hn, 1e-300)))
    cp = covariance_program(A, Hk, scale, gamma, noise, with_power=False)
    M = A.shape[1]
    prog = cp.program
    prog.objective = -cp.R.trace_row(np.eye(M), prog.n)
    pin = np.zeros(prog.n)
    pin[cp.chi_index] = 1.0
    prog.add_eq(pin, 0.0)  # a free epigraph variable stalls the solver
    rep = solve_sdp(prog, feas_tol=1e-6)
    if rep.status is Status.OPTIMAL:
        return -scale * rep.objective
    if rep.status is Status.INFEASIBLE:
        return float("inf")
    return float("nan")


def _diagnose(A, Hk, p0, gamma, noise) -> str:
    """Decide whether the SINR targets or the power budget block feasibility."""
    need = min_sinr_power(A, Hk, gamma, noise)
    return "power" if np.isfinite(need) else "sinr"


def solve_relaxed(A, Hk, p0: float, gamma: float, noise) -> CovarianceSolution:
    cp = covariance_program(A, Hk, p0, gamma, noise)
    rep = solve_sdp(cp.program)
    if rep.status is Status.INFEASIBLE:
        raise CovarianceInfeasible(_diagnose(A, Hk, p0, gamma, noise))
    if rep.status is not Status.OPTIMAL:
        # near the feasibility boundary the solver can stall instead of
        # certifying infeasibility; the minimum-power problem settles it
        need = min_sinr_power(A, Hk, gamma, noise)
        if need > p0 * (1 + 1e-6):
            raise CovarianceInfeasible("power" if np.isfinite(need) else "sinr")
        raise RuntimeError(f"covariance SDP failed: {rep.status.value} ({rep.message})")
    sol = cp.unpack(rep.x)
    sol.R = 0.5 * (sol.R + sol.R.conj().T)
    return sol


def solve_covariance(realization: ChannelRealization, layout, reflect, config: ScenarioConfig) -> CovarianceSolution:
    """Relaxed optimum of the covariance subproblem (per-user ranks unconstrained)."""
    ch = compose(realization, layout)
    a = steering_vector(config.sensing_angles, realization.N, config.d_ris, realization.wavelength)
    A = sensing_matrices(ch.H, reflect, a)
    Hk = user_matrices(ch.user_rows(reflect)) if realization.K else np.zeros((0, *A.shape[1:]))
    return solve_relaxed(A, Hk, config.p0, config.gamma, config.noise)


def extract_rank_one(R, Rk, rows, tol: float = 1e-14) -> CovarianceSolution:
    """Rank-one per-user covariances with unchanged signal power.

    R_k <- (R_k h_k)(R_k h_k)^H / (h_k^H R_k h_k), R unchanged.  Since
    R_k minus the new component is PSD, the radar residual stays PSD and
    every constraint of the relaxed problem keeps holding.
    """
    R = np.asarray(R)
    Rk = np.asarray(Rk)
    rows = np.atleast_2d(rows)
    out = np.empty_like(Rk)
    for k in range(Rk.shape[0]):
        h = rows[k].conj()  # column h_k
        w = Rk[k] @ h
        power = float(np.real(h.conj() @ w))
        if power <= tol * max(np.real(np.trace(Rk[k])), 1e-300) * max(np.linalg.norm(h) ** 2, 1e-300):
            raise DegenerateUser(f"user {k} receives no signal power")
        out[k] = np.outer(w, w.conj()) / power
    return CovarianceSolution(R=R.copy(), Rk=out, status="rank_one")


def radar_factor(solution: CovarianceSolution) -> np.ndarray:
    """W_r with W_r W_r^H equal to the (PSD) radar part of ``solution``."""
    w, U = np.linalg.eigh(solution.radar)
    w = np.clip(w, 0.0, None)
    return U * np.sqrt(w)
