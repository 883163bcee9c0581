"""RIS phase optimization by sequential rank-one constraint relaxation (SRCR).

The reflection vector is lifted to ``V = v_bar v_bar^H`` with
``v_bar = [conj(reflect); 1]``.  Each SRCR step solves an SDP in which the
rank-one requirement is replaced by the linear constraint
``u^H V u >= w tr(V)``, ``u`` being the leading eigenvector of the previous
iterate, and ``w`` is pushed towards one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelRealization, ComposedChannels, compose
from .config import ScenarioConfig
from .metrics import CovarianceSolution, PhaseSolution, gain_from_channel, sinr_from_row, steering_vector
from .solver import ConicProgram, HermitianBlock, Status, leading_eigvec, solve_sdp

log = logging.getLogger(__name__)

SOLVABLE_TOL = 1e-6


@dataclass
class LiftedPhaseState:
    V: np.ndarray
    w: float
    tau: float
    t: int = 0
    objective: float = float("nan")
    solved: bool = False

    @property
    def rank_gap(self) -> float:
        """tr(V) / lambda_max(V) - 1; zero exactly for rank one."""
        lam, _ = leading_eigvec(self.V)
        return float(np.real(np.trace(self.V)) / lam - 1.0)


def lift(v) -> np.ndarray:
    v_bar = np.append(np.asarray(v, dtype=complex), 1.0)
    return np.outer(v_bar, v_bar.conj())


def sensing_blocks(H, R, a) -> np.ndarray:
    """H_l = diag(a_l^H) H R H^H diag(a_l), one N x N block per column of ``a``."""
    HRH = H @ R @ H.conj().T
    a = a.reshape(a.shape[0], -1)
    return np.einsum("nl,nm,ml->lnm", a.conj(), HRH, a)


def border(Hl) -> np.ndarray:
    """Pad with a zero last row and column."""
    Hl = np.asarray(Hl)
    pad = [(0, 0)] * (Hl.ndim - 2) + [(0, 1), (0, 1)]
    return np.pad(Hl, pad)


def user_block(H, direct_row, ris_row, R, Rk, gamma: float) -> np.ndarray:
    """W_k such that v_bar^H W_k v_bar = h_k^H ((1 + 1/gamma) R_k - R) h_k."""
    Rt = (1.0 + 1.0 / gamma) * Rk - R
    G = ris_row[:, None] * H  # diag(h_{2,k}^H) H
    h1 = direct_row.conj()  # column h_{1,k}
    top = np.hstack([G @ Rt @ G.conj().T, (G @ Rt @ h1)[:, None]])
    bottom = np.append(h1.conj() @ Rt @ G.conj().T, h1.conj() @ Rt @ h1)
    return np.vstack([top, bottom[None, :]])


def build_Hl(realization: ChannelRealization, layout, R, theta, config: ScenarioConfig):
    """Sensing block and its bordered (lifted) form for one angle."""
    H = compose(realization, layout).H
    a = steering_vector(theta, realization.N, config.d_ris, realization.wavelength)
    Hl = sensing_blocks(H, R, a)[0]
    return Hl, border(Hl)


def build_Wk(realization: ChannelRealization, layout, solution: CovarianceSolution, k: int, config: ScenarioConfig):
    ch = compose(realization, layout)
    return user_block(ch.H, ch.direct[k], ch.ris_rows[k], solution.R, solution.Rk[k], config.gamma)


@dataclass
class _Lifted:
    program: ConicProgram
    V: HermitianBlock
    chi: int
    scale: float
    rank_row: int | None


def _phase_program(Hbar, W, noise, u=None, w: float = 0.0) -> _Lifted:
    Hbar = np.asarray(Hbar)
    n1 = Hbar.shape[1]
    V = HermitianBlock(0, n1)
    chi = V.size
    n = chi + 1
    scale = max(max(np.abs(np.linalg.eigvalsh(h)).max() for h in Hbar), 1e-300)
    obj = np.zeros(n)
    obj[chi] = 1.0
    prog = ConicProgram(n=n, objective=obj, maximize=True)
    for h in Hbar:
        row = V.trace_row(h / scale, n)
        row[chi] = -1.0
        prog.add_ge(row, 0.0)
    noise = np.broadcast_to(np.asarray(noise, dtype=float), (len(W),))
    for Wk, s2 in zip(W, noise):
        wn = max(np.linalg.norm(Wk), 1e-300)
        prog.add_ge(V.trace_row(Wk / wn, n), s2 / wn)
    for i in range(n1):
        row = np.zeros(n)
        row[i] = 1.0  # diagonal slots come first
        prog.add_eq(row, 1.0)
    rank_row = None
    if u is not None and w > 0:
        rank_row = len(prog.ineq_rows)
        prog.add_ge(V.trace_row(np.outer(u, u.conj()) - w * np.eye(n1), n), 0.0)
    d = 2 * n1
    prog.add_lmi(np.zeros((d, d)), V.embedding_op(n))
    return _Lifted(prog, V, chi, scale, rank_row)


def solve_lifted(Hbar, W, noise, u=None, w: float = 0.0):
    """One lifted SDP; returns (V or None, objective, report)."""
    lp = _phase_program(Hbar, W, noise, u, w)
    rep = solve_sdp(lp.program, feas_tol=SOLVABLE_TOL)
    if rep.status is not Status.OPTIMAL:
        return None, float("nan"), rep
    V = lp.V.value(rep.x)
    return V, lp.scale * float(rep.x[lp.chi]), rep


def srcr_step(state: LiftedPhaseState, Hbar, W, noise, tau0: float) -> LiftedPhaseState:
    """One SRCR iteration (solve, accept or halve tau, update w)."""
    _, u = leading_eigvec(state.V)
    V, obj, rep = solve_lifted(Hbar, W, noise, u, state.w)
    if V is not None:
        new_V, tau, solved = V, tau0, True
    else:
        log.debug("SRCR step %d unsolvable (%s), halving tau", state.t, rep.status.value)
        new_V, tau, solved, obj = state.V, state.tau / 2.0, False, state.objective
    lam, _ = leading_eigvec(new_V)
    w = min(1.0, lam / float(np.real(np.trace(new_V))) + tau)
    return LiftedPhaseState(V=new_V, w=w, tau=tau, t=state.t + 1, objective=obj, solved=solved)


def recover_reflect(V) -> np.ndarray:
    """Unit-modulus reflection coefficients from a (near) rank-one lifted matrix."""
    lam, u = leading_eigvec(V)
    v_bar = np.sqrt(max(lam, 0.0)) * u
    v_bar = np.exp(1j * np.angle(v_bar))
    v_bar = v_bar / v_bar[-1]
    return v_bar[:-1].conj()


@dataclass
class PhaseResult:
    solution: PhaseSolution
    history: list = field(default_factory=list)  # lifted objective per accepted step
    rank_gap: float = float("nan")
    accepted: bool = True
    monotone_violations: int = 0


def min_gain(H, reflect, R, a) -> float:
    return float(np.min(gain_from_channel(H, reflect, R, a)))


def sinr_ok(ch: ComposedChannels, reflect, cov: CovarianceSolution, gamma: float, noise: float, rtol: float = 1e-6) -> bool:
    rows = ch.user_rows(reflect)
    return all(sinr_from_row(rows[k], cov.R, cov.Rk[k], noise) >= gamma * (1 - rtol) for k in range(rows.shape[0]))


def randomized_start(V, Hbar, W, noise, n: int, rng) -> np.ndarray | None:
    """Best feasible unit-modulus ``v_bar`` among random phase candidates.

    Candidates are ``n`` Gaussian draws from CN(0, V) plus ``n`` uniformly
    random phase vectors, each projected onto the unit circle and
    de-rotated so the last entry is one.  Returns None when no candidate
    meets every SINR row.
    """
    d = V.shape[0]
    w, U = np.linalg.eigh(V)
    root = U * np.sqrt(np.clip(w, 0.0, None))
    Z = np.vstack([
        (rng.standard_normal((n, d)) + 1j * rng.standard_normal((n, d))) @ root.T,
        np.exp(2j * np.pi * rng.random((n, d))),
    ])
    Z = np.exp(1j * np.angle(Z))
    Z = Z * Z[:, -1:].conj()
    gains = np.min(np.einsum("pi,lij,pj->lp", Z.conj(), Hbar, Z).real, axis=0)
    ok = np.ones(Z.shape[0], dtype=bool)
    noise = np.broadcast_to(np.asarray(noise, dtype=float), (len(W),))
    for Wk, s2 in zip(W, noise):
        ok &= np.einsum("pi,ij,pj->p", Z.conj(), Wk, Z).real >= s2
    if not ok.any():
        return None
    return Z[int(np.argmax(np.where(ok, gains, -np.inf)))]


def _terminal_value(state: LiftedPhaseState, Hbar, W, noise, rtol: float = 1e-6) -> float:
    """True min gain of the recovered phases, -inf when an SINR row fails."""
    vb = np.append(recover_reflect(state.V).conj(), 1.0)
    noise = np.broadcast_to(np.asarray(noise, dtype=float), (len(W),))
    for Wk, s2 in zip(W, noise):
        if np.real(vb.conj() @ Wk @ vb) < s2 * (1 - rtol):
            return -np.inf
    return float(min(np.real(vb.conj() @ h @ vb) for h in Hbar))


def _continue(state, Hbar, W, noise, eps, tau0, max_iter, history, force=False):
    history = list(history)
    violations = 0
    while (force or state.rank_gap > eps) and state.t < max_iter:
        force = False
        state = srcr_step(state, Hbar, W, noise, tau0)
        if state.solved:
            if state.objective < history[-1] - 1e-7 * abs(history[-1]):
                violations += 1
            history.append(state.objective)
    return state, history, violations


def optimize_phase_lifted(
    Hbar, W, noise, eps: float = 1e-5, tau0: float = 0.05, max_iter: int = 60, V0=None, randomizations: int = 0
):
    """Run SRCR from a w = 0 relaxed solve; return the final state and history.

    With ``randomizations > 0`` a second SRCR run is linearized around the
    best randomized candidate (see :func:`randomized_start`) instead of the
    relaxed solution's eigenvector, and the run whose recovered phases give
    the larger feasible min gain is returned.
    """
    n1 = Hbar.shape[1]
    V0 = lift(np.ones(n1 - 1)) if V0 is None else V0
    state = LiftedPhaseState(V=V0, w=0.0, tau=tau0)
    state = srcr_step(state, Hbar, W, noise, tau0)
    if not state.solved:
        return state, [], 0
    history = [state.objective]
    best = _continue(state, Hbar, W, noise, eps, tau0, max_iter, history)
    if randomizations > 0 and state.rank_gap > eps:
        z = randomized_start(state.V, Hbar, W, noise, randomizations, np.random.default_rng(0))
        if z is not None:
            anchored = LiftedPhaseState(V=np.outer(z, z.conj()), w=state.w, tau=state.tau, t=state.t,
                                        objective=state.objective, solved=True)
            # the rank-one anchor is not an SRCR iterate, so always take a step
            alt = _continue(anchored, Hbar, W, noise, eps, tau0, max_iter, history, force=True)
            if _terminal_value(alt[0], Hbar, W, noise) > _terminal_value(best[0], Hbar, W, noise):
                best = alt
    return best


def optimize_phase(
    realization: ChannelRealization,
    layout,
    cov: CovarianceSolution,
    config: ScenarioConfig,
    reflect0=None,
    channels: ComposedChannels | None = None,
) -> PhaseResult:
    """SRCR phase design with a monotone acceptance guard.

    The recovered phases replace ``reflect0`` only when they do not lower the
    true minimum beampattern gain and keep every SINR target.
    """
    ch = channels if channels is not None else compose(realization, layout)
    N = realization.N
    reflect0 = np.ones(N, dtype=complex) if reflect0 is None else np.asarray(reflect0)
    a = steering_vector(config.sensing_angles, N, config.d_ris, realization.wavelength)
    Hbar = border(sensing_blocks(ch.H, cov.R, a))
    W = [user_block(ch.H, ch.direct[k], ch.ris_rows[k], cov.R, cov.Rk[k], config.gamma) for k in range(realization.K)]

    state, history, violations = optimize_phase_lifted(
        Hbar, W, config.noise, config.eps_srcr, config.tau0, config.max_srcr,
        randomizations=config.srcr_randomizations,
    )
    if violations:
        log.info("SRCR objective decreased on %d accepted steps", violations)
    base = min_gain(ch.H, reflect0, cov.R, a)
    if not history:
        return PhaseResult(PhaseSolution.from_reflect(reflect0, status="unsolvable"), accepted=False)
    gap = state.rank_gap
    status = "converged" if gap <= config.eps_srcr else "iteration_cap"
    reflect = recover_reflect(state.V)
    new = min_gain(ch.H, reflect, cov.R, a)
    if new >= base and sinr_ok(ch, reflect, cov, config.gamma, config.noise):
        sol = PhaseSolution.from_reflect(reflect, status=status, iterations=state.t)
        return PhaseResult(sol, history, gap, True, violations)
    sol = PhaseSolution.from_reflect(reflect0, status="kept", iterations=state.t)
    return PhaseResult(sol, history, gap, False, violations)
