"""Per-antenna position design by successive convex approximation (SCA).

With the covariance and the RIS phases fixed, both the SINR constraint
value and the beampattern gain are, as functions of one antenna position
``t_m``, finite sums of cosines of ``(2 pi / lambda) u . t_m``.  Each is
minorized at the current anchor by a concave quadratic

    f(t) >= f(t0) + grad f(t0)' (t - t0) - (delta / 2) ||t - t0||^2,

valid whenever ``delta`` bounds the Hessian's spectral norm everywhere.
Together with a linearized minimum-distance constraint this gives a small
convex QCP in ``(t_m, chi)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    ChannelRealization,
    ComposedChannels,
    _directions,
    compose,
    ris_field_response_matrix,
)
from .config import ScenarioConfig
from .metrics import CovarianceSolution, gain_from_channel, sinr_from_row, steering_vector
from .solver import ConicProgram, Status, solve_qcp

log = logging.getLogger(__name__)


# -- cosine sums ---------------------------------------------------------------


@dataclass(frozen=True)
class CosineSum:
    """f(t) = const + sum_r amp_r cos(omega_r . t + phase_r), t in R^2.

    ``omega`` is in rad/m, shape (R, 2).  Amplitudes may be negative.
    """

    amp: np.ndarray
    omega: np.ndarray
    phase: np.ndarray
    const: float = 0.0

    def _arg(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return t @ self.omega.T + self.phase

    def value(self, t):
        return self.const + np.cos(self._arg(t)) @ self.amp

    def grad(self, t) -> np.ndarray:
        s = -np.sin(self._arg(t)) * self.amp
        return s @ self.omega

    def hess(self, t) -> np.ndarray:
        c = -np.cos(self._arg(t)) * self.amp
        return np.einsum("...r,ri,rj->...ij", c, self.omega, self.omega)

    def envelope(self) -> float:
        """sum |amp_r| ||omega_r||^2, an upper bound on ||hess f(t)||_2 for every t."""
        return float(np.abs(self.amp) @ (self.omega**2).sum(axis=1))

    @staticmethod
    def concat(*parts: "CosineSum") -> "CosineSum":
        return CosineSum(
            amp=np.concatenate([p.amp for p in parts]),
            omega=np.vstack([p.omega.reshape(-1, 2) for p in parts]),
            phase=np.concatenate([p.phase for p in parts]),
            const=float(sum(p.const for p in parts)),
        )


def _linear_terms(coef, directions, kappa) -> CosineSum:
    """Re{sum_r coef_r exp(j kappa u_r . t)} as a cosine sum."""
    coef = np.asarray(coef, dtype=complex)
    return CosineSum(np.abs(coef), kappa * np.asarray(directions, dtype=float), np.angle(coef))


def _modulus_terms(coef, directions, kappa, scale: float) -> CosineSum:
    """scale * |sum_r coef_r exp(j kappa u_r . t)|^2 as a cosine sum."""
    coef = np.asarray(coef, dtype=complex)
    u = np.asarray(directions, dtype=float)
    i, j = np.triu_indices(coef.size, k=1)
    pair = coef[i] * coef[j].conj()
    return CosineSum(
        amp=2.0 * scale * np.abs(pair),
        omega=kappa * (u[i] - u[j]),
        phase=np.angle(pair),
        const=float(scale * np.sum(np.abs(coef) ** 2)),
    )


# -- SINR side -----------------------------------------------------------------


@dataclass
class SinrExpansion:
    """Dependence of user k's SINR constraint value on antenna m's position.

    With ``x_q = p^H g(t_q) + q^H g_k(t_q)`` (``p``, ``q`` stored as column
    vectors) the constraint value h_k^H Rt h_k equals
    ``r_mm |x_m|^2 + 2 Re{a_tilde x_m} + b_tilde``.
    """

    k: int
    m: int
    p: np.ndarray
    q: np.ndarray
    x: np.ndarray
    a_tilde: complex
    b_tilde: float
    r_mm: float
    tx_dirs: np.ndarray
    user_dirs: np.ndarray
    wavelength: float

    @property
    def P(self) -> np.ndarray:
        return np.outer(self.p, self.p.conj())

    @property
    def Q(self) -> np.ndarray:
        return np.outer(self.q, self.q.conj())

    @property
    def kappa(self) -> float:
        return 2.0 * np.pi / self.wavelength

    def x_at(self, t) -> complex:
        """x_{k,m} for antenna m placed at ``t``."""
        phase = np.exp(1j * self.kappa * (self.tx_dirs @ np.asarray(t, dtype=float)))
        phase_k = np.exp(1j * self.kappa * (self.user_dirs @ np.asarray(t, dtype=float)))
        return complex(self.p.conj() @ phase + self.q.conj() @ phase_k)

    def direct_value(self, t) -> float:
        """r_mm |x_m|^2 + 2 Re{a_tilde x_m} evaluated from x_m directly."""
        xm = self.x_at(t)
        return float(self.r_mm * abs(xm) ** 2 + 2.0 * np.real(self.a_tilde * xm))

    def cosines(self) -> CosineSum:
        coef = np.concatenate([self.p.conj(), self.q.conj()])
        dirs = np.vstack([self.tx_dirs, self.user_dirs])
        quad = _modulus_terms(coef, dirs, self.kappa, self.r_mm)
        lin = _linear_terms(2.0 * self.a_tilde * coef, dirs, self.kappa)
        return CosineSum.concat(quad, lin)


def _tilde_R(cov: CovarianceSolution, k: int, gamma: float) -> np.ndarray:
    return (1.0 + 1.0 / gamma) * cov.Rk[k] - cov.R


def _ris_response(realization: ChannelRealization) -> np.ndarray:
    ang = realization.angles
    return ris_field_response_matrix(realization.ris_coords, ang.rx_theta, ang.rx_phi, realization.wavelength)


def sinr_expansion(
    realization: ChannelRealization,
    layout,
    reflect,
    cov: CovarianceSolution,
    k: int,
    m: int,
    gamma: float,
    channels: ComposedChannels | None = None,
) -> SinrExpansion:
    layout = np.asarray(layout, dtype=float)
    M = layout.shape[1]
    if not 0 <= k < realization.K or not 0 <= m < M:
        raise IndexError(f"indices (k={k}, m={m}) out of range")
    ch = channels if channels is not None else compose(realization, layout)
    ang = realization.angles
    Rt = _tilde_R(cov, k, gamma)
    x = ch.user_rows(reflect)[k]
    pH = (ch.ris_rows[k] * reflect) @ _ris_response(realization).conj().T @ realization.sigma
    qH = realization.sigma_users[k].sum(axis=0)
    others = np.arange(M) != m
    a_tilde = complex(Rt[m, others] @ x[others].conj())
    xo = x[others]
    b_tilde = float(np.real(xo @ Rt[np.ix_(others, others)] @ xo.conj()))
    return SinrExpansion(
        k=k,
        m=m,
        p=pH.conj(),
        q=qH.conj(),
        x=x,
        a_tilde=a_tilde,
        b_tilde=b_tilde,
        r_mm=float(np.real(Rt[m, m])),
        tx_dirs=_directions(ang.tx_theta, ang.tx_phi),
        user_dirs=_directions(ang.user_theta[k], ang.user_phi[k]),
        wavelength=realization.wavelength,
    )


def I_tilde(expansion: SinrExpansion, t) -> float:
    return expansion.cosines().value(t)


def grad_I_tilde(expansion: SinrExpansion, t) -> np.ndarray:
    return expansion.cosines().grad(t)


def hess_I_tilde(expansion: SinrExpansion, t) -> np.ndarray:
    return expansion.cosines().hess(t)


def delta_tilde_closed_form(expansion: SinrExpansion) -> float:
    """Curvature constant with the 64 pi^2 / lambda and 16 pi^2 / lambda weights."""
    lam = expansion.wavelength
    r = abs(expansion.r_mm)
    p, q = np.abs(expansion.p), np.abs(expansion.q)
    iu_p = np.triu_indices(p.size, k=1)
    iu_q = np.triu_indices(q.size, k=1)
    pairs = (
        r * np.abs(expansion.Q)[iu_q].sum()
        + r * np.abs(expansion.P)[iu_p].sum()
        + r * np.outer(p, q).sum()
    )
    lin = abs(expansion.a_tilde) * (p.sum() + q.sum())
    return float(64 * np.pi**2 / lam * pairs + 16 * np.pi**2 / lam * lin)


def _safe_delta(closed: float, bound: float, label: str) -> float:
    if closed >= bound:
        return closed
    log.debug("%s closed form %.3e below Hessian envelope %.3e; inflating", label, closed, bound)
    return bound


def delta_tilde(expansion: SinrExpansion) -> float:
    """Closed-form curvature constant, raised to the Hessian envelope when smaller."""
    return _safe_delta(delta_tilde_closed_form(expansion), expansion.cosines().envelope(), "delta_tilde")


@dataclass(frozen=True)
class ConcaveSurrogate:
    """s(t) = f0 + g0'(t - t0) - (delta/2)||t - t0||^2 >= rhs."""

    anchor: np.ndarray
    f0: float
    g0: np.ndarray
    delta: float
    rhs: float

    def value(self, t) -> np.ndarray:
        d = np.asarray(t, dtype=float) - self.anchor
        return self.f0 + d @ self.g0 - 0.5 * self.delta * np.sum(d * d, axis=-1)

    def quadratic_form(self):
        """(delta/2) t't - (g0 + delta t0)' t - const, i.e. the expanded form."""
        lin = self.g0 + self.delta * self.anchor
        const = self.f0 - 0.5 * self.delta * self.anchor @ self.anchor - self.g0 @ self.anchor
        return -0.5 * self.delta, lin, const


def sinr_surrogate_constraint(expansion: SinrExpansion, anchor, noise: float, delta: float | None = None):
    anchor = np.asarray(anchor, dtype=float)
    f = expansion.cosines()
    delta = delta_tilde(expansion) if delta is None else delta
    return ConcaveSurrogate(anchor, float(f.value(anchor)), f.grad(anchor), delta, noise - expansion.b_tilde)


# -- sensing side --------------------------------------------------------------


@dataclass
class SensingExpansion:
    """Lower bound of the gain at one angle as antenna m moves.

    ``gain(t) >= Re{b^T g(t)} + offset`` with equality at the anchor, where
    ``offset = d^H B_m d - R_mm |d^H g(t0)|^2``.
    """

    m: int
    d: np.ndarray  # column d, with d^H = a^H Phi F^H Sigma
    g_anchor: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    B: np.ndarray
    r_mm: float
    tx_dirs: np.ndarray
    wavelength: float

    @property
    def b(self) -> np.ndarray:
        return self.b1 + self.b2

    @property
    def offset(self) -> float:
        dH = self.d.conj()
        return float(np.real(dH @ self.B @ self.d) - self.r_mm * abs(dH @ self.g_anchor) ** 2)

    def cosines(self) -> CosineSum:
        return _linear_terms(self.b, self.tx_dirs, 2.0 * np.pi / self.wavelength)

    def direct_value(self, t) -> float:
        g = np.exp(2j * np.pi / self.wavelength * (self.tx_dirs @ np.asarray(t, dtype=float)))
        return float(np.real(self.b @ g))


def sensing_expansion(
    realization: ChannelRealization, layout, reflect, R, theta: float, m: int, d_ris: float
) -> SensingExpansion:
    layout = np.asarray(layout, dtype=float)
    M = layout.shape[1]
    if not 0 <= m < M:
        raise IndexError(f"antenna index {m} out of range")
    ang = realization.angles
    lam = realization.wavelength
    a = steering_vector(theta, realization.N, d_ris, lam)
    dH = (a.conj() * reflect) @ _ris_response(realization).conj().T @ realization.sigma
    d = dH.conj()
    G = np.exp(2j * np.pi / lam * (_directions(ang.tx_theta, ang.tx_phi) @ layout))  # L_t x M
    others = np.arange(M) != m
    gm = G[:, m]
    r_mm = float(np.real(R[m, m]))
    b1 = 2.0 * r_mm * (gm.conj() @ d) * dH
    b2 = 2.0 * (R[m, others] @ (G[:, others].conj().T @ d)) * dH
    Go = G[:, others]
    B = Go @ R[np.ix_(others, others)] @ Go.conj().T
    return SensingExpansion(
        m=m,
        d=d,
        g_anchor=gm,
        b1=b1,
        b2=b2,
        B=B,
        r_mm=r_mm,
        tx_dirs=_directions(ang.tx_theta, ang.tx_phi),
        wavelength=lam,
    )


def delta_bar_closed_form(expansion: SensingExpansion) -> float:
    return float(8 * np.pi**2 / expansion.wavelength**2 * np.abs(expansion.b).sum())


def delta_bar(expansion: SensingExpansion) -> float:
    return _safe_delta(delta_bar_closed_form(expansion), expansion.cosines().envelope(), "delta_bar")


def sensing_surrogate_constraint(expansion: SensingExpansion, anchor, chi: float = 0.0, delta: float | None = None):
    """Surrogate for Re{b^T g(t)} >= chi - offset."""
    anchor = np.asarray(anchor, dtype=float)
    f = expansion.cosines()
    delta = delta_bar(expansion) if delta is None else delta
    return ConcaveSurrogate(anchor, float(f.value(anchor)), f.grad(anchor), delta, chi - expansion.offset)


# -- distance ------------------------------------------------------------------


@dataclass(frozen=True)
class HalfPlane:
    """normal' t >= rhs."""

    normal: np.ndarray
    rhs: float


def min_distance_constraints(layout, m: int, anchor, D: float) -> list[HalfPlane]:
    """Linearized ||t_m - t_q|| >= D around ``anchor`` for every other antenna."""
    layout = np.asarray(layout, dtype=float)
    anchor = np.asarray(anchor, dtype=float)
    out = []
    for qi in range(layout.shape[1]):
        if qi == m:
            continue
        diff = anchor - layout[:, qi]
        dist = np.linalg.norm(diff)
        if dist == 0:
            raise ValueError(f"antenna {m} coincides with antenna {qi}")
        n = diff / dist
        out.append(HalfPlane(n, float(D + n @ layout[:, qi])))
    return out


# -- subproblem ----------------------------------------------------------------


def min_gain_at(realization, layout, reflect, R, a) -> float:
    H = compose(realization, layout).H
    return float(np.min(gain_from_channel(H, reflect, R, a)))


def sinr_feasible(ch: ComposedChannels, reflect, cov: CovarianceSolution, gamma: float, noise: float, rtol: float = 1e-6) -> bool:
    rows = ch.user_rows(reflect)
    return all(sinr_from_row(rows[k], cov.R, cov.Rk[k], noise) >= gamma * (1 - rtol) for k in range(rows.shape[0]))


@dataclass
class AntennaStep:
    """Outcome of the SCA loop for one antenna."""

    layout: np.ndarray
    gain: float
    iterations: int = 0
    accepted: int = 0
    status: str = "unchanged"
    history: list = field(default_factory=list)


def _add_surrogate(prog: ConicProgram, s: ConcaveSurrogate, anchor, lam: float, scale: float, chi: bool, rhs: float):
    """delta lam^2/2 ||z||^2 - lam g0'z - f0 + rhs (+ chi) <= 0, divided by ``scale``."""
    n = prog.n
    a = 0.5 * s.delta * lam**2 / scale
    q = np.zeros(n)
    q[:2] = -lam * s.g0 / scale
    if chi:
        q[2] = 1.0
    r = (rhs - s.f0) / scale
    if a > 0:
        P = np.zeros((n, n))
        P[0, 0] = P[1, 1] = a
        prog.add_quadratic(P, q, r)
    else:
        prog.add_le(q, -r)


def position_program(
    sensing: list[ConcaveSurrogate],
    sinr: list[ConcaveSurrogate],
    halfplanes: list[HalfPlane],
    anchor,
    bounds,
    wavelength: float,
    gain_scale: float,
    sinr_scales,
) -> ConicProgram:
    """QCP over x = (z, chi') with t = anchor + wavelength * z, chi = gain_scale * chi'."""
    anchor = np.asarray(anchor, dtype=float)
    lam = wavelength
    prog = ConicProgram(n=3, objective=np.array([0.0, 0.0, 1.0]), maximize=True)
    for s in sensing:
        # built with chi = 0, so s.rhs = -offset
        _add_surrogate(prog, s, anchor, lam, gain_scale, True, s.rhs)
    for s, sc in zip(sinr, sinr_scales):
        # the anchor always satisfies its own surrogate
        _add_surrogate(prog, s, anchor, lam, sc, False, min(s.rhs, s.f0))
    lo, hi = bounds
    for i in range(2):
        row = np.zeros(3)
        row[i] = lam
        prog.add_ge(row, min(lo[i] - anchor[i], 0.0))
        prog.add_le(row, max(hi[i] - anchor[i], 0.0))
    for h in halfplanes:
        row = np.zeros(3)
        row[:2] = lam * h.normal
        prog.add_ge(row, min(h.rhs - h.normal @ anchor, 0.0))
    return prog


def _surrogates_at(realization, layout, reflect, cov, m, anchor, config, ch):
    a_thetas = config.sensing_angles
    sensing = [
        sensing_surrogate_constraint(sensing_expansion(realization, layout, reflect, cov.R, th, m, config.d_ris), anchor)
        for th in a_thetas
    ]
    sinr, scales = [], []
    for k in range(realization.K):
        e = sinr_expansion(realization, layout, reflect, cov, k, m, config.gamma, channels=ch)
        s = sinr_surrogate_constraint(e, anchor, config.noise)
        sinr.append(s)
        scales.append(max(abs(s.f0), abs(e.b_tilde), config.noise))
    return sensing, sinr, scales


def sca_step(realization, layout, reflect, cov: CovarianceSolution, m: int, config: ScenarioConfig):
    """Solve the position QCP once around the current position of antenna m.

    Returns the candidate position and the surrogate optimum, or ``None``
    when the QCP could not be solved.
    """
    layout = np.asarray(layout, dtype=float)
    anchor = layout[:, m].copy()
    ch = compose(realization, layout)
    sensing, sinr, scales = _surrogates_at(realization, layout, reflect, cov, m, anchor, config, ch)
    gain_scale = max(max(s.f0 - s.rhs for s in sensing), 1e-300)  # f0 + offset = gain at anchor
    prog = position_program(
        sensing,
        sinr,
        min_distance_constraints(layout, m, anchor, config.D),
        anchor,
        config.region_bounds(),
        realization.wavelength,
        gain_scale,
        scales,
    )
    rep = solve_qcp(prog)
    if rep.status is not Status.OPTIMAL:
        log.info("position QCP for antenna %d not solved (%s)", m, rep.status.value)
        return None
    return anchor + realization.wavelength * rep.x[:2], gain_scale * float(rep.x[2])


def _sca_from(realization, layout, m, reflect, cov, config, a) -> AntennaStep:
    layout = np.array(layout, dtype=float)
    gain = min_gain_at(realization, layout, reflect, cov.R, a)
    step = AntennaStep(layout=layout, gain=gain, history=[gain])
    lo, hi = config.region_bounds()
    for it in range(config.max_sca):
        step.iterations = it + 1
        out = sca_step(realization, layout, reflect, cov, m, config)
        if out is None:
            if step.accepted == 0:
                step.status = "solver_failure"
            break
        trial = layout.copy()
        trial[:, m] = np.clip(out[0], lo, hi)
        ch = compose(realization, trial)
        new_gain = float(np.min(gain_from_channel(ch.H, reflect, cov.R, a)))
        if (
            new_gain < gain
            or not sinr_feasible(ch, reflect, cov, config.gamma, config.noise)
            or not _spacing_ok(trial, m, config.D)
        ):
            break
        improvement = (new_gain - gain) / max(abs(gain), 1e-300)
        layout, gain = trial, new_gain
        step.accepted += 1
        step.status = "moved"
        step.history.append(gain)
        if improvement <= config.eps_sca:
            break
    step.layout, step.gain = layout, gain
    return step


def screen_positions(realization, layout, m: int, reflect, cov: CovarianceSolution, config: ScenarioConfig, points):
    """True min gain and feasibility of antenna m at each of ``points`` (n x 2).

    Infeasible points (spacing or SINR) get gain ``-inf``.
    """
    layout = np.asarray(layout, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    ang = realization.angles
    lam = realization.wavelength
    kap = 2.0 * np.pi / lam
    ch = compose(realization, layout)
    F = _ris_response(realization)
    Hcol = F.conj().T @ realization.sigma @ np.exp(1j * kap * (_directions(ang.tx_theta, ang.tx_phi) @ points.T))
    a = steering_vector(config.sensing_angles, realization.N, config.d_ris, lam)

    def quad(rows_m, base_row, R):
        # rows with entry m replaced by rows_m; value of row R row^H per point
        rows = np.repeat(base_row[None, :], rows_m.size, axis=0)
        rows[:, m] = rows_m
        return np.einsum("ni,ij,nj->n", rows, R, rows.conj()).real

    gains = np.full(points.shape[0], np.inf)
    for l in range(a.shape[1]):
        c = a[:, l].conj() * reflect
        gains = np.minimum(gains, quad(c @ Hcol, c @ ch.H, cov.R))
    ok = np.ones(points.shape[0], dtype=bool)
    rows = ch.user_rows(reflect)
    for k in range(realization.K):
        gk = np.exp(1j * kap * (_directions(ang.user_theta[k], ang.user_phi[k]) @ points.T))
        xm = (ch.ris_rows[k] * reflect) @ Hcol + realization.sigma_users[k].sum(axis=0) @ gk
        sig = quad(xm, rows[k], cov.Rk[k])
        tot = quad(xm, rows[k], cov.R)
        ok &= sig >= config.gamma * (1 - 1e-6) * (tot - sig + config.noise)
    others = np.delete(layout, m, axis=1)
    if others.size:
        dist = np.linalg.norm(points[:, :, None] - others[None, :, :], axis=1).min(axis=1)
        ok &= dist >= config.D
    return np.where(ok, gains, -np.inf)


def candidate_grid(config: ScenarioConfig, n: int) -> np.ndarray:
    lo, hi = config.region_bounds()
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def optimize_antenna(
    realization: ChannelRealization,
    layout,
    m: int,
    reflect,
    cov: CovarianceSolution,
    config: ScenarioConfig,
) -> AntennaStep:
    """SCA for antenna m with the other antennas, R and the phases fixed.

    SCA runs from the current position and, when ``config.position_grid``
    is positive, also from the best feasible point of a coarse candidate
    grid.  A move is kept only if the true minimum gain does not drop and
    every SINR target still holds.  Each SCA run stops when the relative
    gain improvement falls to ``config.eps_sca`` or after ``config.max_sca``
    solves.
    """
    layout = np.array(layout, dtype=float)
    a = steering_vector(config.sensing_angles, realization.N, config.d_ris, realization.wavelength)
    best = _sca_from(realization, layout, m, reflect, cov, config, a)
    if config.position_grid:
        pts = candidate_grid(config, config.position_grid)
        scores = screen_positions(realization, layout, m, reflect, cov, config, pts)
        i = int(np.argmax(scores))
        if np.isfinite(scores[i]) and scores[i] > best.gain:
            start = layout.copy()
            start[:, m] = pts[i]
            alt = _sca_from(realization, start, m, reflect, cov, config, a)
            if alt.gain > best.gain:
                alt.status = "relocated"
                alt.iterations += best.iterations
                best = alt
    return best


def _spacing_ok(layout, m: int, D: float, rtol: float = 1e-9) -> bool:
    others = np.delete(layout, m, axis=1)
    if others.size == 0:
        return True
    return bool(np.min(np.linalg.norm(others - layout[:, [m]], axis=0)) >= D * (1 - rtol))


def optimize_positions(realization, layout, reflect, cov: CovarianceSolution, config: ScenarioConfig):
    """One sweep m = 1..M of :func:`optimize_antenna`; returns (layout, steps)."""
    layout = np.array(layout, dtype=float)
    steps = []
    for m in range(layout.shape[1]):
        st = optimize_antenna(realization, layout, m, reflect, cov, config)
        layout = st.layout
        steps.append(st)
    return layout, steps
