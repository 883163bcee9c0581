"""Alternating optimization over covariance, RIS phases and antenna positions."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .beamforming import CovarianceInfeasible, DegenerateUser, extract_rank_one, solve_covariance
from .channel import ChannelRealization, compose, layout_is_feasible, layout_violations, upa_layout
from .config import ScenarioConfig
from .metrics import CovarianceSolution, all_sinr, channel_power_gain, gain_from_channel, steering_vector, user_cross_correlation
from .position import optimize_positions
from .ris import optimize_phase

log = logging.getLogger(__name__)

MAX_CONSECUTIVE_FAILURES = 3
MONOTONE_SLACK = 1e-7


@dataclass
class AoState:
    layout: np.ndarray
    reflect: np.ndarray
    cov: CovarianceSolution


@dataclass
class IterationRecord:
    iteration: int
    min_gain: float
    sinr: np.ndarray
    layout: np.ndarray
    phases: np.ndarray
    statuses: dict
    channel_gain: float
    user_gain: float
    correlation: float
    wall_time: float


@dataclass
class AoTrajectory:
    records: list = field(default_factory=list)
    converged: bool = False
    aborted: bool = False
    message: str = ""
    state: AoState | None = None

    @property
    def gains(self) -> np.ndarray:
        return np.array([r.min_gain for r in self.records])

    @property
    def final_gain(self) -> float:
        return float(self.records[-1].min_gain) if self.records else float("nan")

    @property
    def iterations(self) -> int:
        """Number of outer iterations performed (the initial record excluded)."""
        return max(len(self.records) - 1, 0)

    def is_monotone(self, slack: float = MONOTONE_SLACK) -> bool:
        g = self.gains
        return bool(np.all(np.diff(g) >= -slack))

    def to_csv(self, path: str | Path) -> None:
        write_trajectory_csv(self, path)


def write_trajectory_csv(traj: AoTrajectory, path: str | Path) -> None:
    K = len(traj.records[0].sinr) if traj.records else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "min_gain"] + [f"sinr_{k + 1}" for k in range(K)])
        for r in traj.records:
            w.writerow([r.iteration, repr(float(r.min_gain))] + [repr(float(s)) for s in r.sinr])


class InitializationError(RuntimeError):
    """The starting point of the alternation is infeasible."""


def initial_layout(config: ScenarioConfig) -> np.ndarray:
    return upa_layout(config.M, config.D, config.region_center)


def initialize(config: ScenarioConfig, realization: ChannelRealization, layout=None) -> AoState:
    """UPA layout, identity phases and one covariance solve.

    Raises
    ------
    InitializationError
        If the layout is infeasible or no covariance meets the SINR targets.
    """
    config.validate()
    layout = initial_layout(config) if layout is None else np.asarray(layout, dtype=float)
    if not layout_is_feasible(layout, config):
        raise InitializationError(f"initial layout infeasible: {layout_violations(layout, config)}")
    reflect = np.ones(realization.N, dtype=complex)
    try:
        cov = _covariance(realization, layout, reflect, config)
    except CovarianceInfeasible as exc:
        raise InitializationError(f"SINR targets unreachable at the initial point ({exc.binding})") from exc
    return AoState(layout, reflect, cov)


def _covariance(realization, layout, reflect, config) -> CovarianceSolution:
    sol = solve_covariance(realization, layout, reflect, config)
    if realization.K == 0:
        return sol
    rows = compose(realization, layout).user_rows(reflect)
    out = extract_rank_one(sol.R, sol.Rk, rows)
    out.objective = sol.objective
    return out


def min_gain(realization, state: AoState, config: ScenarioConfig) -> float:
    a = steering_vector(config.sensing_angles, realization.N, config.d_ris, realization.wavelength)
    H = compose(realization, state.layout).H
    return float(np.min(gain_from_channel(H, state.reflect, state.cov.R, a)))


def _record(it, realization, state, config, statuses, t0) -> IterationRecord:
    ch = compose(realization, state.layout)
    rows = ch.user_rows(state.reflect)
    K = realization.K
    sinr = all_sinr(ch, state.reflect, state.cov, config.noise) if K else np.zeros(0)
    return IterationRecord(
        iteration=it,
        min_gain=min_gain(realization, state, config),
        sinr=sinr,
        layout=state.layout.copy(),
        phases=np.angle(state.reflect),
        statuses=dict(statuses),
        channel_gain=channel_power_gain(ch.H),
        user_gain=float(np.mean(np.sum(np.abs(rows) ** 2, axis=1))) if K else float("nan"),
        correlation=user_cross_correlation(rows) if K >= 2 else float("nan"),
        wall_time=time.perf_counter() - t0,
    )


def _sinr_ok(realization, layout, reflect, cov, config) -> bool:
    if realization.K == 0:
        return True
    s = all_sinr(compose(realization, layout), reflect, cov, config.noise)
    return bool(np.all(s >= config.gamma * (1 - 1e-6)))


def run(
    config: ScenarioConfig,
    realization: ChannelRealization,
    optimize_positions_block: bool = True,
    state: AoState | None = None,
) -> AoTrajectory:
    """Alternate covariance, phase and position updates until the minimum
    gain stops improving by more than ``config.eps_outer`` (relative) or
    ``config.max_outer`` iterations have run.

    Each block's output is kept only if it does not lower the minimum gain
    and keeps the SINR targets; otherwise the previous value is retained.
    Three consecutive iterations with a failed block abort the run with the
    best state so far.
    """
    t0 = time.perf_counter()
    traj = AoTrajectory()
    try:
        state = initialize(config, realization) if state is None else state
    except InitializationError as exc:
        traj.aborted = True
        traj.message = str(exc)
        return traj
    traj.records.append(_record(0, realization, state, config, {"init": "ok"}, t0))
    gain = traj.records[0].min_gain
    failures = 0
    for it in range(1, config.max_outer + 1):
        statuses = {}
        failed = False
        # covariance block
        try:
            cov = _covariance(realization, state.layout, state.reflect, config)
            cand = AoState(state.layout, state.reflect, cov)
            g = min_gain(realization, cand, config)
            if g >= gain and _sinr_ok(realization, state.layout, state.reflect, cov, config):
                state, gain = cand, g
                statuses["covariance"] = "accepted"
            else:
                statuses["covariance"] = "kept"
        except (CovarianceInfeasible, DegenerateUser, RuntimeError) as exc:
            log.info("covariance block failed at iteration %d: %s", it, exc)
            statuses["covariance"] = "failed"
            failed = True
        # phase block
        try:
            res = optimize_phase(realization, state.layout, state.cov, config, state.reflect)
            statuses["phase"] = res.solution.status
            if res.accepted:
                cand = AoState(state.layout, res.solution.reflect, state.cov)
                g = min_gain(realization, cand, config)
                if g >= gain:
                    state, gain = cand, g
            elif res.solution.status == "unsolvable":
                failed = True
        except (RuntimeError, ValueError) as exc:
            log.info("phase block failed at iteration %d: %s", it, exc)
            statuses["phase"] = "failed"
            failed = True
        # position block
        if optimize_positions_block:
            try:
                layout, steps = optimize_positions(realization, state.layout, state.reflect, state.cov, config)
                cand = AoState(layout, state.reflect, state.cov)
                g = min_gain(realization, cand, config)
                moved = sum(s.accepted for s in steps)
                if g >= gain and layout_is_feasible(layout, config):
                    state, gain = cand, g
                    statuses["position"] = f"moved:{moved}"
                else:
                    statuses["position"] = "kept"
            except (RuntimeError, ValueError) as exc:
                log.info("position block failed at iteration %d: %s", it, exc)
                statuses["position"] = "failed"
                failed = True
        prev = traj.records[-1].min_gain
        traj.records.append(_record(it, realization, state, config, statuses, t0))
        failures = failures + 1 if failed else 0
        if failures >= MAX_CONSECUTIVE_FAILURES:
            traj.aborted = True
            traj.message = f"aborted after {failures} consecutive block failures"
            break
        if gain - prev <= config.eps_outer * abs(prev):
            traj.converged = True
            break
    traj.state = state
    if not traj.message:
        traj.message = "converged" if traj.converged else "iteration cap reached"
    return traj


def feasibility_report(config: ScenarioConfig, realization: ChannelRealization, state: AoState) -> dict:
    """Constraint margins of a final solution (all entries <= 0 when feasible)."""
    viol = layout_violations(state.layout, config)
    rep = {
        "power": float(np.real(np.trace(state.cov.R))) / config.p0 - 1.0,
        "region": viol["region"],
        "spacing": viol["spacing"] / config.D,
        "unit_modulus": float(np.max(np.abs(np.abs(state.reflect) - 1.0))),
    }
    if realization.K:
        s = all_sinr(compose(realization, state.layout), state.reflect, state.cov, config.noise)
        rep["sinr"] = float(np.max(1.0 - s / config.gamma))
    return rep
