"""Communication and sensing metrics: SINR, beampattern gain, channel statistics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import ChannelRealization, _reflect_diag, bs_ris_channel, compose

HERMITIAN_RTOL = 1e-9


class DegenerateChannelError(ValueError):
    """A channel with zero norm makes a normalized quantity undefined."""


@dataclass
class CovarianceSolution:
    """Transmit covariance ``R`` and per-user components ``Rk`` (K x M x M)."""

    R: np.ndarray
    Rk: np.ndarray
    objective: float = float("nan")
    status: str = "unknown"

    @property
    def radar(self) -> np.ndarray:
        return self.R - self.Rk.sum(axis=0)


@dataclass
class PhaseSolution:
    """RIS phases (radians).  ``reflect`` is the diagonal of the reflection matrix."""

    phases: np.ndarray
    status: str = "unknown"
    iterations: int = 0

    @classmethod
    def from_reflect(cls, reflect, **kw) -> "PhaseSolution":
        return cls(phases=np.angle(_reflect_diag(reflect)), **kw)

    @property
    def reflect(self) -> np.ndarray:
        return np.exp(1j * self.phases)

    @property
    def v(self) -> np.ndarray:
        # vec(Phi^*): conjugated reflection coefficients
        return np.exp(-1j * self.phases)

    @property
    def v_bar(self) -> np.ndarray:
        return np.append(self.v, 1.0)


def as_hermitian(R, rtol: float = HERMITIAN_RTOL) -> np.ndarray:
    """Symmetrize ``R``; reject it when it is too far from Hermitian."""
    R = np.asarray(R, dtype=complex)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError("expected a square matrix")
    scale = np.linalg.norm(R)
    if scale > 0 and np.linalg.norm(R - R.conj().T) > rtol * scale:
        raise ValueError("matrix is not Hermitian")
    return 0.5 * (R + R.conj().T)


def steering_vector(theta, N: int, d_ris: float, wavelength: float) -> np.ndarray:
    """RIS ULA steering vector; ``theta`` may be a scalar or an array (-> N x T)."""
    n = np.arange(N)
    theta = np.asarray(theta, dtype=float)
    return np.exp(2j * np.pi * d_ris / wavelength * np.multiply.outer(n, np.sin(theta)))


def gain_from_channel(H, reflect, R, a) -> np.ndarray | float:
    """Beampattern gain a^H Phi H R H^H Phi^H a for one or several steering vectors."""
    b = (a.conj().T * _reflect_diag(reflect)) @ H  # rows: a^H Phi H
    g = np.einsum("...i,ij,...j->...", b, R, b.conj()).real
    return g


def beampattern_gain(realization: ChannelRealization, layout, reflect, R, theta, d_ris: float) -> float:
    R = as_hermitian(R)
    H = bs_ris_channel(realization, layout)
    a = steering_vector(theta, realization.N, d_ris, realization.wavelength)
    return float(gain_from_channel(H, reflect, R, a))


def min_beampattern_gain(realization, layout, reflect, R, thetas, d_ris: float) -> tuple[float, int]:
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    if thetas.size == 0:
        raise ValueError("empty sensing angle set")
    R = as_hermitian(R)
    H = bs_ris_channel(realization, layout)
    a = steering_vector(thetas, realization.N, d_ris, realization.wavelength)
    gains = gain_from_channel(H, reflect, R, a)
    idx = int(np.argmin(gains))
    return float(gains[idx]), idx


def sinr_from_row(h_row, R, Rk, noise: float) -> float:
    """SINR given the entries of the equivalent channel row h_k^H."""
    h = np.asarray(h_row)
    signal = float(np.real(h @ Rk @ h.conj()))
    interference = float(np.real(h @ (R - Rk) @ h.conj()))
    denom = interference + noise
    if denom < -1e-9 * max(abs(signal), noise):
        raise ValueError("negative interference power: covariance invariants violated")
    return signal / denom


def sinr(realization: ChannelRealization, layout, reflect, solution: CovarianceSolution, k: int, noise: float) -> float:
    rows = compose(realization, layout).user_rows(reflect)
    return sinr_from_row(rows[k], as_hermitian(solution.R), as_hermitian(solution.Rk[k]), noise)


def all_sinr(channels, reflect, solution: CovarianceSolution, noise: float) -> np.ndarray:
    rows = channels.user_rows(reflect)
    return np.array([sinr_from_row(rows[k], solution.R, solution.Rk[k], noise) for k in range(rows.shape[0])])


def channel_power_gain(H) -> float:
    return float(np.linalg.norm(H) ** 2)


def user_cross_correlation(rows) -> float:
    """Mean normalized cross-correlation over ordered user pairs."""
    rows = np.atleast_2d(np.asarray(rows))
    K = rows.shape[0]
    if K < 2:
        raise ValueError("cross-correlation needs at least two users")
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0):
        raise DegenerateChannelError("zero-norm user channel")
    gram = np.abs(rows.conj() @ rows.T) / np.outer(norms, norms)
    return float((gram.sum() - np.trace(gram)) / (K * (K - 1)))


def beampattern_sweep(realization, layout, reflect, R, d_ris: float, n_points: int = 361) -> np.ndarray:
    """Gain on a uniform grid over [-90, 90] degrees; columns (theta_deg, gain)."""
    if n_points < 1:
        raise ValueError("grid must be nonempty")
    deg = np.linspace(-90.0, 90.0, n_points)
    R = as_hermitian(R)
    H = bs_ris_channel(realization, layout)
    a = steering_vector(np.deg2rad(deg), realization.N, d_ris, realization.wavelength)
    gains = gain_from_channel(H, reflect, R, a)
    return np.column_stack([deg, gains])


def write_sweep_csv(table, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta_deg", "gain"])
        for theta, g in table:
            w.writerow([f"{theta:.6f}", repr(float(g))])
