"""Field-response channel model for a movable-antenna BS, an RIS and users.

Positions are stored as real ``2 x M`` arrays (meters).  RIS reflection
coefficients are passed around as the complex diagonal of the reflection
matrix, ``reflect[n] = exp(1j * phi_n)``.

Row-vector channels (``h^H`` in matrix notation) are returned as plain 1-D
arrays holding the entries of the row, i.e. already conjugated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig


@dataclass(frozen=True)
class PathAngles:
    """Elevation/azimuth angles (radians, in [0, pi]) of every propagation path.

    ``user_theta[k]`` / ``user_phi[k]`` are the BS-side paths of the direct
    BS-user link, ``ris_user_theta[k]`` / ``ris_user_phi[k]`` the RIS-side
    paths of the RIS-user link.
    """

    tx_theta: np.ndarray
    tx_phi: np.ndarray
    rx_theta: np.ndarray
    rx_phi: np.ndarray
    user_theta: tuple[np.ndarray, ...]
    user_phi: tuple[np.ndarray, ...]
    ris_user_theta: tuple[np.ndarray, ...]
    ris_user_phi: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class ChannelRealization:
    angles: PathAngles
    sigma: np.ndarray  # L_r x L_t path response of the BS-RIS link
    sigma_users: tuple[np.ndarray, ...]  # L_k x L_k per BS-user link
    h2: np.ndarray  # K x N, row k holds h_{2,k} (RIS -> user, column form)
    ris_coords: np.ndarray  # 2 x N element coordinates in the RIS frame
    user_positions: np.ndarray  # K x 2
    wavelength: float
    seed: int | None = None

    @property
    def K(self) -> int:
        return self.h2.shape[0]

    @property
    def N(self) -> int:
        return self.ris_coords.shape[1]


def _directions(theta, phi) -> np.ndarray:
    """Unit-free direction coefficients (sin th cos ph, cos th), shape (L, 2)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    if theta.shape != phi.shape:
        raise ValueError("elevation and azimuth lists must have the same length")
    return np.stack([np.sin(theta) * np.cos(phi), np.cos(theta)], axis=-1)


def path_differences(positions, theta, phi) -> np.ndarray:
    """Propagation-distance differences rho_j(t) for each path and position.

    ``positions`` is ``(2,)`` or ``(2, M)``; the result is ``(L,)`` or ``(L, M)``.
    """
    u = _directions(theta, phi)
    return u @ np.asarray(positions, dtype=float)


def field_response_vector(t, theta, phi, wavelength: float) -> np.ndarray:
    """Field response vector of an antenna at ``t = (x, y)``."""
    t = np.asarray(t, dtype=float)
    if t.shape != (2,):
        raise ValueError("position must be a 2-vector")
    return np.exp(2j * np.pi / wavelength * path_differences(t, theta, phi))


def field_response_matrix(positions, theta, phi, wavelength: float) -> np.ndarray:
    """Stack field response vectors of every antenna column-wise (L x M)."""
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2 or positions.shape[0] != 2:
        raise ValueError(f"positions must have shape (2, M), got {positions.shape}")
    return np.exp(2j * np.pi / wavelength * path_differences(positions, theta, phi))


def ris_field_response_matrix(ris_coords, theta, phi, wavelength: float) -> np.ndarray:
    """Receive-side field response matrix of the RIS (L_r x N)."""
    ris_coords = np.asarray(ris_coords, dtype=float)
    if ris_coords.shape[1] < 1:
        raise ValueError("RIS needs at least one element")
    return field_response_matrix(ris_coords, theta, phi, wavelength)


def ris_element_coordinates(N: int, spacing: float) -> np.ndarray:
    """ULA of ``N`` elements along the RIS x-axis starting at its origin."""
    return np.vstack([np.arange(N) * spacing, np.zeros(N)])


def bs_ris_channel(realization: ChannelRealization, layout) -> np.ndarray:
    """H(t) = F(r)^H Sigma G(t), shape N x M."""
    ang = realization.angles
    lam = realization.wavelength
    G = field_response_matrix(layout, ang.tx_theta, ang.tx_phi, lam)
    F = ris_field_response_matrix(realization.ris_coords, ang.rx_theta, ang.rx_phi, lam)
    sigma = realization.sigma
    if sigma.shape != (F.shape[0], G.shape[0]):
        raise ValueError(
            f"path response {sigma.shape} does not match ({F.shape[0]}, {G.shape[0]})"
        )
    return F.conj().T @ sigma @ G


def bs_user_channel(realization: ChannelRealization, layout, k: int) -> np.ndarray:
    """Entries of the row h_{1,k}^H = 1^H Sigma_k G_k(t) (length M)."""
    if not 0 <= k < realization.K:
        raise IndexError(f"user index {k} out of range for K={realization.K}")
    ang = realization.angles
    Gk = field_response_matrix(layout, ang.user_theta[k], ang.user_phi[k], realization.wavelength)
    sigma_k = realization.sigma_users[k]
    if sigma_k.shape[1] != Gk.shape[0]:
        raise ValueError("user path response does not match the path count")
    return sigma_k.sum(axis=0) @ Gk


def ris_user_row(realization: ChannelRealization, k: int) -> np.ndarray:
    """Entries of the row h_{2,k}^H (length N)."""
    return realization.h2[k].conj()


def _reflect_diag(reflect) -> np.ndarray:
    reflect = np.asarray(reflect)
    if reflect.ndim == 2:
        if np.count_nonzero(reflect - np.diag(np.diag(reflect))):
            raise ValueError("reflection matrix must be diagonal")
        reflect = np.diag(reflect)
    return reflect


def equivalent_user_channel(realization: ChannelRealization, layout, reflect, k: int) -> np.ndarray:
    """Entries of h_k^H = h_{2,k}^H Phi H(t) + h_{1,k}^H (length M)."""
    reflect = _reflect_diag(reflect)
    H = bs_ris_channel(realization, layout)
    return (ris_user_row(realization, k) * reflect) @ H + bs_user_channel(realization, layout, k)


@dataclass(frozen=True)
class ComposedChannels:
    """Channels evaluated at one antenna layout.

    ``direct[k]`` and ``ris_rows[k]`` are the entries of h_{1,k}^H and
    h_{2,k}^H.
    """

    H: np.ndarray
    direct: np.ndarray  # K x M
    ris_rows: np.ndarray  # K x N

    def user_rows(self, reflect) -> np.ndarray:
        """Equivalent channel rows h_k^H for all users (K x M)."""
        reflect = _reflect_diag(reflect)
        return (self.ris_rows * reflect) @ self.H + self.direct


def compose(realization: ChannelRealization, layout) -> ComposedChannels:
    layout = np.asarray(layout, dtype=float)
    H = bs_ris_channel(realization, layout)
    K = realization.K
    direct = np.array([bs_user_channel(realization, layout, k) for k in range(K)]).reshape(
        K, layout.shape[1]
    )
    return ComposedChannels(H=H, direct=direct, ris_rows=realization.h2.conj())


# -- random realizations ------------------------------------------------------


def pathloss(k0: float, d: float, d0: float, alpha: float) -> float:
    return k0 * (d / d0) ** (-alpha)


def rician_prm(rng: np.random.Generator, L: int, loss: float, kappa: float) -> np.ndarray:
    """Diagonal path-response matrix with one dominant (LoS) path.

    The first diagonal entry has variance ``loss * kappa / (kappa + 1)``; the
    remaining ``L - 1`` share ``loss / (kappa + 1)`` equally.
    """
    var = np.empty(L)
    var[0] = loss * kappa / (kappa + 1.0)
    if L > 1:
        var[1:] = loss / ((kappa + 1.0) * (L - 1))
    return np.diag(crandn(rng, L) * np.sqrt(var))


def rayleigh_prm(rng: np.random.Generator, L: int, loss: float, shadowing_db: float) -> np.ndarray:
    """Diagonal path-response matrix of a Rayleigh link with log-normal shadowing."""
    shadow = 10.0 ** (rng.normal(0.0, shadowing_db) / 10.0)
    return np.diag(crandn(rng, L) * np.sqrt(loss * shadow / L))


def crandn(rng: np.random.Generator, *shape) -> np.ndarray:
    """Unit-variance circularly-symmetric complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def sample_realization(config: ScenarioConfig, seed: int | None = None) -> ChannelRealization:
    """Draw one channel realization; deterministic for a fixed ``seed``."""
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    K, N = config.K, config.N
    lam = config.lam

    def angles(n):
        return rng.uniform(0.0, np.pi, n), rng.uniform(0.0, np.pi, n)

    tx_theta, tx_phi = angles(config.L_t)
    rx_theta, rx_phi = angles(config.L_r)
    user_paths = [angles(config.L_k) for _ in range(K)]
    ris_user_paths = [angles(config.L_rk) for _ in range(K)]

    (x0, y0), (x1, y1) = config.user_area
    users = np.column_stack(
        [rng.uniform(min(x0, x1), max(x0, x1), K), rng.uniform(min(y0, y1), max(y0, y1), K)]
    )

    bs = np.asarray(config.bs_position)
    ris = np.asarray(config.ris_position)
    kappa = config.kappa

    loss = pathloss(config.k0, float(np.linalg.norm(ris - bs)), config.d0, config.alpha_bs_ris)
    L = min(config.L_r, config.L_t)
    sigma = np.zeros((config.L_r, config.L_t), dtype=complex)
    sigma[:L, :L] = rician_prm(rng, L, loss, kappa)

    ris_coords = ris_element_coordinates(N, config.d_ris)
    sigma_users = []
    h2 = np.zeros((K, N), dtype=complex)
    for k in range(K):
        d_direct = float(np.linalg.norm(users[k] - bs))
        sigma_users.append(
            rayleigh_prm(
                rng,
                config.L_k,
                pathloss(config.k0, d_direct, config.d0, config.alpha_bs_user),
                config.shadowing_db,
            )
        )
        d_ris = float(np.linalg.norm(users[k] - ris))
        sigma_ru = rician_prm(
            rng, config.L_rk, pathloss(config.k0, d_ris, config.d0, config.alpha_ris_user), kappa
        )
        F_k = field_response_matrix(ris_coords, *ris_user_paths[k], lam)
        h2[k] = (sigma_ru.sum(axis=0) @ F_k).conj()

    return ChannelRealization(
        angles=PathAngles(
            tx_theta=tx_theta,
            tx_phi=tx_phi,
            rx_theta=rx_theta,
            rx_phi=rx_phi,
            user_theta=tuple(p[0] for p in user_paths),
            user_phi=tuple(p[1] for p in user_paths),
            ris_user_theta=tuple(p[0] for p in ris_user_paths),
            ris_user_phi=tuple(p[1] for p in ris_user_paths),
        ),
        sigma=sigma,
        sigma_users=tuple(sigma_users),
        h2=h2,
        ris_coords=ris_coords,
        user_positions=users,
        wavelength=lam,
        seed=seed,
    )


# -- antenna layouts ----------------------------------------------------------


def upa_layout(n: int, spacing: float, center=(0.0, 0.0)) -> np.ndarray:
    """``n`` antennas on a square-ish grid at ``spacing``, centred on ``center``.

    The grid has ``ceil(sqrt(n))`` columns and is filled row by row.
    """
    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    idx = np.arange(n)
    x = (idx % cols) * spacing
    y = (idx // cols) * spacing
    x = x - (cols - 1) * spacing / 2
    y = y - (rows - 1) * spacing / 2
    return np.vstack([x, y]) + np.asarray(center, dtype=float)[:, None]


def layout_violations(layout, config: ScenarioConfig) -> dict:
    """Worst region excursion and spacing shortfall of a layout (meters)."""
    layout = np.asarray(layout, dtype=float)
    lo, hi = config.region_bounds()
    outside = max(0.0, float(np.max(lo[:, None] - layout)), float(np.max(layout - hi[:, None])))
    M = layout.shape[1]
    if M > 1:
        diff = layout[:, :, None] - layout[:, None, :]
        dist = np.sqrt((diff**2).sum(axis=0))
        dist = dist[~np.eye(M, dtype=bool)]
        spacing = max(0.0, config.D - float(dist.min()))
    else:
        spacing = 0.0
    return {"region": outside, "spacing": spacing}


def layout_is_feasible(layout, config: ScenarioConfig, rtol: float = 1e-9) -> bool:
    v = layout_violations(layout, config)
    return v["region"] <= rtol * config.side and v["spacing"] <= rtol * config.D
