"""Scenario parameters and their JSON representation.

Values are stored in the units a user writes them in (dBm, dB, degrees,
meters) and exposed in linear SI units through properties.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np


def db2lin(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def dbm2watt(x):
    return 10.0 ** ((np.asarray(x, dtype=float) - 30.0) / 10.0)


class ConfigError(ValueError):
    """Raised for scenario parameters that violate their invariants."""


@dataclass(frozen=True)
class ScenarioConfig:
    """All physical and algorithmic parameters of one scenario.

    Geometry is in meters, powers in dBm, ratios in dB and sensing angles in
    degrees.  ``region_side``, ``min_spacing`` and ``ris_spacing`` default to
    4, 1/2 and 1/2 wavelengths when left as ``None``.
    """

    M: int = 4
    K: int = 2
    N: int = 8
    L_t: int = 2
    L_r: int = 2
    L_user: int | None = None  # BS-user paths per user, defaults to L_t
    L_ris_user: int | None = None  # RIS-user paths per user, defaults to L_r
    wavelength: float = 0.01
    region_side: float | None = None
    min_spacing: float | None = None
    ris_spacing: float | None = None
    p0_dbm: float = 40.0
    gamma_db: float = 10.0
    noise_dbm: float = -80.0
    alpha_bs_ris: float = 2.5
    alpha_ris_user: float = 2.5
    alpha_bs_user: float = 3.5
    kappa_db: float = 10.0
    k0_db: float = -40.0
    d0: float = 1.0
    shadowing_db: float = 15.0
    bs_position: tuple[float, float] = (0.0, 0.0)
    ris_position: tuple[float, float] = (12.0, 16.0)
    user_area: tuple[tuple[float, float], tuple[float, float]] = ((20.0, 0.0), (40.0, -20.0))
    sensing_angles_deg: tuple[float, ...] = (-60.0, -30.0, 0.0, 30.0, 60.0)
    eps_outer: float = 1e-4
    eps_sca: float = 1e-4
    eps_srcr: float = 1e-5
    tau0: float = 0.05
    max_outer: int = 50
    max_srcr: int = 60
    srcr_randomizations: int = 5000  # Gaussian draws choosing the SRCR anchor; 0 = eigenvector
    max_sca: int = 20
    position_grid: int = 64  # candidate screen per axis; 0 = local SCA only
    seed: int = 0

    def __post_init__(self):
        for name in ("user_area", "sensing_angles_deg", "bs_position", "ris_position"):
            value = getattr(self, name)
            if name == "user_area":
                value = tuple(tuple(float(c) for c in corner) for corner in value)
            else:
                value = tuple(float(v) for v in value)
            object.__setattr__(self, name, value)
        self.validate()

    # derived quantities -------------------------------------------------
    @property
    def lam(self) -> float:
        return float(self.wavelength)

    @property
    def side(self) -> float:
        return 4.0 * self.lam if self.region_side is None else float(self.region_side)

    @property
    def D(self) -> float:
        return 0.5 * self.lam if self.min_spacing is None else float(self.min_spacing)

    @property
    def d_ris(self) -> float:
        return 0.5 * self.lam if self.ris_spacing is None else float(self.ris_spacing)

    @property
    def L_k(self) -> int:
        return self.L_t if self.L_user is None else int(self.L_user)

    @property
    def L_rk(self) -> int:
        return self.L_r if self.L_ris_user is None else int(self.L_ris_user)

    @property
    def p0(self) -> float:
        return float(dbm2watt(self.p0_dbm))

    @property
    def gamma(self) -> float:
        return float(db2lin(self.gamma_db))

    @property
    def noise(self) -> float:
        return float(dbm2watt(self.noise_dbm))

    @property
    def kappa(self) -> float:
        return float(db2lin(self.kappa_db))

    @property
    def k0(self) -> float:
        return float(db2lin(self.k0_db))

    @property
    def sensing_angles(self) -> np.ndarray:
        return np.deg2rad(np.asarray(self.sensing_angles_deg, dtype=float))

    @property
    def region_center(self) -> np.ndarray:
        # the transmit region is centred on the BS reference origin
        return np.zeros(2)

    def region_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.region_center
        return c - self.side / 2, c + self.side / 2

    def validate(self) -> None:
        if self.M < 1 or self.N < 1 or self.K < 0:
            raise ConfigError("M and N must be >= 1 and K >= 0")
        if min(self.L_t, self.L_r, self.L_k, self.L_rk) < 1:
            raise ConfigError("path counts must be >= 1")
        if self.lam <= 0:
            raise ConfigError("wavelength must be positive")
        if self.D <= 0:
            raise ConfigError("minimum antenna spacing must be positive")
        if self.side < self.D * (math.ceil(math.sqrt(self.M)) - 1) - 1e-12:
            raise ConfigError(
                f"region side {self.side} cannot host {self.M} antennas at spacing {self.D}"
            )
        if not self.sensing_angles_deg:
            raise ConfigError("at least one sensing angle is required")
        if any(abs(a) > 90.0 for a in self.sensing_angles_deg):
            raise ConfigError("sensing angles must lie in [-90, 90] degrees")
        if self.tau0 <= 0:
            raise ConfigError("tau0 must be positive")
        if self.position_grid < 0 or self.position_grid == 1:
            raise ConfigError("position_grid must be 0 or >= 2")
        if self.srcr_randomizations < 0:
            raise ConfigError("srcr_randomizations must be >= 0")

    def with_updates(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    # serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["bs_position"] = list(self.bs_position)
        d["ris_position"] = list(self.ris_position)
        d["user_area"] = [list(c) for c in self.user_area]
        d["sensing_angles_deg"] = list(self.sensing_angles_deg)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        if "L" in data:
            L = int(data.pop("L"))
            data.setdefault("L_t", L)
            data.setdefault("L_r", L)
        if "pathloss_exponents" in data:
            exps = data.pop("pathloss_exponents")
            data.setdefault("alpha_bs_ris", exps["bs_ris"])
            data.setdefault("alpha_ris_user", exps["ris_user"])
            data.setdefault("alpha_bs_user", exps["bs_user"])
        tol = data.pop("tolerances", {})
        data.update({k: v for k, v in tol.items() if k not in data})
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**data)


def load_config(path: str | Path) -> ScenarioConfig:
    """Read a scenario from a JSON file."""
    with open(path) as fh:
        return ScenarioConfig.from_dict(json.load(fh))


def save_config(config: ScenarioConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


DESK = ScenarioConfig()
FULL_SCALE = ScenarioConfig(M=8, N=16, L_t=4, L_r=4)
