"""Monte-Carlo harness: MA, FPA and EAS schemes, parameter sweeps, CSV output."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .ao import AoState, AoTrajectory, InitializationError, initial_layout, initialize, run
from .channel import bs_ris_channel, sample_realization
from .config import ScenarioConfig
from .metrics import beampattern_sweep

log = logging.getLogger(__name__)

AXES = {"p0": "p0_dbm", "m": "M", "n": "N", "l": None}
SCHEMES = ("ma", "fpa", "eas")
EAS_MAX_M = 6
WORKERS_ENV = "MARISAC_WORKERS"


def apply_axis(config: ScenarioConfig, axis: str | None, value) -> ScenarioConfig:
    if axis is None:
        return config
    if axis not in AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {sorted(AXES)}")
    if axis == "l":
        return config.with_updates(L_t=int(value), L_r=int(value))
    if axis == "p0":
        return config.with_updates(p0_dbm=float(value))
    return config.with_updates(**{AXES[axis]: int(value)})


@dataclass
class ExperimentSpec:
    base: ScenarioConfig
    axis: str | None = None
    values: tuple = ()
    realizations: int = 1
    schemes: tuple = ("ma", "fpa")
    out_dir: str | None = None
    seed: int | None = None

    @property
    def base_seed(self) -> int:
        return self.base.seed if self.seed is None else int(self.seed)

    def configs(self) -> list[tuple[object, ScenarioConfig]]:
        if self.axis is None:
            return [("", self.base)]
        return [(v, apply_axis(self.base, self.axis, v)) for v in self.values]

    def validate(self) -> None:
        if self.realizations < 1:
            raise ValueError("at least one realization is required")
        if self.axis is not None and not self.values:
            raise ValueError("a sweep needs at least one axis value")
        bad = set(self.schemes) - set(SCHEMES)
        if bad or not self.schemes:
            raise ValueError(f"unknown schemes {sorted(bad)}; choose from {SCHEMES}")
        for _, cfg in self.configs():
            cfg.validate()
            if "eas" in self.schemes and cfg.M > EAS_MAX_M:
                raise ValueError(f"EAS enumerates C(2M, M) subsets; refusing M={cfg.M} > {EAS_MAX_M}")


# -- schemes -----------------------------------------------------------------


def baseline_fpa(config: ScenarioConfig, realization) -> AoTrajectory:
    """AO with the UPA layout frozen."""
    return run(config, realization, optimize_positions_block=False)


def eas_candidates(config: ScenarioConfig) -> np.ndarray:
    """2M points of the spacing-D lattice that contains the FPA array.

    The M FPA positions come first; the remaining M are the lattice points
    nearest the region centre (ties broken by angle), all inside the region.
    """
    fpa = initial_layout(config)
    M, D = config.M, config.D
    lo, hi = config.region_bounds()
    origin = fpa[:, 0]
    n = int(math.floor(config.side / D)) + 2
    ij = np.array(list(itertools.product(range(-n, n + 1), repeat=2)), dtype=float).T
    pts = origin[:, None] + D * ij
    inside = np.all((pts >= lo[:, None] - 1e-12) & (pts <= hi[:, None] + 1e-12), axis=0)
    pts = pts[:, inside]
    is_fpa = np.any(np.all(np.isclose(pts[:, :, None], fpa[:, None, :], atol=1e-12 * D), axis=0), axis=1)
    rest = pts[:, ~is_fpa] - config.region_center[:, None]
    order = np.lexsort((np.arctan2(rest[1], rest[0]), np.round(np.hypot(rest[0], rest[1]) / D, 9)))
    extra = pts[:, ~is_fpa][:, order[:M]]
    if extra.shape[1] < M:
        raise ValueError("region too small for a 2M-element candidate array")
    return np.hstack([fpa, extra])


def baseline_eas(config: ScenarioConfig, realization) -> AoTrajectory:
    """Best FPA-style AO over every M-subset of the 2M candidate array."""
    M = config.M
    if M > EAS_MAX_M:
        raise ValueError(f"EAS enumerates C(2M, M) subsets; refusing M={M} > {EAS_MAX_M}")
    cand = eas_candidates(config)
    best = None
    for subset in itertools.combinations(range(2 * M), M):
        try:
            state = initialize(config, realization, layout=cand[:, list(subset)])
        except InitializationError:
            continue
        traj = run(config, realization, optimize_positions_block=False, state=state)
        if traj.records and (best is None or traj.final_gain > best.final_gain):
            best = traj
    if best is None:
        best = AoTrajectory(aborted=True, message="no subset admits a feasible start")
    return best


def run_scheme(scheme: str, config: ScenarioConfig, realization) -> AoTrajectory:
    if scheme == "ma":
        return run(config, realization, optimize_positions_block=True)
    if scheme == "fpa":
        return baseline_fpa(config, realization)
    if scheme == "eas":
        return baseline_eas(config, realization)
    raise ValueError(f"unknown scheme {scheme!r}")


# -- harness -------------------------------------------------------------------


@dataclass
class RealizationResult:
    value: object
    seed: int
    scheme: str
    status: str
    final_gain: float
    iterations: int
    converged: bool
    min_sinr: float
    trajectory: AoTrajectory | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status in ("converged", "iteration_cap")


def _job(args) -> list[RealizationResult]:
    value, cfg, seed, schemes = args
    real = sample_realization(cfg, seed)
    out = []
    for scheme in schemes:
        try:
            traj = run_scheme(scheme, cfg, real)
        except Exception as exc:  # recorded per realization, never fatal
            log.warning("seed %d scheme %s failed: %s", seed, scheme, exc)
            out.append(RealizationResult(value, seed, scheme, "error", math.nan, 0, False, math.nan))
            continue
        if traj.aborted and not traj.records:
            status = "infeasible"
        elif traj.aborted:
            status = "aborted"
        else:
            status = "converged" if traj.converged else "iteration_cap"
        last = traj.records[-1] if traj.records else None
        out.append(
            RealizationResult(
                value,
                seed,
                scheme,
                status,
                traj.final_gain,
                traj.iterations,
                traj.converged,
                float(np.min(last.sinr)) if last is not None and len(last.sinr) else math.nan,
                traj,
            )
        )
    return out


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(n, 1)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list

    def select(self, scheme: str, value=None) -> list[RealizationResult]:
        return [r for r in self.rows if r.scheme == scheme and (value is None or r.value == value)]

    def paired_gains(self, value=None) -> dict[str, np.ndarray]:
        """Final gains per scheme over seeds where every scheme succeeded."""
        rows = [r for r in self.rows if value is None or r.value == value]
        by_seed: dict = {}
        for r in rows:
            by_seed.setdefault((r.value, r.seed), {})[r.scheme] = r
        keep = [k for k, d in sorted(by_seed.items(), key=lambda kv: (str(kv[0][0]), kv[0][1]))
                if len(d) == len(self.spec.schemes) and all(x.ok for x in d.values())]
        return {s: np.array([by_seed[k][s].final_gain for k in keep]) for s in self.spec.schemes}

    def summary(self) -> list[dict]:
        out = []
        for value, _ in self.spec.configs():
            paired = self.paired_gains(value)
            for s in self.spec.schemes:
                g = paired[s]
                n_fail = sum(not r.ok for r in self.select(s, value))
                out.append(
                    {
                        "axis": self.spec.axis or "none",
                        "value": value,
                        "scheme": s,
                        "n_paired": int(g.size),
                        "n_failed": n_fail,
                        "mean_gain": float(g.mean()) if g.size else math.nan,
                        "stderr_gain": float(g.std(ddof=1) / np.sqrt(g.size)) if g.size > 1 else math.nan,
                    }
                )
        return out


def run_experiment(spec: ExperimentSpec, write: bool = True) -> ExperimentResult:
    """Run every (axis value, realization) job and optionally write the tables.

    Realization i uses seed ``base_seed + i`` for every axis value and
    scheme, so all comparisons are paired.
    """
    spec.validate()
    jobs = [
        (value, cfg, spec.base_seed + i, tuple(spec.schemes))
        for value, cfg in spec.configs()
        for i in range(spec.realizations)
    ]
    n = worker_count()
    if n > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            batches = list(pool.map(_job, jobs))
    else:
        batches = [_job(j) for j in jobs]
    order = {v: i for i, (v, _) in enumerate(spec.configs())}
    rows = sorted(
        (r for b in batches for r in b),
        key=lambda r: (order[r.value], r.seed, spec.schemes.index(r.scheme)),
    )
    result = ExperimentResult(spec, rows)
    if write and spec.out_dir:
        write_results(result, spec.out_dir)
    return result


# -- output --------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


SCHEMA = {
    "summary.csv": {
        "axis": "swept parameter (p0, m, n, l) or none",
        "value": "axis value (dBm for p0)",
        "scheme": "ma, fpa or eas",
        "n_paired": "realizations where every scheme succeeded",
        "n_failed": "realizations where this scheme failed or was infeasible",
        "mean_gain": "mean final minimum beampattern gain over paired realizations (W)",
        "stderr_gain": "standard error of mean_gain",
    },
    "realizations.csv": {
        "value": "axis value",
        "seed": "channel realization seed",
        "scheme": "ma, fpa or eas",
        "status": "converged, iteration_cap, aborted, infeasible or error",
        "final_gain": "final minimum beampattern gain (W)",
        "iterations": "outer AO iterations",
        "min_sinr": "smallest final user SINR (linear)",
    },
    "trajectories.csv": {
        "value": "axis value",
        "seed": "channel realization seed",
        "scheme": "ma, fpa or eas",
        "iteration": "outer iteration (0 = initial point)",
        "min_gain": "minimum beampattern gain (W)",
        "channel_gain": "squared Frobenius norm of the BS-RIS channel",
        "user_gain": "mean squared norm of the equivalent user channels",
        "correlation": "mean normalized cross-correlation of user channels",
        "sinr_k": "SINR of user k (linear), one column per user",
    },
    "beampattern.csv": {
        "value": "axis value",
        "scheme": "ma, fpa or eas",
        "theta_deg": "angle at the RIS (degrees)",
        "gain": "beampattern gain (W) of the final solution for the first realization",
    },
}


def write_results(result: ExperimentResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = result.spec
    summ = result.summary()
    _write_csv(out / "summary.csv", list(SCHEMA["summary.csv"]), ([d[k] for k in SCHEMA["summary.csv"]] for d in summ))
    _write_csv(
        out / "realizations.csv",
        list(SCHEMA["realizations.csv"]),
        ([r.value, r.seed, r.scheme, r.status, r.final_gain, r.iterations, r.min_sinr] for r in result.rows),
    )
    K = max((len(r.trajectory.records[0].sinr) for r in result.rows if r.trajectory and r.trajectory.records), default=0)
    traj_rows = []
    for r in result.rows:
        if not (r.trajectory and r.trajectory.records):
            continue
        for rec in r.trajectory.records:
            sinr = list(rec.sinr) + [math.nan] * (K - len(rec.sinr))
            traj_rows.append([r.value, r.seed, r.scheme, rec.iteration, rec.min_gain, rec.channel_gain, rec.user_gain, rec.correlation, *sinr])
    header = list(SCHEMA["trajectories.csv"])[:-1] + [f"sinr_{k + 1}" for k in range(K)]
    _write_csv(out / "trajectories.csv", header, traj_rows)

    bp_rows = []
    for value, cfg in spec.configs():
        first = spec.base_seed
        for r in result.rows:
            if r.value == value and r.seed == first and r.trajectory and r.trajectory.state is not None:
                bp_rows.extend([value, r.scheme, th, g] for th, g in _sweep(cfg, r.seed, r.trajectory.state))
    _write_csv(out / "beampattern.csv", list(SCHEMA["beampattern.csv"]), bp_rows)

    with open(out / "schema.json", "w") as fh:
        json.dump(SCHEMA, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest = {
        "package_version": __version__,
        "config": spec.base.to_dict(),
        "axis": spec.axis,
        "values": list(spec.values),
        "schemes": list(spec.schemes),
        "realizations": spec.realizations,
        "seeds": [spec.base_seed + i for i in range(spec.realizations)],
        "versions": _versions(),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _versions() -> dict:
    import clarabel
    import scipy

    return {"numpy": np.__version__, "scipy": scipy.__version__, "clarabel": getattr(clarabel, "__version__", "unknown")}


def _sweep(cfg: ScenarioConfig, seed: int, state: AoState, n_points: int = 361):
    real = sample_realization(cfg, seed)
    return beampattern_sweep(real, state.layout, state.reflect, state.cov.R, cfg.d_ris, n_points)


def beampattern_tables(config: ScenarioConfig, schemes=("ma", "fpa"), n_points: int = 361) -> dict:
    """Final beampattern of each scheme on the realization with ``config.seed``."""
    real = sample_realization(config, config.seed)
    out = {}
    for s in schemes:
        traj = run_scheme(s, config, real)
        if traj.state is not None:
            out[s] = beampattern_sweep(real, traj.state.layout, traj.state.reflect, traj.state.cov.R, config.d_ris, n_points)
    return out


def channel_landscape(config: ScenarioConfig, n: int = 101) -> np.ndarray:
    """Squared norm of the BS-RIS channel column of one antenna over the region.

    Columns: x, y (meters), gain.
    """
    real = sample_realization(config, config.seed)
    lo, hi = config.region_bounds()
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.vstack([X.ravel(), Y.ravel()])
    H = bs_ris_channel(real, pts)
    return np.column_stack([pts[0], pts[1], np.sum(np.abs(H) ** 2, axis=0)])
