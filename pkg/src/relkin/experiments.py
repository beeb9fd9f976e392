"""Monte Carlo harness: RMSE of the full pipeline against the root-CRB.

Three experiment kinds mirror the standard evaluation of the estimator:

  * ``k_sweep``     - RMSE of the range coefficients, the relative
    position/velocity configurations and the velocity rotation as the
    message count K grows, with root-CRB overlays.
  * ``sigma_sweep`` - the same quantities against the delay noise level,
    swept in dB-meters (sigma_m = 10**(value/10)).
  * ``time_grid``   - RMSE of the relative positions over the measurement
    interval, comparing the dynamic-ranging propagation Xrel + t H Yrel
    against per-instant classical MDS snapshots from the same exchanges.

Trials are seeded through derived streams keyed by (sweep point, trial,
pair), so reports are reproducible bit-for-bit regardless of execution
order.  Matrix-valued quantities are compared after centering both truth
and estimate and removing the optimal orthogonal alignment, since only
relative geometry is identifiable.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__ as _version
from .bounds import RangeNoiseCovariances, crb_trace, fim_position, fim_velocity
from .embedding import (
    classical_mds,
    procrustes_align,
    solve_relative,
)
from .exceptions import (
    ConfigError,
    DegenerateGeometryError,
    EmbeddingClampWarning,
    EmbeddingFailureError,
    IllPosedRotationError,
    RankDeficiencyError,
)
from .kinematics import centering_matrix, load_trajectory, range_matrices
from .ranging import build_design, crb_theta, wls_solve
from .twr import (
    ExchangeConfig,
    NoiseModel,
    SPEED_OF_LIGHT,
    effective_noise_covariance,
    generate_timestamps,
    simulate_exchanges,
)

__all__ = [
    "ExperimentConfig",
    "RmseReport",
    "ReportRow",
    "rmse_vector",
    "rmse_matrix_aligned",
    "run_experiment",
    "default_suite",
    "run_default_suite",
    "check_report",
    "emit_outputs",
]

KINDS = ("k_sweep", "sigma_sweep", "time_grid")
_TRIAL_ERRORS = (
    DegenerateGeometryError,
    EmbeddingFailureError,
    IllPosedRotationError,
    RankDeficiencyError,
)


@dataclass
class ExperimentConfig:
    """One Monte Carlo experiment.

    The sweep list is interpreted per kind: message counts for ``k_sweep``,
    dB-meter noise levels for ``sigma_sweep``, and report times (snapped to
    the nearest transmit marker) for ``time_grid``.
    """

    kind: str
    sweep: list
    fixture: str = "cluster5"
    K: int = 100
    sigma_m: float = 0.1
    interval: tuple[float, float] = (-3.0, 3.0)
    L: int = 4
    trials: int = 1000
    seed: int = 0
    c: float = SPEED_OF_LIGHT
    delay_model: str = "exact"
    orthogonalize: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        self.sweep = list(self.sweep)
        if not self.sweep:
            raise ConfigError("sweep must be a nonempty list")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.L < 1:
            raise ConfigError("L must be >= 1")
        self.interval = (float(self.interval[0]), float(self.interval[1]))

    @classmethod
    def from_json(cls, path, **overrides) -> "ExperimentConfig":
        """Load a config file of the documented JSON schema.

        The sweep is given as a one-key object selecting the kind:
        ``{"sweep": {"K": [...]}}, {"sweep": {"sigma_db_m": [...]}}`` or
        ``{"sweep": {"time_grid": [...]}}``.
        """
        data = json.loads(Path(path).read_text())
        try:
            sweep_obj = data.pop("sweep")
        except KeyError:
            raise ConfigError(f"{path}: missing required key 'sweep'")
        if not isinstance(sweep_obj, dict) or len(sweep_obj) != 1:
            raise ConfigError(f"{path}: sweep must hold exactly one of K/sigma_db_m/time_grid")
        key, values = next(iter(sweep_obj.items()))
        kind = {"K": "k_sweep", "sigma_db_m": "sigma_sweep", "time_grid": "time_grid"}.get(key)
        if kind is None:
            raise ConfigError(f"{path}: unknown sweep key {key!r}")
        if "interval" in data:
            data["interval"] = tuple(data["interval"])
        known = set(cls.__dataclass_fields__) - {"kind", "sweep"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        data.update(overrides)
        return cls(kind=kind, sweep=list(values), **data)

    def to_dict(self) -> dict:
        sweep_key = {"k_sweep": "K", "sigma_sweep": "sigma_db_m", "time_grid": "time_grid"}[self.kind]
        return {
            "fixture": self.fixture,
            "sweep": {sweep_key: list(self.sweep)},
            "K": self.K,
            "sigma_m": self.sigma_m,
            "interval": list(self.interval),
            "L": self.L,
            "trials": self.trials,
            "seed": self.seed,
            "c": self.c,
            "delay_model": self.delay_model,
            "orthogonalize": self.orthogonalize,
        }


@dataclass
class ReportRow:
    sweep_value: float
    quantity: str
    rmse: float
    rcrb: Optional[float]
    n_fail: int


@dataclass
class RmseReport:
    kind: str
    rows: list[ReportRow]
    config: ExperimentConfig
    wall_seconds: float = 0.0

    def value(self, sweep_value, quantity) -> ReportRow:
        for row in self.rows:
            if row.quantity == quantity and np.isclose(row.sweep_value, sweep_value):
                return row
        raise KeyError(f"no row for ({sweep_value}, {quantity})")

    def quantity_rows(self, quantity) -> list[ReportRow]:
        return [r for r in self.rows if r.quantity == quantity]


def rmse_vector(estimates, truth) -> float:
    """sqrt(mean over trials of the squared error norm) for vector quantities."""
    estimates = np.atleast_2d(np.asarray(estimates, float))
    err = estimates - np.asarray(truth, float)[None, :]
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))


def rmse_matrix_aligned(estimates, truth) -> float:
    """Matrix RMSE after centering and optimal orthogonal alignment per trial.

    Truth and estimates are both column-centered (the spectral estimates are
    centered by construction; truth must match), then each trial estimate is
    rotated onto the truth before the residual enters the mean.
    """
    truth = np.asarray(truth, float)
    pc = centering_matrix(truth.shape[1])
    truth_c = truth @ pc
    sq = []
    for est in estimates:
        _, _, resid = procrustes_align(truth_c, np.asarray(est, float) @ pc)
        sq.append(resid**2)
    return float(np.sqrt(np.mean(sq)))


def _aligned_sq_error(truth_c: np.ndarray, est: np.ndarray, pc: np.ndarray) -> float:
    _, _, resid = procrustes_align(truth_c, est @ pc)
    return resid**2


def _estimate_once(traj, exch_cfg, noise, L, seed, stream, orthogonalize):
    """One pipeline pass: simulate, fit coefficients, solve relative kinematics."""
    exchanges = simulate_exchanges(traj, exch_cfg, noise, seed, stream=stream)
    design = build_design(exchanges, L, noise=noise)
    coeffs = wls_solve(design)
    sol = solve_relative(coeffs.to_range_matrices(), traj.P, orthogonalize=orthogonalize)
    return exchanges, coeffs, sol


def _point_rcrbs(traj, exch_cfg, noise, L, pc):
    """Root-CRBs at one sweep point, from the clean marker grid."""
    clean = simulate_exchanges(traj, exch_cfg, NoiseModel(0.0), seed=0)
    cov = effective_noise_covariance(noise, traj.N, exch_cfg.K, exch_cfg.c)
    design = build_design(clean, L, pair_variances=cov.pair_variances)
    theta_crb = crb_theta(design)
    covs = RangeNoiseCovariances.from_theta_crb(theta_crb)
    xc, yc = traj.X @ pc, traj.Y @ pc
    rm_true = range_matrices(traj)
    fx = fim_position(xc, covs.Sigma_r)
    fy = fim_velocity(yc, rm_true, covs)
    return {
        "r": theta_crb.rcrb(0),
        "rdot": theta_crb.rcrb(1),
        "rddot": theta_crb.rcrb(2),
        "Xrel": float(np.sqrt(crb_trace(fx))),
        "Yrel": float(np.sqrt(crb_trace(fy))),
        "Hy": None,
    }


def _run_sweep_point(traj, cfg, s_idx, value):
    if cfg.kind == "k_sweep":
        K, sigma_m = int(value), cfg.sigma_m
    else:
        K, sigma_m = cfg.K, 10.0 ** (float(value) / 10.0)
    exch_cfg = ExchangeConfig(K=K, interval=cfg.interval, c=cfg.c,
                              delay_model=cfg.delay_model, model_order=cfg.L)
    noise = NoiseModel.from_pair_sigma(sigma_m, unit="m")
    pc = centering_matrix(traj.N)
    rm_true = range_matrices(traj)
    r_true, rdot_true, rddot_true = rm_true.pair_vectors()
    xc_true, yc_true = traj.X @ pc, traj.Y @ pc
    if sigma_m > 0:
        rcrbs = _point_rcrbs(traj, exch_cfg, noise, cfg.L, pc)
    else:
        rcrbs = dict.fromkeys(("r", "rdot", "rddot", "Xrel", "Yrel", "Hy"), None)

    # deterministic noiseless run fixes the reference frame for the rotation
    _, _, ref_sol = _estimate_once(traj, exch_cfg, NoiseModel(0.0), cfg.L, cfg.seed,
                                   (s_idx, 0), cfg.orthogonalize)
    hy_ref = ref_sol.Hy

    sq = {q: [] for q in ("r", "rdot", "rddot", "Xrel", "Yrel", "Hy")}
    n_fail = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmbeddingClampWarning)
        for trial in range(cfg.trials):
            try:
                _, coeffs, sol = _estimate_once(traj, exch_cfg, noise, cfg.L, cfg.seed,
                                                (s_idx, trial), cfg.orthogonalize)
            except _TRIAL_ERRORS:
                n_fail += 1
                continue
            phys = coeffs.physical
            sq["r"].append(np.sum((phys[:, 0] - r_true) ** 2))
            sq["rdot"].append(np.sum((phys[:, 1] - rdot_true) ** 2))
            sq["rddot"].append(np.sum((phys[:, 2] - rddot_true) ** 2))
            sq["Xrel"].append(_aligned_sq_error(xc_true, sol.Xrel, pc))
            sq["Yrel"].append(_aligned_sq_error(yc_true, sol.Yrel, pc))
            sq["Hy"].append(np.sum((sol.Hy - hy_ref) ** 2))

    rows = []
    for q in ("r", "rdot", "rddot", "Xrel", "Yrel", "Hy"):
        rmse = float(np.sqrt(np.mean(sq[q]))) if sq[q] else float("nan")
        rows.append(ReportRow(float(value), q, rmse, rcrbs[q], n_fail))
    return rows


def _run_time_grid(traj, cfg):
    exch_cfg = ExchangeConfig(K=cfg.K, interval=cfg.interval, c=cfg.c,
                              delay_model=cfg.delay_model, model_order=cfg.L)
    noise = NoiseModel.from_pair_sigma(cfg.sigma_m, unit="m")
    pc = centering_matrix(traj.N)
    markers = generate_timestamps(exch_cfg, 1)[0]
    idxs = [int(np.argmin(np.abs(markers - float(t)))) for t in cfg.sweep]
    times = markers[idxs]
    truth_c = [traj.position_at(t) @ pc for t in times]

    dr_sq = [[] for _ in idxs]
    cmds_sq = [[] for _ in idxs]
    dr_fail = 0
    cmds_fail = [0] * len(idxs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmbeddingClampWarning)
        for trial in range(cfg.trials):
            try:
                exchanges, _, sol = _estimate_once(traj, exch_cfg, noise, cfg.L, cfg.seed,
                                                   (0, trial), cfg.orthogonalize)
            except _TRIAL_ERRORS:
                dr_fail += 1
                continue
            tau = exchanges.tau()
            for m, (idx, t) in enumerate(zip(idxs, times)):
                dr_sq[m].append(_aligned_sq_error(truth_c[m], sol.position_at(t), pc))
                d_snap = np.zeros((traj.N, traj.N))
                d_snap[np.triu_indices(traj.N, k=1)] = cfg.c * tau[:, idx]
                d_snap = d_snap + d_snap.T
                try:
                    xk = classical_mds(d_snap, traj.P)
                except EmbeddingFailureError:
                    cmds_fail[m] += 1
                    continue
                cmds_sq[m].append(_aligned_sq_error(truth_c[m], xk, pc))

    rows = []
    for m, t in enumerate(times):
        rmse_dr = float(np.sqrt(np.mean(dr_sq[m]))) if dr_sq[m] else float("nan")
        rmse_cm = float(np.sqrt(np.mean(cmds_sq[m]))) if cmds_sq[m] else float("nan")
        rows.append(ReportRow(float(t), "Xk_dynamic", rmse_dr, None, dr_fail))
        rows.append(ReportRow(float(t), "Xk_cmds", rmse_cm, None, dr_fail + cmds_fail[m]))
    return rows


def run_experiment(cfg: ExperimentConfig) -> RmseReport:
    """Run one experiment; deterministic given (config, seed)."""
    start = time.perf_counter()
    traj = load_trajectory(cfg.fixture)
    if cfg.kind == "time_grid":
        rows = _run_time_grid(traj, cfg)
    else:
        rows = []
        for s_idx, value in enumerate(cfg.sweep):
            rows.extend(_run_sweep_point(traj, cfg, s_idx, value))
    return RmseReport(kind=cfg.kind, rows=rows, config=cfg,
                      wall_seconds=time.perf_counter() - start)


def default_suite(trials: int = 1000, seed: int = 0, fixture: str = "cluster5",
                  **overrides) -> list[ExperimentConfig]:
    """The three standard experiments: K sweep, noise sweep, time grid."""
    base = dict(fixture=fixture, trials=trials, seed=seed, **overrides)
    k_cfg = ExperimentConfig(kind="k_sweep", sweep=list(range(10, 101, 10)), **base)
    s_cfg = ExperimentConfig(kind="sigma_sweep", sweep=list(range(-10, 1, 2)), **base)
    t_cfg = ExperimentConfig(
        kind="time_grid",
        sweep=list(np.linspace(base.get("interval", (-3.0, 3.0))[0],
                               base.get("interval", (-3.0, 3.0))[1],
                               base.get("K", 100))),
        **base,
    )
    return [k_cfg, s_cfg, t_cfg]


def run_default_suite(trials: int = 1000, seed: int = 0, **overrides) -> list[RmseReport]:
    return [run_experiment(cfg) for cfg in default_suite(trials=trials, seed=seed, **overrides)]


def check_report(report: RmseReport, ratio_band: tuple[float, float] = (0.97, 1.15),
                 cmds_spread: float = 0.2) -> list[str]:
    """Invariant checks for a finished report; returns violation messages.

    k_sweep / sigma_sweep: at the most informative sweep point (largest K,
    respectively smallest noise) the RMSE/RCRB ratio of each range
    coefficient must sit in `ratio_band`.  time_grid: dynamic ranging beats
    the per-instant classical MDS at the reference instant, degrades toward
    the interval edges, and classical MDS stays within `cmds_spread` of its
    median across the grid.
    """
    failures = []
    if report.kind in ("k_sweep", "sigma_sweep"):
        best = max(r.sweep_value for r in report.rows) if report.kind == "k_sweep" \
            else min(r.sweep_value for r in report.rows)
        for q in ("r", "rdot", "rddot"):
            row = report.value(best, q)
            ratio = row.rmse / row.rcrb
            if not ratio_band[0] <= ratio <= ratio_band[1]:
                failures.append(
                    f"{report.kind}: RMSE/RCRB for {q} at sweep={best:g} is "
                    f"{ratio:.4f}, outside [{ratio_band[0]}, {ratio_band[1]}]"
                )
    else:
        dr = report.quantity_rows("Xk_dynamic")
        cm = report.quantity_rows("Xk_cmds")
        t0_idx = int(np.argmin([abs(r.sweep_value) for r in dr]))
        edge_idx = int(np.argmax([abs(r.sweep_value) for r in dr]))
        if not dr[t0_idx].rmse < cm[t0_idx].rmse:
            failures.append(
                f"time_grid: dynamic RMSE {dr[t0_idx].rmse:.4g} not below classical "
                f"MDS {cm[t0_idx].rmse:.4g} at t={dr[t0_idx].sweep_value:g}"
            )
        if not dr[edge_idx].rmse > dr[t0_idx].rmse:
            failures.append(
                f"time_grid: dynamic RMSE at |t|={abs(dr[edge_idx].sweep_value):g} does "
                f"not exceed its value at t={dr[t0_idx].sweep_value:g}"
            )
        cm_vals = np.array([r.rmse for r in cm])
        med = float(np.median(cm_vals))
        spread = float(np.max(np.abs(cm_vals - med))) / med
        if spread > cmds_spread:
            failures.append(
                f"time_grid: classical MDS spread {spread:.3f} exceeds {cmds_spread} of median"
            )
    return failures


def _fmt(x) -> str:
    if x is None:
        return ""
    return f"{x:.17g}"


_PLOT_LAYOUT = {
    "k_sweep": ("r", "rdot", "rddot", "Xrel", "Yrel", "Hy"),
    "sigma_sweep": ("r", "rdot", "rddot", "Xrel", "Yrel", "Hy"),
    "time_grid": ("Xk_dynamic", "Xk_cmds"),
}


def emit_outputs(reports, out_dir) -> list[Path]:
    """Write result CSVs, per-figure plot data, and the run manifest.

    One ``experiment_<kind>.csv`` per report with columns
    (sweep_value, quantity, rmse, rcrb, n_fail), one ``plot_<kind>.csv``
    with the same data in wide columns, and ``manifest.json`` recording the
    full configuration and seed.  Reruns with the same seed produce
    byte-identical CSVs.
    """
    if isinstance(reports, RmseReport):
        reports = [reports]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for report in reports:
        path = out / f"experiment_{report.kind}.csv"
        lines = ["sweep_value,quantity,rmse,rcrb,n_fail"]
        for row in report.rows:
            lines.append(",".join([
                _fmt(row.sweep_value), row.quantity, _fmt(row.rmse),
                _fmt(row.rcrb), str(row.n_fail),
            ]))
        path.write_text("\n".join(lines) + "\n")
        written.append(path)

        quantities = _PLOT_LAYOUT[report.kind]
        plot_path = out / f"plot_{report.kind}.csv"
        header = ["sweep_value"]
        for q in quantities:
            header.append(f"rmse_{q}")
            if any(r.rcrb is not None for r in report.quantity_rows(q)):
                header.append(f"rcrb_{q}")
        sweep_vals = sorted({r.sweep_value for r in report.rows})
        plines = [",".join(header)]
        for v in sweep_vals:
            cells = [_fmt(v)]
            for q in quantities:
                row = report.value(v, q)
                cells.append(_fmt(row.rmse))
                if f"rcrb_{q}" in header:
                    cells.append(_fmt(row.rcrb))
            plines.append(",".join(cells))
        plot_path.write_text("\n".join(plines) + "\n")
        written.append(plot_path)

    manifest = {
        "package_version": _version,
        "experiments": [r.config.to_dict() for r in reports],
        "wall_seconds": [r.wall_seconds for r in reports],
        "outputs": [p.name for p in written],
    }
    mpath = out / "manifest.json"
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    written.append(mpath)
    return written
