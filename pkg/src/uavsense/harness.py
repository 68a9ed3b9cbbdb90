"""Seeded Monte-Carlo experiment driver with trimmed-RMSE metrics.

One master seed deterministically keys independent RNG streams for scene
layout, channel phases, combiner draws and noise, so (config, seed) fully
determines every output and sweep points stay paired on common scenes.
Per-trial squared errors are aggregated per metric with the worst
``trim_fraction`` of trials dropped; a failed trial contributes +inf and is
counted, never silently ignored.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .detection import ScanGrid, scan_and_detect
from .dualpol import decompose_dualpol, estimate_targets_dualpol, sample_polarization, synthesize_dualpol
from .errors import RankDeficientGeometry, UavSenseError
from .estimation import estimate_targets, grids_from_beams
from .fusion import (
    FusionConfig,
    associate,
    calibrate_estimates,
    fuse_position,
    fuse_velocity_residual,
    fuse_velocity_wls,
    mean_fusion,
    reading_from_estimate,
)
from .scene import BsSite, Scene, ground_truth, random_scene
from .tensorops import balanced_plan, decompose, smooth, unfold_mode1
from .waveform import design_alignment_beams, noise_variance_per_sample, synthesize_rx_tensor

__all__ = [
    "ExperimentConfig",
    "MetricRow",
    "TrialRecord",
    "default_config",
    "run_experiment",
    "run_trial",
    "trimmed_rmse",
    "write_outputs",
    "CSV_HEADER",
]

CSV_HEADER = "sweep,metric,value,trials"

# RNG stream tags
_SCENE, _CHANNEL, _COMBINER, _NOISE, _DETECT, _POL = 1, 2, 3, 4, 5, 6


@dataclass(frozen=True)
class ExperimentConfig:
    """Scene, pipeline and experiment settings (field names are the config-file
    contract; see ``config_to_dict``/``config_from_dict``)."""

    # array and waveform
    p: int = 16
    q: int = 24
    r: int = 64
    m: int = 612
    n: int = 7
    scs: float = 30e3
    symbol_period: float = 35.677e-6
    carrier_frequency: float = 4.9e9
    tx_power_dbm: float = 58.0
    noise_psd_dbm_hz: float = -174.0
    # geometry
    num_bs: int = 4
    num_uavs: int = 4
    bs_ring_radius: float = 450.0
    bs_height: float = 30.0
    uav_disk_radius: float = 400.0
    uav_height_range: tuple = (35.0, 300.0)
    uav_speed_range_kmh: tuple = (5.0, 100.0)
    rcs: float = 0.01
    min_uav_spacing: float = 0.0
    min_range_separation: float = 0.0
    # pipeline
    bypass_detection: bool = True
    dualpol: bool = False
    position_rule: str = "range_dominant"
    beta1: float = 0.5
    beta2: float = 0.5
    association_threshold: float = 20.0
    lattice_points_per_axis: int = 11
    lattice_half_width: float = 15.0
    doppler_points: int = 601
    angle_points: int = 512
    footprint_beamwidths: float = 2.0
    pfa: float = 1e-3
    scan_theta_range: tuple = (math.radians(55.0), math.radians(95.0))
    scan_phi_range: tuple = (math.radians(30.0), math.radians(150.0))
    scan_beams: tuple = (8, 8)
    # experiment
    sweep: str = "none"
    sweep_values: tuple = ()
    trials: int = 10
    trim_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 0.0 <= self.trim_fraction < 0.5:
            raise ValueError("trim_fraction must be in [0, 0.5)")
        if self.sweep not in ("none", "tx_power", "num_bs", "num_uavs"):
            raise ValueError(f"unknown sweep axis {self.sweep!r}")
        for name in ("uav_height_range", "uav_speed_range_kmh", "sweep_values",
                     "scan_theta_range", "scan_phi_range", "scan_beams"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def tx_power_watts(self) -> float:
        return 10.0 ** ((self.tx_power_dbm - 30.0) / 10.0)

    @property
    def max_speed(self) -> float:
        return self.uav_speed_range_kmh[1] / 3.6

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(
            threshold=self.association_threshold,
            beta1=self.beta1,
            beta2=self.beta2,
            lattice_points_per_axis=self.lattice_points_per_axis,
            lattice_half_width=self.lattice_half_width,
            selection_rule=self.position_rule,
        )

    def bs_template(self) -> BsSite:
        return BsSite(
            position=np.zeros(3),
            panel_azimuth=0.0,
            carrier_frequency=self.carrier_frequency,
            p=self.p, q=self.q, r=self.r, m=self.m, n=self.n,
            scs=self.scs, symbol_period=self.symbol_period,
            tx_power=self.tx_power_watts,
        )


_PRESETS = {
    "paper": {},
    "desk": {"p": 8, "q": 8, "r": 16, "m": 64, "num_uavs": 3, "num_bs": 3},
}


def default_config(preset: str = "paper", **overrides) -> ExperimentConfig:
    """Published defaults, or the smaller desk-scale preset, plus overrides."""
    if preset not in _PRESETS:
        raise ValueError(f"unknown preset {preset!r}")
    return ExperimentConfig(**{**_PRESETS[preset], **overrides})


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = dataclasses.asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


def config_from_dict(data: dict) -> ExperimentConfig:
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    return ExperimentConfig(**data)


@dataclass(frozen=True)
class MetricRow:
    sweep_value: float
    metric: str
    value: float
    trials_used: int
    wall_time: float = 0.0


@dataclass
class TrialRecord:
    sweep_value: float
    trial: int
    failed: bool = False
    error: str | None = None
    errors: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"sweep": self.sweep_value, "trial": self.trial, "failed": self.failed,
             "error": self.error, "errors": self.errors},
            sort_keys=True,
        )


def _estimate_one_bs(cfg: ExperimentConfig, bs, pairs, seed_key, point_idx, trial, j,
                     dualpol: bool):
    """Synthesize, decompose and estimate one BS; returns (estimates, beams)."""
    comb_rng = np.random.default_rng([seed_key, _COMBINER, trial, j])
    noise_var = noise_variance_per_sample(cfg.noise_psd_dbm_hz, cfg.scs)

    if cfg.bypass_detection:
        beam_dirs = [(pk.vartheta, pk.psi) for pk in pairs]
        k_hat = len(pairs)
    else:
        det_rng = np.random.default_rng([seed_key, _DETECT, point_idx, trial, j])
        t_lo, t_hi = cfg.scan_theta_range
        p_lo, p_hi = cfg.scan_phi_range
        n_h, n_v = cfg.scan_beams
        grid = ScanGrid(
            theta0=t_lo, phi0=p_lo,
            dtheta=(t_hi - t_lo) / max(1, n_h - 1),
            dphi=(p_hi - p_lo) / max(1, n_v - 1),
            n_h=n_h, n_v=n_v,
        )
        det = scan_and_detect(bs, pairs, grid, noise_var, cfg.pfa, det_rng)
        angles = grid.beam_angles()
        beam_dirs = [
            (math.sin(th) * math.cos(ph), math.cos(th))
            for idx, (th, ph) in enumerate(angles)
            if det.flags[divmod(idx, grid.n_v)] == 1
        ]
        k_hat = det.total
        if k_hat == 0 or not beam_dirs:
            raise UavSenseError("no beam detections")

    beams = design_alignment_beams(beam_dirs, bs, comb_rng)
    grids = grids_from_beams(beam_dirs, bs, cfg.max_speed,
                             cfg.doppler_points, cfg.angle_points,
                             cfg.footprint_beamwidths)
    plan = balanced_plan(bs.m)
    noise_rng = np.random.default_rng([seed_key, _NOISE, point_idx, trial, j])

    if dualpol:
        pol_rng = np.random.default_rng([seed_key, _POL, trial, j])
        pol = sample_polarization(len(pairs), pol_rng)
        rx4 = synthesize_dualpol(bs, pairs, pol, beams, noise_var, noise_rng)
        factors = decompose_dualpol(rx4, k_hat, plan)
        est, _ = estimate_targets_dualpol(factors, bs, beams[1].matrix,
                                          beams[0].equivalent_vector, grids)
    else:
        rx = synthesize_rx_tensor(bs, pairs, beams, noise_var, noise_rng)
        factors = decompose(smooth(unfold_mode1(rx), plan), k_hat, plan)
        est = estimate_targets(factors, bs, beams[1].matrix,
                               beams[0].equivalent_vector, grids)
    return est


def _score_monostatic(readings, pairs, bs, uavs):
    """Match estimates to truth by back-projection distance; squared errors."""
    if not readings:
        return None
    est_pos = np.array([rd.position for rd in readings])
    true_pos = np.array([u.position for u in uavs])
    cost = np.linalg.norm(est_pos[:, None, :] - true_pos[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    aoa_sq, rng_sq, rv_sq = [], [], []
    for ei, ti in zip(rows, cols):
        rd, pk = readings[ei], pairs[ti]
        aoa_sq.append(
            math.degrees(rd.theta - pk.elevation) ** 2
            + math.degrees(rd.phi - pk.azimuth) ** 2
        )
        rng_sq.append((rd.range_m - pk.range_m) ** 2)
        rv_sq.append((rd.radial_velocity - pk.radial_velocity) ** 2)
    return aoa_sq, rng_sq, rv_sq


def _run_pipeline(cfg, scene, pairs_per_bs, seed_key, point_idx, trial, dualpol, errors):
    """One polarization variant end to end; fills the ``errors`` dict in place."""
    tag = "dp" if dualpol else "sp"
    readings_per_bs = []
    aoa_sq, rng_sq, rv_sq = [], [], []
    for j, bs in enumerate(scene.bs_sites):
        est = _estimate_one_bs(cfg, bs, pairs_per_bs[j], seed_key, point_idx,
                               trial, j, dualpol)
        readings = [reading_from_estimate(j, bs, t) for t in est]
        readings_per_bs.append(readings)
        scored = _score_monostatic(readings, pairs_per_bs[j], bs, scene.uavs)
        if scored:
            aoa_sq += scored[0]
            rng_sq += scored[1]
            rv_sq += scored[2]
    errors[f"aoa_rmse_deg:{tag}"] = float(np.mean(aoa_sq))
    errors[f"range_rmse_m:{tag}"] = float(np.mean(rng_sq))
    errors[f"radial_velocity_rmse_mps:{tag}"] = float(np.mean(rv_sq))

    true_pos = np.array([u.position for u in scene.uavs])
    true_vel = np.array([u.velocity for u in scene.uavs])
    k_true = len(scene.uavs)
    fcfg = cfg.fusion_config()
    suffix = "_dp" if dualpol else ""

    if len(scene.bs_sites) == 1:
        fused = [(rd.position, rd.position, None, None) for rd in readings_per_bs[0]]
    else:
        positions = [[rd.position for rd in rds] for rds in readings_per_bs]
        assoc = associate(positions, fcfg.threshold, expected_tracks=k_true)
        flat = {(j, i): rd for j, rds in enumerate(readings_per_bs)
                for i, rd in enumerate(rds)}
        fused = []
        for group in assoc.groups:
            members = [flat[v] for v in group]
            pf = fuse_position(members, fcfg)
            pm = mean_fusion(members)
            v_wls = v_res = None
            if len(members) >= 3:
                calibrated = calibrate_estimates(members, pf.position)
                try:
                    v_wls = fuse_velocity_wls(calibrated, fcfg.beta2).velocity
                    v_res = fuse_velocity_residual(calibrated, fcfg.beta2).velocity
                except RankDeficientGeometry:
                    pass
            fused.append((pf.position, pm, v_wls, v_res))

    est_pos = np.array([f[0] for f in fused])
    cost = np.linalg.norm(est_pos[:, None, :] - true_pos[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    pos_par, pos_mean, vel_wls, vel_res = [], [], [], []
    for gi, ti in zip(rows, cols):
        p_par, p_mean, v_wls, v_res = fused[gi]
        pos_par.append(float(np.sum((p_par - true_pos[ti]) ** 2)))
        pos_mean.append(float(np.sum((p_mean - true_pos[ti]) ** 2)))
        if v_wls is not None and v_res is not None:
            vel_wls.append(float(np.sum((v_wls - true_vel[ti]) ** 2)))
            vel_res.append(float(np.sum((v_res - true_vel[ti]) ** 2)))
    # association merges/splits leave truths unmatched: an honest failure
    missing = k_true - len(rows)
    pos_inf = [math.inf] * missing
    errors[f"position_rmse_m:pareto{suffix}"] = float(np.mean(pos_par + pos_inf))
    errors[f"position_rmse_m:mean{suffix}"] = float(np.mean(pos_mean + pos_inf))
    if len(scene.bs_sites) >= 3:
        expected = k_true
        vel_inf = [math.inf] * (expected - len(vel_wls))
        if not dualpol:
            errors["velocity_rmse_mps:wls"] = float(np.mean(vel_wls + vel_inf))
            errors["velocity_rmse_mps:residual"] = float(np.mean(vel_res + vel_inf))



def run_trial(cfg: ExperimentConfig, point_cfg: ExperimentConfig,
              point_idx: int, trial: int,
              max_bs: int, max_uavs: int) -> TrialRecord:
    """One end-to-end realization at one sweep point."""
    sweep_value = _sweep_value(point_cfg, point_idx)
    rec = TrialRecord(sweep_value=sweep_value, trial=trial)
    try:
        scene_rng = np.random.default_rng([cfg.seed, _SCENE, trial])
        scene_full = random_scene(
            point_cfg.bs_template(), max_bs, max_uavs, scene_rng,
            bs_ring_radius=cfg.bs_ring_radius,
            bs_height=cfg.bs_height,
            uav_disk_radius=cfg.uav_disk_radius,
            uav_height_range=cfg.uav_height_range,
            uav_speed_range=tuple(v / 3.6 for v in cfg.uav_speed_range_kmh),
            rcs=cfg.rcs,
            min_spacing=cfg.min_uav_spacing,
            min_range_separation=cfg.min_range_separation,
        )
        scene = Scene(bs_sites=scene_full.bs_sites[: point_cfg.num_bs],
                      uavs=scene_full.uavs[: point_cfg.num_uavs])
        pairs_per_bs = []
        for j, bs in enumerate(scene.bs_sites):
            chan_rng = np.random.default_rng([cfg.seed, _CHANNEL, trial, j])
            pairs_per_bs.append(ground_truth(bs, scene.uavs, chan_rng))

        _run_pipeline(point_cfg, scene, pairs_per_bs, cfg.seed, point_idx, trial,
                      dualpol=False, errors=rec.errors)
        if point_cfg.dualpol:
            _run_pipeline(point_cfg, scene, pairs_per_bs, cfg.seed, point_idx, trial,
                          dualpol=True, errors=rec.errors)
    except (UavSenseError, np.linalg.LinAlgError) as exc:
        rec.failed = True
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def _sweep_value(point_cfg: ExperimentConfig, point_idx: int) -> float:
    if point_cfg.sweep == "tx_power":
        return float(point_cfg.tx_power_dbm)
    if point_cfg.sweep == "num_bs":
        return float(point_cfg.num_bs)
    if point_cfg.sweep == "num_uavs":
        return float(point_cfg.num_uavs)
    return 0.0


def _point_config(cfg: ExperimentConfig, value) -> ExperimentConfig:
    if cfg.sweep == "tx_power":
        return replace(cfg, tx_power_dbm=float(value))
    if cfg.sweep == "num_bs":
        return replace(cfg, num_bs=int(value))
    if cfg.sweep == "num_uavs":
        return replace(cfg, num_uavs=int(value))
    return cfg


def trimmed_rmse(squared_errors, trim_fraction: float) -> tuple:
    """RMSE over the kept trials after dropping the largest ``trim_fraction``."""
    arr = np.sort(np.asarray(squared_errors, dtype=float))
    n_drop = int(round(trim_fraction * arr.size))
    kept = arr[: arr.size - n_drop] if n_drop else arr
    return float(np.sqrt(np.mean(kept))), int(kept.size)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> tuple:
    """All sweep points x trials; returns (metric rows, trial records)."""
    values = list(cfg.sweep_values) if cfg.sweep != "none" and cfg.sweep_values else [None]
    max_bs = cfg.num_bs
    max_uavs = cfg.num_uavs
    if cfg.sweep == "num_bs" and cfg.sweep_values:
        max_bs = int(max(cfg.sweep_values))
    if cfg.sweep == "num_uavs" and cfg.sweep_values:
        max_uavs = int(max(cfg.sweep_values))

    rows, records = [], []
    for point_idx, value in enumerate(values):
        point_cfg = _point_config(cfg, value) if value is not None else cfg
        t0 = time.perf_counter()
        point_records = [
            run_trial(cfg, point_cfg, point_idx, t, max_bs, max_uavs)
            for t in range(cfg.trials)
        ]
        wall = time.perf_counter() - t0
        records.extend(point_records)

        metrics = sorted({k for r in point_records for k in r.errors})
        sweep_value = _sweep_value(point_cfg, point_idx)
        for metric in metrics:
            mses = [r.errors.get(metric, math.inf) for r in point_records]
            rmse, used = trimmed_rmse(mses, cfg.trim_fraction)
            rows.append(MetricRow(sweep_value=sweep_value, metric=metric,
                                  value=rmse, trials_used=used, wall_time=wall))
    if out_dir is not None:
        write_outputs(cfg, rows, records, out_dir)
    return rows, records


def write_outputs(cfg: ExperimentConfig, rows, records, out_dir) -> None:
    """metrics.csv, trials.jsonl and config.echo.json under ``out_dir``."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.csv"), "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(f"{row.sweep_value!r},{row.metric},{row.value!r},{row.trials_used}\n")
    with open(os.path.join(out_dir, "trials.jsonl"), "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
    with open(os.path.join(out_dir, "config.echo.json"), "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
