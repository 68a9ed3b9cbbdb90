"""Multi-BS data association and position/velocity fusion.

Association builds a complete multipartite graph over the per-BS
back-projected positions, drops every vertex whose shortest cross-BS edge
exceeds the threshold (isolated false detections), spans the survivors with
a Kruskal forest and cuts the longest edges until the expected number of
groups remains.  Position fusion evaluates range- and direction-loss
objectives on a lattice around the mean-fusion seed and picks from the
Pareto set; velocities come from weighted least squares over the calibrated
radial directions, optionally robustified by residual-weighted subset
averaging.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptyGraph, RankDeficientGeometry
from .scene import transform_matrix

__all__ = [
    "SensingReading",
    "FusionConfig",
    "AssociationResult",
    "PositionFusion",
    "VelocityFusion",
    "FusedTrack",
    "back_project",
    "reading_from_estimate",
    "associate",
    "fuse_position",
    "pareto_mask",
    "mean_fusion",
    "calibrate_estimates",
    "fuse_velocity_wls",
    "fuse_velocity_residual",
    "fuse_tracks",
    "tracks_to_records",
    "WIRE_VERSION",
]

WIRE_VERSION = 1

# condition-number ceiling of the WLS normal matrix
WLS_COND_MAX = 1e10
# residuals below this are treated as an exact fit
ZERO_RESIDUAL = 1e-24


def back_project(theta: float, phi: float, range_m: float,
                 bs_position: np.ndarray, panel_azimuth: float) -> np.ndarray:
    """Global position d * r + p_B from one BS's local angle/range estimate."""
    u_local = np.array([
        math.sin(theta) * math.cos(phi),
        math.sin(theta) * math.sin(phi),
        math.cos(theta),
    ])
    r_global = transform_matrix(panel_azimuth) @ u_local
    return range_m * r_global + np.asarray(bs_position, dtype=float)


@dataclass(frozen=True)
class SensingReading:
    """One BS's estimate of one target, in fusion-ready form."""

    bs_id: int
    bs_position: np.ndarray
    panel_azimuth: float
    theta: float
    phi: float
    range_m: float
    radial_velocity: float

    def __post_init__(self):
        object.__setattr__(self, "bs_position",
                           np.asarray(self.bs_position, dtype=float))

    @property
    def position(self) -> np.ndarray:
        return back_project(self.theta, self.phi, self.range_m,
                            self.bs_position, self.panel_azimuth)

    @property
    def direction(self) -> np.ndarray:
        """Global unit vector from the BS toward the estimated position."""
        u_local = np.array([
            math.sin(self.theta) * math.cos(self.phi),
            math.sin(self.theta) * math.sin(self.phi),
            math.cos(self.theta),
        ])
        return transform_matrix(self.panel_azimuth) @ u_local


def reading_from_estimate(bs_id: int, bs, target) -> SensingReading:
    """Adapter from a BsSite and a TargetEstimate (or wire record dict)."""
    if isinstance(target, dict):
        return SensingReading(
            bs_id=bs_id, bs_position=bs.position, panel_azimuth=bs.panel_azimuth,
            theta=target["theta"], phi=target["phi"], range_m=target["range"],
            radial_velocity=target["radial_velocity"],
        )
    return SensingReading(
        bs_id=bs_id, bs_position=bs.position, panel_azimuth=bs.panel_azimuth,
        theta=target.elevation, phi=target.azimuth, range_m=target.range_m,
        radial_velocity=target.radial_velocity,
    )


@dataclass(frozen=True)
class FusionConfig:
    """Knobs of Stage II (thresholds, weighting intensities, lattice geometry)."""

    threshold: float = 20.0
    beta1: float = 0.5
    beta2: float = 0.5
    lattice_points_per_axis: int = 11
    lattice_half_width: float = 15.0
    selection_rule: str = "range_dominant"

    def __post_init__(self):
        if self.lattice_points_per_axis % 2 == 0:
            raise ValueError("lattice_points_per_axis must be odd")
        if self.lattice_half_width <= 0:
            raise ValueError("lattice_half_width must be positive")
        if self.beta1 <= 0 or self.beta2 <= 0:
            raise ValueError("weighting intensities must be positive")
        if self.selection_rule not in ("range_dominant", "direction_dominant"):
            raise ValueError(f"unknown selection rule {self.selection_rule!r}")


@dataclass(frozen=True)
class AssociationResult:
    groups: tuple          # tuple of tuples of (bs_index, local_index)
    removed: tuple         # isolated false detections


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        return True


def associate(positions_per_bs, threshold: float,
              expected_tracks: int | None = None) -> AssociationResult:
    """Group per-BS position estimates into per-target clusters.

    ``positions_per_bs`` is one list of 3-vectors per BS.  A vertex whose
    nearest cross-BS neighbour is farther than ``threshold`` is removed as a
    false detection.  The Kruskal spanning forest of the survivors is cut at
    its longest edges until ``expected_tracks`` components remain; with
    ``expected_tracks=None`` every forest edge longer than the threshold is
    cut instead and the group count is inferred.
    """
    if len(positions_per_bs) < 2:
        raise ValueError("association requires at least two BSs")
    vertices = [
        (j, i) for j, plist in enumerate(positions_per_bs) for i in range(len(plist))
    ]
    if not vertices:
        raise EmptyGraph("no vertices to associate")
    coords = np.array(
        [positions_per_bs[j][i] for j, i in vertices], dtype=float
    )
    bs_of = np.array([j for j, _ in vertices])
    nv = len(vertices)

    dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=2)
    cross = bs_of[:, None] != bs_of[None, :]
    dist_masked = np.where(cross, dist, np.inf)
    nearest = dist_masked.min(axis=1)

    keep = nearest <= threshold
    removed = tuple(vertices[i] for i in range(nv) if not keep[i])
    survivors = [i for i in range(nv) if keep[i]]
    if not survivors:
        raise EmptyGraph("all vertices removed as false detections")

    # Kruskal spanning forest over the surviving cross-BS edges
    edges = sorted(
        (dist[a, b], a, b)
        for ai, a in enumerate(survivors)
        for b in survivors[ai + 1:]
        if cross[a, b]
    )
    uf = _UnionFind(nv)
    forest = []
    for w, a, b in edges:
        if uf.union(a, b):
            forest.append((w, a, b))

    components = len({uf.find(i) for i in survivors})
    forest.sort()
    if expected_tracks is None:
        kept_edges = [e for e in forest if e[0] <= threshold]
    else:
        # cut the longest forest edges until the expected group count remains,
        # but never split a cluster joined tighter than the false-detection
        # threshold: such an edge is same-UAV by the threshold's own meaning
        n_cut = max(0, expected_tracks - components)
        cuttable = sum(1 for e in forest if e[0] > threshold)
        n_cut = min(n_cut, cuttable)
        kept_edges = forest[: len(forest) - n_cut] if n_cut else forest

    uf2 = _UnionFind(nv)
    for _, a, b in kept_edges:
        uf2.union(a, b)
    by_root: dict = {}
    for i in survivors:
        by_root.setdefault(uf2.find(i), []).append(vertices[i])
    groups = tuple(tuple(sorted(g)) for g in sorted(by_root.values()))
    return AssociationResult(groups=groups, removed=removed)


@dataclass(frozen=True)
class PositionFusion:
    position: np.ndarray
    seed: np.ndarray
    range_loss: float
    direction_loss: float
    pareto_size: int
    pareto_indices: np.ndarray
    lattice_losses: tuple  # (f_r array, f_d array) over the lattice


def mean_fusion(readings) -> np.ndarray:
    """Unweighted mean of the members' back-projected positions."""
    return np.mean([rd.position for rd in readings], axis=0)


def _lattice(center: np.ndarray, n_ax: int, half_width: float) -> np.ndarray:
    offs = np.linspace(-half_width, half_width, n_ax)
    gx, gy, gz = np.meshgrid(offs, offs, offs, indexing="ij")
    return center[None, :] + np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)


def _losses(points: np.ndarray, readings, beta1: float) -> tuple:
    bs_pos = np.array([rd.bs_position for rd in readings])
    d_hat = np.array([rd.range_m for rd in readings])
    r_hat = np.array([rd.direction for rd in readings])
    diff = points[:, None, :] - bs_pos[None, :, :]
    dist = np.linalg.norm(diff, axis=2)                      # (L, J)
    weights = dist ** (-beta1)
    wsum = weights.sum(axis=1)
    f_r = np.sum(weights * np.abs(dist - d_hat[None, :]), axis=1) / wsum
    rdir = diff / dist[:, :, None]
    f_d = np.sum(weights * np.linalg.norm(rdir - r_hat[None, :, :], axis=2), axis=1) / wsum
    return f_r, f_d


def pareto_mask(f_r: np.ndarray, f_d: np.ndarray) -> np.ndarray:
    """True where a point is NOT strictly dominated in both objectives.

    A point is dominated iff some other point is strictly better in f_r and
    strictly better in f_d; sweeping in f_r order makes this O(L log L).
    """
    order = np.argsort(f_r, kind="stable")
    fr_s, fd_s = f_r[order], f_d[order]
    # blocks of equal f_r are judged against the running f_d minimum of the
    # strictly smaller f_r values only
    starts = np.empty(fr_s.size, dtype=bool)
    starts[0] = True
    np.not_equal(fr_s[1:], fr_s[:-1], out=starts[1:])
    block_id = np.cumsum(starts) - 1
    cummin = np.minimum.accumulate(fd_s)
    start_idx = np.flatnonzero(starts)
    prev_best = np.full(start_idx.size, math.inf)
    prev_best[1:] = cummin[start_idx[1:] - 1]
    dominated_sorted = fd_s > prev_best[block_id]
    dominated = np.empty(f_r.size, dtype=bool)
    dominated[order] = dominated_sorted
    return ~dominated


def fuse_position(readings, config: FusionConfig) -> PositionFusion:
    """Pareto-optimal lattice fusion around the mean-fusion seed."""
    readings = list(readings)
    if not readings:
        raise ValueError("cannot fuse an empty group")
    seed = mean_fusion(readings)
    points = _lattice(seed, config.lattice_points_per_axis, config.lattice_half_width)
    f_r, f_d = _losses(points, readings, config.beta1)

    pareto = np.flatnonzero(pareto_mask(f_r, f_d))
    key = f_r if config.selection_rule == "range_dominant" else f_d
    chosen = pareto[int(np.argmin(key[pareto]))]
    return PositionFusion(
        position=points[chosen],
        seed=seed,
        range_loss=float(f_r[chosen]),
        direction_loss=float(f_d[chosen]),
        pareto_size=int(pareto.size),
        pareto_indices=pareto,
        lattice_losses=(f_r, f_d),
    )


def calibrate_estimates(readings, fused_position: np.ndarray) -> list:
    """Replace each member's angles and range by the exact geometry to the
    fused position (radial velocities untouched)."""
    out = []
    for rd in readings:
        delta = np.asarray(fused_position, dtype=float) - rd.bs_position
        dist = float(np.linalg.norm(delta))
        u_local = transform_matrix(rd.panel_azimuth).T @ (delta / dist)
        theta = math.acos(min(1.0, max(-1.0, u_local[2])))
        phi = math.atan2(u_local[1], u_local[0])
        out.append(replace(rd, theta=theta, phi=phi, range_m=dist))
    return out


@dataclass(frozen=True)
class VelocityFusion:
    velocity: np.ndarray
    method: str
    residuals: tuple = ()
    subset_sizes: tuple = ()


def _wls_solve(directions: np.ndarray, radials: np.ndarray,
               weights: np.ndarray) -> np.ndarray:
    omega = directions
    wn = omega.T @ (weights[:, None] * omega)
    if np.linalg.cond(wn) > WLS_COND_MAX:
        raise RankDeficientGeometry("viewing directions are ill-conditioned")
    return np.linalg.solve(wn, omega.T @ (weights * radials))


def fuse_velocity_wls(readings, beta2: float) -> VelocityFusion:
    """Weighted least-squares 3-D velocity from the members' radial speeds."""
    readings = list(readings)
    if len(readings) < 3:
        raise RankDeficientGeometry("velocity recovery needs at least 3 BSs")
    directions = np.array([rd.direction for rd in readings])
    radials = np.array([rd.radial_velocity for rd in readings])
    weights = np.array([rd.range_m ** (-beta2) for rd in readings])
    return VelocityFusion(velocity=_wls_solve(directions, radials, weights),
                          method="wls")


def fuse_velocity_residual(readings, beta2: float) -> VelocityFusion:
    """Residual-weighted combination of all >=3-member subset WLS estimates.

    Each subset's estimate is scored by its weighted squared radial residual
    over ALL members; estimates are averaged with inverse-residual weights.
    An exactly fitting subset is returned directly.
    """
    readings = list(readings)
    jj = len(readings)
    if jj < 3:
        raise RankDeficientGeometry("velocity recovery needs at least 3 BSs")
    directions = np.array([rd.direction for rd in readings])
    radials = np.array([rd.radial_velocity for rd in readings])
    weights = np.array([rd.range_m ** (-beta2) for rd in readings])

    estimates, residuals, sizes = [], [], []
    for size in range(3, jj + 1):
        for subset in itertools.combinations(range(jj), size):
            idx = list(subset)
            try:
                v_i = _wls_solve(directions[idx], radials[idx], weights[idx])
            except RankDeficientGeometry:
                # a degenerate subset would get a near-zero weight anyway
                continue
            res = float(np.sum(weights * (directions @ v_i - radials) ** 2))
            if res < ZERO_RESIDUAL:
                return VelocityFusion(velocity=v_i, method="residual",
                                      residuals=(res,), subset_sizes=(size,))
            estimates.append(v_i)
            residuals.append(res)
            sizes.append(size)
    if not estimates:
        raise RankDeficientGeometry("every BS subset is ill-conditioned")
    inv = 1.0 / np.array(residuals)
    velocity = (inv[:, None] * np.array(estimates)).sum(axis=0) / inv.sum()
    return VelocityFusion(velocity=velocity, method="residual",
                          residuals=tuple(residuals), subset_sizes=tuple(sizes))


@dataclass(frozen=True)
class FusedTrack:
    """Final per-UAV output: members, fused position/velocity, diagnostics."""

    members: tuple
    position: np.ndarray
    velocity: np.ndarray | None
    range_loss: float
    direction_loss: float
    velocity_residuals: tuple = ()


def fuse_tracks(readings_per_bs, config: FusionConfig,
                expected_tracks: int | None = None,
                velocity_method: str = "residual") -> tuple:
    """Run the full Stage-II pipeline on per-BS reading lists.

    Returns (tracks, association).  Velocity is present only for groups with
    at least three members whose geometry is full rank.
    """
    positions = [[rd.position for rd in rds] for rds in readings_per_bs]
    assoc = associate(positions, config.threshold, expected_tracks)
    flat = {(j, i): rd for j, rds in enumerate(readings_per_bs) for i, rd in enumerate(rds)}
    tracks = []
    for group in assoc.groups:
        members = [flat[v] for v in group]
        pos = fuse_position(members, config)
        calibrated = calibrate_estimates(members, pos.position)
        velocity, residuals = None, ()
        if len(calibrated) >= 3:
            try:
                if velocity_method == "residual":
                    vf = fuse_velocity_residual(calibrated, config.beta2)
                else:
                    vf = fuse_velocity_wls(calibrated, config.beta2)
                velocity, residuals = vf.velocity, vf.residuals
            except RankDeficientGeometry:
                pass
        tracks.append(FusedTrack(
            members=group,
            position=pos.position,
            velocity=velocity,
            range_loss=pos.range_loss,
            direction_loss=pos.direction_loss,
            velocity_residuals=residuals,
        ))
    return tuple(tracks), assoc


def tracks_to_records(tracks) -> list:
    """JSON-ready fused-track records (the cloud output format)."""
    return [
        {
            "version": WIRE_VERSION,
            "track_idx": i,
            "members": [[int(j), int(k)] for j, k in t.members],
            "position": [float(x) for x in t.position],
            "velocity": None if t.velocity is None else [float(x) for x in t.velocity],
            "range_loss": t.range_loss,
            "direction_loss": t.direction_loss,
        }
        for i, t in enumerate(tracks)
    ]
