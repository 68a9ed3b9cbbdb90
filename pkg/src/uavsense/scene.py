"""Scene geometry: base-station / UAV placement and per-pair ground truth.

Conventions (global frame): z points up.  Each BS carries a local frame
whose x-z plane contains the antenna panel (panel parallel to the global
z-axis); the panel boresight is the local +y axis.  ``panel_azimuth`` is
the angle between the local and global x-axes, and ``transform_matrix``
maps local coordinates to global ones.  Elevation ``theta`` is measured
from the local z-axis, azimuth ``phi`` from the local x-axis; targets in
the panel's front half-space have ``phi`` in [0, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.constants import c as C0

from .errors import DegenerateGeometry

__all__ = [
    "C0",
    "BsSite",
    "UavTruth",
    "PairTruth",
    "Scene",
    "transform_matrix",
    "pair_truth",
    "path_loss_db",
    "channel_coefficient",
    "ground_truth",
    "random_scene",
    "ring_site_positions",
    "boresight_panel_azimuth",
    "scene_to_config",
    "scene_from_config",
]


@dataclass(frozen=True)
class BsSite:
    """One monostatic sensing base station.

    p, q: horizontal / vertical antenna counts of the UPA (l = p*q elements);
    r: RF chains; m, n: subcarriers / OFDM symbols used for sensing;
    scs: subcarrier spacing in Hz; symbol_period: full OFDM symbol period
    (with cyclic prefix) in seconds; tx_power: transmit power budget in W.
    """

    position: np.ndarray
    panel_azimuth: float
    carrier_frequency: float
    p: int
    q: int
    r: int
    m: int
    n: int
    scs: float
    symbol_period: float
    tx_power: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if self.position.shape != (3,):
            raise ValueError("BS position must be a 3-vector")
        if min(self.p, self.q, self.r, self.m, self.n) < 1:
            raise ValueError("array and frame dimensions must be >= 1")
        if (self.p * self.q) % self.r != 0:
            raise ValueError("antenna count p*q must be divisible by RF-chain count r")
        if self.scs <= 0 or self.symbol_period <= 0:
            raise ValueError("scs and symbol_period must be positive")

    @property
    def num_antennas(self) -> int:
        return self.p * self.q

    @property
    def antennas_per_chain(self) -> int:
        return self.num_antennas // self.r

    @property
    def wavelength(self) -> float:
        return C0 / self.carrier_frequency


@dataclass(frozen=True)
class UavTruth:
    """Ground-truth UAV state: position (m), velocity (m/s), RCS (m^2)."""

    position: np.ndarray
    velocity: np.ndarray
    rcs: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float))
        if self.position.shape != (3,) or self.velocity.shape != (3,):
            raise ValueError("position and velocity must be 3-vectors")
        if self.rcs <= 0:
            raise ValueError("rcs must be positive")


@dataclass(frozen=True)
class PairTruth:
    """True sensing parameters of one BS-UAV pair (angles in the BS local frame)."""

    elevation: float
    azimuth: float
    vartheta: float  # sin(theta) * cos(phi)
    psi: float       # cos(theta)
    range_m: float
    delay_s: float
    radial_velocity: float
    doppler_hz: float
    alpha: complex = 0j

    def with_alpha(self, alpha: complex) -> "PairTruth":
        return replace(self, alpha=alpha)


@dataclass(frozen=True)
class Scene:
    """A single sensing snapshot: all BS sites and all UAVs."""

    bs_sites: tuple
    uavs: tuple

    def __post_init__(self):
        object.__setattr__(self, "bs_sites", tuple(self.bs_sites))
        object.__setattr__(self, "uavs", tuple(self.uavs))


def transform_matrix(panel_azimuth: float) -> np.ndarray:
    """Rotation about z taking BS-local coordinates to the global frame."""
    c, s = math.cos(panel_azimuth), math.sin(panel_azimuth)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def pair_truth(bs: BsSite, uav: UavTruth) -> PairTruth:
    """Ground-truth angles, range, delay, radial velocity and Doppler for one pair.

    The global line-of-sight unit vector r satisfies
    r = T(panel_azimuth) @ [sin(theta)cos(phi), sin(theta)sin(phi), cos(theta)],
    and the radial velocity is the projection r . v (positive = receding).
    """
    delta = uav.position - bs.position
    dist = float(np.linalg.norm(delta))
    if dist == 0.0:
        raise DegenerateGeometry("UAV coincides with the BS position")
    r_global = delta / dist
    u_local = transform_matrix(bs.panel_azimuth).T @ r_global
    theta = math.acos(min(1.0, max(-1.0, u_local[2])))
    phi = math.atan2(u_local[1], u_local[0]) if abs(math.sin(theta)) > 0 else 0.0
    vartheta = math.sin(theta) * math.cos(phi)
    psi = math.cos(theta)
    v_rad = float(r_global @ uav.velocity)
    lam = bs.wavelength
    return PairTruth(
        elevation=theta,
        azimuth=phi,
        vartheta=vartheta,
        psi=psi,
        range_m=dist,
        delay_s=2.0 * dist / C0,
        radial_velocity=v_rad,
        doppler_hz=2.0 * v_rad / lam,
    )


def path_loss_db(carrier_frequency: float, range_m: float, rcs: float) -> float:
    """Two-way point-scatterer path loss in dB (frequency in Hz, range in m)."""
    if range_m <= 0:
        raise DegenerateGeometry("path loss undefined at zero range")
    f_mhz = carrier_frequency / 1e6
    d_km = range_m / 1e3
    return 103.4 + 20.0 * math.log10(f_mhz) + 40.0 * math.log10(d_km) - 10.0 * math.log10(rcs)


def channel_coefficient(bs: BsSite, pair: PairTruth, rcs: float, rng: np.random.Generator) -> complex:
    """Complex echo coefficient: path-loss magnitude, uniformly random phase."""
    pl = path_loss_db(bs.carrier_frequency, pair.range_m, rcs)
    mag = 10.0 ** (-pl / 20.0)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    return mag * complex(math.cos(phase), math.sin(phase))


def ground_truth(bs: BsSite, uavs, rng: np.random.Generator) -> list:
    """PairTruth (with channel coefficients) for every UAV seen from one BS."""
    pairs = []
    for uav in uavs:
        pt = pair_truth(bs, uav)
        pairs.append(pt.with_alpha(channel_coefficient(bs, pt, uav.rcs, rng)))
    return pairs


def boresight_panel_azimuth(bearing: np.ndarray) -> float:
    """Panel azimuth whose local +y (boresight) points along ``bearing`` (xy plane)."""
    bx, by = float(bearing[0]), float(bearing[1])
    # T(phi) @ [0,1,0] = [sin(phi), cos(phi), 0]
    return math.atan2(bx, by)


def ring_site_positions(num_bs: int, radius: float, height: float) -> list:
    """BS positions evenly spaced on a circle, panels facing the center."""
    sites = []
    for j in range(num_bs):
        chi = 2.0 * math.pi * j / num_bs
        pos = np.array([radius * math.cos(chi), radius * math.sin(chi), height])
        azim = boresight_panel_azimuth(-pos[:2])
        sites.append((pos, azim))
    return sites


def random_scene(
    bs_template: BsSite,
    num_bs: int,
    num_uavs: int,
    rng: np.random.Generator,
    *,
    bs_ring_radius: float = 450.0,
    bs_height: float = 30.0,
    uav_disk_radius: float = 400.0,
    uav_height_range: tuple = (35.0, 300.0),
    uav_speed_range: tuple = (5.0 / 3.6, 100.0 / 3.6),
    rcs: float = 0.01,
    min_spacing: float = 0.0,
    min_range_separation: float = 0.0,
) -> Scene:
    """Random snapshot: BSs on a ring facing inward, UAVs in the inner disk.

    UAV xy projections are uniform in a disk of ``uav_disk_radius`` around the
    ring center, heights and speeds uniform in their ranges, velocity direction
    uniform on the sphere.  ``uav_disk_radius`` < ``bs_ring_radius`` keeps every
    UAV in every panel's front half-space.  ``min_spacing`` > 0 enforces a
    minimum inter-UAV distance, and ``min_range_separation`` > 0 additionally
    keeps every pair of UAVs at least that far apart in range as seen from
    every BS (distinct delay generators), both by rejection sampling.
    """
    sites = [
        replace(bs_template, position=pos, panel_azimuth=azim)
        for pos, azim in ring_site_positions(num_bs, bs_ring_radius, bs_height)
    ]
    positions = []
    while len(positions) < num_uavs:
        rad = uav_disk_radius * math.sqrt(rng.uniform())
        ang = rng.uniform(0.0, 2.0 * math.pi)
        h = rng.uniform(*uav_height_range)
        cand = np.array([rad * math.cos(ang), rad * math.sin(ang), h])
        if min_spacing > 0 and any(np.linalg.norm(cand - p) < min_spacing for p in positions):
            continue
        if min_range_separation > 0 and any(
            abs(np.linalg.norm(cand - bs.position) - np.linalg.norm(p - bs.position))
            < min_range_separation
            for bs in sites for p in positions
        ):
            continue
        positions.append(cand)
    uavs = []
    for pos in positions:
        speed = rng.uniform(*uav_speed_range)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        uavs.append(UavTruth(position=pos, velocity=speed * direction, rcs=rcs))
    return Scene(bs_sites=sites, uavs=uavs)


# -- scene config serialization (field names are the wire contract) ----------

_BS_FIELDS = ("panel_azimuth", "carrier_frequency", "p", "q", "r", "m", "n",
              "scs", "symbol_period", "tx_power")


def scene_to_config(scene: Scene) -> dict:
    """Plain hierarchical dict mirroring the dataclass fields."""
    return {
        "bs_sites": [
            {"position": [float(x) for x in bs.position],
             **{name: getattr(bs, name) for name in _BS_FIELDS}}
            for bs in scene.bs_sites
        ],
        "uavs": [
            {"position": [float(x) for x in u.position],
             "velocity": [float(x) for x in u.velocity],
             "rcs": u.rcs}
            for u in scene.uavs
        ],
    }


def scene_from_config(cfg: dict) -> Scene:
    bs_sites = [BsSite(position=np.array(d["position"]),
                       **{name: d[name] for name in _BS_FIELDS})
                for d in cfg["bs_sites"]]
    uavs = [UavTruth(position=np.array(d["position"]),
                     velocity=np.array(d["velocity"]), rcs=d["rcs"])
            for d in cfg["uavs"]]
    return Scene(bs_sites=bs_sites, uavs=uavs)
