"""Beam scanning preliminaries: per-beam energy detection and MDL target counting.

The detector family is open in principle; with a known noise floor the
energy detector needs no signal prior, so each beam's combined samples are
summed in power and compared against the chi-square threshold at the
configured false-alarm probability.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .errors import RankDeficient
from .scene import BsSite
from .waveform import synthesize_rx_tensor

__all__ = [
    "ScanGrid",
    "DetectionMap",
    "energy_threshold",
    "detect_beam",
    "mdl_order",
    "estimate_count_mdl",
    "scan_and_detect",
]


@dataclass(frozen=True)
class ScanGrid:
    """Rectangular beam-scan grid in (elevation, azimuth)."""

    theta0: float
    phi0: float
    dtheta: float
    dphi: float
    n_h: int
    n_v: int

    def __post_init__(self):
        if self.n_h < 1 or self.n_v < 1:
            raise ValueError("beam counts must be >= 1")
        if self.dtheta <= 0 or self.dphi <= 0:
            raise ValueError("scan steps must be positive")

    def beam_angles(self):
        """(theta_i, phi_j) for every beam, row-major over (i, j)."""
        return [
            (self.theta0 + i * self.dtheta, self.phi0 + j * self.dphi)
            for i in range(self.n_h)
            for j in range(self.n_v)
        ]


@dataclass(frozen=True)
class DetectionMap:
    """Per-beam detection flags and UAV counts; K = sum(flags * counts)."""

    flags: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if self.flags.shape != self.counts.shape:
            raise ValueError("flags and counts must share a shape")

    @property
    def total(self) -> int:
        return int(np.sum(self.flags * self.counts))

    def to_json(self) -> str:
        return json.dumps(
            {
                "flags": self.flags.astype(int).tolist(),
                "counts": self.counts.astype(int).tolist(),
                "total": self.total,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "DetectionMap":
        obj = json.loads(text)
        return cls(flags=np.array(obj["flags"]), counts=np.array(obj["counts"]))


def energy_threshold(num_samples: int, noise_variance: float, pfa: float) -> float:
    """Energy-sum threshold: sum |y|^2 under H0 is (sigma^2 / 2) chi2_{2n}."""
    return 0.5 * noise_variance * chi2.ppf(1.0 - pfa, df=2 * num_samples)


def detect_beam(samples: np.ndarray, noise_variance: float, pfa: float) -> bool:
    """Energy detection of one beam; True when the echo hypothesis is accepted."""
    samples = np.ravel(samples)
    energy = float(np.sum(np.abs(samples) ** 2))
    return energy > energy_threshold(samples.size, noise_variance, pfa)


def mdl_order(eigenvalues: np.ndarray, num_samples: int) -> int:
    """Model order minimizing the description length of the eigenvalue tail.

    ``eigenvalues`` are the sample-covariance eigenvalues sorted descending;
    candidates run over 1..len-1 (a flagged beam holds at least one target).
    """
    lam = np.asarray(eigenvalues, dtype=float)
    r = lam.size
    if r < 2:
        raise ValueError("at least two eigenvalues are required")
    best_k, best_val = 1, math.inf
    for k in range(1, r):
        tail = lam[k:]
        log_gm = float(np.mean(np.log(tail)))
        log_am = math.log(float(np.mean(tail)))
        fit = -(r - k) * num_samples * (log_gm - log_am)
        penalty = 0.5 * k * (2 * r - k) * math.log(num_samples)
        val = fit + penalty
        if val < best_val:
            best_k, best_val = k, val
    return best_k


def estimate_count_mdl(rx) -> int:
    """Number of targets in one beam from the received tensor's covariance."""
    r, n, m = rx.data.shape
    if r < 2:
        raise ValueError("MDL needs at least two RF chains")
    samples = rx.data.reshape(r, n * m)
    cov = samples @ samples.conj().T / (n * m)
    if not np.all(np.isfinite(cov)):
        raise RankDeficient("sample covariance is not finite")
    eigs = np.linalg.eigvalsh(cov)[::-1]
    eigs = np.clip(eigs, np.finfo(float).tiny, None)
    return mdl_order(eigs, n * m)


def scan_and_detect(
    bs: BsSite,
    pairs,
    grid: ScanGrid,
    noise_variance: float,
    pfa: float,
    rng: np.random.Generator,
) -> DetectionMap:
    """Full scanning loop: steer both ends to each beam, detect, count by MDL.

    During scanning the transmit and receive sides share the beam's steering
    vector; all RF chains are combined for detection, while the per-chain
    tensor feeds the MDL counter on flagged beams.
    """
    from .waveform import Beamformer, steering_upa  # local import to stay cycle-free

    flags = np.zeros((grid.n_h, grid.n_v), dtype=int)
    counts = np.zeros((grid.n_h, grid.n_v), dtype=int)
    l, r, per_chain = bs.num_antennas, bs.r, bs.antennas_per_chain
    for idx, (theta, phi) in enumerate(grid.beam_angles()):
        i, j = divmod(idx, grid.n_v)
        vt = math.sin(theta) * math.cos(phi)
        ps = math.cos(theta)
        steer = steering_upa(vt, ps, bs.p, bs.q)
        analog = np.zeros((l, r), dtype=complex)
        for chain in range(r):
            rows = slice(chain * per_chain, (chain + 1) * per_chain)
            analog[rows, chain] = steer[rows] / math.sqrt(l)
        scale = math.sqrt(bs.tx_power)  # ||f|| = 1 by construction above
        bf = Beamformer(analog=analog * scale, digital=np.eye(r, dtype=complex))
        rx = synthesize_rx_tensor(bs, pairs, (bf, bf), noise_variance, rng)
        combined = np.einsum("rnm->nm", rx.data)
        # combining r chains of combiner-column norm ||f||/sqrt(r) each scales
        # the per-sample noise variance to noise_variance * ||f_RX||^2
        f_rx_norm2 = float(np.linalg.norm(bf.matrix @ np.ones(r)) ** 2)
        if detect_beam(combined, noise_variance * f_rx_norm2, pfa):
            flags[i, j] = 1
            counts[i, j] = estimate_count_mdl(rx)
    return DetectionMap(flags=flags, counts=counts)
