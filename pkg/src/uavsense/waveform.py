"""Steering vectors, hybrid beamforming, and received-tensor synthesis.

The received echo of one BS is synthesized directly in its post-matching CP
form: a third-order tensor with modes (RF chain, OFDM symbol, subcarrier),
whose factor columns are the beam-domain signature b_k, the Doppler phasor
o(f_d) and the delay phasor g(tau), the latter scaled by the channel
coefficient alpha_k.  Transmitted data symbols are unit-modulus and removed
by conjugation, so they are never materialized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, TooManyBeams
from .scene import BsSite, PairTruth

__all__ = [
    "Beamformer",
    "RxTensor",
    "steering_horizontal",
    "steering_vertical",
    "steering_upa",
    "doppler_phasor",
    "delay_phasor",
    "beam_signature",
    "channel_matrix",
    "synthesize_rx_tensor",
    "design_alignment_beams",
    "uniform_transmit_beam",
    "noise_variance_per_sample",
]

# antenna spacing in wavelengths; half-wavelength UPA throughout
SPACING_WAVELENGTHS = 0.5


def steering_horizontal(vartheta: float, p: int) -> np.ndarray:
    """Phase ramp across the p horizontal elements for virtual angle vartheta."""
    return np.exp(2j * math.pi * SPACING_WAVELENGTHS * vartheta * np.arange(p))


def steering_vertical(psi: float, q: int) -> np.ndarray:
    """Phase ramp across the q vertical elements for virtual angle psi."""
    return np.exp(2j * math.pi * SPACING_WAVELENGTHS * psi * np.arange(q))


def steering_upa(vartheta: float, psi: float, p: int, q: int) -> np.ndarray:
    """Full UPA steering vector a_q(psi) kron a_p(vartheta), first element 1."""
    return np.kron(steering_vertical(psi, q), steering_horizontal(vartheta, p))


def doppler_phasor(doppler_hz: float, n: int, symbol_period: float) -> np.ndarray:
    """o(f_d): per-symbol Doppler progression, length n."""
    return np.exp(2j * math.pi * symbol_period * doppler_hz * np.arange(n))


def delay_phasor(delay_s: float, m: int, scs: float) -> np.ndarray:
    """g(tau): per-subcarrier delay progression, length m."""
    return np.exp(-2j * math.pi * scs * delay_s * np.arange(m))


@dataclass(frozen=True)
class Beamformer:
    """Partially-connected hybrid beamformer of one BS.

    ``analog`` is l x r block diagonal (each antenna wired to exactly one RF
    chain, non-zeros sharing one modulus), ``digital`` is r x r.
    """

    analog: np.ndarray
    digital: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return self.analog @ self.digital

    @property
    def equivalent_vector(self) -> np.ndarray:
        """F^A F^D e: the single-stream equivalent beamforming vector."""
        return self.matrix @ np.ones(self.digital.shape[1])


@dataclass(frozen=True)
class RxTensor:
    """Received third-order tensor, modes (RF chain, symbol, subcarrier)."""

    data: np.ndarray
    noise_variance: float

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ShapeMismatch("RxTensor data must have 3 modes")

    @property
    def shape(self):
        return self.data.shape


def beam_signature(pair_angles, f_rx: np.ndarray, f_tx: np.ndarray, p: int, q: int) -> np.ndarray:
    """b(vartheta, psi) = F_RX^H a a^H f_TX for one target direction."""
    a = steering_upa(pair_angles[0], pair_angles[1], p, q)
    return f_rx.conj().T @ a * (a.conj() @ f_tx)


def channel_matrix(bs: BsSite, pairs, m_index: int, n_index: int) -> np.ndarray:
    """Frequency-domain channel H_{m,n} over the full antenna array."""
    if not (0 <= m_index < bs.m and 0 <= n_index < bs.n):
        raise ValueError("subcarrier/symbol index out of range")
    l = bs.num_antennas
    h = np.zeros((l, l), dtype=complex)
    for pk in pairs:
        a = steering_upa(pk.vartheta, pk.psi, bs.p, bs.q)
        phase = np.exp(-2j * math.pi * m_index * bs.scs * pk.delay_s) * np.exp(
            2j * math.pi * pk.doppler_hz * n_index * bs.symbol_period
        )
        h += pk.alpha * phase * np.outer(a, a.conj())
    return h


def synthesize_rx_tensor(
    bs: BsSite,
    pairs,
    beamformers,
    noise_variance: float,
    rng: np.random.Generator,
) -> RxTensor:
    """Noisy received tensor of one BS for the given ground-truth pairs.

    ``beamformers`` is the (transmit, receive) Beamformer pair.  The additive
    noise enters at the antennas as i.i.d. circular complex Gaussian samples of
    variance ``noise_variance`` and is then combined by F_RX^H.
    """
    bf_tx, bf_rx = beamformers
    l = bs.num_antennas
    f_tx = bf_tx.equivalent_vector
    f_rx_mat = bf_rx.matrix
    if f_tx.shape != (l,) or f_rx_mat.shape != (l, bs.r):
        raise ShapeMismatch("beamformer dimensions disagree with the BS array")

    data = np.zeros((bs.r, bs.n, bs.m), dtype=complex)
    if pairs:
        b_cols = np.stack(
            [beam_signature((pk.vartheta, pk.psi), f_rx_mat, f_tx, bs.p, bs.q) for pk in pairs]
        )
        o_cols = np.stack([doppler_phasor(pk.doppler_hz, bs.n, bs.symbol_period) for pk in pairs])
        g_cols = np.stack([pk.alpha * delay_phasor(pk.delay_s, bs.m, bs.scs) for pk in pairs])
        data = np.einsum("kr,kn,km->rnm", b_cols, o_cols, g_cols)

    if noise_variance > 0:
        scale = math.sqrt(noise_variance / 2.0)
        noise = scale * (
            rng.standard_normal((l, bs.n, bs.m)) + 1j * rng.standard_normal((l, bs.n, bs.m))
        )
        data = data + np.einsum("lr,lnm->rnm", f_rx_mat.conj(), noise)
    return RxTensor(data=data, noise_variance=noise_variance)


def _chain_groups(num_chains: int, num_groups: int):
    """Split RF chains into num_groups contiguous, near-equal groups."""
    base, extra = divmod(num_chains, num_groups)
    groups, start = [], 0
    for i in range(num_groups):
        size = base + (1 if i < extra else 0)
        groups.append(range(start, start + size))
        start += size
    return groups


def design_alignment_beams(beam_directions, bs: BsSite, rng: np.random.Generator):
    """Alignment-stage (transmit, receive) beamformers for the flagged beams.

    ``beam_directions`` lists the (vartheta, psi) of every flagged beam.  The
    RF chains are split into one near-equal group per beam; each group's
    analog precoder block is filled with that beam's normalized steering
    entries (digital stage = identity).  The combiner's analog blocks are
    drawn uniformly from the scaled unit circle, which keeps its columns
    orthonormal so the combined noise stays white.
    """
    n_beams = len(beam_directions)
    if n_beams == 0:
        raise ValueError("at least one flagged beam is required")
    if n_beams > bs.r:
        raise TooManyBeams(f"{n_beams} beams exceed {bs.r} RF chains")

    l, r, per_chain = bs.num_antennas, bs.r, bs.antennas_per_chain
    analog_tx = np.zeros((l, r), dtype=complex)
    tx_scale = 1.0 / math.sqrt(l)
    for grp, (vt, ps) in zip(_chain_groups(r, n_beams), beam_directions):
        steer = steering_upa(vt, ps, bs.p, bs.q)
        for chain in grp:
            rows = slice(chain * per_chain, (chain + 1) * per_chain)
            analog_tx[rows, chain] = tx_scale * steer[rows]
    bf_tx = Beamformer(analog=analog_tx, digital=np.eye(r, dtype=complex))
    # normalize the equivalent transmit vector to the power budget
    f = bf_tx.equivalent_vector
    bf_tx = Beamformer(
        analog=analog_tx * (math.sqrt(bs.tx_power) / np.linalg.norm(f)),
        digital=np.eye(r, dtype=complex),
    )

    analog_rx = np.zeros((l, r), dtype=complex)
    rx_scale = 1.0 / math.sqrt(per_chain)
    for chain in range(r):
        rows = slice(chain * per_chain, (chain + 1) * per_chain)
        phases = rng.uniform(0.0, 2.0 * math.pi, size=per_chain)
        analog_rx[rows, chain] = rx_scale * np.exp(1j * phases)
    bf_rx = Beamformer(analog=analog_rx, digital=np.eye(r, dtype=complex))
    return bf_tx, bf_rx


def uniform_transmit_beam(bs: BsSite) -> Beamformer:
    """Power-normalized all-ones transmit fill (no steering gain); baseline only."""
    l, r, per_chain = bs.num_antennas, bs.r, bs.antennas_per_chain
    analog = np.zeros((l, r), dtype=complex)
    for chain in range(r):
        analog[chain * per_chain:(chain + 1) * per_chain, chain] = 1.0
    bf = Beamformer(analog=analog, digital=np.eye(r, dtype=complex))
    f = bf.equivalent_vector
    return Beamformer(analog=analog * (math.sqrt(bs.tx_power) / np.linalg.norm(f)),
                      digital=np.eye(r, dtype=complex))


def noise_variance_per_sample(noise_psd_dbm_hz: float, scs: float) -> float:
    """Per-subcarrier complex noise variance from a PSD in dBm/Hz."""
    return 10.0 ** ((noise_psd_dbm_hz - 30.0) / 10.0) * scs
