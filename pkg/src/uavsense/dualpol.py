"""Dual-polarized extension: fourth-order tensor synthesis and decoupling.

Both polarizations share the precoder, combiner and data, so the received
samples stack into an (RF chain x polarization x subcarrier x symbol) tensor
whose extra mode carries the 2-vector polarization signature eta_k.  The
decomposition reuses the third-order machinery by fusing polarization and
symbol into one combined factor E = A2 kr B (columns o_k kron eta_k), which
is afterwards split per target by a rank-1 SVD.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import Rank1MismatchWarning, ShapeMismatch
from .estimation import (
    EstimateSet,
    GrqContext,
    SearchGrids,
    TargetEstimate,
    _vector_pinv_apply,
    aoa_grq,
    delay_range,
    doppler_velocity,
)
from .scene import BsSite
from .tensorops import FactorMatrices, SmoothingPlan, Unfolding1, decompose, smooth
from .waveform import beam_signature, delay_phasor, doppler_phasor

__all__ = [
    "PolarizationFactors",
    "RxTensor4",
    "sample_polarization",
    "synthesize_dualpol",
    "unfold_dualpol",
    "decompose_dualpol",
    "split_pol_doppler",
    "estimate_targets_dualpol",
    "DualPolEstimate",
]

# above this sigma2/sigma1 the per-target block is flagged as not rank one
RANK1_WARN_RATIO = 0.1


@dataclass(frozen=True)
class PolarizationFactors:
    """Per-target 2x2 polarization gains gamma[rx_pol, tx_pol] (V=0, H=1)."""

    gamma: np.ndarray

    def __post_init__(self):
        if self.gamma.shape[-2:] != (2, 2):
            raise ShapeMismatch("gamma must end in a 2x2 polarization block")

    @property
    def eta(self) -> np.ndarray:
        """Receive-side signatures: eta[k] = [sum_t gamma[V,t], sum_t gamma[H,t]]."""
        return self.gamma.sum(axis=-1)


def sample_polarization(
    k: int,
    rng: np.random.Generator,
    xpd_mean_db: float = 8.0,
    xpd_std_db: float = 4.0,
) -> PolarizationFactors:
    """Draw per-target gains: unit co-polar ratios, log-normal XPD cross terms,
    independent uniform phases."""
    xpd_db = rng.normal(xpd_mean_db, xpd_std_db, size=k)
    inv_xpd = 10.0 ** (-xpd_db / 10.0)
    ratio = np.empty((k, 2, 2))
    ratio[:, 0, 0] = ratio[:, 1, 1] = 1.0
    ratio[:, 0, 1] = ratio[:, 1, 0] = inv_xpd
    phases = rng.uniform(0.0, 2.0 * math.pi, size=(k, 2, 2))
    return PolarizationFactors(gamma=np.sqrt(ratio) * np.exp(1j * phases))


@dataclass(frozen=True)
class RxTensor4:
    """Dual-pol received tensor, modes (RF chain, polarization, subcarrier, symbol)."""

    data: np.ndarray
    noise_variance: float

    def __post_init__(self):
        if self.data.ndim != 4 or self.data.shape[1] != 2:
            raise ShapeMismatch("RxTensor4 must be (r, 2, m, n)")

    @property
    def shape(self):
        return self.data.shape


def synthesize_dualpol(
    bs: BsSite,
    pairs,
    polfactors: PolarizationFactors,
    beamformers,
    noise_variance: float,
    rng: np.random.Generator,
) -> RxTensor4:
    """Noisy fourth-order tensor; per-polarization noise is independent."""
    bf_tx, bf_rx = beamformers
    l = bs.num_antennas
    f_tx = bf_tx.equivalent_vector
    f_rx_mat = bf_rx.matrix
    if f_tx.shape != (l,) or f_rx_mat.shape != (l, bs.r):
        raise ShapeMismatch("beamformer dimensions disagree with the BS array")
    if polfactors.gamma.shape != (len(pairs), 2, 2):
        raise ShapeMismatch("polarization factors must match the target count")

    data = np.zeros((bs.r, 2, bs.m, bs.n), dtype=complex)
    if pairs:
        b_cols = np.stack(
            [beam_signature((pk.vartheta, pk.psi), f_rx_mat, f_tx, bs.p, bs.q) for pk in pairs]
        )
        eta = polfactors.eta
        g_cols = np.stack([pk.alpha * delay_phasor(pk.delay_s, bs.m, bs.scs) for pk in pairs])
        o_cols = np.stack([doppler_phasor(pk.doppler_hz, bs.n, bs.symbol_period) for pk in pairs])
        data = np.einsum("kr,kd,km,kn->rdmn", b_cols, eta, g_cols, o_cols)

    if noise_variance > 0:
        scale = math.sqrt(noise_variance / 2.0)
        noise = scale * (
            rng.standard_normal((l, 2, bs.n, bs.m))
            + 1j * rng.standard_normal((l, 2, bs.n, bs.m))
        )
        data = data + np.einsum("lr,ldnm->rdmn", f_rx_mat.conj(), noise)
    return RxTensor4(data=data, noise_variance=noise_variance)


def unfold_dualpol(rx4: RxTensor4) -> Unfolding1:
    """Mode-1 unfolding with rows ordered (subcarrier, symbol, polarization).

    The (symbol, polarization) pair acts as one combined mode of height 2n,
    so the third-order smoothing and decomposition apply unchanged.
    """
    r, _, m, n = rx4.data.shape
    matrix = rx4.data.transpose(2, 3, 1, 0).reshape(m * 2 * n, r)
    return Unfolding1(matrix=matrix, m=m, n=2 * n, r=r)


def decompose_dualpol(rx4: RxTensor4, k: int, plan: SmoothingPlan) -> FactorMatrices:
    """Recover (beam, combined polarization-Doppler, delay) factors."""
    return decompose(smooth(unfold_dualpol(rx4), plan), k, plan)


def split_pol_doppler(e_col: np.ndarray) -> tuple:
    """Best rank-1 split of one combined column: (eta_hat, o_hat, residual).

    The column is o_k kron eta_k, so the column-major 2 x n reshape makes it a
    rank-1 matrix eta o^T; the dominant singular triplet gives
    eta_hat = s1 u1 and o_hat = conj(v1).  ``residual`` is sigma2/sigma1.
    """
    n2 = e_col.shape[0]
    if n2 % 2:
        raise ShapeMismatch("combined column length must be even")
    block = e_col.reshape(n2 // 2, 2).T  # (2, n), polarization fastest
    u, s, vh = np.linalg.svd(block, full_matrices=False)
    residual = float(s[1] / s[0]) if s[0] > 0 else 0.0
    if residual > RANK1_WARN_RATIO:
        warnings.warn(
            f"polarization block rank-1 residual {residual:.3g}",
            Rank1MismatchWarning,
            stacklevel=2,
        )
    eta_hat = s[0] * u[:, 0]
    # conjugate of the right singular vector v1; numpy returns v1^H rows
    o_hat = vh[0, :]
    return eta_hat, o_hat, residual


@dataclass(frozen=True)
class DualPolEstimate:
    """Per-target dual-pol outputs: parameter estimates plus the resolved
    alpha-weighted polarization signature (2-vector alpha_k * eta_k)."""

    target: TargetEstimate
    pol_signature: np.ndarray
    rank1_residual: float


def estimate_targets_dualpol(
    factors: FactorMatrices,
    bs: BsSite,
    f_rx: np.ndarray,
    f_tx: np.ndarray,
    grids: SearchGrids,
) -> tuple:
    """Parameter extraction for the dual-pol pipeline.

    Delay and AoA proceed exactly as in the single-pol case; Doppler uses the
    o_hat half of the rank-1 split.  Alpha and the polarization vector are
    only jointly identifiable, so the resolved product
    lambda1 * eta_hat o_hat^T equals alpha_k eta_k o(f_d)^T and the reported
    per-target alpha is its V-branch component (alpha_k * eta_k[0]).
    """
    k = factors.a1.shape[1]
    ctx = GrqContext(f_rx, bs.p, bs.q, grids.psi)
    out_targets, out_sig = [], []
    lam1 = np.zeros(k, dtype=complex)
    lam2 = np.zeros(k, dtype=complex)
    for i in range(k):
        tau, dist = delay_range(complex(factors.generators[i]), bs.scs)
        eta_hat, o_hat, residual = split_pol_doppler(factors.a2[:, i])
        f_hat, v_hat = doppler_velocity(o_hat, grids.doppler, bs.symbol_period, bs.wavelength)
        aoa = aoa_grq(factors.a1[:, i], f_rx, bs.p, bs.q, grids, context=ctx)

        b_model = beam_signature((aoa.vartheta, aoa.psi), f_rx, f_tx, bs.p, bs.q)
        o_model = doppler_phasor(f_hat, bs.n, bs.symbol_period)
        lam1[i] = _vector_pinv_apply(b_model, factors.a1[:, i])
        lam2[i] = _vector_pinv_apply(o_model, o_hat)
        # lambda1 absorbs the beam-column scale, so lambda1 * eta o^T is the
        # alpha-weighted ground-truth product
        resolved = lam1[i] * np.outer(eta_hat, o_hat)
        alpha_eta = resolved @ o_model.conj() / float(np.vdot(o_model, o_model).real)

        out_targets.append(
            TargetEstimate(
                elevation=aoa.theta,
                azimuth=aoa.phi,
                psi=aoa.psi,
                vartheta=aoa.vartheta,
                delay_s=tau,
                range_m=dist,
                doppler_hz=f_hat,
                radial_velocity=v_hat,
                alpha=complex(alpha_eta[0]),
                at_boundary=aoa.at_boundary,
            )
        )
        out_sig.append(DualPolEstimate(target=out_targets[-1],
                                       pol_signature=alpha_eta,
                                       rank1_residual=residual))
    est = EstimateSet(targets=out_targets, lambda1=lam1, lambda2=lam2,
                      lambda3=1.0 / (lam1 * lam2))
    return est, out_sig
