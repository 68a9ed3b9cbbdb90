"""Parameter extraction from recovered factor matrices.

Range comes in closed form from the delay generator's phase, Doppler from a
correlation grid search, and angles from a reduced-dimensional search: a 1-D
sweep over the vertical virtual angle psi of the trace of
Phi(psi) = pinv(Q2(psi)) Q1(psi), which equals its single non-zero eigenvalue
because Q1 is rank one, followed by matching the principal eigenvector to the
horizontal steering curve.  The exhaustive 2-D correlation search is kept as
an independent oracle.  The scaling chain recovers the channel coefficient
from the per-column scale ambiguities of the factors.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateElevation,
    GridExhaustedWarning,
    NullInput,
    SingularScale,
)
from .scene import C0, BsSite
from .tensorops import FactorMatrices
from .waveform import (
    beam_signature,
    delay_phasor,
    doppler_phasor,
    steering_horizontal,
)

__all__ = [
    "SearchGrids",
    "AoaEstimate",
    "TargetEstimate",
    "EstimateSet",
    "GrqContext",
    "default_grids",
    "grids_from_beams",
    "delay_range",
    "doppler_velocity",
    "aoa_grq",
    "aoa_2d_oracle",
    "resolve_scaling_and_alpha",
    "estimate_targets",
    "estimates_to_records",
    "estimates_from_records",
    "WIRE_VERSION",
]

WIRE_VERSION = 1

# relative singular-value cutoff for every pseudo-inverse in this module
PINV_RCOND = 1e-10
# below this |sin(theta)| the azimuth is undefined
SIN_THETA_FLOOR = 1e-6
# scaling factors smaller than this are treated as singular
SCALE_FLOOR = 1e-12


@dataclass(frozen=True)
class SearchGrids:
    """Doppler (Hz) and virtual-angle grids used by the 1-D searches."""

    doppler: np.ndarray
    psi: np.ndarray
    vartheta: np.ndarray

    def __post_init__(self):
        for g in (self.doppler, self.psi, self.vartheta):
            if g.ndim != 1 or g.size < 2:
                raise ValueError("grids must be 1-D with at least two points")


def default_grids(
    max_speed: float,
    wavelength: float,
    doppler_points: int = 601,
    angle_points: int = 512,
) -> SearchGrids:
    """Doppler grid at 1.5x the maximum Doppler, full-range angle grids."""
    f_max = 1.5 * 2.0 * max_speed / wavelength
    return SearchGrids(
        doppler=np.linspace(-f_max, f_max, doppler_points),
        psi=np.linspace(-1.0, 1.0, angle_points),
        vartheta=np.linspace(-1.0, 1.0, angle_points),
    )


def grids_from_beams(
    beam_directions,
    bs: BsSite,
    max_speed: float,
    doppler_points: int = 601,
    angle_points: int = 512,
    beamwidths_pad: float = 2.0,
) -> SearchGrids:
    """Angle grids restricted to the footprint of the alignment beams.

    The pad is ``beamwidths_pad`` null-to-null mainlobe widths (2/q in psi,
    2/p in vartheta) on each side of the flagged directions.
    """
    vts = [d[0] for d in beam_directions]
    pss = [d[1] for d in beam_directions]
    pad_vt = beamwidths_pad * 2.0 / bs.p
    pad_ps = beamwidths_pad * 2.0 / bs.q
    lo_vt = max(-1.0, min(vts) - pad_vt)
    hi_vt = min(1.0, max(vts) + pad_vt)
    lo_ps = max(-1.0, min(pss) - pad_ps)
    hi_ps = min(1.0, max(pss) + pad_ps)
    f_max = 1.5 * 2.0 * max_speed / bs.wavelength
    return SearchGrids(
        doppler=np.linspace(-f_max, f_max, doppler_points),
        psi=np.linspace(lo_ps, hi_ps, angle_points),
        vartheta=np.linspace(lo_vt, hi_vt, angle_points),
    )


def delay_range(generator: complex, scs: float) -> tuple:
    """Delay and range from a unit-modulus generator; unambiguous in [0, 1/scs).

    Ranges beyond c0/(2*scs) alias back into the unambiguous interval.
    """
    ang = math.atan2(generator.imag, generator.real)
    if ang > 0.0:
        ang -= 2.0 * math.pi
    tau = ang / (-2.0 * math.pi * scs)
    return tau, tau * C0 / 2.0


def doppler_velocity(
    o_col: np.ndarray,
    grid_hz: np.ndarray,
    symbol_period: float,
    wavelength: float,
) -> tuple:
    """Correlation-peak Doppler over the grid and the implied radial velocity."""
    n = o_col.shape[0]
    basis = np.exp(2j * math.pi * symbol_period * np.outer(np.arange(n), grid_hz))
    corr = np.abs(o_col.conj() @ basis) ** 2
    f_hat = float(grid_hz[int(np.argmax(corr))])
    return f_hat, f_hat * wavelength / 2.0


@dataclass(frozen=True)
class AoaEstimate:
    psi: float
    vartheta: float
    theta: float
    phi: float
    psi_index: int
    vartheta_index: int
    at_boundary: bool = False


class GrqContext:
    """Per-(combiner, psi-grid) precomputation shared by all targets of a BS.

    Caches A_q(psi)^H F_RX on the grid and the pseudo-inverses of
    Q2(psi) = A_q^H F_RX F_RX^H A_q, which do not depend on the target.
    """

    def __init__(self, f_rx: np.ndarray, p: int, q: int, psi_grid: np.ndarray,
                 rcond: float = PINV_RCOND):
        l = f_rx.shape[0]
        if l != p * q:
            raise ValueError("combiner row count must equal p*q")
        fb = f_rx.reshape(q, p, f_rx.shape[1])
        aq = np.exp(1j * math.pi * np.outer(np.arange(q), psi_grid))  # (q, G)
        self.psi_grid = psi_grid
        self.p = p
        self.q = q
        # A_q(psi)^H F_RX for every grid point: (G, p, r)
        self.proj = np.einsum("qg,qpr->gpr", aq.conj(), fb)
        q2 = np.einsum("gpr,gsr->gps", self.proj, self.proj.conj())
        self.q2_pinv = np.linalg.pinv(q2, rcond=rcond, hermitian=True)

    def trace_curve(self, b_col: np.ndarray) -> np.ndarray:
        """tr(Phi(psi)) = q^H pinv(Q2) q on every grid point (rank-1 fast path)."""
        qvec = self.proj @ b_col  # (G, p)
        return np.real(np.einsum("gp,gps,gs->g", qvec.conj(), self.q2_pinv, qvec))

    def principal_vector(self, b_col: np.ndarray, gi: int) -> np.ndarray:
        """Eigenvector of Phi(psi_grid[gi]) for its non-zero eigenvalue."""
        return self.q2_pinv[gi] @ (self.proj[gi] @ b_col)


def aoa_grq(
    b_col: np.ndarray,
    f_rx: np.ndarray,
    p: int,
    q: int,
    grids: SearchGrids,
    context: GrqContext | None = None,
) -> AoaEstimate:
    """Reduced-dimensional AoA estimate of one target from its beam signature."""
    if not np.any(b_col):
        raise NullInput("beam signature is identically zero")
    ctx = context if context is not None else GrqContext(f_rx, p, q, grids.psi)
    trace = ctx.trace_curve(b_col)
    gi = int(np.argmax(trace))
    boundary = gi in (0, trace.size - 1)

    ap_hat = ctx.principal_vector(b_col, gi)
    lead = ap_hat[0]
    if abs(lead) < 1e-300:
        raise NullInput("principal eigenvector has a vanishing first element")
    ap_hat = ap_hat / lead

    ap_grid = np.exp(1j * math.pi * np.outer(np.arange(p), grids.vartheta))
    dist = np.sum(np.abs(ap_grid - ap_hat[:, None]) ** 2, axis=0)
    vi = int(np.argmin(dist))
    boundary = boundary or vi in (0, dist.size - 1)
    if boundary:
        warnings.warn("AoA search peaked at a grid boundary", GridExhaustedWarning,
                      stacklevel=2)

    psi_hat = float(ctx.psi_grid[gi])
    vartheta_hat = float(grids.vartheta[vi])
    theta, phi = _angles_from_virtual(psi_hat, vartheta_hat)
    return AoaEstimate(psi=psi_hat, vartheta=vartheta_hat, theta=theta, phi=phi,
                       psi_index=gi, vartheta_index=vi, at_boundary=boundary)


def _angles_from_virtual(psi: float, vartheta: float) -> tuple:
    theta = math.acos(min(1.0, max(-1.0, psi)))
    sin_t = math.sin(theta)
    if abs(sin_t) < SIN_THETA_FLOOR:
        raise DegenerateElevation("azimuth undefined near the vertical axis")
    phi = math.acos(min(1.0, max(-1.0, vartheta / sin_t)))
    return theta, phi


def aoa_2d_oracle(
    b_col: np.ndarray,
    f_rx: np.ndarray,
    f_tx: np.ndarray,
    p: int,
    q: int,
    grids: SearchGrids,
) -> AoaEstimate:
    """Exhaustive normalized-correlation search over the full (psi, vartheta) grid.

    Maximizes |b_hat^H b(vartheta, psi)|^2 / ||b(vartheta, psi)||^2; the
    transmit factor a^H f_TX cancels between numerator and denominator, so
    only the combiner side of the signature enters.
    """
    if not np.any(b_col):
        raise NullInput("beam signature is identically zero")
    del f_tx  # common scalar factor; cancels in the normalized objective
    fb = f_rx.reshape(q, p, f_rx.shape[1])
    ap_grid = np.exp(1j * math.pi * np.outer(np.arange(p), grids.vartheta))
    best = (-1.0, 0, 0)
    for gi, psi in enumerate(grids.psi):
        aq = np.exp(1j * math.pi * psi * np.arange(q))
        t1 = np.einsum("q,qpr->pr", aq.conj(), fb)       # A_q^H F_RX  (p, r)
        w = t1.conj().T @ ap_grid                        # F_RX^H a    (r, Gv)
        num = np.abs(b_col.conj() @ w) ** 2
        den = np.sum(np.abs(w) ** 2, axis=0)
        obj = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        vi = int(np.argmax(obj))
        if obj[vi] > best[0]:
            best = (float(obj[vi]), gi, vi)
    _, gi, vi = best
    psi_hat = float(grids.psi[gi])
    vartheta_hat = float(grids.vartheta[vi])
    theta, phi = _angles_from_virtual(psi_hat, vartheta_hat)
    return AoaEstimate(psi=psi_hat, vartheta=vartheta_hat, theta=theta, phi=phi,
                       psi_index=gi, vartheta_index=vi,
                       at_boundary=gi in (0, grids.psi.size - 1)
                       or vi in (0, grids.vartheta.size - 1))


@dataclass(frozen=True)
class TargetEstimate:
    """Per-target estimates of one BS (angles in the BS local frame)."""

    elevation: float
    azimuth: float
    psi: float
    vartheta: float
    delay_s: float
    range_m: float
    doppler_hz: float
    radial_velocity: float
    alpha: complex
    at_boundary: bool = False


@dataclass(frozen=True)
class EstimateSet:
    """All target estimates of one BS plus the scaling diagnostics."""

    targets: tuple
    lambda1: np.ndarray
    lambda2: np.ndarray
    lambda3: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))

    def __len__(self):
        return len(self.targets)

    def __iter__(self):
        return iter(self.targets)


def _vector_pinv_apply(model: np.ndarray, data: np.ndarray) -> complex:
    """pinv(model) @ data for a column vector model: (model^H data) / ||model||^2."""
    denom = float(np.vdot(model, model).real)
    if denom == 0.0:
        raise SingularScale("model vector is identically zero")
    return complex(np.vdot(model, data) / denom)


def resolve_scaling_and_alpha(
    factors: FactorMatrices,
    aoas,
    dopplers,
    delays,
    bs: BsSite,
    f_rx: np.ndarray,
    f_tx: np.ndarray,
) -> tuple:
    """Scaling diagnostics Lambda_1..3 and the channel-coefficient estimates."""
    k = factors.a1.shape[1]
    lam1 = np.zeros(k, dtype=complex)
    lam2 = np.zeros(k, dtype=complex)
    alphas = np.zeros(k, dtype=complex)
    for i in range(k):
        b_model = beam_signature((aoas[i].vartheta, aoas[i].psi), f_rx, f_tx, bs.p, bs.q)
        o_model = doppler_phasor(dopplers[i], bs.n, bs.symbol_period)
        lam1[i] = _vector_pinv_apply(b_model, factors.a1[:, i])
        lam2[i] = _vector_pinv_apply(o_model, factors.a2[:, i])
        if abs(lam1[i]) < SCALE_FLOOR or abs(lam2[i]) < SCALE_FLOOR:
            raise SingularScale(f"scaling factor for target {i} is numerically zero")
        g_model = delay_phasor(delays[i], bs.m, bs.scs)
        lam3_i = 1.0 / (lam1[i] * lam2[i])
        alphas[i] = _vector_pinv_apply(lam3_i * g_model, factors.a3[:, i])
    lam3 = 1.0 / (lam1 * lam2)
    return lam1, lam2, lam3, alphas


def estimate_targets(
    factors: FactorMatrices,
    bs: BsSite,
    f_rx: np.ndarray,
    f_tx: np.ndarray,
    grids: SearchGrids,
) -> EstimateSet:
    """Full per-target parameter extraction for one BS."""
    k = factors.a1.shape[1]
    ctx = GrqContext(f_rx, bs.p, bs.q, grids.psi)
    aoas, dopplers, velocities, delays, ranges = [], [], [], [], []
    for i in range(k):
        tau, dist = delay_range(complex(factors.generators[i]), bs.scs)
        delays.append(tau)
        ranges.append(dist)
        f_hat, v_hat = doppler_velocity(factors.a2[:, i], grids.doppler,
                                        bs.symbol_period, bs.wavelength)
        dopplers.append(f_hat)
        velocities.append(v_hat)
        aoas.append(aoa_grq(factors.a1[:, i], f_rx, bs.p, bs.q, grids, context=ctx))
    lam1, lam2, lam3, alphas = resolve_scaling_and_alpha(
        factors, aoas, dopplers, delays, bs, f_rx, f_tx
    )
    targets = [
        TargetEstimate(
            elevation=aoas[i].theta,
            azimuth=aoas[i].phi,
            psi=aoas[i].psi,
            vartheta=aoas[i].vartheta,
            delay_s=delays[i],
            range_m=ranges[i],
            doppler_hz=dopplers[i],
            radial_velocity=velocities[i],
            alpha=complex(alphas[i]),
            at_boundary=aoas[i].at_boundary,
        )
        for i in range(k)
    ]
    return EstimateSet(targets=targets, lambda1=lam1, lambda2=lam2, lambda3=lam3)


# -- wire format --------------------------------------------------------------

def estimates_to_records(bs_id: int, est: EstimateSet) -> list:
    """Flat JSON-ready records, one per target (the cloud upload format)."""
    return [
        {
            "version": WIRE_VERSION,
            "bs_id": bs_id,
            "target_idx": i,
            "theta": t.elevation,
            "phi": t.azimuth,
            "range": t.range_m,
            "radial_velocity": t.radial_velocity,
            "alpha_re": t.alpha.real,
            "alpha_im": t.alpha.imag,
        }
        for i, t in enumerate(est.targets)
    ]


def estimates_from_records(records) -> dict:
    """Group wire records by bs_id; returns {bs_id: [record, ...]} sorted by index."""
    grouped: dict = {}
    for rec in records:
        if rec.get("version") != WIRE_VERSION:
            raise ValueError(f"unsupported wire version: {rec.get('version')!r}")
        grouped.setdefault(rec["bs_id"], []).append(rec)
    for recs in grouped.values():
        recs.sort(key=lambda r: r["target_idx"])
    return grouped
