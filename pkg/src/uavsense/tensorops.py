"""Spatial-smoothing CP decomposition exploiting the Vandermonde delay factor.

Pipeline: mode-1 unfold the (chain x symbol x subcarrier) tensor, stack
overlapping subcarrier blocks into a smoothed matrix, take its truncated SVD,
and turn the shift invariance between two row slices of the left singular
basis into an eigenvalue problem whose eigenvalues are the delay generators.
Eigenvalue/eigenvector order is never sorted: that pairing IS the automatic
association of delay, Doppler and beam signatures per target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DuplicateGenerators, EigSolverFailure, PlanInvalid, RankDeficient
from .waveform import RxTensor

__all__ = [
    "Unfolding1",
    "SmoothingPlan",
    "FactorMatrices",
    "balanced_plan",
    "check_uniqueness",
    "unfold_mode1",
    "refold_mode1",
    "smooth",
    "decompose",
    "khatri_rao",
]

# relative singular-value floor below which the subspace is rank deficient
RANK_TOL = 1e-12
# two generators closer than this violate the distinct-generator premise
GENERATOR_TOL = 1e-6


def khatri_rao(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product: column k is a_k kron b_k."""
    if a.shape[1] != b.shape[1]:
        raise ValueError("khatri_rao operands need equal column counts")
    return np.einsum("ik,jk->ijk", a, b).reshape(a.shape[0] * b.shape[0], a.shape[1])


@dataclass(frozen=True)
class Unfolding1:
    """Transposed mode-1 unfolding: row m*n_symbols + n holds tensor[:, n, m]."""

    matrix: np.ndarray
    m: int  # subcarriers
    n: int  # symbols
    r: int  # RF chains


@dataclass(frozen=True)
class SmoothingPlan:
    """Subcarrier split l1 + l2 = m + 1 used for spatial smoothing."""

    l1: int
    l2: int

    def __post_init__(self):
        if self.l1 < 2 or self.l2 < 1:
            raise PlanInvalid("smoothing requires l1 >= 2 and l2 >= 1")


def balanced_plan(m: int) -> SmoothingPlan:
    """Default split l1 = ceil((m+1)/2), maximizing both smoothed dimensions."""
    l1 = (m + 2) // 2
    return SmoothingPlan(l1=l1, l2=m + 1 - l1)


def check_uniqueness(plan: SmoothingPlan, k: int, n: int, r: int) -> bool:
    """Generic uniqueness condition min((l1-1)n, l2*r) >= k."""
    return min((plan.l1 - 1) * n, plan.l2 * r) >= k


def unfold_mode1(rx: RxTensor) -> Unfolding1:
    r, n, m = rx.data.shape
    matrix = rx.data.transpose(2, 1, 0).reshape(m * n, r)
    return Unfolding1(matrix=matrix, m=m, n=n, r=r)


def refold_mode1(unf: Unfolding1) -> np.ndarray:
    return unf.matrix.reshape(unf.m, unf.n, unf.r).transpose(2, 1, 0)


def smooth(unf: Unfolding1, plan: SmoothingPlan) -> np.ndarray:
    """Stack the l2 overlapping subcarrier row blocks side by side.

    Implemented as a row gather (never forming the selection matrices):
    block l spans unfolding rows [l*n, (l + l1)*n).
    """
    if plan.l1 + plan.l2 != unf.m + 1:
        raise PlanInvalid(f"l1 + l2 must equal m + 1 = {unf.m + 1}")
    n = unf.n
    blocks = [unf.matrix[l * n:(l + plan.l1) * n, :] for l in range(plan.l2)]
    return np.hstack(blocks)


def _truncated_svd(ys: np.ndarray, k: int) -> tuple:
    """Leading-k singular triplets of ``ys``.

    Large well-conditioned matrices go through an eigendecomposition of the
    smaller Gram matrix, which only resolves relative singular values down to
    about sqrt(eps); anywhere near the rank-deficiency floor the exact LAPACK
    SVD decides instead.
    """
    rows, cols = ys.shape
    if min(rows, cols) <= max(4 * k, 32):
        u, s, vh = np.linalg.svd(ys, full_matrices=False)
        return u[:, :k], s[:k], vh[:k, :]
    if rows <= cols:
        gram = ys @ ys.conj().T
        eigval, eigvec = scipy.linalg.eigh(gram, subset_by_index=[rows - k, rows - 1])
        eigval, eigvec = eigval[::-1], eigvec[:, ::-1]
        if eigval[0] <= 0 or eigval[k - 1] / eigval[0] < 1e-13:
            u, s, vh = np.linalg.svd(ys, full_matrices=False)
            return u[:, :k], s[:k], vh[:k, :]
        s = np.sqrt(eigval)
        u = eigvec
        vh = (u.conj().T @ ys) / s[:, None]
        return u, s, vh
    gram = ys.conj().T @ ys
    eigval, eigvec = scipy.linalg.eigh(gram, subset_by_index=[cols - k, cols - 1])
    eigval, eigvec = eigval[::-1], eigvec[:, ::-1]
    if eigval[0] <= 0 or eigval[k - 1] / eigval[0] < 1e-13:
        u, s, vh = np.linalg.svd(ys, full_matrices=False)
        return u[:, :k], s[:k], vh[:k, :]
    s = np.sqrt(eigval)
    v = eigvec
    u = (ys @ v) / s[None, :]
    return u, s, v.conj().T


@dataclass(frozen=True)
class FactorMatrices:
    """Recovered CP factors plus the eigenvector bookkeeping.

    a1: r x k beam signatures; a2: n x k Doppler phasors; a3: m x k
    unit-modulus Vandermonde delay columns.  Column k of every matrix refers
    to the same target.  The product of the hidden column scales of a1 and a2
    equals the channel coefficient alpha_k (a3 is scale-normalized).
    """

    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    generators: np.ndarray
    eigvec: np.ndarray
    eigvec_invt: np.ndarray


def decompose(ys: np.ndarray, k: int, plan: SmoothingPlan) -> FactorMatrices:
    """Recover the factor matrices from the smoothed matrix ``ys``.

    Steps: truncated SVD; shift-invariance EVD of pinv(U1) @ U2 giving the
    delay generators and the mixing matrix; Vandermonde reconstruction of the
    delay factor; projection of U @ m_k and conj(V) @ Sigma @ p_k onto the
    recovered delay columns to isolate the Doppler and beam factors.
    """
    l1n, l2r = ys.shape
    if l1n % plan.l1 or l2r % plan.l2:
        raise PlanInvalid("smoothed matrix shape inconsistent with the plan")
    n = l1n // plan.l1
    r = l2r // plan.l2
    m = plan.l1 + plan.l2 - 1
    if not check_uniqueness(plan, k, n, r):
        raise PlanInvalid(f"uniqueness condition fails for k={k} with plan {plan}")

    u, s, vh = _truncated_svd(ys, k)
    if s[0] == 0.0 or s[k - 1] / s[0] < RANK_TOL:
        raise RankDeficient(f"singular value {k} is below the rank floor")

    u1 = u[: (plan.l1 - 1) * n, :]
    u2 = u[n:, :]
    xi = np.linalg.pinv(u1) @ u2
    try:
        eigvals, eigvec = np.linalg.eig(xi)
        eigvec_invt = np.linalg.inv(eigvec).T
    except np.linalg.LinAlgError as exc:
        raise EigSolverFailure(str(exc)) from exc

    generators = eigvals / np.abs(eigvals)
    if k > 1:
        diff = np.abs(generators[:, None] - generators[None, :])
        diff[np.diag_indices(k)] = np.inf
        if diff.min() < GENERATOR_TOL:
            raise DuplicateGenerators("two delay generators coincide")

    a3 = generators[None, :] ** np.arange(m)[:, None]
    g1 = a3[: plan.l1, :]
    g2 = a3[: plan.l2, :]

    um = (u @ eigvec).reshape(plan.l1, n, k)
    a2 = np.einsum("lk,lnk->nk", g1.conj() / np.sum(np.abs(g1) ** 2, axis=0), um)

    vsp = ((vh.T * s) @ eigvec_invt).reshape(plan.l2, r, k)
    a1 = np.einsum("lk,lrk->rk", g2.conj() / np.sum(np.abs(g2) ** 2, axis=0), vsp)

    return FactorMatrices(a1=a1, a2=a2, a3=a3, generators=generators,
                          eigvec=eigvec, eigvec_invt=eigvec_invt)
