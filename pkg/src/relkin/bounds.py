"""Fisher information and Cramer-Rao bounds for relative positions and velocities.

Both information matrices are built from pair-difference Jacobians against
the distance-domain measurements: ranges for positions, and the squared
velocity differences (r rddot + rdot^2) for velocities.  Relative geometry
leaves translations and a global rotation unidentifiable, so for P = 2 both
matrices are structurally rank deficient by exactly 3 and the bound is the
trace of the rank-truncated pseudo-inverse.

The measurement vector follows the convention that lists each pair in both
orderings (length 2 Nbar with block covariance bdiag(S, S)), which counts
every symmetric measurement twice; pass duplicate_pairs=False for the
Nbar-measurement variant (exactly half the information).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from .exceptions import (
    DegenerateGeometryError,
    DegenerateVelocityWarning,
    RegularizedInverseWarning,
)
from .kinematics import RangeMatrices, canonical_pairs

__all__ = [
    "FisherInfo",
    "RangeNoiseCovariances",
    "fim_position",
    "fim_velocity",
    "crb_trace",
]


@dataclass
class FisherInfo:
    """Fisher information matrix with its structural rank deficiency.

    For a generic P-dimensional relative configuration the null space
    holds the P translations plus the P(P-1)/2 infinitesimal rotations.
    """

    matrix: np.ndarray
    structural_deficiency: int

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


@dataclass
class RangeNoiseCovariances:
    """Covariance blocks of the estimated range coefficients (pair-ordered)."""

    Sigma_r: np.ndarray
    Sigma_rdot: np.ndarray
    Sigma_rddot: np.ndarray

    @classmethod
    def from_theta_crb(cls, crb) -> "RangeNoiseCovariances":
        """Extract the first three diagonal blocks of a range-coefficient bound."""
        if crb.L < 3:
            raise ValueError("need coefficient orders r, rdot, rddot (L >= 3)")
        return cls(Sigma_r=crb.block(0), Sigma_rdot=crb.block(1), Sigma_rddot=crb.block(2))


def _structural_deficiency(P: int) -> int:
    return P + P * (P - 1) // 2


def _pair_difference_jacobian(Z: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Nbar x (N P) Jacobian with row p holding +s_p g_p in node-i's block and
    -s_p g_p in node-j's, where g_p = z_i - z_j."""
    P, n = Z.shape
    pairs = canonical_pairs(n)
    J = np.zeros((len(pairs), n * P))
    for p, (i, j) in enumerate(pairs):
        g = scale[p] * (Z[:, i] - Z[:, j])
        J[p, i * P:(i + 1) * P] = g
        J[p, j * P:(j + 1) * P] = -g
    return J


def _assemble_fim(J_half: np.ndarray, Sigma_half: np.ndarray,
                  duplicate_pairs: bool, ridge: float | None = None) -> np.ndarray:
    if duplicate_pairs:
        J = np.vstack([J_half, J_half])
        Sigma = block_diag(Sigma_half, Sigma_half)
    else:
        J, Sigma = J_half, Sigma_half
    try:
        sol = np.linalg.solve(Sigma, J)
    except np.linalg.LinAlgError:
        if ridge is None:
            raise
        eps = ridge * max(np.trace(Sigma) / Sigma.shape[0], 1.0)
        warnings.warn(
            f"singular measurement covariance; inverting with ridge {eps:.3e}",
            RegularizedInverseWarning,
            stacklevel=3,
        )
        sol = np.linalg.solve(Sigma + eps * np.eye(Sigma.shape[0]), J)
    F = J.T @ sol
    return 0.5 * (F + F.T)


def fim_position(Xrel: np.ndarray, Sigma_r: np.ndarray,
                 duplicate_pairs: bool = True) -> FisherInfo:
    """Fisher information of the stacked relative positions vec(Xrel).

    The Jacobian row of pair (i, j) is the unit direction
    (x_i - x_j)/d_ij placed in node i's block and negated in node j's.
    Translating the whole configuration leaves the matrix unchanged.

    Raises:
        DegenerateGeometryError: if any two nodes coincide.
    """
    Xrel = np.asarray(Xrel, float)
    _, n = Xrel.shape
    d = np.array([np.linalg.norm(Xrel[:, i] - Xrel[:, j]) for i, j in canonical_pairs(n)])
    if np.any(d == 0.0):
        p = int(np.argmax(d == 0.0))
        raise DegenerateGeometryError(f"nodes {canonical_pairs(n)[p]} coincide")
    J_half = _pair_difference_jacobian(Xrel, 1.0 / d)
    F = _assemble_fim(J_half, np.asarray(Sigma_r, float), duplicate_pairs)
    return FisherInfo(matrix=F, structural_deficiency=_structural_deficiency(Xrel.shape[0]))


def fim_velocity(Yrel: np.ndarray, rm: RangeMatrices, covs: RangeNoiseCovariances,
                 rddot_cross_term: bool = False, duplicate_pairs: bool = True,
                 ridge: float = 1e-12) -> FisherInfo:
    """Fisher information of the stacked relative velocities vec(Yrel).

    The measurement for pair (i, j) is the squared velocity difference
    r rddot + rdot^2, whose Jacobian row is 2 (y_i - y_j) with pair signs.
    Its noise, to first order in the coefficient errors, is
    r q_rddot + rddot q_r + 2 rdot q_rdot, giving the per-block covariance

        S = Dr Sigma_rddot Dr + Drddot Sigma_r Drddot + 4 Drdot M Drdot

    with D* diagonal in the pair coefficient values and M = Sigma_rdot.
    `rddot_cross_term` swaps M for Sigma_rddot, an alternative form of the
    cross term that is inconsistent with the expansion above (kept for
    comparison).

    A singular covariance is ridge-regularized with a warning (relative
    ridge `ridge`).  When all velocity differences vanish the measurements
    carry no information and a DegenerateVelocityWarning is issued.
    """
    Yrel = np.asarray(Yrel, float)
    r, rdot, rddot = rm.pair_vectors()
    dr, drdot, drddot = np.diag(r), np.diag(rdot), np.diag(rddot)
    mid = covs.Sigma_rddot if rddot_cross_term else covs.Sigma_rdot
    Sigma_half = dr @ covs.Sigma_rddot @ dr + drddot @ covs.Sigma_r @ drddot \
        + 4.0 * drdot @ mid @ drdot
    J_half = _pair_difference_jacobian(Yrel, 2.0 * np.ones(len(r)))
    if not J_half.any():
        warnings.warn(
            "all relative velocities are equal; velocity information is degenerate",
            DegenerateVelocityWarning,
            stacklevel=2,
        )
    cond = np.linalg.cond(Sigma_half)
    if not np.isfinite(cond) or cond > 1e14:
        eps = ridge * max(np.trace(Sigma_half) / Sigma_half.shape[0], 1.0)
        warnings.warn(
            f"near-singular velocity noise covariance; adding ridge {eps:.3e}",
            RegularizedInverseWarning,
            stacklevel=2,
        )
        Sigma_half = Sigma_half + eps * np.eye(Sigma_half.shape[0])
    F = _assemble_fim(J_half, Sigma_half, duplicate_pairs, ridge=ridge)
    return FisherInfo(matrix=F, structural_deficiency=_structural_deficiency(Yrel.shape[0]))


def crb_trace(fi, rel_threshold: float = 1e-10) -> float:
    """Trace of the rank-truncated pseudo-inverse of an information matrix.

    Eigenvalues below rel_threshold * lambda_max are treated as the
    structural zeros of the relative-geometry null space and excluded.
    Accepts a FisherInfo or a bare symmetric matrix.
    """
    F = fi.matrix if isinstance(fi, FisherInfo) else np.asarray(fi, float)
    lam = np.linalg.eigvalsh(F)
    lam_max = float(lam[-1])
    if lam_max <= 0.0:
        return 0.0
    kept = lam[lam > rel_threshold * lam_max]
    return float(np.sum(1.0 / kept))
