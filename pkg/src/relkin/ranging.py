"""Polynomial range-coefficient estimation from timestamp exchanges.

The measured delay of a pair is modeled as a degree-(L-1) polynomial in the
transmit marker, so K messages give one Vandermonde block per pair and the
network stacks into one block design.  Weighted least squares on that system
recovers the scaled coefficients; a diagonal rescaling converts them to the
physical range derivatives (meters, m/s, m/s^2, ...):

    theta_ell = c * ell! * theta_scaled_ell

With independent pairwise links the covariance is block diagonal and the
global solve decomposes into per-pair solves; both paths are implemented and
must agree to solver precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import RankDeficiencyError
from .kinematics import RangeMatrices, canonical_pairs
from .twr import NoiseModel, TimestampExchangeSet, effective_noise_covariance

__all__ = [
    "RangeCoefficients",
    "DesignSystem",
    "RangeCrb",
    "scale_factors",
    "rescale",
    "unscale",
    "build_design",
    "wls_solve",
    "pairwise_solve",
    "crb_theta",
    "order_select",
]


def scale_factors(L: int, c: float) -> np.ndarray:
    """Diagonal factors f mapping scaled to physical coefficients: f_ell = c * ell!."""
    return c * np.array([math.factorial(ell) for ell in range(L)], dtype=float)


def rescale(theta_scaled: np.ndarray, c: float) -> np.ndarray:
    """Physical coefficients from scaled ones; last axis indexes the order."""
    theta_scaled = np.asarray(theta_scaled, float)
    return theta_scaled * scale_factors(theta_scaled.shape[-1], c)


def unscale(theta: np.ndarray, c: float) -> np.ndarray:
    """Inverse of :func:`rescale` (the map is an invertible diagonal)."""
    theta = np.asarray(theta, float)
    return theta / scale_factors(theta.shape[-1], c)


@dataclass
class RangeCoefficients:
    """Estimated range polynomial coefficients for every pair.

    Attributes:
        scaled: (Nbar, L) scaled coefficients (seconds-domain polynomial).
        n_nodes: number of nodes (pairs follow canonical order).
        c: propagation speed used for rescaling.
    """

    scaled: np.ndarray
    n_nodes: int
    c: float

    def __post_init__(self):
        self.scaled = np.atleast_2d(np.asarray(self.scaled, float))
        nbar = len(canonical_pairs(self.n_nodes))
        if self.scaled.shape[0] != nbar:
            raise ValueError(f"expected {nbar} pair rows, got {self.scaled.shape[0]}")

    @property
    def L(self) -> int:
        return self.scaled.shape[1]

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return canonical_pairs(self.n_nodes)

    @property
    def physical(self) -> np.ndarray:
        """(Nbar, L) physical coefficients: r (m), rdot (m/s), rddot (m/s^2), ..."""
        return rescale(self.scaled, self.c)

    def stacked_scaled(self) -> np.ndarray:
        """Global coefficient-major stacking [r_all_pairs, rdot_all_pairs, ...]."""
        return self.scaled.T.ravel()

    def to_range_matrices(self) -> RangeMatrices:
        """Symmetric N x N range matrices from the first three coefficient orders.

        Orders beyond L are filled with zeros (an L=1 fit yields a static
        range model).
        """
        phys = self.physical
        cols = [phys[:, ell] if ell < self.L else np.zeros(phys.shape[0]) for ell in range(3)]
        return RangeMatrices.from_pair_vectors(self.n_nodes, *cols)


@dataclass
class DesignSystem:
    """Stacked measurement system for the whole network.

    Attributes:
        markers: (Nbar, K) regressor markers per pair (lower-indexed node's).
        tau: (Nbar, K) measured delays.
        L: number of polynomial coefficients per pair.
        n_nodes: node count.
        c: propagation speed.
        pair_variances: (Nbar,) delay variances (seconds^2), or None for
            unit weights.  Block-diagonal covariance bdiag(var_p I_K) is the
            only structure supported.
    """

    markers: np.ndarray
    tau: np.ndarray
    L: int
    n_nodes: int
    c: float
    pair_variances: Optional[np.ndarray] = None

    def __post_init__(self):
        self.markers = np.atleast_2d(np.asarray(self.markers, float))
        self.tau = np.atleast_2d(np.asarray(self.tau, float))
        if self.markers.shape != self.tau.shape:
            raise ValueError("markers and tau must share one shape")
        nbar = len(canonical_pairs(self.n_nodes))
        if self.markers.shape[0] != nbar:
            raise ValueError(f"expected {nbar} pairs, got {self.markers.shape[0]}")
        if self.L < 1:
            raise ValueError("polynomial order count L must be >= 1")
        if self.pair_variances is not None:
            self.pair_variances = np.asarray(self.pair_variances, float)
            if self.pair_variances.shape != (nbar,):
                raise ValueError("pair_variances must have one entry per pair")
            if np.any(self.pair_variances <= 0):
                raise ValueError("pair variances must be positive")
        for p, (i, j) in enumerate(canonical_pairs(self.n_nodes)):
            if np.unique(self.markers[p]).size < self.L:
                raise RankDeficiencyError(
                    f"pair ({i},{j}) has fewer than L={self.L} distinct markers"
                )

    @property
    def K(self) -> int:
        return self.markers.shape[1]

    @property
    def n_pairs(self) -> int:
        return self.markers.shape[0]

    def pair_block(self, p: int) -> np.ndarray:
        """K x L Vandermonde block [1, t, t^2, ...] of pair p."""
        return np.vander(self.markers[p], self.L, increasing=True)

    def global_matrix(self) -> np.ndarray:
        """Dense (Nbar K) x (Nbar L) design; columns grouped by coefficient order."""
        nbar, K, L = self.n_pairs, self.K, self.L
        A = np.zeros((nbar * K, nbar * L))
        for p in range(nbar):
            block = self.pair_block(p)
            rows = slice(p * K, (p + 1) * K)
            for ell in range(L):
                A[rows, ell * nbar + p] = block[:, ell]
        return A

    def stacked_tau(self) -> np.ndarray:
        return self.tau.ravel()

    def row_weights(self) -> np.ndarray:
        """Whitening weights 1/sigma per stacked row (ones when unweighted)."""
        if self.pair_variances is None:
            return np.ones(self.n_pairs * self.K)
        return np.repeat(1.0 / np.sqrt(self.pair_variances), self.K)


def build_design(exchanges: TimestampExchangeSet, L: int,
                 noise: Optional[NoiseModel] = None,
                 pair_variances=None) -> DesignSystem:
    """Assemble the stacked design from an exchange set.

    The regressor markers are the lower-indexed node's recorded stamps, and
    the measurements are the signed marker differences.  Pass either a
    NoiseModel (converted to per-pair delay variances) or explicit
    pair_variances; omitting both solves unweighted.
    """
    if noise is not None and pair_variances is not None:
        raise ValueError("pass a NoiseModel or pair_variances, not both")
    if noise is not None:
        cov = effective_noise_covariance(noise, exchanges.n_nodes, exchanges.K, exchanges.c)
        pair_variances = cov.pair_variances
        if np.all(pair_variances == 0):
            pair_variances = None  # noiseless: unit weights
        elif np.any(pair_variances == 0):
            raise ValueError("some pairs have zero delay variance; WLS weights undefined")
    return DesignSystem(
        markers=exchanges.t_i,
        tau=exchanges.tau(),
        L=L,
        n_nodes=exchanges.n_nodes,
        c=exchanges.c,
        pair_variances=pair_variances,
    )


def _rank_deficient_pairs(sys: DesignSystem) -> list[tuple[int, int]]:
    bad = []
    for p, pair in enumerate(canonical_pairs(sys.n_nodes)):
        if np.linalg.matrix_rank(sys.pair_block(p)) < sys.L:
            bad.append(pair)
    return bad


def wls_solve(sys: DesignSystem) -> RangeCoefficients:
    """Weighted least squares over the stacked global system.

    Solves the whitened system with an orthogonal decomposition (never the
    explicit normal equations); with a full-rank design and polynomial-
    consistent noiseless measurements the recovery is exact to solver
    precision.  The solution is invariant to scaling all variances by a
    positive constant.

    Raises:
        RankDeficiencyError: naming the offending pair(s) when the design
            loses column rank.
    """
    A = sys.global_matrix() * sys.row_weights()[:, None]
    b = sys.stacked_tau() * sys.row_weights()
    theta, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < sys.n_pairs * sys.L:
        raise RankDeficiencyError(f"rank-deficient design; offending pairs {_rank_deficient_pairs(sys)}")
    scaled = theta.reshape(sys.L, sys.n_pairs).T
    return RangeCoefficients(scaled=scaled, n_nodes=sys.n_nodes, c=sys.c)


def pairwise_solve(sys: DesignSystem) -> RangeCoefficients:
    """Distributed estimate: solve each pair's K x L system independently.

    With block-diagonal covariance this equals the global WLS solution
    exactly, so stacking the per-pair solutions reproduces
    :func:`wls_solve` to solver tolerance.
    """
    scaled = np.empty((sys.n_pairs, sys.L))
    for p, pair in enumerate(canonical_pairs(sys.n_nodes)):
        A = sys.pair_block(p)
        theta, _, rank, _ = np.linalg.lstsq(A, sys.tau[p], rcond=None)
        if rank < sys.L:
            raise RankDeficiencyError(f"rank-deficient design for pair {pair}")
        scaled[p] = theta
    return RangeCoefficients(scaled=scaled, n_nodes=sys.n_nodes, c=sys.c)


@dataclass
class RangeCrb:
    """Lower bound on the covariance of unbiased range-coefficient estimates.

    `cov` is the (Nbar L) x (Nbar L) bound on the physical coefficients in
    coefficient-major order; `block(ell)` extracts the Nbar x Nbar diagonal
    block of coefficient order ell.  The bound depends on the markers and
    the noise covariance only, so it is unaffected by direction flags.
    """

    cov: np.ndarray
    n_nodes: int
    L: int

    def block(self, ell: int) -> np.ndarray:
        nbar = len(canonical_pairs(self.n_nodes))
        sl = slice(ell * nbar, (ell + 1) * nbar)
        return self.cov[sl, sl]

    def rcrb(self, ell: int) -> float:
        """Root bound on the vector RMSE of coefficient order ell."""
        return float(np.sqrt(np.trace(self.block(ell))))

    def per_pair_rcrb(self, ell: int) -> np.ndarray:
        return np.sqrt(np.diag(self.block(ell)))


def crb_theta(sys: DesignSystem) -> RangeCrb:
    """Cramer-Rao bound on the physical range coefficients.

    Computed from an orthogonal decomposition of the whitened design; the
    scaled-domain bound is conjugated by the diagonal rescaling map.

    Raises:
        ValueError: if the system declares no noise covariance.
        RankDeficiencyError: if the whitened design is column rank deficient.
    """
    if sys.pair_variances is None:
        raise ValueError("crb_theta requires pair_variances on the design system")
    A = sys.global_matrix() * sys.row_weights()[:, None]
    _, rtri = np.linalg.qr(A)
    diag = np.abs(np.diag(rtri))
    if np.any(diag < 1e-13 * diag.max()):
        raise RankDeficiencyError(
            f"rank-deficient design; offending pairs {_rank_deficient_pairs(sys)}"
        )
    rinv = solve_triangular(rtri, np.eye(rtri.shape[0]))
    minv = rinv @ rinv.T
    f = np.repeat(scale_factors(sys.L, sys.c), sys.n_pairs)
    return RangeCrb(cov=minv * np.outer(f, f), n_nodes=sys.n_nodes, L=sys.L)


def order_select(exchanges: TimestampExchangeSet, L_max: int,
                 noise: Optional[NoiseModel] = None,
                 rel_improvement: float = 0.01) -> tuple[int, RangeCoefficients]:
    """Order-recursive fit: grow L until the residual stops improving.

    Fits L = 1..L_max and selects the smallest L whose residual sum of
    squares either reaches solver noise or improves by less than
    `rel_improvement` when one more order is added.  The default pipeline
    bypasses this selection with a fixed order.
    """
    if L_max < 1:
        raise ValueError("L_max must be >= 1")
    sys_max = build_design(exchanges, L_max, noise=noise)
    A_max = sys_max.global_matrix() * sys_max.row_weights()[:, None]
    b = sys_max.stacked_tau() * sys_max.row_weights()
    nbar = sys_max.n_pairs
    floor = (1e-12 * max(np.linalg.norm(b), 1e-300)) ** 2
    rss = []
    solutions = []
    for L in range(1, L_max + 1):
        # columns are grouped by coefficient order, so the order-L design is
        # a prefix of the widest one
        A = A_max[:, : nbar * L]
        theta, _, _, _ = np.linalg.lstsq(A, b, rcond=None)
        rss.append(float(np.sum((A @ theta - b) ** 2)))
        solutions.append(RangeCoefficients(scaled=theta.reshape(L, nbar).T,
                                           n_nodes=sys_max.n_nodes, c=sys_max.c))
    chosen = L_max
    for idx in range(L_max):
        if rss[idx] <= floor:
            chosen = idx + 1
            break
        if idx + 1 < L_max and (rss[idx] - rss[idx + 1]) < rel_improvement * rss[idx]:
            chosen = idx + 1
            break
    return chosen, solutions[chosen - 1]
