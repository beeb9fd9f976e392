"""Ground-truth geometry for a network of nodes in linear motion.

A :class:`TrajectorySet` holds initial positions and constant velocities in
P-dimensional space; node positions evolve as ``X + t * Y`` with the
reference instant fixed at t0 = 0.  Even under such linear motion every
pairwise distance is a non-linear function of time, but its derivatives at
t0 have closed forms:

    r      = ||x_i - x_j||
    rdot   = (x_i - x_j)^T (y_i - y_j) / r
    rddot  = (||y_i - y_j||^2 - rdot^2) / r
    rdddot = -3 rdot rddot / r

These exact values, and the N x N matrices assembling them over all node
pairs, serve as the reference oracles for the ranging estimators and the
relative position/velocity solvers built on top of them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .exceptions import DegenerateGeometryError

__all__ = [
    "TrajectorySet",
    "RangeDerivatives",
    "RangeMatrices",
    "canonical_pairs",
    "centering_matrix",
    "range_derivatives",
    "range_matrices",
    "edm_at_time",
    "taylor_range",
    "third_derivative_gram_check",
    "load_trajectory",
    "builtin_trajectory",
    "BUILTIN_FIXTURES",
]


def canonical_pairs(n: int) -> list[tuple[int, int]]:
    """Unique node pairs (i, j) with i < j, in the stacking order used
    everywhere in this package: (0,1), (0,2), ..., (0,n-1), (1,2), ..."""
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def centering_matrix(n: int) -> np.ndarray:
    """The projector I - (1/n) 11^T that removes the column mean."""
    return np.eye(n) - np.full((n, n), 1.0 / n)


@dataclass
class TrajectorySet:
    """Initial positions and constant velocities of N nodes in P dimensions.

    Attributes:
        X: P x N positions at t0 = 0 (meters).
        Y: P x N velocities (meters/second).

    Coincident nodes are rejected at construction: every range derivative
    is undefined at zero separation, so the degenerate geometry is caught
    here rather than surfacing later as NaNs.
    """

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if self.X.shape != self.Y.shape:
            raise ValueError(
                f"positions {self.X.shape} and velocities {self.Y.shape} differ in shape"
            )
        p, n = self.X.shape
        if n < p:
            raise ValueError(f"need at least as many nodes as dimensions, got N={n} < P={p}")
        diff = self.X[:, :, None] - self.X[:, None, :]
        dist = np.sqrt((diff**2).sum(axis=0))
        for i, j in canonical_pairs(n):
            if dist[i, j] == 0.0:
                raise DegenerateGeometryError(f"nodes {i} and {j} coincide at t0")

    @property
    def P(self) -> int:
        return self.X.shape[0]

    @property
    def N(self) -> int:
        return self.X.shape[1]

    def position_at(self, t: float) -> np.ndarray:
        """Node positions at time t under linear motion: X + t Y."""
        return self.X + t * self.Y

    def to_dict(self) -> dict:
        return {"P": self.P, "N": self.N, "X": self.X.tolist(), "Y": self.Y.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "TrajectorySet":
        traj = cls(X=np.asarray(data["X"], float), Y=np.asarray(data["Y"], float))
        if "P" in data and int(data["P"]) != traj.P:
            raise ValueError(f"declared P={data['P']} does not match X rows {traj.P}")
        if "N" in data and int(data["N"]) != traj.N:
            raise ValueError(f"declared N={data['N']} does not match X columns {traj.N}")
        return traj

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "TrajectorySet":
        return cls.from_dict(json.loads(Path(path).read_text()))


# Built-in 5-node planar fixture used by the demo experiments: arbitrary
# positions of order a kilometer with velocities of a few meters/second.
BUILTIN_FIXTURES = {
    "cluster5": {
        "X": [[-382.0, 735.0, 959.0, 630.0, 800.0], [9.0, 7.0, 727.0, 366.0, -858.0]],
        "Y": [[-6.0, 8.0, -1.0, -10.0, 3.0], [8.0, -9.0, -7.0, -2.0, -8.0]],
    }
}


def builtin_trajectory(name: str) -> TrajectorySet:
    """One of the named built-in fixtures (see BUILTIN_FIXTURES)."""
    try:
        entry = BUILTIN_FIXTURES[name]
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; built-ins: {sorted(BUILTIN_FIXTURES)}")
    return TrajectorySet(X=np.asarray(entry["X"]), Y=np.asarray(entry["Y"]))


def load_trajectory(name_or_path) -> TrajectorySet:
    """Resolve a built-in fixture name, or load a JSON fixture file."""
    if isinstance(name_or_path, str) and name_or_path in BUILTIN_FIXTURES:
        return builtin_trajectory(name_or_path)
    return TrajectorySet.load(name_or_path)


class RangeDerivatives(NamedTuple):
    """Distance between one node pair and its first three time derivatives at t0."""

    r: float
    rdot: float
    rddot: float
    rdddot: float


def range_derivatives(x_i, x_j, y_i, y_j) -> RangeDerivatives:
    """Exact range derivatives at t0 for one pair of nodes in linear motion.

    Args:
        x_i, x_j: position vectors at t0 (meters).
        y_i, y_j: constant velocity vectors (m/s).

    Returns:
        RangeDerivatives(r, rdot, rddot, rdddot).

    Raises:
        DegenerateGeometryError: if the positions coincide (r = 0), where
            the derivatives are undefined.
    """
    dx = np.asarray(x_i, float) - np.asarray(x_j, float)
    dv = np.asarray(y_i, float) - np.asarray(y_j, float)
    r = float(np.linalg.norm(dx))
    if r == 0.0:
        raise DegenerateGeometryError("coincident positions: range derivatives undefined at r=0")
    rdot = float(dx @ dv) / r
    rddot = (float(dv @ dv) - rdot**2) / r
    rdddot = -3.0 * rdot * rddot / r
    return RangeDerivatives(r, rdot, rddot, rdddot)


def taylor_range(rd: RangeDerivatives, t, order: int = 4) -> np.ndarray:
    """Truncated Taylor expansion of the pairwise distance around t0 = 0.

    `order` counts the retained coefficients (order=4 keeps r, rdot,
    rddot, rdddot).  Only the first four derivatives are available in
    closed form here.
    """
    if not 1 <= order <= 4:
        raise ValueError(f"order must be in 1..4, got {order}")
    t = np.asarray(t, float)
    coeffs = [rd.r, rd.rdot, rd.rddot / 2.0, rd.rdddot / 6.0][:order]
    out = np.zeros_like(t, dtype=float)
    for ell in reversed(range(order)):
        out = out * t + coeffs[ell]
    return out


@dataclass
class RangeMatrices:
    """Initial pairwise ranges and their first two derivatives for all pairs.

    R and Rddot have nonnegative entries (rddot >= 0 follows from
    Cauchy-Schwarz: r rddot + rdot^2 = ||y_i - y_j||^2 >= rdot^2), while
    Rdot is symmetric but sign-indefinite.  Diagonals are zero.
    """

    R: np.ndarray
    Rdot: np.ndarray
    Rddot: np.ndarray

    def __post_init__(self):
        self.R = np.asarray(self.R, float)
        self.Rdot = np.asarray(self.Rdot, float)
        self.Rddot = np.asarray(self.Rddot, float)
        n = self.R.shape[0]
        for name, m in (("R", self.R), ("Rdot", self.Rdot), ("Rddot", self.Rddot)):
            if m.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}, got {m.shape}")

    @property
    def n(self) -> int:
        return self.R.shape[0]

    def pair_vectors(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(r, rdot, rddot) stacked over canonical pairs, each of length N(N-1)/2."""
        idx = np.triu_indices(self.n, k=1)
        return self.R[idx], self.Rdot[idx], self.Rddot[idx]

    @classmethod
    def from_pair_vectors(cls, n: int, r, rdot, rddot) -> "RangeMatrices":
        """Assemble symmetric matrices from canonical pair-ordered vectors."""
        out = []
        for vec in (r, rdot, rddot):
            m = np.zeros((n, n))
            idx = np.triu_indices(n, k=1)
            m[idx] = np.asarray(vec, float)
            out.append(m + m.T)
        return cls(*out)


def range_matrices(traj: TrajectorySet) -> RangeMatrices:
    """Exact R, Rdot, Rddot for every node pair of a trajectory set.

    Raises:
        DegenerateGeometryError: if any two nodes coincide at t0.
    """
    dx = traj.X[:, :, None] - traj.X[:, None, :]
    dv = traj.Y[:, :, None] - traj.Y[:, None, :]
    r = np.sqrt((dx**2).sum(axis=0))
    off = ~np.eye(traj.N, dtype=bool)
    if np.any(r[off] == 0.0):
        i, j = np.argwhere((r == 0.0) & off)[0]
        raise DegenerateGeometryError(f"nodes {i} and {j} coincide at t0")
    inv = np.zeros_like(r)
    inv[off] = 1.0 / r[off]
    rdot = inv * (dx * dv).sum(axis=0)
    rddot = inv * ((dv**2).sum(axis=0) - rdot**2)
    return RangeMatrices(R=r, Rdot=rdot, Rddot=rddot)


def edm_at_time(traj: TrajectorySet, t: float) -> np.ndarray:
    """Euclidean distance matrix of the configuration at time t."""
    pos = traj.position_at(t)
    diff = pos[:, :, None] - pos[:, None, :]
    return np.sqrt((diff**2).sum(axis=0))


def third_derivative_gram_check(rm: RangeMatrices) -> np.ndarray:
    """Residual of the third time derivative of the centered squared-distance Gram.

    Under linear motion that Gram is a quadratic in time, so
    -0.5 P (R o Rdddot + 3 Rdot o Rddot) P vanishes identically, with
    Rdddot = -3 R^{o-1} o Rdot o Rddot.  The Hadamard reciprocal of R is
    taken on off-diagonal entries with the diagonal forced to zero.

    Returns the N x N residual matrix (zero up to roundoff for any valid
    linear-motion range set).

    Raises:
        DegenerateGeometryError: if any off-diagonal range is zero.
    """
    n = rm.n
    off = ~np.eye(n, dtype=bool)
    if np.any(rm.R[off] == 0.0):
        raise DegenerateGeometryError("zero off-diagonal range; Hadamard reciprocal undefined")
    rinv = np.zeros_like(rm.R)
    rinv[off] = 1.0 / rm.R[off]
    rdddot = -3.0 * rinv * rm.Rdot * rm.Rddot
    pc = centering_matrix(n)
    return -0.5 * pc @ (rm.R * rdddot + 3.0 * rm.Rdot * rm.Rddot) @ pc
