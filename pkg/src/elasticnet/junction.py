"""Tangential speeds at the triple junction.

Concurrency of the three curves forces their junction velocities
``-A_i + phi_i T_i`` to agree, where ``A_i`` is the second normal derivative
of curvature at the junction. Projecting onto each ``T_i`` gives a symmetric
3x3 system in the tangent Gram matrix whose solution is ``phi_i(0)``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .curve import curvature_fields, nabla_powers
from .errors import DegenerateJunction, NonUnitTangent

DELTA_MIN = 1e-6
RANK_TOL = 1e-6
UNIT_TOL = 1e-10


def _check_unit(T):
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != 3:
        raise NonUnitTangent(f"expected three tangents, got shape {T.shape}")
    if np.any(np.abs(np.linalg.norm(T, axis=1) - 1.0) > UNIT_TOL):
        raise NonUnitTangent("tangents must have unit length")
    return T


def gram(T):
    T = np.asarray(T, dtype=float)
    return T @ T.T


def junction_matrix(T):
    """Matrix with diagonal 2 and off-diagonal entries ``-<T_i, T_j>``."""
    G = gram(_check_unit(T))
    M = -G
    np.fill_diagonal(M, 2.0)
    return 0.5 * (M + M.T)


def junction_determinant(T):
    """Closed form ``8 - 2 (T12^2 + T13^2 + T23^2) - 2 T12 T23 T31``."""
    G = gram(_check_unit(T))
    t12, t13, t23 = G[0, 1], G[0, 2], G[1, 2]
    return float(8.0 - 2.0 * (t12**2 + t13**2 + t23**2) - 2.0 * t12 * t23 * t13)


def inverse_matrix(T):
    """Closed-form inverse of :func:`junction_matrix`."""
    G = gram(_check_unit(T))
    t12, t13, t23 = G[0, 1], G[0, 2], G[1, 2]
    adj = np.array(
        [
            [4 - t23**2, 2 * t12 + t13 * t23, 2 * t13 + t12 * t23],
            [2 * t12 + t13 * t23, 4 - t13**2, t12 * t13 + 2 * t23],
            [2 * t13 + t12 * t23, t12 * t13 + 2 * t23, 4 - t12**2],
        ]
    )
    return adj / junction_determinant(T)


def speeds_rhs(T, A):
    """Right-hand side ``-<A_{i+1} + A_{i+2}, T_i>``."""
    T = np.asarray(T, dtype=float)
    A = np.asarray(A, dtype=float)
    S = A.sum(axis=0)
    return -np.einsum("id,id->i", S[None, :] - A, T)


def solve_tangential_speeds(T, A, delta_min=DELTA_MIN, method="closed"):
    """Junction tangential speeds ``phi_i(0)``.

    Parameters
    ----------
    T : array_like, shape (3, n)
        Unit tangents at the junction.
    A : array_like, shape (3, n)
        Second normal derivatives of curvature at the junction.
    delta_min : float
        Determinant floor is ``2 * delta_min``.
    method : {"closed", "pivoted"}
        Closed-form inverse or LU with partial pivoting.

    Returns
    -------
    ndarray, shape (3,)

    Raises
    ------
    DegenerateJunction
        If the determinant is below ``2 * delta_min``.
    """
    det = junction_determinant(T)
    if not det >= 2.0 * delta_min:
        raise DegenerateJunction(f"det = {det:.3e} below {2 * delta_min:.1e}")
    rhs = speeds_rhs(T, A)
    if method == "closed":
        return inverse_matrix(T) @ rhs
    if method == "pivoted":
        return scipy.linalg.lu_solve(scipy.linalg.lu_factor(junction_matrix(T)), rhs)
    raise ValueError(f"unknown method {method!r}")


def phi1_explicit(T, A):
    """First component written out term by term, used as a cross-check."""
    G = gram(_check_unit(T))
    t12, t13, t23 = G[0, 1], G[0, 2], G[1, 2]
    A = np.asarray(A, dtype=float)
    T = np.asarray(T, dtype=float)
    det = junction_determinant(T)
    return -(
        (4 - t23**2) * np.dot(A[1] + A[2], T[0])
        + (2 * t12 + t13 * t23) * np.dot(A[0] + A[2], T[1])
        + (2 * t13 + t12 * t23) * np.dot(A[0] + A[1], T[2])
    ) / det


def span_dimension(T, tol=RANK_TOL):
    """Numerical rank of the stacked tangents."""
    s = np.linalg.svd(np.asarray(T, dtype=float), compute_uv=False)
    return int(np.sum(s > tol))


def angle_margin(T):
    """``1 - min_{i != j} |<T_i, T_j>|`` clamped to [0, 1]."""
    G = gram(T)
    off = np.abs(G[np.triu_indices(3, 1)])
    return float(np.clip(1.0 - off.min(), 0.0, 1.0))


@dataclass(frozen=True, eq=False)
class JunctionState:
    """Junction data for one network snapshot.

    ``phi0`` is NaN when the system is degenerate.
    """

    T: np.ndarray
    A: np.ndarray
    gram: np.ndarray
    det: float
    phi0: np.ndarray
    delta: float
    span_dim: int

    def velocities(self):
        """The three continuum-equal junction velocities ``-A_i + phi_i T_i``."""
        return -self.A + self.phi0[:, None] * self.T


def junction_data(X):
    """Tangents and ``A_i`` at node 0 of stacked curves ``(3, N+1, n)``."""
    fields = curvature_fields(X)
    ks = nabla_powers(X, 2, fields)
    return fields[1][:, 0], ks[2][:, 0]


def junction_state(net, delta_min=DELTA_MIN):
    T, A = junction_data(net.nodes)
    T = T / np.linalg.norm(T, axis=1, keepdims=True)
    det = junction_determinant(T)
    try:
        phi = solve_tangential_speeds(T, A, delta_min)
    except DegenerateJunction:
        phi = np.full(3, np.nan)
    return JunctionState(
        T=T, A=A, gram=gram(T), det=det, phi0=phi,
        delta=angle_margin(T), span_dim=span_dimension(T),
    )
