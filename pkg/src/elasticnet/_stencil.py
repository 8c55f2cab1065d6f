"""Finite differences on a uniform parameter grid.

All operators act on nodal arrays of shape ``(..., N+1, n)``; the node axis
is always the second to last one. Boundary closures extrapolate one ghost
node per side with a degree-5 polynomial through the first six nodes, after
which the centered three-point stencils are applied everywhere. For smooth
data the ghost is accurate to O(h^6), so first and second differences stay
second order up to and including the end nodes.
"""

from functools import lru_cache
from math import comb

import numpy as np
import scipy.sparse as sp

GHOST_DEGREE = 5
GHOST_WEIGHTS = np.array(
    [(-1.0) ** k * comb(GHOST_DEGREE + 1, k + 1) for k in range(GHOST_DEGREE + 1)]
)
NG = GHOST_DEGREE + 1  # nodes entering a ghost value

# Second difference at node 0 vanishes iff node 1 equals this combination
# of nodes (0, 2, 3, 4, 5).
_c = GHOST_WEIGHTS.copy()
_c[0] -= 2.0
_c[1] += 1.0
SLAVE_SOURCES = np.array([0, 2, 3, 4, 5])
SLAVE_WEIGHTS = -_c[SLAVE_SOURCES] / _c[1]
del _c


def ghosts(u):
    """Ghost values beyond both ends, each of shape ``(..., n)``."""
    g0 = np.einsum("k,...kd->...d", GHOST_WEIGHTS, u[..., :NG, :])
    g1 = np.einsum("k,...kd->...d", GHOST_WEIGHTS, u[..., ::-1, :][..., :NG, :])
    return g0, g1


def pad(u):
    g0, g1 = ghosts(u)
    return np.concatenate([g0[..., None, :], u, g1[..., None, :]], axis=-2)


def pad_adjoint(y):
    """Adjoint of :func:`pad` (ghost contributions folded back)."""
    out = y[..., 1:-1, :].copy()
    out[..., :NG, :] += GHOST_WEIGHTS[:, None] * y[..., :1, :]
    out[..., -1:-NG - 1:-1, :] += GHOST_WEIGHTS[:, None] * y[..., -1:, :]
    return out


def d1(u, h):
    y = pad(u)
    return (y[..., 2:, :] - y[..., :-2, :]) / (2.0 * h)


def d2(u, h):
    y = pad(u)
    return (y[..., 2:, :] - 2.0 * y[..., 1:-1, :] + y[..., :-2, :]) / h**2


def d12(u, h):
    """First and second differences sharing one padding pass."""
    y = pad(u)
    first = (y[..., 2:, :] - y[..., :-2, :]) / (2.0 * h)
    second = (y[..., 2:, :] - 2.0 * y[..., 1:-1, :] + y[..., :-2, :]) / h**2
    return first, second


def d12_adjoint(g1, g2, h):
    """Adjoint of ``u -> (d1(u), d2(u))`` applied to ``(g1, g2)``."""
    shape = g1.shape[:-2] + (g1.shape[-2] + 2, g1.shape[-1])
    y = np.zeros(shape)
    c1 = g1 / (2.0 * h)
    c2 = g2 / h**2
    y[..., 2:, :] += c1 + c2
    y[..., :-2, :] += c2 - c1
    y[..., 1:-1, :] -= 2.0 * c2
    return pad_adjoint(y)


def trapezoid_weights(N):
    w = np.full(N + 1, 1.0 / N)
    w[0] = w[-1] = 0.5 / N
    return w


def cumulative_trapezoid(m, h):
    """Running trapezoid integral of nodal values along the last axis."""
    inc = 0.5 * h * (m[..., 1:] + m[..., :-1])
    out = np.zeros(m.shape)
    out[..., 1:] = np.cumsum(inc, axis=-1)
    return out


def slave_ends(X):
    """Return a copy of ``X`` whose nodes 1 and N-1 make the end second differences vanish."""
    X = np.array(X, dtype=float, copy=True)
    X[..., 1, :] = np.einsum("k,...kd->...d", SLAVE_WEIGHTS, X[..., SLAVE_SOURCES, :])
    Xr = X[..., ::-1, :]
    X[..., -2, :] = np.einsum("k,...kd->...d", SLAVE_WEIGHTS, Xr[..., SLAVE_SOURCES, :])
    return X


@lru_cache(maxsize=16)
def difference_matrices(N):
    """Sparse ``(N+1, N+1)`` matrices of :func:`d1` and :func:`d2` for h = 1/N."""
    h = 1.0 / N
    P = sp.lil_matrix((N + 3, N + 1))
    for k, wk in enumerate(GHOST_WEIGHTS):
        P[0, k] = wk
        P[N + 2, N - k] = wk
    for j in range(N + 1):
        P[j + 1, j] = 1.0
    P = P.tocsr()
    S1 = sp.diags([-np.ones(N + 1), np.ones(N + 1)], [0, 2], shape=(N + 1, N + 3)) / (2 * h)
    S2 = sp.diags(
        [np.ones(N + 1), -2 * np.ones(N + 1), np.ones(N + 1)], [0, 1, 2], shape=(N + 1, N + 3)
    ) / h**2
    return (S1 @ P).tocsr(), (S2 @ P).tocsr()
