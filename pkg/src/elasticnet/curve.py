"""Discrete differential geometry of a single open curve.

A curve is sampled at ``x_j = j/N``, ``j = 0..N``, in R^n. Derivatives in the
parameter use the stencils of :mod:`elasticnet._stencil`; arclength
derivatives divide by the metric ``|f_x|`` once per application, and every
normal derivative is re-projected onto the normal space.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator

from . import _stencil as st
from .errors import DegenerateCurve, OrderTooHigh, ParseError

MIN_INTERVALS = 16
MAX_ORDER = 4
DEGENERACY_FACTOR = 1e-8


class DiscreteCurve:
    """Open curve sampled on a uniform parameter grid.

    Parameters
    ----------
    nodes : array_like, shape (N+1, n)
        Node positions ``f(j/N)``. Copied and stored read-only.

    Raises
    ------
    ValueError
        If the shape is wrong, ``N < 16``, ``n < 2`` or a node is not finite.
    DegenerateCurve
        If two consecutive nodes coincide.
    """

    __slots__ = ("nodes",)

    def __init__(self, nodes):
        a = np.array(nodes, dtype=float)
        if a.ndim != 2 or a.shape[1] < 2:
            raise ValueError(f"nodes must have shape (N+1, n) with n >= 2, got {a.shape}")
        if a.shape[0] - 1 < MIN_INTERVALS:
            raise ValueError(f"need N >= {MIN_INTERVALS} intervals, got {a.shape[0] - 1}")
        if not np.all(np.isfinite(a)):
            raise ValueError("nodes must be finite")
        if np.any(np.all(np.diff(a, axis=0) == 0.0, axis=1)):
            raise DegenerateCurve("consecutive nodes coincide")
        a.setflags(write=False)
        object.__setattr__(self, "nodes", a)

    def __setattr__(self, name, value):
        raise AttributeError("DiscreteCurve is immutable")

    @property
    def N(self):
        return self.nodes.shape[0] - 1

    @property
    def n(self):
        return self.nodes.shape[1]

    @property
    def h(self):
        return 1.0 / self.N

    def __repr__(self):
        return f"DiscreteCurve(N={self.N}, n={self.n})"


@dataclass(frozen=True, eq=False)
class GeometricFields:
    """Per-node geometry of a curve.

    Attributes
    ----------
    metric : ndarray, shape (N+1,)
    tangent : ndarray, shape (N+1, n)
    kappa : ndarray, shape (N+1, n)
    nabla_kappa : ndarray, shape (M+1, N+1, n)
        ``nabla_kappa[m]`` is the m-th normal arclength derivative of kappa.
    """

    metric: np.ndarray
    tangent: np.ndarray
    kappa: np.ndarray
    nabla_kappa: np.ndarray


def _as_nodes(curve):
    if isinstance(curve, DiscreteCurve):
        return curve.nodes
    return np.asarray(curve, dtype=float)


# -- batched array kernels; X has shape (..., N+1, n) ----------------------


def metric_tangent(X):
    N = X.shape[-2] - 1
    b = st.d1(X, 1.0 / N)
    m = np.sqrt(np.einsum("...d,...d->...", b, b))
    return m, b / m[..., None]


def project_normal(v, tau):
    return v - np.einsum("...d,...d->...", v, tau)[..., None] * tau


def curvature_fields(X):
    """Metric, unit tangent and curvature vector for stacked curves."""
    N = X.shape[-2] - 1
    b, a = st.d12(X, 1.0 / N)
    m = np.sqrt(np.einsum("...d,...d->...", b, b))
    tau = b / m[..., None]
    kappa = project_normal(a, tau) / (m**2)[..., None]
    return m, tau, kappa


def nabla(phi, m, tau):
    """Normal projection of the arclength derivative of a nodal field."""
    N = phi.shape[-2] - 1
    return project_normal(st.d1(phi, 1.0 / N) / m[..., None], tau)


def nabla_powers(X, order, fields=None):
    """List ``[kappa, nabla kappa, ..., nabla^order kappa]`` for stacked curves."""
    m, tau, kappa = curvature_fields(X) if fields is None else fields
    out = [kappa]
    for _ in range(order):
        out.append(nabla(out[-1], m, tau))
    return out


def check_regular(X):
    """Raise DegenerateCurve if some metric value is below the degeneracy floor."""
    m, _ = metric_tangent(X)
    N = X.shape[-2] - 1
    L = (st.trapezoid_weights(N) * m).sum(axis=-1)
    floor = DEGENERACY_FACTOR * L / N
    if not np.all(np.isfinite(m)) or np.any(m < floor[..., None]):
        raise DegenerateCurve("metric below degeneracy threshold")
    return m


# -- public single-curve operations ----------------------------------------


def compute_metric(curve):
    """Per-node speed ``|f_x|``.

    Parameters
    ----------
    curve : DiscreteCurve

    Returns
    -------
    ndarray, shape (N+1,)

    Raises
    ------
    DegenerateCurve
        If some value is below ``1e-8 * length / N``.
    """
    return check_regular(_as_nodes(curve))


def compute_tangent(curve):
    X = _as_nodes(curve)
    check_regular(X)
    return metric_tangent(X)[1]


def compute_curvature(curve):
    """Curvature vector ``kappa = d_s d_s f`` at every node."""
    X = _as_nodes(curve)
    check_regular(X)
    return curvature_fields(X)[2]


def nabla_s(field, curve):
    """Normal arclength derivative of a vector field along ``curve``.

    Parameters
    ----------
    field : array_like, shape (N+1, n)
    curve : DiscreteCurve

    Returns
    -------
    ndarray, shape (N+1, n)
        ``d_s field - <d_s field, tau> tau``.
    """
    X = _as_nodes(curve)
    m, tau = metric_tangent(X)
    return nabla(np.asarray(field, dtype=float), m, tau)


def nabla_s_power(curve, m, max_order=MAX_ORDER):
    """Iterated normal derivative ``nabla_s^m kappa``.

    Raises
    ------
    OrderTooHigh
        If ``m > max_order``.
    """
    if m < 0 or m > max_order:
        raise OrderTooHigh(f"order {m} outside [0, {max_order}]")
    X = _as_nodes(curve)
    check_regular(X)
    return nabla_powers(X, m)[m]


def geometric_fields(curve, max_order=MAX_ORDER):
    X = _as_nodes(curve)
    check_regular(X)
    m, tau, kappa = curvature_fields(X)
    nk = np.stack(nabla_powers(X, max_order, (m, tau, kappa)))
    return GeometricFields(metric=m, tangent=tau, kappa=kappa, nabla_kappa=nk)


def partial_s_kappa_identity_residual(curve):
    """Max interior residual of ``d_s kappa = nabla_s kappa - |kappa|^2 tau``."""
    X = _as_nodes(curve)
    check_regular(X)
    m, tau, kappa = curvature_fields(X)
    ds_kappa = st.d1(kappa, 1.0 / (X.shape[-2] - 1)) / m[:, None]
    nk = nabla(kappa, m, tau)
    k2 = np.einsum("jd,jd->j", kappa, kappa)
    r = ds_kappa - (nk - k2[:, None] * tau)
    return float(np.max(np.linalg.norm(r[1:-1], axis=-1)))


def curve_length(curve):
    """Trapezoidal integral of the metric."""
    X = _as_nodes(curve)
    m, _ = metric_tangent(X)
    return float(st.trapezoid_weights(X.shape[-2] - 1) @ m)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def _spline_arclength(cs, a, b):
    """Arclength of spline ``cs`` between parameter arrays ``a`` and ``b``."""
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    xs = mid[..., None] + half[..., None] * _GL_X
    speed = np.linalg.norm(cs(xs, 1), axis=-1)
    return half * (speed @ _GL_W)


def resample_by_arclength(curve):
    """Redistribute nodes at equal arclength along the same trace.

    The trace is represented by a cubic spline through the nodes. Its
    cumulative length is inverted with a monotone (PCHIP) interpolant and a
    few Newton corrections, so endpoints are preserved exactly.

    Returns
    -------
    DiscreteCurve
    """
    X = _as_nodes(curve)
    check_regular(X)
    N = X.shape[0] - 1
    x = np.linspace(0.0, 1.0, N + 1)
    cs = CubicSpline(x, X, axis=0)
    seg = _spline_arclength(cs, x[:-1], x[1:])
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if not total > 0:
        raise DegenerateCurve("zero length")
    target = np.linspace(0.0, total, N + 1)
    xt = PchipInterpolator(s, x)(target)
    xt = np.clip(xt, 0.0, 1.0)
    for _ in range(8):
        j = np.clip(np.searchsorted(x, xt, side="right") - 1, 0, N - 1)
        sx = s[j] + _spline_arclength(cs, x[j], xt)
        speed = np.linalg.norm(cs(xt, 1), axis=-1)
        step = (sx - target) / speed
        xt = np.clip(xt - step, 0.0, 1.0)
        if np.max(np.abs(step)) < 1e-15:
            break
    xt[0], xt[-1] = 0.0, 1.0
    out = cs(xt)
    out[0], out[-1] = X[0], X[-1]
    return DiscreteCurve(out)


# -- snapshot files ---------------------------------------------------------


def format_curve(curve):
    X = _as_nodes(curve)
    N, n = X.shape[0] - 1, X.shape[1]
    lines = [f"{n} {N}"]
    lines += [" ".join(format(v, ".17g") for v in row) for row in X]
    return "\n".join(lines) + "\n"


def parse_curve_lines(lines, start=0):
    """Parse one curve block from a list of text lines.

    Returns
    -------
    (ndarray, int)
        Nodes and the index of the first unconsumed line.
    """
    if start >= len(lines):
        raise ParseError("missing curve header", start + 1)
    head = lines[start].split()
    if len(head) != 2:
        raise ParseError("curve header must be 'n N'", start + 1)
    try:
        n, N = int(head[0]), int(head[1])
    except ValueError:
        raise ParseError("curve header must contain two integers", start + 1) from None
    if n < 2 or N < 1:
        raise ParseError(f"invalid dimensions n={n} N={N}", start + 1)
    rows = []
    for k in range(N + 1):
        i = start + 1 + k
        if i >= len(lines):
            raise ParseError(f"expected {N + 1} node lines, file ended after {k}", i + 1)
        parts = lines[i].split()
        if len(parts) != n:
            raise ParseError(f"expected {n} coordinates, got {len(parts)}", i + 1)
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ParseError("non-numeric coordinate", i + 1) from None
    return np.array(rows), start + N + 2


def write_curve(curve, path):
    with open(path, "w") as fh:
        fh.write(format_curve(curve))


def read_curve(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    nodes, end = parse_curve_lines(lines)
    if any(ln.strip() for ln in lines[end:]):
        raise ParseError("trailing content after curve block", end + 1)
    return DiscreteCurve(nodes)
