"""Admissible initial networks and their compatibility checks."""

from dataclasses import asdict, dataclass

import numpy as np

from . import _stencil as st
from .curve import check_regular, curvature_fields
from .errors import DegenerateCurve, InfeasibleGeometry, ProjectionFailed
from .flow import balance, junction_velocity, project_balance
from .junction import DELTA_MIN, angle_margin, span_dimension
from .network import Network, energy_terms, junction_balance_residual

KAPPA_END_TOL = 1e-8
SUM_TOL = 1e-8


@dataclass(frozen=True)
class CompatReport:
    """Zeroth-order compatibility of an initial network.

    ``endpoint_ok``, ``concurrency_ok``, ``kappa_ends_ok`` and ``angle_ok`` are
    mandatory. ``angle_ok`` requires two independent junction tangents and an
    angle margin of at least ``delta_min``. ``sum_condition`` is reported only,
    because every run imposes it before the first step.
    """

    endpoint_ok: bool
    concurrency_ok: bool
    kappa_ends: tuple
    kappa_ends_ok: bool
    sum_condition: float
    angle_ok: bool
    span_dim: int
    delta: float
    order1_residual: float | None = None

    @property
    def ok(self):
        return self.endpoint_ok and self.concurrency_ok and self.kappa_ends_ok and self.angle_ok

    def to_dict(self):
        d = asdict(self)
        d["kappa_ends"] = [list(r) for r in self.kappa_ends]
        d["ok"] = self.ok
        return d


def check_initial(net, kappa_tol=KAPPA_END_TOL, delta_min=DELTA_MIN):
    """Evaluate the initial conditions on ``net`` without modifying it.

    Returns
    -------
    CompatReport
    """
    X = net.nodes
    _, tau, kappa = curvature_fields(X)
    ends = np.linalg.norm(kappa[:, [0, -1]], axis=-1)
    T = tau[:, 0]
    dim = span_dimension(T)
    delta = angle_margin(T)
    try:
        order1 = check_order1(net)
    except ArithmeticError:
        order1 = None
    return CompatReport(
        endpoint_ok=net.pin_ok(),
        concurrency_ok=net.concurrency_ok(),
        kappa_ends=tuple(tuple(map(float, r)) for r in ends),
        kappa_ends_ok=bool(np.all(ends <= kappa_tol)),
        sum_condition=junction_balance_residual(net),
        angle_ok=dim >= 2 and delta >= delta_min,
        span_dim=dim,
        delta=delta,
        order1_residual=order1,
    )


def check_order1(net):
    """Largest pairwise distance between the three junction velocities.

    Raises
    ------
    DegenerateJunction
    """
    return junction_velocity(net)[1]


def quintic_hermite(p0, p1, d0, d1, x):
    """Degree-5 curve with given end values and first derivatives, zero second derivatives."""
    x = np.asarray(x, dtype=float)[:, None]
    h0 = 1 - 10 * x**3 + 15 * x**4 - 6 * x**5
    h1 = x - 6 * x**3 + 8 * x**4 - 3 * x**5
    h4 = -4 * x**3 + 7 * x**4 - 3 * x**5
    h5 = 10 * x**3 - 15 * x**4 + 6 * x**5
    return h0 * p0 + h1 * d0 + h4 * d1 + h5 * p1


def generate_star(P, junction, tangents, N, lam=(0.1, 0.1, 0.1), allow_zero_lambda=False):
    """Three quintic curves from a common junction to the points ``P_i``.

    Curve ``i`` leaves the junction with velocity ``d0 = c T_i`` (``c`` the
    chord length) and has zero second derivative at both ends. The end
    derivative ``d1 = (15 chord - 7 d0) / 7`` makes the fourth derivative
    tangential at both ends, so ``nabla_s^2 kappa`` vanishes there as well:
    the pinned ends start at rest and the three junction velocities agree.
    Nodes 1 and N-1 are then adjusted so that the discrete end curvature
    vanishes to round-off.

    Raises
    ------
    InfeasibleGeometry
        For coincident or non-finite points, non-unit tangents or a sampled
        curve that is not regular.
    """
    P = np.asarray(P, dtype=float)
    J = np.asarray(junction, dtype=float)
    T = np.asarray(tangents, dtype=float)
    if P.ndim != 2 or P.shape[0] != 3 or J.shape != P.shape[1:] or T.shape != P.shape:
        raise InfeasibleGeometry("expected P and tangents of shape (3, n) and junction of shape (n,)")
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(J)) and np.all(np.isfinite(T))):
        raise InfeasibleGeometry("non-finite input")
    if np.any(np.abs(np.linalg.norm(T, axis=1) - 1.0) > 1e-10):
        raise InfeasibleGeometry("tangents must be unit vectors")
    scale = max(1.0, float(np.abs(P).max()), float(np.abs(J).max()))
    for i in range(3):
        for j in range(i + 1, 3):
            if np.linalg.norm(P[i] - P[j]) <= 1e-12 * scale:
                raise InfeasibleGeometry(f"endpoints P{i + 1} and P{j + 1} coincide")
    x = np.linspace(0.0, 1.0, N + 1)
    X = np.empty((3, N + 1, P.shape[1]))
    for i in range(3):
        chord = P[i] - J
        c = np.linalg.norm(chord)
        if c <= 1e-9 * scale:
            raise InfeasibleGeometry(f"curve {i + 1} has a vanishing chord")
        d0 = c * T[i]
        X[i] = quintic_hermite(J, P[i], d0, (15.0 * chord - 7.0 * d0) / 7.0, x)
    X[:, 0] = J
    X[:, -1] = P
    X = st.slave_ends(X)
    try:
        check_regular(X)
    except DegenerateCurve as exc:
        raise InfeasibleGeometry(f"sampled curve is not regular: {exc}") from None
    if np.any(np.all(np.diff(X, axis=1) == 0.0, axis=2)):
        raise InfeasibleGeometry("consecutive nodes coincide")
    return Network(X, lam, P, allow_zero_lambda=allow_zero_lambda)


def symmetric_star(radius=1.0, N=100, lam=0.1, twist=0.6, n=2, allow_zero_lambda=False):
    """Threefold symmetric star centred at the origin.

    The endpoints sit at angles 90, 210 and 330 degrees on a circle of the
    given radius; every junction tangent is the chord direction rotated by
    ``twist`` radians, so ``twist = 0`` gives three straight segments. For
    ``n > 2`` the star lies in the first coordinate plane.
    """
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (3,))
    ang = np.pi / 2 + 2 * np.pi * np.arange(3) / 3
    P = np.zeros((3, n))
    T = np.zeros((3, n))
    P[:, 0], P[:, 1] = radius * np.cos(ang), radius * np.sin(ang)
    T[:, 0], T[:, 1] = np.cos(ang + twist), np.sin(ang + twist)
    return generate_star(P, np.zeros(n), T, N, lam, allow_zero_lambda)


def project_sum_condition(net, tol=SUM_TOL, maxit=20, max_energy_change=0.01):
    """Move the second node of each curve so the junction balance holds.

    Gauss-Newton with minimum-norm corrections; node 1 is re-slaved after
    every update so the junction curvature stays zero.

    Returns
    -------
    (Network, dict)
        The projected network and a report with the initial and final
        residuals, the largest node displacement and the relative energy change.

    Raises
    ------
    ProjectionFailed
        If the tangents span a line, the iteration stalls above ``tol``, or the
        energy changes by more than ``max_energy_change`` (relative).
    """
    X = np.array(net.nodes)
    T = curvature_fields(X)[1][:, 0]
    if span_dimension(T) < 2:
        raise ProjectionFailed("junction tangents span a line")
    r0 = float(np.linalg.norm(balance(X, net.lam)))
    el, L = energy_terms(X)
    E0 = float(np.sum(el + net.lam * L))
    info = {"initial_residual": r0, "final_residual": r0, "max_displacement": 0.0, "energy_change": 0.0}
    if r0 <= tol:
        return net, info
    Y = project_balance(X, net.lam, tol=0.1 * tol, maxit=maxit)
    r1 = float(np.linalg.norm(balance(Y, net.lam)))
    if not (r1 <= tol and r1 < r0):
        raise ProjectionFailed(f"residual {r1:.3e} after {maxit} iterations (started at {r0:.3e})")
    el, L = energy_terms(Y)
    E1 = float(np.sum(el + net.lam * L))
    dE = abs(E1 - E0) / max(abs(E0), np.finfo(float).tiny)
    if dE > max_energy_change:
        raise ProjectionFailed(f"projection changed the energy by {100 * dE:.2f}%")
    info.update(
        final_residual=r1,
        max_displacement=float(np.abs(Y - X).max()),
        energy_change=dE,
    )
    return net.replace(nodes=Y), info
