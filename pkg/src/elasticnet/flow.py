"""Time integration of the elastic network flow.

The discrete flow is the gradient flow of the discrete energy
``E_h = sum_i (1/2 sum_j w_j m_j |kappa_j|^2 + lam_i sum_j w_j m_j)`` restricted
to the admissible node configurations:

* node ``N`` of curve ``i`` is pinned to ``P_i``;
* node ``0`` is one shared junction point;
* nodes ``1`` and ``N-1`` are slaved so that the end second differences, and
  therefore the end curvatures, vanish exactly;
* the junction balance ``sum_i (nabla_s kappa_i - lam_i tau_i)(0) = 0`` holds
  (linearized in the velocity, restored after each step by a least-squares
  correction of the second nodes).

The velocity ``v`` minimizes ``<grad E_h, v> + 1/2 sum_ij w_j m_ij |v_ij - phi_ij tau_ij|^2``
where ``phi_i`` is the tangential speed interpolated linearly in arclength from
its junction value ``phi_i(0) = <v_junction, T_i>`` to zero at the fixed end.
In the interior this reproduces ``V + phi tau`` to second order, while the
semi-discrete energy identity ``dE_h/dt = -sum_i int |v_i - phi_i tau_i|^2 ds``
holds exactly. Time stepping errors in that identity are therefore first
order in ``dt``.
"""

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _stencil as st
from .curve import _as_nodes, curvature_fields, nabla_powers
from .errors import (
    BlowUp,
    DegenerateJunction,
    HaltAssumptionViolated,
    LinearSolveFailure,
    StepRejected,
)
from .junction import angle_margin, junction_state, span_dimension
from .network import Network, energy_gradient, energy_terms, node_energy_gradient

# Explicit forward Euler is stable for dt < STABILITY_CONSTANT * h^4 with
# h = min(metric) / N, measured on symmetric and asymmetric stars for
# N = 32..128 (see tests/test_flow.py::test_stability_constant).
STABILITY_CONSTANT = 0.12

AW = st.SLAVE_WEIGHTS[1:]  # weights of nodes 2..5 in the slaved node 1
A0 = st.SLAVE_WEIGHTS[0]  # weight of the end node itself
K_SIG = st.GHOST_DEGREE + 2  # nodes 0..K_SIG-1 influence the junction balance
WIN = 2 * st.NG  # window length used to evaluate the balance locally


@dataclass(frozen=True)
class HaltThresholds:
    """Runtime monitor thresholds.

    Attributes
    ----------
    min_length_fraction : float
        Halt when some length drops below this fraction of the initial minimum.
    delta_min : float
        Halt when the angle margin drops below this value.
    max_kappa : float
        Treat curvature above this value as blow-up.
    growth_rate : float
        Zero-lambda mode: lengths may grow by ``growth_rate * L_i(0)`` per unit
        time before the growth budget is flagged.
    """

    min_length_fraction: float = 1e-3
    delta_min: float = 1e-6
    max_kappa: float = 1e8
    growth_rate: float = 10.0


@dataclass(frozen=True)
class FlowConfig:
    """Stepping parameters.

    ``dt_initial = None`` selects ``safety`` times the explicit stability
    limit, re-evaluated every step. In IMEX mode ``dt`` grows by ``dt_growth``
    after accepted steps (capped by ``dt_max``) and halves after a rejection.
    """

    dt_initial: float | None = None
    dt_mode: str = "explicit"
    safety: float = 0.4
    t_end: float = 1.0
    halt_on: HaltThresholds = field(default_factory=HaltThresholds)
    output_every: int = 0
    sample_every: int = 1
    energy_eps: float | None = None
    el_threshold: float = 1e-3
    stop_on_convergence: bool = False
    dt_max: float = math.inf
    dt_growth: float = 1.25
    max_rejections: int = 40
    max_steps: int | None = None

    def __post_init__(self):
        if self.dt_initial is not None and not self.dt_initial > 0:
            raise ValueError("dt_initial must be positive")
        if not 0 < self.safety <= 1:
            raise ValueError("safety must lie in (0, 1]")
        if self.dt_mode not in ("explicit", "imex"):
            raise ValueError("dt_mode must be 'explicit' or 'imex'")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")


@dataclass(frozen=True)
class StepInfo:
    """What happened in the step that produced a state."""

    dt: float
    dissipation_lhs: float
    dissipation_rhs: float
    phi0: np.ndarray
    junction_velocity: np.ndarray
    balance_residual: float


@dataclass(frozen=True, eq=False)
class FlowState:
    """Immutable snapshot of a running simulation."""

    net: Network
    time: float = 0.0
    step_count: int = 0
    last_dt: float = 0.0
    energy: float | None = None
    step: StepInfo | None = None

    def __post_init__(self):
        if self.energy is None:
            el, L = energy_terms(self.net.nodes)
            object.__setattr__(self, "energy", float(np.sum(el + self.net.lam * L)))

    @cached_property
    def junction(self):
        return junction_state(self.net)


# -- continuum quantities on a single curve ---------------------------------


def normal_velocity(curve, lam):
    """``V = -nabla_s^2 kappa - |kappa|^2 kappa / 2 + lam kappa`` at every node."""
    X = _as_nodes(curve)
    fields = curvature_fields(X)
    kappa = fields[2]
    k2 = nabla_powers(X, 2, fields)[2]
    ksq = np.einsum("...d,...d->...", kappa, kappa)
    lam = np.asarray(lam, dtype=float)
    return -k2 - 0.5 * ksq[..., None] * kappa + lam[..., None, None] * kappa


def arclength_profile(X):
    """``1 - s(x)/L`` per node, with ``s`` the cumulative trapezoid of the metric."""
    m, tau, _ = curvature_fields(X)
    s = st.cumulative_trapezoid(m, 1.0 / (X.shape[-2] - 1))
    return 1.0 - s / s[..., -1:], m, tau


def tangential_field(curve, phi_at_junction):
    """Tangential speed interpolated linearly in arclength.

    ``phi(x) = phi(0) (1 - s(x)/L)``, so ``d_s phi = -phi(0)/L``.
    """
    psi, _, _ = arclength_profile(_as_nodes(curve))
    return phi_at_junction * psi


def junction_velocity(net):
    """Mean of the three junction velocities ``-A_i + phi_i(0) T_i``.

    Returns
    -------
    (ndarray, float)
        Mean velocity and the largest pairwise distance between the three.

    Raises
    ------
    DegenerateJunction
    """
    js = junction_state(net)
    if not np.all(np.isfinite(js.phi0)):
        raise DegenerateJunction(f"det = {js.det:.3e}")
    v = js.velocities()
    spread = max(np.linalg.norm(v[i] - v[j]) for i in range(3) for j in range(i + 1, 3))
    return v.mean(axis=0), float(spread)


def explicit_dt_limit(net_or_nodes):
    """Empirical forward Euler stability limit ``C h^4``, ``h = min(metric)/N``."""
    X = net_or_nodes.nodes if isinstance(net_or_nodes, Network) else np.asarray(net_or_nodes)
    m, _ = _metric(X)
    N = X.shape[-2] - 1
    return STABILITY_CONSTANT * (m.min() / N) ** 4


def _metric(X):
    b = st.d1(X, 1.0 / (X.shape[-2] - 1))
    m = np.sqrt(np.einsum("...d,...d->...", b, b))
    return m, b


# -- junction balance and its Jacobian --------------------------------------


def _balance_local(Xw, lam, h):
    """Per-curve balance terms from windows ``(..., 3, WIN, n)`` at the junction.

    Written with plain arithmetic so complex-step differentiation works.
    """
    g0 = np.einsum("k,...kd->...d", st.GHOST_WEIGHTS, Xw[..., : st.NG, :])
    Y = np.concatenate([g0[..., None, :], Xw], axis=-2)
    b = (Y[..., 2:, :] - Y[..., :-2, :]) / (2 * h)
    a = (Y[..., 2:, :] - 2 * Y[..., 1:-1, :] + Y[..., :-2, :]) / h**2
    m = np.sqrt((b * b).sum(-1))
    tau = b / m[..., None]
    kap = (a - (a * tau).sum(-1)[..., None] * tau) / (m**2)[..., None]
    kg = np.einsum("k,...kd->...d", st.GHOST_WEIGHTS, kap[..., : st.NG, :])
    dk = (kap[..., 1, :] - kg) / (2 * h) / m[..., 0, None]
    t0 = tau[..., 0, :]
    nk = dk - (dk * t0).sum(-1)[..., None] * t0
    return nk - lam[:, None] * t0


def balance(X, lam):
    """Junction balance vector evaluated on the local windows only."""
    h = 1.0 / (X.shape[-2] - 1)
    return _balance_local(X[:, :WIN], np.asarray(lam, float), h).sum(axis=0)


@lru_cache(maxsize=8)
def _cs_directions(n):
    nv = K_SIG * n
    E = np.zeros((nv, K_SIG, n))
    E[np.arange(nv), np.arange(nv) // n, np.arange(nv) % n] = 1.0
    return E


def balance_jacobian(X, lam, eps=1e-30):
    """Derivative of each curve's balance term with respect to nodes ``0..K_SIG-1``.

    Returns
    -------
    ndarray, shape (3, n_rows, K_SIG, n)
        ``J[i, r, j, c] = d balance_r / d X[i, j, c]`` (complex step).
    """
    n = X.shape[-1]
    h = 1.0 / (X.shape[-2] - 1)
    E = _cs_directions(n)
    P = np.repeat(X[None, :, :WIN].astype(complex), E.shape[0], axis=0)
    P[:, :, :K_SIG, :] += 1j * eps * E[:, None]
    s = _balance_local(P, np.asarray(lam, float), h).imag / eps  # (nv, 3, n)
    return np.transpose(s, (1, 2, 0)).reshape(3, n, K_SIG, n)


def project_balance(X, lam, jac=None, tol=1e-10, maxit=6):
    """Restore the junction balance by moving the second node of each curve.

    Gauss-Newton with the minimum-norm correction over the three second nodes;
    node 1 is re-slaved after every update so the end curvature stays zero.
    """
    lam = np.asarray(lam, float)
    a2 = st.SLAVE_WEIGHTS[1]
    for it in range(maxit):
        r = balance(X, lam)
        if np.linalg.norm(r) <= tol:
            break
        if jac is None or it > 0:
            jac = balance_jacobian(X, lam)
        Jn = jac[:, :, 2, :] + a2 * jac[:, :, 1, :]  # (3, rows, n)
        Jm = np.concatenate(list(Jn), axis=1)
        d = -np.linalg.lstsq(Jm, r, rcond=None)[0]
        X = X.copy()
        X[:, 2] += d.reshape(3, -1)
        X = st.slave_ends(X)
    return X


def enforce_boundary(net, tol=1e-10):
    """Impose pinning, concurrency, zero end curvature and the junction balance.

    The balance is restored by moving the second node of each curve
    (:func:`project_balance`).

    Returns
    -------
    Network
    """
    X = np.array(net.nodes, dtype=float)
    X[:, -1] = net.endpoints
    J = X[:, 0]
    if not (np.array_equal(J[0], J[1]) and np.array_equal(J[0], J[2])):
        X[:, 0] = J.mean(axis=0)
    X = st.slave_ends(X)
    if np.linalg.norm(balance(X, net.lam)) > tol:
        X = project_balance(X, net.lam, tol=tol)
    return net.replace(nodes=X)


# -- reduced coordinates ----------------------------------------------------


def _reduce_T(y):
    """Adjoint of the free-node map applied to nodal arrays ``(3, N+1, n, ...)``."""
    N = y.shape[1] - 1
    r = y[:, 2 : N - 1].copy()
    shp = (1, 4) + (1,) * (y.ndim - 2)
    r[:, 0:4] += AW.reshape(shp) * y[:, 1:2]
    r[:, -1:-5:-1] += AW.reshape(shp) * y[:, N - 1 : N]
    return r


def _expand(v, u):
    """Nodal velocities from free-node velocities ``v`` and junction velocity ``u``."""
    nf = v.shape[1]
    N = nf + 3
    out = np.zeros((3, N + 1) + v.shape[2:])
    out[:, 0] = u
    out[:, 2 : N - 1] = v
    out[:, 1] = A0 * u + np.einsum("k,ik...->i...", AW, v[:, 0:4])
    out[:, N - 1] = np.einsum("k,ik...->i...", AW, v[:, -1:-5:-1])
    return out


def _mass_inverse(x, Dg, W1, WN):
    """Apply the inverse of the free-node mass matrix.

    The matrix is ``diag(Dg)`` plus one rank-one term per end coming from the
    slaved node; both are inverted with the Sherman-Morrison formula.
    """
    tail = (None,) * (x.ndim - 2)
    y = x / Dg[(slice(None), slice(None)) + tail]
    for Wr, rows in ((W1, slice(0, 4)), (WN, slice(-1, -5, -1))):
        da = AW[None, :] / Dg[:, rows]
        den = 1.0 + Wr * (AW[None, :] * da).sum(axis=1)
        dot = np.einsum("k,ik...->i...", AW, y[:, rows])
        fac = (Wr / den)[(slice(None),) + tail] * dot
        y[:, rows] -= da[(slice(None), slice(None)) + tail] * fac[:, None]
    return y


@dataclass(frozen=True)
class _Velocity:
    v: np.ndarray  # nodal velocity (3, N+1, n)
    u: np.ndarray  # junction velocity (n,)
    phi0: np.ndarray  # tangential junction speeds (3,)
    tangents: np.ndarray  # junction tangents (3, n)
    dissipation: float
    jac: np.ndarray


def _common(X, lam):
    N = X.shape[1] - 1
    w = st.trapezoid_weights(N)
    g = energy_gradient(X, lam)
    psi, m, tau = arclength_profile(X)
    T = tau[:, 0]
    Wn = w * m
    Phi = psi[..., None, None] * tau[..., :, None] * T[:, None, None, :]
    return g, m, tau, T, Wn, Phi


def velocity_explicit(X, lam, jac=None):
    """Constrained gradient-flow velocity without implicit terms (structured solve)."""
    lam = np.asarray(lam, float)
    N, n = X.shape[1] - 1, X.shape[2]
    g, m, tau, T, Wn, Phi = _common(X, lam)
    eye = np.eye(n)
    B = -Phi.copy()
    B[:, 0] += eye
    B[:, 1] += A0 * eye
    Q = _reduce_T(Wn[..., None, None] * B)
    r = _reduce_T(g)
    fvec = (g[:, 0] + A0 * g[:, 1]).sum(axis=0)
    H = np.einsum("ij,ijab,ijac->bc", Wn, B, B)
    if jac is None:
        jac = balance_jacobian(X, lam)
    S = np.zeros((3, N + 1, n, n))
    S[:, :K_SIG] = np.transpose(jac, (0, 2, 3, 1))
    Z = _reduce_T(S)
    Y = (S[:, 0] + A0 * S[:, 1]).sum(axis=0)
    Mc = _mass_inverse(
        np.concatenate([r[..., None], Q, Z], axis=-1), Wn[:, 2 : N - 1], Wn[:, 1], Wn[:, N - 1]
    )
    a, bQ, bZ = Mc[..., 0], Mc[..., 1 : 1 + n], Mc[..., 1 + n :]
    QtA = np.einsum("inab,ina->b", Q, a)
    ZtA = np.einsum("inab,ina->b", Z, a)
    QtQ = np.einsum("inab,inac->bc", Q, bQ)
    QtZ = np.einsum("inab,inac->bc", Q, bZ)
    ZtQ = np.einsum("inab,inac->bc", Z, bQ)
    ZtZ = np.einsum("inab,inac->bc", Z, bZ)
    K = np.block([[H - QtQ, Y - QtZ], [Y.T - ZtQ, -ZtZ]])
    rhs = np.concatenate([QtA - fvec, ZtA])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise LinearSolveFailure(str(exc)) from exc
    u, mu = sol[:n], sol[n:]
    v = -(a + bQ @ u + bZ @ mu)
    vel = _expand(v, u)
    R = vel - np.einsum("ijab,b->ija", Phi, u)
    diss = float(np.sum(Wn * np.einsum("ijd,ijd->ij", R, R)))
    return _Velocity(vel, u, T @ u, T, diss, jac)


@lru_cache(maxsize=8)
def _free_map(N, n):
    """Sparse map from ``q = [u, free nodes]`` to flattened nodal velocities."""
    nf = N - 3
    nq = n + 3 * nf * n
    rows, cols, vals = [], [], []

    def full(i, j, c):
        return (i * (N + 1) + j) * n + c

    def free(i, j, c):
        return n + (i * nf + (j - 2)) * n + c

    for i in range(3):
        for c in range(n):
            rows.append(full(i, 0, c)); cols.append(c); vals.append(1.0)
            rows.append(full(i, 1, c)); cols.append(c); vals.append(A0)
            for k, wk in zip(range(2, 6), AW):
                rows.append(full(i, 1, c)); cols.append(free(i, k, c)); vals.append(wk)
                rows.append(full(i, N - 1, c)); cols.append(free(i, N - k, c)); vals.append(wk)
            for j in range(2, N - 1):
                rows.append(full(i, j, c)); cols.append(free(i, j, c)); vals.append(1.0)
    return sp.csr_matrix((vals, (rows, cols)), shape=(3 * (N + 1) * n, nq))


@lru_cache(maxsize=8)
def _node_difference_map(N, n):
    """Sparse map from nodes ``(N+1, n)`` to per-node ``[a_j, b_j]`` rows."""
    D1, D2 = st.difference_matrices(N)
    I = sp.identity(n, format="csr")
    stacked = sp.vstack([sp.kron(D2, I), sp.kron(D1, I)], format="csr")
    j, half, c = np.meshgrid(np.arange(N + 1), np.arange(2), np.arange(n), indexing="ij")
    perm = (half * (N + 1) * n + j * n + c).ravel()
    return stacked[perm]


def node_hessians(X, lam, eps=1e-30):
    """Per-node Hessians of the energy density in ``(a, b)``, clipped to be PSD.

    Columns come from complex-step differentiation of the analytic density
    gradient; negative eigenvalues are set to zero.

    Returns
    -------
    ndarray, shape (3, N+1, 2n, 2n)
    """
    N, n = X.shape[1] - 1, X.shape[2]
    b, a = st.d12(X, 1.0 / N)
    z = np.concatenate([a, b], axis=-1).astype(complex)
    E = np.eye(2 * n)
    Zs = z[None] + 1j * eps * E[:, None, None, :]
    ga, gb = node_energy_gradient(Zs[..., :n], Zs[..., n:], np.asarray(lam, float))
    cols = np.concatenate([ga, gb], axis=-1).imag / eps  # (2n, 3, N+1, 2n)
    H = np.moveaxis(cols, 0, -1)
    H = 0.5 * (H + np.swapaxes(H, -1, -2))
    vals, vecs = np.linalg.eigh(H)
    vals = np.clip(vals, 0.0, None)
    return np.einsum("...ik,...k,...jk->...ij", vecs, vals, vecs)


def _block_diag_nodes(blocks):
    """Sparse block diagonal matrix from per-node ``(k, k)`` blocks."""
    M, k, _ = blocks.shape
    idx = np.arange(M * k).reshape(M, k)
    rows = np.repeat(idx, k, axis=1).ravel()
    cols = np.tile(idx, (1, k)).ravel()
    return sp.csr_matrix((blocks.ravel(), (rows, cols)), shape=(M * k, M * k))


def stiffness_matrix(X, lam):
    """Positive semidefinite approximation of the energy Hessian.

    The exact Hessian of each node's energy density in ``(a, b)`` is clipped
    to its nonnegative spectrum and pulled back through the difference
    stencils, so stretching, bending and tangential spacing modes are all
    treated implicitly.
    """
    N, n = X.shape[1] - 1, X.shape[2]
    w = st.trapezoid_weights(N)
    C = _node_difference_map(N, n)
    H = node_hessians(X, lam) * w[None, :, None, None]
    mats = [C.T @ _block_diag_nodes(H[i]) @ C for i in range(3)]
    return sp.block_diag(mats, format="csr")


def velocity_sparse(X, lam, dt_implicit=0.0, jac=None):
    """Constrained velocity from one sparse saddle-point solve.

    With ``dt_implicit > 0`` the stiffness from :func:`stiffness_matrix` is
    added to the metric, which yields the linearly implicit step
    ``(G + dt K) v = -grad E`` on the admissible subspace.
    """
    lam = np.asarray(lam, float)
    N, n = X.shape[1] - 1, X.shape[2]
    g, m, tau, T, Wn, Phi = _common(X, lam)
    Jm = _free_map(N, n)
    nq = Jm.shape[1]
    Wfull = np.repeat(Wn.ravel(), n)
    Phif = sp.csr_matrix(Phi.reshape(-1, n))
    sel = sp.hstack([sp.identity(n, format="csr"), sp.csr_matrix((n, nq - n))], format="csr")
    Amap = (Jm - Phif @ sel).tocsr()
    G = (Amap.T @ sp.diags(Wfull) @ Amap).tocsr()
    if dt_implicit > 0:
        G = G + dt_implicit * (Jm.T @ stiffness_matrix(X, lam) @ Jm)
    if jac is None:
        jac = balance_jacobian(X, lam)
    S = np.zeros((n, 3, N + 1, n))
    S[:, :, :K_SIG] = np.transpose(jac, (1, 0, 2, 3))
    SJ = sp.csr_matrix(Jm.T @ S.reshape(n, -1).T).T
    K = sp.bmat([[G, SJ.T], [SJ, None]], format="csc")
    rhs = np.concatenate([-(Jm.T @ g.ravel()), np.zeros(n)])
    try:
        sol = spla.splu(K).solve(rhs)
    except RuntimeError as exc:
        raise LinearSolveFailure(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise LinearSolveFailure("non-finite solution")
    q = sol[:nq]
    vel = (Jm @ q).reshape(X.shape)
    u = q[:n]
    R = vel - np.einsum("ijab,b->ija", Phi, u)
    diss = float(np.sum(Wn * np.einsum("ijd,ijd->ij", R, R)))
    return _Velocity(vel, u, T @ u, T, diss, jac)


# -- steps ------------------------------------------------------------------


def _energy(X, lam):
    el, L = energy_terms(X)
    return float(np.sum(el + lam * L))


def _advance(state, dt, implicit, eps, floor=0.0):
    net = state.net
    X = net.nodes
    lam = net.lam
    if implicit:
        vel = velocity_sparse(X, lam, dt_implicit=dt)
    else:
        vel = velocity_explicit(X, lam)
    Y = X + dt * vel.v
    if not np.all(np.isfinite(Y)):
        raise BlowUp("non-finite node positions")
    Y[:, 0] = Y[0, 0]
    Y[:, -1] = net.endpoints
    Y = st.slave_ends(Y)
    Y = project_balance(Y, lam, jac=vel.jac)
    E_new = _energy(Y, lam)
    if not math.isfinite(E_new):
        raise BlowUp("non-finite energy")
    E_old = state.energy
    if eps is None:
        eps = 1e-8 * abs(E_old)
    # the tolerance eps * dt is also capped relative to E so huge implicit
    # steps cannot hide a real increase; floor absorbs round-off near E = 0
    if E_new > E_old + min(eps * dt, 1e-9 * abs(E_old)) + floor:
        raise StepRejected(f"energy increased by {E_new - E_old:.3e} at dt = {dt:.3e}")
    info = StepInfo(
        dt=dt,
        dissipation_lhs=(E_new - E_old) / dt,
        dissipation_rhs=-vel.dissipation,
        phi0=vel.phi0,
        junction_velocity=vel.u,
        balance_residual=float(np.linalg.norm(balance(Y, lam))),
    )
    new_net = Network(Y, lam, net.endpoints, net.allow_zero_lambda, strict=False)
    return FlowState(
        net=new_net,
        time=state.time + dt,
        step_count=state.step_count + 1,
        last_dt=dt,
        energy=E_new,
        step=info,
    )


def step_explicit(state, dt, eps=None, floor=0.0):
    """One forward Euler step of the constrained gradient flow.

    Parameters
    ----------
    state : FlowState
    dt : float
    eps : float, optional
        Allowed energy increase per unit time (default ``1e-8 |E|``).
    floor : float
        Absolute allowance for round-off in the energy.

    Raises
    ------
    StepRejected
        If the energy rises by more than ``min(eps dt, 1e-9 |E|) + floor``.
    BlowUp
        If a node or the energy becomes non-finite.
    """
    return _advance(state, dt, False, eps, floor)


def step_imex(state, dt, eps=None, floor=0.0):
    """One linearly implicit step.

    The velocity solves ``(G + dt K) v = -grad E`` on the admissible subspace,
    with ``G`` the dissipation metric and ``K`` the clipped energy Hessian of
    :func:`stiffness_matrix`, both frozen at the current state. Arguments and
    rejection rule as in :func:`step_explicit`.

    Raises
    ------
    LinearSolveFailure, StepRejected, BlowUp
    """
    return _advance(state, dt, True, eps, floor)


# -- driver -----------------------------------------------------------------


@dataclass
class RunResult:
    """Outcome of :func:`run`.

    ``history`` holds ``(t, E, dissipation_lhs, dissipation_rhs)`` for the
    initial state and every accepted step.
    """

    state: FlowState
    records: list
    history: list = field(default_factory=list)
    halt_reason: str | None = None
    converged: bool = False
    converged_time: float | None = None
    rejections: int = 0
    steps: int = 0
    growth_budget_exceeded: bool = False


def check_assumptions(net, thresholds, min_length0):
    """Raise HaltAssumptionViolated if a non-degeneracy monitor fires."""
    m, b = _metric(net.nodes)
    T = b[:, 0] / m[:, 0, None]
    if span_dimension(T) < 2:
        raise HaltAssumptionViolated("Span", "junction tangents span a line")
    delta = angle_margin(T)
    if delta < thresholds.delta_min:
        raise HaltAssumptionViolated("Delta", f"angle margin {delta:.3e} < {thresholds.delta_min:.1e}")
    L = (st.trapezoid_weights(net.N) * m).sum(axis=1)
    floor = thresholds.min_length_fraction * min_length0
    if L.min() < floor:
        i = int(np.argmin(L))
        raise HaltAssumptionViolated("Length", f"curve {i + 1} length {L[i]:.4g} < {floor:.4g}")
    return L


def run(state, config, on_sample=None, on_snapshot=None):
    """Advance ``state`` to ``config.t_end`` or until a monitor halts the run.

    Parameters
    ----------
    state : FlowState
    config : FlowConfig
    on_sample : callable, optional
        Called with ``(state, record)`` for every diagnostics sample.
    on_snapshot : callable, optional
        Called with ``state`` every ``config.output_every`` steps.

    Returns
    -------
    RunResult

    Raises
    ------
    HaltAssumptionViolated, BlowUp
        With ``.state`` and ``.records`` attached.
    """
    from .diagnostics import sample_record

    th = config.halt_on
    implicit = config.dt_mode == "imex"
    L0 = energy_terms(state.net.nodes)[1]
    min_length0 = float(L0.min())
    records = []
    result = RunResult(state=state, records=records)
    result.history.append((state.time, state.energy, math.nan, math.nan))

    def sample(s):
        rec = sample_record(s)
        records.append(rec)
        if on_sample is not None:
            on_sample(s, rec)
        if not result.converged and rec["el_residual"] + rec["balance_residual"] < config.el_threshold:
            result.converged = True
            result.converged_time = s.time
        if rec["max_kappa"] > th.max_kappa:
            raise BlowUp(f"curvature {rec['max_kappa']:.3e} above cap")
        if np.any(s.net.lam == 0):
            budget = L0 * (1.0 + th.growth_rate * s.time)
            if np.any(np.array([rec["L_1"], rec["L_2"], rec["L_3"]]) > budget):
                result.growth_budget_exceeded = True

    eps = config.energy_eps if config.energy_eps is not None else 1e-8 * abs(state.energy)
    floor = 1e-14 * abs(state.energy)
    dt_user = config.dt_initial
    dt = dt_user if dt_user is not None else config.safety * explicit_dt_limit(state.net)
    try:
        check_assumptions(state.net, th, min_length0)
        sample(state)
        if on_snapshot is not None and config.output_every:
            on_snapshot(state)
        tiny = 1e-12 * max(1.0, abs(config.t_end))
        while state.time < config.t_end - tiny:
            if config.max_steps is not None and state.step_count >= config.max_steps:
                break
            if not implicit and dt_user is None:
                dt = config.safety * explicit_dt_limit(state.net)
            h = min(dt, config.t_end - state.time)
            for attempt in range(config.max_rejections + 1):
                try:
                    new = (step_imex if implicit else step_explicit)(state, h, eps, floor)
                    break
                except StepRejected:
                    result.rejections += 1
                    h *= 0.5
                    if implicit:
                        dt = h
            else:
                raise BlowUp(f"step rejected {config.max_rejections} times at t = {state.time:.6g}")
            state = new
            result.state = state
            result.history.append(
                (state.time, state.energy, state.step.dissipation_lhs, state.step.dissipation_rhs)
            )
            if implicit and h >= dt:
                dt = min(dt * config.dt_growth, config.dt_max)
            check_assumptions(state.net, th, min_length0)
            last = state.time >= config.t_end - tiny
            if state.step_count % config.sample_every == 0 or last:
                sample(state)
                if config.stop_on_convergence and result.converged:
                    break
            if on_snapshot is not None and config.output_every and (
                state.step_count % config.output_every == 0 or last
            ):
                on_snapshot(state)
    except (HaltAssumptionViolated, BlowUp) as exc:
        result.halt_reason = getattr(exc, "reason", "BlowUp")
        exc.state = state
        exc.records = records
        exc.result = result
        raise
    result.steps = state.step_count
    return result


def initial_state(net, enforce=True, thresholds=None):
    """Flow state at t = 0, optionally after :func:`enforce_boundary`.

    The junction monitors are checked first: the balance projection is
    ill-conditioned when the tangents are (nearly) collinear, so such data
    halts here instead of being silently modified.

    Raises
    ------
    HaltAssumptionViolated
        With reason ``"Span"`` or ``"Delta"``.
    """
    if enforce:
        th = thresholds or HaltThresholds()
        m, b = _metric(net.nodes)
        T = b[:, 0] / m[:, 0, None]
        if span_dimension(T) < 2:
            raise HaltAssumptionViolated("Span", "junction tangents span a line")
        delta = angle_margin(T)
        if delta < th.delta_min:
            raise HaltAssumptionViolated("Delta", f"angle margin {delta:.3e} < {th.delta_min:.1e}")
        net = enforce_boundary(net)
    return FlowState(net=net)


__all__ = [
    "FlowConfig",
    "FlowState",
    "HaltThresholds",
    "RunResult",
    "StepInfo",
    "enforce_boundary",
    "explicit_dt_limit",
    "initial_state",
    "junction_velocity",
    "normal_velocity",
    "run",
    "step_explicit",
    "step_imex",
    "tangential_field",
]
