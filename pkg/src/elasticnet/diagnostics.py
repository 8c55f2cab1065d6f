"""Monitors for norms, interpolation inequalities, boundary conditions and dissipation."""

import json
import math
from dataclasses import dataclass

import numpy as np

from . import _stencil as st
from .curve import MAX_ORDER, _as_nodes, check_regular, curvature_fields, nabla_powers
from .errors import DegenerateJunction, OrderTooHigh
from .junction import angle_margin, junction_state, span_dimension
from .network import energy_terms, junction_balance_vector, network_el_residual

CSV_COLUMNS = (
    "t", "E_total", "E_1", "E_2", "E_3", "L_1", "L_2", "L_3",
    "dissipation_lhs", "dissipation_rhs", "det", "delta", "span_dim",
    "phi1_0", "phi2_0", "phi3_0", "el_residual", "spread",
)

# scale-invariant curvature norms below this count as a straight curve
ZERO_CURVATURE = 1e-9


# -- scale-invariant norms --------------------------------------------------


@dataclass(frozen=True)
class NormReport:
    """``L2_norms[m]`` is the plain L2(ds) norm of ``nabla_s^m kappa``;
    ``scaled_norms[m]`` multiplies it by ``L^(m + 1/2)``."""

    L2_norms: np.ndarray
    scaled_norms: np.ndarray
    k: int


def _derivatives(curve, order):
    if order < 0 or order > MAX_ORDER:
        raise OrderTooHigh(f"order {order} outside [0, {MAX_ORDER}]")
    X = _as_nodes(curve)
    check_regular(X)
    fields = curvature_fields(X)
    w = st.trapezoid_weights(X.shape[-2] - 1)
    ds = w * fields[0]
    return nabla_powers(X, order, fields), ds, float(ds.sum())


def _lp(v, ds, L, i, p):
    mag = np.linalg.norm(v, axis=-1)
    if math.isinf(p):
        return L ** (i + 1) * float(mag.max())
    return L ** (i + 1 - 1 / p) * float(np.sum(ds * mag**p)) ** (1 / p)


def scale_invariant_norm(curve, i, p=2):
    """``L^(i+1-1/p) (int |nabla_s^i kappa|^p ds)^(1/p)``; ``p = inf`` uses the maximum.

    Examples
    --------
    >>> import numpy as np
    >>> from elasticnet.curve import DiscreteCurve
    >>> x = np.linspace(0, 1, 401)
    >>> semi = DiscreteCurve(np.stack([np.cos(np.pi * x), np.sin(np.pi * x)], axis=1))
    >>> round(scale_invariant_norm(semi, 0, 2), 4)
    3.1416
    """
    ks, ds, L = _derivatives(curve, i)
    return _lp(ks[i], ds, L, i, p)


def sobolev_norm(curve, k, p=2):
    """``sum_{i<=k}`` of the scale-invariant norms."""
    ks, ds, L = _derivatives(curve, k)
    return sum(_lp(ks[i], ds, L, i, p) for i in range(k + 1))


def norm_report(curve, k=MAX_ORDER):
    ks, ds, L = _derivatives(curve, k)
    plain = np.array([math.sqrt(float(np.sum(ds * np.einsum("jd,jd->j", v, v)))) for v in ks])
    scaled = plain * L ** (np.arange(k + 1) + 0.5)
    return NormReport(L2_norms=plain, scaled_norms=scaled, k=k)


def gagliardo_nirenberg_check(curve, i, k, p=2):
    """Both sides of the interpolation inequality without its constant.

    ``lhs = ||nabla_s^i kappa||_p`` and ``rhs = ||kappa||_2^(1-a) ||kappa||_{k,2}^a``
    with ``a = (i + 1/2 - 1/p) / k``. The ratio is reported as 0 when
    ``kappa`` vanishes to round-off (scale-invariant norm below ``ZERO_CURVATURE``).

    Returns
    -------
    (float, float, float)
    """
    if not 0 <= i < k:
        raise ValueError("need 0 <= i < k")
    ks, ds, L = _derivatives(curve, k)
    alpha = (i + 0.5 - (0.0 if math.isinf(p) else 1.0 / p)) / k
    lhs = _lp(ks[i], ds, L, i, p)
    k0 = _lp(ks[0], ds, L, 0, 2)
    kk = sum(_lp(ks[j], ds, L, j, 2) for j in range(k + 1))
    rhs = k0 ** (1 - alpha) * kk**alpha
    if kk <= ZERO_CURVATURE:
        return lhs, rhs, 0.0
    return lhs, rhs, lhs / rhs


def sobolev_equivalence_check(curve, k):
    """``||kappa||_{k,2} / (||nabla_s^k kappa||_2 + ||kappa||_2)``, 0 for a straight curve."""
    ks, ds, L = _derivatives(curve, k)
    full = sum(_lp(ks[j], ds, L, j, 2) for j in range(k + 1))
    bracket = _lp(ks[k], ds, L, k, 2) + _lp(ks[0], ds, L, 0, 2)
    return full / bracket if full > ZERO_CURVATURE else 0.0


# -- assumption monitor -----------------------------------------------------


@dataclass(frozen=True)
class AssumptionMonitor:
    min_length: float
    lengths: tuple
    delta: float
    span_dim: int
    violated: str | None


def assumption_monitor(net, thresholds=None, reference_length=None):
    """Lengths, angle margin and tangent span against the halt thresholds.

    Parameters
    ----------
    net : Network
    thresholds : HaltThresholds, optional
    reference_length : float, optional
        Length that ``min_length_fraction`` is relative to; defaults to the
        mean of the current lengths.

    Returns
    -------
    AssumptionMonitor
        ``violated`` is ``"Length"`` or ``"Delta"`` (length checked first) or None.
    """
    from .flow import HaltThresholds

    th = thresholds or HaltThresholds()
    m, tau, _ = curvature_fields(net.nodes)
    L = (st.trapezoid_weights(net.N) * m).sum(axis=1)
    T = tau[:, 0]
    delta = angle_margin(T)
    ref = float(L.mean()) if reference_length is None else reference_length
    violated = None
    if L.min() < th.min_length_fraction * ref:
        violated = "Length"
    elif delta < th.delta_min:
        violated = "Delta"
    return AssumptionMonitor(
        min_length=float(L.min()),
        lengths=tuple(map(float, L)),
        delta=delta,
        span_dim=span_dimension(T),
        violated=violated,
    )


# -- boundary conditions ----------------------------------------------------


def boundary_residual_report(state):
    """Named residuals of every boundary and junction condition.

    Accepts a FlowState or a Network. Values are maxima over the three curves.
    ``bm4`` is the junction reduction ``|nabla^4 kappa - lam nabla^2 kappa - phi nabla kappa|``
    using the junction-system speeds.
    """
    net = getattr(state, "net", state)
    X = net.nodes
    fields = curvature_fields(X)
    ks = nabla_powers(X, 4, fields)
    js = junction_state(net)
    phi = js.phi0
    bm4 = ks[4][:, 0] - net.lam[:, None] * ks[2][:, 0] - phi[:, None] * ks[1][:, 0]
    nrm = lambda v: np.linalg.norm(v, axis=-1)  # noqa: E731
    J = X[:, 0]
    return {
        "kappa_junction": float(nrm(ks[0][:, 0]).max()),
        "kappa_end": float(nrm(ks[0][:, -1]).max()),
        "nabla2_kappa_end": float(nrm(ks[2][:, -1]).max()),
        "balance": float(np.linalg.norm(junction_balance_vector(X, net.lam))),
        "bm4": float(nrm(bm4).max()) if np.all(np.isfinite(phi)) else math.nan,
        "pin": float(nrm(X[:, -1] - net.endpoints).max()),
        "concurrency": float(max(nrm(J[0] - J[1]), nrm(J[0] - J[2]))),
    }


# -- dissipation ------------------------------------------------------------


def realized_dissipation(prev_nodes, next_nodes, dt):
    """``sum_i int |v_i - phi_i tau_i|^2 ds`` for the realized step velocity.

    ``v = (f_next - f_prev)/dt``; ``phi_i`` is the linear-in-arclength field
    whose junction value is the tangential part of the junction velocity.
    Geometry is taken at the earlier state.
    """
    from .flow import arclength_profile

    v = (np.asarray(next_nodes) - np.asarray(prev_nodes)) / dt
    psi, m, tau = arclength_profile(np.asarray(prev_nodes))
    T = tau[:, 0]
    phi0 = T @ v[0, 0]
    R = v - (psi * phi0[:, None])[..., None] * tau
    w = st.trapezoid_weights(v.shape[1] - 1)
    return float(np.sum(w * m * np.einsum("ijd,ijd->ij", R, R)))


def dissipation_report(prev, nxt):
    """Energy decay rate versus the dissipation over one step.

    Returns
    -------
    (float, float, float)
        ``lhs = (E_next - E_prev)/dt``, ``rhs = -dissipation`` and the
        relative mismatch ``|lhs - rhs| / |rhs|`` (0 when both vanish).
    """
    dt = nxt.time - prev.time
    if not dt > 0:
        raise ValueError("states must be consecutive with increasing time")
    lhs = (nxt.energy - prev.energy) / dt
    rhs = -realized_dissipation(prev.net.nodes, nxt.net.nodes, dt)
    scale = abs(rhs)
    if scale == 0.0:
        return lhs, rhs, 0.0 if lhs == 0.0 else math.inf
    return lhs, rhs, abs(lhs - rhs) / scale


# -- per-sample records -----------------------------------------------------


def sample_record(state):
    """Diagnostics record for one state: the CSV columns plus nested residuals."""
    from .flow import junction_velocity, velocity_explicit

    net = state.net
    X = net.nodes
    el, L = energy_terms(X)
    E = el + net.lam * L
    js = state.junction
    if state.step is not None:
        phi = state.step.phi0
        lhs, rhs = state.step.dissipation_lhs, state.step.dissipation_rhs
    else:
        try:
            phi = velocity_explicit(X, net.lam).phi0
        except ArithmeticError:
            phi = np.full(3, math.nan)
        lhs = rhs = math.nan
    try:
        spread = junction_velocity(net)[1]
    except DegenerateJunction:
        spread = math.nan
    kappa = curvature_fields(X)[2]
    rec = {
        "t": state.time,
        "E_total": float(E.sum()),
        "E_1": float(E[0]), "E_2": float(E[1]), "E_3": float(E[2]),
        "L_1": float(L[0]), "L_2": float(L[1]), "L_3": float(L[2]),
        "dissipation_lhs": lhs,
        "dissipation_rhs": rhs,
        "det": js.det,
        "delta": js.delta,
        "span_dim": js.span_dim,
        "phi1_0": float(phi[0]), "phi2_0": float(phi[1]), "phi3_0": float(phi[2]),
        "el_residual": network_el_residual(net),
        "spread": spread,
        "step": state.step_count,
        "dt": state.last_dt,
        "max_kappa": float(np.linalg.norm(kappa, axis=-1).max()),
        "residuals": boundary_residual_report(net),
    }
    rec["balance_residual"] = rec["residuals"]["balance"]
    return rec


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def record_json(record):
    """One JSON line; non-finite floats become null."""

    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, float) and not math.isfinite(v):
            return None
        return v

    return json.dumps(clean(record), default=_json_default)


def append_run_log(path, record):
    with open(path, "a") as fh:
        fh.write(record_json(record) + "\n")
