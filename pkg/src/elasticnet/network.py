"""Three-curve star networks, their energies and first variations."""

from dataclasses import dataclass

import numpy as np

from . import _stencil as st
from .curve import (
    DiscreteCurve,
    _as_nodes,
    check_regular,
    curvature_fields,
    format_curve,
    nabla,
    nabla_powers,
    parse_curve_lines,
)
from .errors import InvalidNetwork, ParseError


class Network:
    """Three open curves sharing their first node.

    Node ``j = 0`` of every curve is the triple junction and node ``j = N`` is
    the fixed outer endpoint ``P_i``.

    Parameters
    ----------
    nodes : array_like, shape (3, N+1, n)
        Stacked node positions.
    lam : array_like, shape (3,)
        Length weights.
    endpoints : array_like, shape (3, n), optional
        Fixed endpoints; defaults to the last node of each curve.
    allow_zero_lambda : bool
        Accept ``lam_i = 0`` (otherwise weights must be positive).
    strict : bool
        Validate the structural invariants and raise on failure. Readers use
        ``strict=False`` so that defects can be reported instead.

    Raises
    ------
    InvalidNetwork
        If ``strict`` and an invariant fails.
    """

    __slots__ = ("nodes", "lam", "endpoints", "allow_zero_lambda")

    def __init__(self, nodes, lam, endpoints=None, allow_zero_lambda=False, strict=True):
        X = np.array(nodes, dtype=float)
        if X.ndim != 3 or X.shape[0] != 3 or X.shape[2] < 2:
            raise InvalidNetwork(f"nodes must have shape (3, N+1, n), got {X.shape}")
        lam = np.array(lam, dtype=float).reshape(-1)
        if lam.shape != (3,):
            raise InvalidNetwork("lambda must have three entries")
        P = X[:, -1].copy() if endpoints is None else np.array(endpoints, dtype=float)
        if P.shape != (3, X.shape[2]):
            raise InvalidNetwork("endpoints must have shape (3, n)")
        for a in (X, lam, P):
            a.setflags(write=False)
        object.__setattr__(self, "nodes", X)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "endpoints", P)
        object.__setattr__(self, "allow_zero_lambda", bool(allow_zero_lambda))
        if strict:
            problems = self.violations()
            if problems:
                raise InvalidNetwork("; ".join(problems))

    def __setattr__(self, name, value):
        raise AttributeError("Network is immutable")

    @property
    def N(self):
        return self.nodes.shape[1] - 1

    @property
    def n(self):
        return self.nodes.shape[2]

    @property
    def curves(self):
        return tuple(DiscreteCurve(c) for c in self.nodes)

    @property
    def junction(self):
        return self.nodes[0, 0]

    def replace(self, nodes=None, lam=None, strict=True):
        return Network(
            self.nodes if nodes is None else nodes,
            self.lam if lam is None else lam,
            self.endpoints,
            self.allow_zero_lambda,
            strict=strict,
        )

    def pin_ok(self):
        return bool(np.array_equal(self.nodes[:, -1], self.endpoints))

    def concurrency_ok(self):
        J = self.nodes[:, 0]
        return bool(np.array_equal(J[0], J[1]) and np.array_equal(J[0], J[2]))

    def violations(self):
        """List of violated invariants (empty when valid)."""
        out = []
        X = self.nodes
        if X.shape[1] - 1 < 16:
            out.append("need N >= 16")
        if not np.all(np.isfinite(X)):
            out.append("non-finite node")
        if not self.pin_ok():
            out.append("outer endpoint differs from P_i")
        if not self.concurrency_ok():
            out.append("junction nodes differ")
        P = self.endpoints
        for i in range(3):
            for j in range(i + 1, 3):
                if np.array_equal(P[i], P[j]):
                    out.append(f"endpoints P{i + 1} and P{j + 1} coincide")
        if np.any(self.lam < 0) or not np.all(np.isfinite(self.lam)):
            out.append("lambda must be finite and nonnegative")
        elif not self.allow_zero_lambda and np.any(self.lam == 0):
            out.append("lambda must be positive (enable zero-lambda mode to allow 0)")
        if np.any(np.all(np.diff(X, axis=1) == 0.0, axis=2)):
            out.append("consecutive nodes coincide")
        return out

    def __repr__(self):
        return f"Network(N={self.N}, n={self.n}, lam={self.lam.tolist()})"


@dataclass(frozen=True)
class EnergyBreakdown:
    """Per-curve elastic energies and lengths with the weighted total."""

    elastic: tuple
    lengths: tuple
    weighted_total: float

    def per_curve(self, lam):
        return tuple(e + l * L for e, l, L in zip(self.elastic, lam, self.lengths))


# -- energies ---------------------------------------------------------------


def energy_terms(X):
    """Elastic energies and lengths of stacked curves ``(..., N+1, n)``."""
    N = X.shape[-2] - 1
    w = st.trapezoid_weights(N)
    m, _, kappa = curvature_fields(X)
    k2 = np.einsum("...d,...d->...", kappa, kappa)
    return 0.5 * (w * m * k2).sum(axis=-1), (w * m).sum(axis=-1)


def elastic_energy(curve):
    """``1/2 int |kappa|^2 ds`` by the trapezoid rule.

    Examples
    --------
    >>> import numpy as np
    >>> x = np.linspace(0, 1, 201)
    >>> semi = np.stack([np.cos(np.pi * x), np.sin(np.pi * x)], axis=1)
    >>> round(elastic_energy(DiscreteCurve(semi)), 4)
    1.5708
    """
    X = _as_nodes(curve)
    check_regular(X)
    return float(energy_terms(X)[0])


def network_energy(net):
    check_regular(net.nodes)
    el, L = energy_terms(net.nodes)
    total = float(np.sum(el + net.lam * L))
    return EnergyBreakdown(tuple(map(float, el)), tuple(map(float, L)), total)


def node_energy_gradient(a, b, lam):
    """Derivatives of ``|P a|^2 / (2|b|^3) + lam |b|`` with respect to ``a`` and ``b``.

    ``P`` projects onto the normal of ``b``. Plain arithmetic only, so complex
    arguments give the analytic continuation used for complex-step Hessians.
    """
    m2 = (b * b).sum(-1)
    m = np.sqrt(m2)
    c = (a * b).sum(-1)
    aa = (a * a).sum(-1)
    m5 = m2 * m2 * m
    ga = (a - (c / m2)[..., None] * b) / (m * m2)[..., None]
    gb = (
        (-1.5 * aa / m5 + 2.5 * c**2 / (m5 * m2))[..., None] * b
        - (c / m5)[..., None] * a
        + (np.asarray(lam)[..., None] / m)[..., None] * b
    )
    return ga, gb


def energy_gradient(X, lam):
    """Gradient of ``sum_i (elastic_i + lam_i L_i)`` with respect to all nodes.

    The discrete energy per node is ``w (|P a|^2 / (2|b|^3) + lam |b|)`` with
    ``a``, ``b`` the second and first parameter differences, so the gradient
    follows from the adjoint of the difference stencils.
    """
    N = X.shape[-2] - 1
    h = 1.0 / N
    w = st.trapezoid_weights(N)
    b, a = st.d12(X, h)
    ga, gb = node_energy_gradient(a, b, lam)
    return st.d12_adjoint(w[:, None] * gb, w[:, None] * ga, h)


# -- first variations -------------------------------------------------------


def first_variation_length(curve, eta):
    """Directional derivative of the length along ``eta``.

    Evaluates ``<tau, eta>|_0^1 - int <kappa, eta> ds`` discretely.
    """
    X = _as_nodes(curve)
    eta = np.asarray(eta, dtype=float)
    m, tau, kappa = curvature_fields(X)
    w = st.trapezoid_weights(X.shape[0] - 1)
    bnd = tau[-1] @ eta[-1] - tau[0] @ eta[0]
    return float(bnd - np.sum(w * m * np.einsum("jd,jd->j", kappa, eta)))


def first_variation_elastic(curve, eta):
    """Directional derivative of ``1/2 int |kappa|^2 ds`` along ``eta``.

    Boundary terms ``<d_s eta, kappa> - <eta, nabla_s kappa + |kappa|^2 tau / 2>``
    at both ends plus ``int <nabla_s^2 kappa + |kappa|^2 kappa / 2, eta> ds``.
    """
    X = _as_nodes(curve)
    eta = np.asarray(eta, dtype=float)
    N = X.shape[0] - 1
    m, tau, kappa = curvature_fields(X)
    k1 = nabla(kappa, m, tau)
    k2v = nabla(k1, m, tau)
    ksq = np.einsum("jd,jd->j", kappa, kappa)
    ds_eta = st.d1(eta, 1.0 / N) / m[:, None]
    term = (
        np.einsum("jd,jd->j", ds_eta, kappa)
        - np.einsum("jd,jd->j", eta, k1 + 0.5 * ksq[:, None] * tau)
    )
    bnd = term[-1] - term[0]
    w = st.trapezoid_weights(N)
    integrand = np.einsum("jd,jd->j", k2v + 0.5 * ksq[:, None] * kappa, eta)
    return float(bnd + np.sum(w * m * integrand))


def euler_lagrange_field(X, lam):
    """``nabla_s^2 kappa + |kappa|^2 kappa / 2 - lam kappa`` at every node."""
    fields = curvature_fields(X)
    m, tau, kappa = fields
    k = nabla_powers(X, 2, fields)
    ksq = np.einsum("...d,...d->...", kappa, kappa)
    lam = np.asarray(lam, dtype=float)
    return k[2] + (0.5 * ksq)[..., None] * kappa - lam[..., None, None] * kappa, m


def euler_lagrange_residual(curve, lam):
    """L2(ds) norm of the elastica operator over interior nodes."""
    X = _as_nodes(curve)
    r, m = euler_lagrange_field(X, lam)
    w = st.trapezoid_weights(X.shape[-2] - 1)
    sq = w * m * np.einsum("...d,...d->...", r, r)
    return float(np.sqrt(np.sum(sq[..., 1:-1])))


def network_el_residual(net):
    """Root of the summed squared per-curve Euler-Lagrange residuals."""
    r, m = euler_lagrange_field(net.nodes, net.lam)
    w = st.trapezoid_weights(net.N)
    sq = w * m * np.einsum("...d,...d->...", r, r)
    return float(np.sqrt(np.sum(sq[:, 1:-1])))


def junction_balance_vector(X, lam):
    """``sum_i (nabla_s kappa_i - lam_i tau_i)`` at the junction node."""
    m, tau, kappa = curvature_fields(X)
    k1 = nabla(kappa, m, tau)
    lam = np.asarray(lam)
    return (k1[..., 0, :] - lam[..., None] * tau[..., 0, :]).sum(axis=-2)


def junction_balance_residual(net):
    """Norm of the natural third-order junction condition."""
    return float(np.linalg.norm(junction_balance_vector(net.nodes, net.lam)))


# -- files -----------------------------------------------------------------


def format_network(net):
    head = f"{net.n} {net.N} " + " ".join(format(v, ".17g") for v in net.lam)
    return head + "\n" + "".join(format_curve(c) for c in net.nodes)


def parse_network(text, allow_zero_lambda=False, strict=False):
    """Parse the network file format.

    Header ``n N lambda1 lambda2 lambda3`` followed by three curve blocks.
    Raises :class:`ParseError` with a 1-based line number on malformed input.
    """
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty file", 1)
    head = lines[0].split()
    if len(head) != 5:
        raise ParseError("header must be 'n N lambda1 lambda2 lambda3'", 1)
    try:
        n, N = int(head[0]), int(head[1])
        lam = [float(v) for v in head[2:]]
    except ValueError:
        raise ParseError("malformed header values", 1) from None
    pos = 1
    blocks = []
    for _ in range(3):
        nodes, nxt = parse_curve_lines(lines, pos)
        if nodes.shape != (N + 1, n):
            raise ParseError(f"curve block shape {nodes.shape} does not match header", pos + 1)
        blocks.append(nodes)
        pos = nxt
    if any(ln.strip() for ln in lines[pos:]):
        raise ParseError("trailing content after third curve", pos + 1)
    return Network(np.stack(blocks), lam, allow_zero_lambda=allow_zero_lambda, strict=strict)


def write_network(net, path):
    with open(path, "w") as fh:
        fh.write(format_network(net))


def read_network(path, allow_zero_lambda=False, strict=False):
    with open(path) as fh:
        return parse_network(fh.read(), allow_zero_lambda=allow_zero_lambda, strict=strict)
