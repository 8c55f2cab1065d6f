import numpy as np
import pytest
from hypothesis import given, settings, strategies as hst

from conftest import arc, segment
from elasticnet import _stencil as st
from elasticnet.compat import generate_star, symmetric_star
from elasticnet.curve import curvature_fields, nabla_powers
from elasticnet.errors import BlowUp, HaltAssumptionViolated, StepRejected
from elasticnet.flow import (
    FlowConfig,
    FlowState,
    HaltThresholds,
    enforce_boundary,
    explicit_dt_limit,
    initial_state,
    junction_velocity,
    normal_velocity,
    run,
    step_explicit,
    step_imex,
    tangential_field,
)
from elasticnet.network import Network, energy_terms, junction_balance_residual

ANG = np.pi / 2 + 2 * np.pi * np.arange(3) / 3


def straight_star(N=32, lam=(0.5, 0.5, 0.5)):
    P = np.stack([np.cos(ANG), np.sin(ANG)], axis=1)
    return Network(np.stack([segment((0, 0), p, N).nodes for p in P]), lam)


def asymmetric_star(N, lam=(0.3, 0.1, 2.0)):
    P = np.array([[0, 2.0], [-1.5, -1], [1.2, -0.7]])
    ang = np.array([1.9, 3.5, 5.6])
    return generate_star(P, [0.1, 0.2], np.stack([np.cos(ang), np.sin(ang)], 1), N, lam=lam)


def spatial_star(N):
    P = np.array([[0, 2.0, 0.5], [-1.5, -1, 0], [1.2, -0.7, -0.4]])
    T = np.array([[0, 1, 0.3], [-1, -0.4, 0], [0.8, -0.6, -0.2]])
    return generate_star(P, [0, 0, 0], T / np.linalg.norm(T, axis=1)[:, None], N, lam=(0.5, 0.5, 0.5))


def lengths(net):
    return energy_terms(net.nodes)[1]


class TestConfig:
    @pytest.mark.parametrize(
        "kw", [{"dt_initial": 0.0}, {"safety": 1.5}, {"dt_mode": "rk4"}, {"sample_every": 0}]
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            FlowConfig(**kw)

    def test_defaults(self):
        th = HaltThresholds()
        assert th.min_length_fraction == 1e-3 and th.delta_min == 1e-6


class TestNormalVelocity:
    def test_segment(self):
        assert np.max(np.abs(normal_velocity(segment((0, 0), (2, 1), 40), 0.3))) < 1e-10

    def test_circle_without_length(self):
        R = 2.0
        c = arc(R, 0.0, 2.0, 200)
        V = normal_velocity(c, 0.0)
        # oracle: -1/2 |kappa|^2 kappa with kappa = -(f - centre)/R^2 pointing inwards
        kappa = -c.nodes / R**2
        exact = -0.5 * R**-2 * kappa
        assert np.max(np.abs(np.linalg.norm(V, axis=1)[2:-2] - 0.5 * R**-3)) < 1e-3
        assert np.max(np.abs(V - exact)[2:-2]) < 1e-3

    def test_free_elastica_circle(self):
        R = 1.5
        errs = [np.max(np.abs(normal_velocity(arc(R, 0, 2, N), 1 / (2 * R**2)))) for N in (100, 200)]
        assert errs[0] < 10.0 / 100**2
        assert errs[1] < errs[0]


class TestTangentialField:
    def test_zero(self):
        assert np.array_equal(tangential_field(arc(1, 0, 1, 32), 0.0), np.zeros(33))

    def test_unit_segment(self):
        x = np.linspace(0, 1, 41)
        assert np.allclose(tangential_field(segment((0, 0), (1, 0), 40), 2.0), 2 * (1 - x), atol=1e-14)

    @pytest.mark.parametrize("N", [64, 128])
    def test_identity(self, N):
        net = asymmetric_star(N)
        for c in net.curves:
            m, _, _ = curvature_fields(c.nodes)
            phi0 = 0.7
            phi = tangential_field(c, phi0)
            L = float(np.sum(st.trapezoid_weights(N) * m))
            ds_phi = st.d1(phi[:, None], 1.0 / N)[:, 0] / m
            assert np.max(np.abs(ds_phi + phi0 / L)) <= 10.0 / N**2


class TestJunctionVelocity:
    def test_symmetric_star(self):
        # same geometry as the long explicit runs
        N = 100
        u, spread = junction_velocity(symmetric_star(radius=20, N=N))
        assert spread <= 10.0 / N**2
        assert np.linalg.norm(u) < 1e-10

    def test_spread_second_order(self):
        s = [junction_velocity(symmetric_star(N=N))[1] for N in (100, 200, 400)]
        assert 3.0 <= s[0] / s[1] <= 5.0 and 3.0 <= s[1] / s[2] <= 5.0

    def test_straight_balanced(self):
        u, spread = junction_velocity(straight_star())
        assert np.linalg.norm(u) < 1e-8 and spread < 1e-8


class TestEnforceBoundary:
    def test_identity_on_admissible(self):
        net = enforce_boundary(symmetric_star(N=48))
        again = enforce_boundary(net)
        assert np.max(np.abs(again.nodes - net.nodes)) <= 1e-12

    def test_end_curvature_restored(self):
        net = symmetric_star(N=48)
        X = np.array(net.nodes)
        X[1, -2] += [1e-3, -2e-3]
        fixed = enforce_boundary(Network(X, net.lam))
        kappa = curvature_fields(fixed.nodes)[2]
        assert np.max(np.linalg.norm(kappa[:, -1], axis=1)) <= 1e-10
        assert np.max(np.linalg.norm(kappa[:, 0], axis=1)) <= 1e-10

    @given(hst.integers(0, 10_000))
    @settings(max_examples=15)
    def test_balance_after_enforcement(self, seed):
        rng = np.random.default_rng(seed)
        net = symmetric_star(N=48, lam=rng.uniform(0.05, 2.0, 3), twist=rng.uniform(-0.8, 0.8))
        out = enforce_boundary(net)
        assert junction_balance_residual(out) <= 1e-8
        assert out.concurrency_ok() and out.pin_ok()


class TestSteps:
    def test_stationary_explicit(self):
        s = initial_state(straight_star())
        dt = 0.4 * explicit_dt_limit(s.net)
        out = step_explicit(s, dt)
        assert np.max(np.abs(out.net.nodes - s.net.nodes)) <= 1e-12 * max(dt, 1e-12) + 1e-14

    def test_stationary_imex(self):
        s = initial_state(straight_star())
        out = step_imex(s, 1e-2)
        assert np.max(np.abs(out.net.nodes - s.net.nodes)) <= 1e-10

    @pytest.mark.parametrize("make", [symmetric_star, lambda N: asymmetric_star(N), spatial_star])
    def test_explicit_step_decreases_energy(self, make):
        s = initial_state(make(N=48) if make is symmetric_star else make(48))
        out = step_explicit(s, 0.4 * explicit_dt_limit(s.net))
        assert out.energy < s.energy
        X = out.net.nodes
        assert np.array_equal(X[0, 0], X[1, 0]) and np.array_equal(X[0, 0], X[2, 0])
        assert np.array_equal(X[:, -1], s.net.endpoints)
        assert out.step.dissipation_lhs < 0 and out.step.dissipation_rhs < 0

    def test_imex_matches_explicit_to_second_order(self):
        s = initial_state(asymmetric_star(48))
        dt = 0.4 * explicit_dt_limit(s.net)
        d = []
        for k in (1, 2):
            a = step_explicit(s, dt / k).net.nodes
            b = step_imex(s, dt / k).net.nodes
            d.append(np.max(np.abs(a - b)))
        assert 3.0 <= d[0] / d[1] <= 5.0

    def test_imex_large_steps(self):
        s = initial_state(symmetric_star(N=100))
        dt = 100 * explicit_dt_limit(s.net)
        E = [s.energy]
        for _ in range(10):
            s = step_imex(s, dt)
            E.append(s.energy)
        assert np.all(np.diff(E) < 0)

    def test_rejects_energy_increase(self):
        s = initial_state(asymmetric_star(32))
        with pytest.raises((StepRejected, BlowUp)):
            for _ in range(200):
                s = step_explicit(s, 5 * explicit_dt_limit(s.net))

    def test_length_identity(self):
        # dL/dt + phi(0) + int <kappa, V> ds = O(dt + h^2)
        errs = []
        for N in (48, 96):
            s = initial_state(asymmetric_star(N))
            out = step_explicit(s, 0.1 * explicit_dt_limit(s.net))
            dL = (lengths(out.net) - lengths(s.net)) / out.step.dt
            m, _, kappa = curvature_fields(s.net.nodes)
            V = normal_velocity(s.net.nodes, s.net.lam)
            w = st.trapezoid_weights(N)
            kv = np.sum(w * m * np.einsum("ijd,ijd->ij", kappa, V), axis=1)
            errs.append(np.max(np.abs(dL + out.step.phi0 + kv)))
        assert errs[1] < errs[0]
        assert errs[1] < 0.05

    def test_arclength_evolution(self):
        # d_t ds = (d_s phi - <kappa, V>) ds, checked at interior nodes
        errs = []
        for N in (48, 96):
            s = initial_state(asymmetric_star(N))
            out = step_explicit(s, 0.1 * explicit_dt_limit(s.net))
            m0, tau, kappa = curvature_fields(s.net.nodes)
            m1 = curvature_fields(out.net.nodes)[0]
            V = normal_velocity(s.net.nodes, s.net.lam)
            L = lengths(s.net)
            pred = -out.step.phi0[:, None] / L[:, None] - np.einsum("ijd,ijd->ij", kappa, V)
            got = (m1 - m0) / out.step.dt / m0
            j = slice(N // 4, 3 * N // 4)
            errs.append(np.max(np.abs(got - pred)[:, j]) / np.max(np.abs(pred[:, j])))
        assert errs[1] < errs[0]
        assert errs[1] < 0.05


@pytest.mark.parametrize("N", [32, 64])
@pytest.mark.parametrize("name", ["symmetric", "asymmetric"])
def test_stability_constant(N, name):
    net = symmetric_star(N=N, twist=0.6) if name == "symmetric" else asymmetric_star(N)
    s0 = initial_state(net)
    lim = explicit_dt_limit(s0.net)

    def survives(f, steps=800):
        s = s0
        try:
            for _ in range(steps):
                s = step_explicit(s, f * lim)
        except (StepRejected, BlowUp):
            return False
        return True

    # measured threshold lies between 1.06 and 1.12 times the stored limit
    assert survives(0.9)
    assert not survives(1.2)


class TestRun:
    def test_stationary(self):
        s = initial_state(straight_star())
        res = run(s, FlowConfig(dt_mode="imex", dt_initial=1e-3, t_end=0.05))
        E = [h[1] for h in res.history]
        assert abs(res.state.time - 0.05) < 1e-12
        assert np.ptp(E) <= 1e-12 * E[0]

    def test_span_halt(self):
        # y = c x^4 leaves the origin along e_1 for every c; even symmetry makes the
        # discrete tangent exact
        x = np.linspace(0, 1, 33)
        net = Network(np.stack([np.stack([x, c * x**4], 1) for c in (1.0, -1.0, 0.3)]), (0.1, 0.1, 0.1))
        with pytest.raises(HaltAssumptionViolated) as exc:
            initial_state(net)
        assert exc.value.reason == "Span"
        with pytest.raises(HaltAssumptionViolated) as exc:
            run(FlowState(net=net), FlowConfig(t_end=1e-6))
        assert exc.value.reason == "Span"
        assert exc.value.state.step_count == 0

    def test_imex_monotone_and_sampled(self):
        seen = []
        res = run(
            initial_state(symmetric_star(N=48)),
            FlowConfig(dt_mode="imex", t_end=0.02, sample_every=2, output_every=3),
            on_snapshot=lambda s: seen.append(s.step_count),
        )
        E = np.array([h[1] for h in res.history])
        assert np.all(np.diff(E) <= 1e-8 * E[0] * np.diff([h[0] for h in res.history]) + 1e-14 * E[0])
        assert res.records[0]["t"] == 0.0 and res.records[-1]["t"] == pytest.approx(0.02)
        assert all(k % 3 == 0 for k in seen[1:-1])

    def test_stop_on_convergence(self):
        res = run(
            initial_state(symmetric_star(N=48)),
            FlowConfig(dt_mode="imex", t_end=50.0, stop_on_convergence=True, sample_every=5),
        )
        assert res.converged and res.state.time < 50.0
        assert res.records[-1]["el_residual"] + res.records[-1]["balance_residual"] < 1e-3

    def test_zero_lambda_growth_budget(self):
        net = symmetric_star(N=32, lam=(0.0, 0.1, 0.1), allow_zero_lambda=True)
        res = run(
            initial_state(net),
            FlowConfig(dt_mode="imex", t_end=0.05, halt_on=HaltThresholds(growth_rate=0.0)),
        )
        assert isinstance(res.growth_budget_exceeded, bool)

    def test_max_steps(self):
        res = run(initial_state(symmetric_star(N=32)), FlowConfig(t_end=1.0, max_steps=5))
        assert res.steps == 5
