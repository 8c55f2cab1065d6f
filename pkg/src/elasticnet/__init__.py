"""Elastic flow of three-curve star networks with a moving triple junction."""

from .compat import CompatReport, check_initial, check_order1, generate_star, project_sum_condition, symmetric_star
from .curve import (
    DiscreteCurve,
    GeometricFields,
    compute_curvature,
    compute_metric,
    compute_tangent,
    curve_length,
    geometric_fields,
    nabla_s,
    nabla_s_power,
    partial_s_kappa_identity_residual,
    read_curve,
    resample_by_arclength,
    write_curve,
)
from .errors import *  # noqa: F401,F403
from .flow import (
    FlowConfig,
    FlowState,
    HaltThresholds,
    RunResult,
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
from .junction import (
    JunctionState,
    angle_margin,
    junction_determinant,
    junction_matrix,
    junction_state,
    solve_tangential_speeds,
    span_dimension,
)
from .network import (
    EnergyBreakdown,
    Network,
    elastic_energy,
    euler_lagrange_residual,
    first_variation_elastic,
    first_variation_length,
    junction_balance_residual,
    network_energy,
    read_network,
    write_network,
)

__version__ = "0.1.0"
