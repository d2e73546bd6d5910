"""Lagrangian simulator for the modified Camassa-Holm equation m_t + [(u^2 - u_x^2) m]_x = 0."""

from .kernel import Mollifier, build_green_table, green, green_prime, mollify_field
from .momentum import Momentum, build_momentum, label_grid, partial_integral, scale
from .flow import FlowState, evolve, init_flow, velocity_profile, xxi_consistency
from .blowup import (collapse_intervals, design_collapse_datum, lifespan_bounds, limit_measure,
                     run_to_blowup)
from .eulerian import EulerianField, TestFunction, reconstruct, total_variation, weak_residual
from .regularized import (ParticleEnsemble, consistency_sweep, ensemble_from_momentum,
                          reg_evolve, reg_fields, reg_velocity)

__version__ = "0.1.0"
