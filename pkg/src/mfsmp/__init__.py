"""Risk-sensitive mean-field-type games with L^alpha-normed drift.

Particle simulation of the state law, exponentiated cost evaluation, a
regression solver for the adjoint system and the virus-spread scenarios.
"""
__version__ = "0.1.0"

from .measure import EmpiricalMeasure, from_samples, wasserstein  # noqa: E402
from .model import ModelSpec, cooperative_spec  # noqa: E402
from .particles import TimeGrid, simulate_particles, mckv_picard, chaos_study  # noqa: E402
from .risk import log_risk_cost, risk_cost, donsker_varadhan  # noqa: E402
from .adjoint import solve_adjoint_bsde, solve_game_fixed_point, lq_riccati_oracle  # noqa: E402
from .virus import VirusParams, build_virus_spec  # noqa: E402
