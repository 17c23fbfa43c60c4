"""Lagrangian p-alignment flocking: simulation, Eulerian reconstruction,
critical thresholds and mean-field diagnostics."""

__version__ = "0.1.0"

from .errors import (BlowUpError, ConfigError, DomainError, FlocklabError, HypothesisError,
                     UnsupportedError)
from .kernels import (AtomEnsemble, CouplingParams, Kernel, eval_kernel, g_p, grad_g_p,
                      is_heavy_tailed, kernel_tail_integral, load_atoms, primitive_phi)
from .lagrangian import (JacobianState, PhaseState, Trajectory, alignment_rhs, dissipation_rate,
                         injectivity_certificate, jacobian_rhs, simulate, step_rk4,
                         two_body_oracle)
from .config import SimConfig, build_scenario, parse_config, preset_config

__all__ = [
    "AtomEnsemble", "BlowUpError", "ConfigError", "CouplingParams", "DomainError", "FlocklabError",
    "HypothesisError", "JacobianState", "Kernel", "PhaseState", "SimConfig", "Trajectory",
    "UnsupportedError", "alignment_rhs", "build_scenario", "dissipation_rate", "eval_kernel", "g_p",
    "grad_g_p", "injectivity_certificate", "is_heavy_tailed", "jacobian_rhs", "kernel_tail_integral",
    "load_atoms", "parse_config", "preset_config", "primitive_phi", "simulate", "step_rk4",
    "two_body_oracle",
]
