"""Scattering and inverse scattering for Schrodinger operators in time-periodic electric fields.

Units are ``hbar = m = 1`` and every time dependence has period 1. The
Hamiltonian is ``H(t) = p^2/2 - E(t).x + V(t, x)``.
"""
__version__ = "0.1.0"

from .errors import BoundaryMassError, ConfigError, GridError, LimitedAngleError, PartialFailureError
from .field import (ElectricField, GaugeCoefficients, apply_gauge_T, closed_form_coefficients,
                    compute_coefficients, free_propagate, stark_propagate)
from .grid import (GridSpec, WavePacketSpec, WaveState, boost, inner, load_wavefunction, make_gaussian,
                   save_wavefunction, translate)
from .potentials import BumpSum, ModulatedGaussian, SoftPowerLaw, ZeroPotential
from .propagator import PropagationPlan, propagate_full, propagate_gauge, step_full
from .scattering import (CommutatorSample, ScatteringConfig, apply_S, commutator_functional,
                         intertwining_residual, s_covariance_residual, wave_operator)
from .reconstruction import (ProbeSettings, Sinogram, SweepPlan, assemble_profile, fbp_invert,
                             oracle_xray, reconstruct)
