"""Structural checks of the propagators and scattering operators.

Each check returns an :class:`InvariantCheck`. Where a tolerance depends on
the splitting error, the error of a split-step result ``a(dt)`` is estimated
as ``4/3 ||a(dt) - a(dt/2)||`` (Strang splitting is second order). Those
tolerances carry an absolute ``floor`` for FFT roundoff, which dominates when
the splitting is exact (for instance ``V = 0``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .field import free_propagate
from .grid import WaveState
from .potentials import ShiftedPotential
from .propagator import PropagationPlan, gauge_frame_evolve, propagate_full
from .scattering import ScatteringConfig, apply_S, coefficients_for, intertwining_residual

__all__ = [
    "InvariantCheck",
    "splitting_error",
    "norm_drift",
    "free_periodicity",
    "full_periodicity",
    "gauge_consistency",
    "intertwining_decay",
    "s_covariance",
]


@dataclass
class InvariantCheck:
    name: str
    value: float
    tolerance: float
    passed: bool
    details: dict = field(default_factory=dict)

    def row(self):
        return [self.name, f"{self.value:.17g}", f"{self.tolerance:.17g}", "pass" if self.passed else "FAIL"]


def _dist(a, b):
    return float(np.max(WaveState(a.grid, a.psi - b.psi).norm()))


def splitting_error(run, dt):
    """``(result, error estimate)`` for a split-step computation ``run(dt)``."""
    a = run(dt)
    b = run(dt / 2)
    return a, 4.0 / 3.0 * _dist(a, b)


def norm_drift(state, field, potential, dt, n_steps, tol=1e-10):
    """Norm change over ``n_steps`` steps, rescaled to a drift per 10^4 steps."""
    plan = PropagationPlan.with_steps(0.0, n_steps * dt, n_steps)
    out = propagate_full(state, plan, field, potential)
    drift = float(np.max(np.abs(out.norm() - state.norm()))) * 1e4 / n_steps
    return InvariantCheck("norm_drift_per_1e4_steps", drift, tol, drift <= tol, {"steps": n_steps})


def free_periodicity(state, s, tau, field, tol=1e-10):
    """``||U0(s+1+tau, s+1) phi - U0(s+tau, s) phi||`` for the analytic free propagator."""
    coeffs = coefficients_for(field)
    a = free_propagate(state, s + 1 + tau, s + 1, coeffs)
    b = free_propagate(state, s + tau, s, coeffs)
    r = _dist(a, b)
    return InvariantCheck("free_periodicity", r, tol, r <= tol)


def full_periodicity(state, s, tau, dt, field, potential, factor=2.0, floor=1e-12):
    """``||U(s+1+tau, s+1) phi - U(s+tau, s) phi||`` against the splitting error."""
    def run(t0):
        return lambda h: propagate_full(state, PropagationPlan.at_most(t0, t0 + tau, h), field, potential)

    a, ea = splitting_error(run(s + 1), dt)
    b, eb = splitting_error(run(s), dt)
    r = _dist(a, b)
    tol = factor * (ea + eb) + floor
    return InvariantCheck("full_periodicity", r, tol, r <= tol, {"split_err": ea + eb})


def gauge_consistency(state, t0, t1, dt, field, potential, factor=2.0, floor=1e-12):
    """Full-frame propagation against ``T(t1) R(t1, t0) T*(t0)``."""
    coeffs = coefficients_for(field)
    v1 = ShiftedPotential(potential, lambda t: coeffs(t)[2])

    def full(h):
        return propagate_full(state, PropagationPlan.at_most(t0, t1, h), field, potential)

    def gauge(h):
        return gauge_frame_evolve(state, PropagationPlan.at_most(t0, t1, h), coeffs, v1)

    a, ea = splitting_error(full, dt)
    b, eb = splitting_error(gauge, dt)
    r = _dist(a, b)
    tol = factor * (ea + eb) + floor
    return InvariantCheck("gauge_consistency", r, tol, r <= tol,
                          {"full_split_err": ea, "gauge_split_err": eb})


def intertwining_decay(state, s, t_trunc, dt, field, potential, min_ratio=1.8, floor=1e-8):
    """Intertwining residuals at ``T`` and ``2T`` for both wave operators.

    Passes when each residual shrinks by at least ``min_ratio`` on doubling,
    or is already below ``floor``.
    """
    out = {}
    ok = True
    worst = np.inf
    for sign, tag in ((1, "plus"), (-1, "minus")):
        r1 = intertwining_residual(state, s, s + sign * t_trunc, dt, field, potential)
        r2 = intertwining_residual(state, s, s + sign * 2 * t_trunc, dt, field, potential)
        ratio = r1 / r2 if r2 > 0 else np.inf
        out[f"{tag}_T"], out[f"{tag}_2T"], out[f"{tag}_ratio"] = r1, r2, ratio
        ok &= ratio >= min_ratio or r2 <= floor
        worst = min(worst, ratio)
    return InvariantCheck("intertwining_decay_ratio", float(worst), min_ratio, bool(ok), out)


def s_covariance(state, s, s2, half_window, dt, field, potential, factor=2.0, floor=1e-12):
    """``||S(s2) phi - U0(s2, s) S(s) U0(s, s2) phi||`` against the splitting error."""
    coeffs = coefficients_for(field)

    def cfg(c, h):
        return ScatteringConfig(c, c - half_window, c + half_window, h)

    def lhs(h):
        return apply_S(state, cfg(s2, h), field, potential, coeffs)

    def rhs(h):
        out = free_propagate(state, s, s2, coeffs)
        out = apply_S(out, cfg(s, h), field, potential, coeffs)
        return free_propagate(out, s2, s, coeffs)

    a, ea = splitting_error(lhs, dt)
    b, eb = splitting_error(rhs, dt)
    r = _dist(a, b)
    tol = factor * (ea + eb) + floor
    return InvariantCheck("s_covariance", r, tol, r <= tol, {"split_err": ea + eb})
