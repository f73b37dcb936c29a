"""Strang split-step propagation of ``H(t) = p^2/2 - E(t).x + V(t, x)``.

One step from ``t`` to ``t + dt``::

    exp(i x.int_{t}^{t+dt/2} E) exp(-i dt/2 V(t + dt/4))
    exp(-i dt p^2/2)
    exp(i x.int_{t+dt/2}^{t+dt} E) exp(-i dt/2 V(t + 3dt/4))

The field term uses the exact integral of ``E`` over each half step. Negative
``dt`` propagates backwards; a backward step undoes the forward one exactly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .errors import BoundaryMassError, ConfigError
from .field import ElectricField, apply_gauge_T
from .grid import boundary_mass, expect_p, expect_x, save_wavefunction

__all__ = [
    "PropagationPlan",
    "step_full",
    "propagate_full",
    "propagate_gauge",
    "gauge_frame_evolve",
]


@dataclass(frozen=True)
class PropagationPlan:
    """Uniform stepping of ``[t0, t1]`` (either orientation) with ``|dt|``.

    ``dt`` must divide ``t1 - t0``; the signed step is derived from the window.
    """

    t0: float
    t1: float
    dt: float
    boundary_threshold: float = 1e-8
    check_every: int = 50

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        span = abs(self.t1 - self.t0)
        n = round(span / self.dt)
        if abs(n * self.dt - span) > 1e-9 * max(1.0, span):
            raise ConfigError(f"dt={self.dt} does not divide the window length {span}")

    @classmethod
    def with_steps(cls, t0, t1, n_steps, **kw):
        return cls(t0, t1, abs(t1 - t0) / n_steps, **kw)

    @classmethod
    def at_most(cls, t0, t1, dt_max, **kw):
        """Plan with the largest step ``<= dt_max`` dividing the window."""
        n = max(1, int(np.ceil(abs(t1 - t0) / dt_max - 1e-9)))
        return cls.with_steps(t0, t1, n, **kw)

    @property
    def n_steps(self):
        return int(round(abs(self.t1 - self.t0) / self.dt))

    @property
    def signed_dt(self):
        if self.n_steps == 0:
            return 0.0
        return (self.t1 - self.t0) / self.n_steps

    def check_grid(self, grid):
        """Kinetic phase guard ``|dt| max|k|^2 / 2 <= pi``."""
        kmax2 = float(np.sum(grid.cutoff ** 2))
        if self.dt * kmax2 / 2 > np.pi:
            raise ConfigError(f"dt={self.dt:.3g} violates the kinetic phase guard for this grid")


def _half_phase(grid, field, potential, t_a, t_b, t_sample, dt_half):
    F = field.integral(t_a, t_b)
    arg = grid.dot_x(F)
    if not potential.is_zero:
        arg = arg - dt_half * potential.value(t_sample, grid.coords)
    return np.exp(1j * arg)


def step_full(state, t, dt, field, potential):
    """One Strang step of the full Hamiltonian; returns a new state."""
    g = state.grid
    h = 0.5 * dt
    psi = state.psi * _half_phase(g, field, potential, t, t + h, t + 0.25 * dt, h)
    phi = sfft.fftn(psi, axes=g.axes_, overwrite_x=True)
    phi *= np.exp(-0.5j * dt * g.k2)
    psi = sfft.ifftn(phi, axes=g.axes_, overwrite_x=True)
    psi *= _half_phase(g, field, potential, t + h, t + dt, t + 0.75 * dt, h)
    return state.replace(psi)


class _DiagnosticsWriter:
    def __init__(self, path, ndim):
        self.fh = open(path, "w", newline="")
        self.w = csv.writer(self.fh)
        self.w.writerow(["step", "t", "norm", "boundary_mass"]
                        + [f"x{i + 1}" for i in range(ndim)] + [f"p{i + 1}" for i in range(ndim)])

    def write(self, step, t, state):
        xs = np.atleast_1d(expect_x(state)).reshape(-1)
        ps = np.atleast_1d(expect_p(state)).reshape(-1)
        row = [t, float(np.max(state.norm())), boundary_mass(state), *xs, *ps]
        self.w.writerow([step] + [f"{v:.17g}" for v in row])

    def close(self):
        self.fh.close()


def propagate_full(state, plan, field, potential, diagnostics_path=None,
                   diagnostics_every=100, snapshot_dir=None, snapshot_every=None):
    """Repeated :func:`step_full` over ``plan``.

    Boundary mass is checked every ``plan.check_every`` steps and at the end;
    exceeding ``plan.boundary_threshold`` raises :class:`BoundaryMassError`.
    Optional step diagnostics go to CSV and snapshots to ``WAVEFN01`` files.
    """
    g = state.grid
    plan.check_grid(g)
    n = plan.n_steps
    dt = plan.signed_dt
    h = 0.5 * dt
    kinetic = np.exp(-0.5j * dt * g.k2)
    psi = state.psi.copy()
    writer = _DiagnosticsWriter(diagnostics_path, g.ndim) if diagnostics_path else None
    try:
        for j in range(n):
            t = plan.t0 + j * dt
            psi *= _half_phase(g, field, potential, t, t + h, t + 0.25 * dt, h)
            psi = sfft.fftn(psi, axes=g.axes_, overwrite_x=True)
            psi *= kinetic
            psi = sfft.ifftn(psi, axes=g.axes_, overwrite_x=True)
            psi *= _half_phase(g, field, potential, t + h, t + dt, t + 0.75 * dt, h)
            done = j + 1
            if done % plan.check_every == 0 or done == n:
                cur = state.replace(psi)
                bm = boundary_mass(cur)
                if bm > plan.boundary_threshold:
                    raise BoundaryMassError(
                        f"boundary mass {bm:.3g} exceeds {plan.boundary_threshold:.1g} "
                        f"at t={t + dt:.6g}", t=t + dt, boundary_mass=bm, step=done)
            if writer and (done % diagnostics_every == 0 or done == n):
                writer.write(done, t + dt, state.replace(psi))
            if snapshot_dir and snapshot_every and done % snapshot_every == 0 and not state.batch_shape:
                save_wavefunction(f"{snapshot_dir}/snapshot_{done:07d}.wfn", g, psi)
    finally:
        if writer:
            writer.close()
    return state.replace(psi)


def propagate_gauge(state, plan, mean, potential_v1, **kw):
    """Propagate ``B(t) = p^2/2 - E0.x + V1(t, x)`` (the gauge-frame Hamiltonian).

    Same Strang scheme as the full frame with the constant field ``E0``, whose
    half-step integral is ``E0 dt/2`` exactly.
    """
    return propagate_full(state, plan, ElectricField.constant(mean), potential_v1, **kw)


def gauge_frame_evolve(state, plan, coeffs, potential_v1):
    """``T(t1) R(t1, t0) T*(t0) psi``: the full propagator computed in the gauge frame."""
    inner = apply_gauge_T(state, plan.t0, coeffs, inverse=True)
    inner = propagate_gauge(inner, plan, coeffs.mean, potential_v1)
    return apply_gauge_T(inner, plan.t1, coeffs)
