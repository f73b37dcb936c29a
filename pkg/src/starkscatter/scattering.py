"""Finite-time wave operators, scattering operators and the commutator functional.

The scattering operator at phase ``s`` is approximated by

    S(s) ~ U0(s, T+) U(T+, T-) U0(T-, s)

with the exact free propagator on the outer legs and split-step propagation
of the full Hamiltonian in between.

High-energy runs use a Galilean frame moving with ``v = sqrt(lam) omega``.
With ``G(t) = exp(-i v^2 (t-s)/2) exp(i v.x) exp(-i (t-s) v.p)`` one has
``S_lab = G(s) S_frame G(s)*`` and ``G(s) = exp(i v.x)`` is exactly the boost
of the probe packets, so frame states are the *unboosted* packets. In the
frame the potential becomes ``V(t, x + v (t - s))``; the scalar term
``-E(t).v (t - s)`` picks up a phase that cancels between the three legs of
``S`` and is dropped.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .errors import ConfigError
from .field import compute_coefficients, free_propagate
from .grid import WaveState, apply_p, boost, expect_x, inner
from .potentials import MovingFramePotential
from .propagator import PropagationPlan, propagate_full

__all__ = [
    "ScatteringConfig",
    "CommutatorSample",
    "apply_S",
    "wave_operator",
    "commutator_functional",
    "intertwining_residual",
    "s_covariance_residual",
    "check_direction",
    "append_samples_csv",
]


@lru_cache(maxsize=64)
def coefficients_for(field, mesh_size=1024):
    return compute_coefficients(field, mesh_size)


@dataclass(frozen=True)
class ScatteringConfig:
    """Truncation window and stepping for one scattering-operator evaluation.

    ``frame_velocity`` is ``None`` for lab-frame states, otherwise the
    velocity of the Galilean frame the states are expressed in.
    """

    s: float
    t_minus: float
    t_plus: float
    dt: float
    frame_velocity: tuple = None
    boundary_threshold: float = 1e-8
    stability_tol: float = 0.01

    def __post_init__(self):
        if not self.t_minus < self.s < self.t_plus:
            raise ConfigError("need T- < s < T+")
        if self.frame_velocity is not None:
            object.__setattr__(self, "frame_velocity",
                               tuple(float(v) for v in np.atleast_1d(self.frame_velocity)))
        self.plan()

    @classmethod
    def for_energy(cls, s, lam, support, margin=2.0, dt_max=0.01, step_length=0.05,
                   frame_velocity=None, **kw):
        """Window ``s +/- (support/sqrt(lam) + margin)``.

        ``dt`` is the largest step ``<= min(dt_max, step_length/sqrt(lam))``
        dividing the window, so the potential moves at most ``step_length``
        per step relative to the packet.
        """
        half = support / np.sqrt(lam) + margin
        dt_target = min(dt_max, step_length / np.sqrt(lam))
        n = int(np.ceil(2 * half / dt_target - 1e-9))
        return cls(s, s - half, s + half, 2 * half / n, frame_velocity=frame_velocity, **kw)

    def plan(self):
        return PropagationPlan.at_most(self.t_minus, self.t_plus, self.dt,
                                       boundary_threshold=self.boundary_threshold)

    def doubled(self):
        """Same stepping with ``|T+/- - s|`` doubled."""
        lo = self.s - 2 * (self.s - self.t_minus)
        hi = self.s + 2 * (self.t_plus - self.s)
        n = 2 * self.plan().n_steps
        return replace(self, t_minus=lo, t_plus=hi, dt=(hi - lo) / n)

    def to_dict(self):
        return {"s": self.s, "t_minus": self.t_minus, "t_plus": self.t_plus, "dt": self.dt,
                "frame_velocity": None if self.frame_velocity is None else list(self.frame_velocity)}


@dataclass
class CommutatorSample:
    """One measurement of ``<[S(s), p] Phi_{lam,omega}, Psi_{lam,omega}>``."""

    lam: float
    omega: np.ndarray
    s: float
    F: np.ndarray
    phi_norm2: float
    center: np.ndarray = None
    width: float = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def scaled(self):
        """``sqrt(lam) F``, the quantity with a finite high-energy limit."""
        return np.sqrt(self.lam) * self.F


def _frame_potential(config, potential):
    if config.frame_velocity is None:
        return potential
    return MovingFramePotential(potential, config.frame_velocity, config.s)


def apply_S(state, config, field, potential, coeffs=None):
    """Finite-time scattering operator ``U0(s,T+) U(T+,T-) U0(T-,s)``.

    ``state`` is expressed in the frame of ``config`` (lab frame when
    ``config.frame_velocity`` is None). Batched states are propagated together.
    """
    coeffs = coeffs or coefficients_for(field)
    thr = config.boundary_threshold
    out = free_propagate(state, config.t_minus, config.s, coeffs, thr)
    out = propagate_full(out, config.plan(), field, _frame_potential(config, potential))
    return free_propagate(out, config.s, config.t_plus, coeffs, thr)


def wave_operator(state, s, t_trunc, dt, field, potential, coeffs=None, boundary_threshold=1e-8):
    """Moller approximant ``U(s, T) U0(T, s)``: ``W+`` for ``T > s``, ``W-`` for ``T < s``."""
    coeffs = coeffs or coefficients_for(field)
    out = free_propagate(state, t_trunc, s, coeffs, boundary_threshold)
    plan = PropagationPlan.at_most(t_trunc, s, dt, boundary_threshold=boundary_threshold)
    return propagate_full(out, plan, field, potential)


def check_direction(omega, mean_field):
    """Unit ``omega``; for nonzero ``E0`` require ``|omega.E0| < |E0|``."""
    omega = np.asarray(omega, dtype=float)
    if abs(np.linalg.norm(omega) - 1) > 1e-12:
        raise ConfigError("omega must be a unit vector")
    E0 = np.asarray(mean_field, dtype=float)
    e = np.linalg.norm(E0)
    if e > 0 and abs(omega @ E0) >= e * (1 - 1e-12):
        raise ConfigError("direction parallel to the mean field: need |omega.E0| < |E0|")
    return omega


def commutator_functional(phi, psi, s, lam, omega, config, field, potential, coeffs=None,
                          form="reduced", stability=False):
    """Measure ``F_j = <[S(s), p_j] Phi_{lam,omega}, Psi_{lam,omega}>``.

    ``phi`` and ``psi`` are the unboosted packets. In the lab frame
    (``config.frame_velocity is None``) they are boosted by
    ``exp(i sqrt(lam) omega.x)`` explicitly; in the moving frame
    (``frame_velocity == sqrt(lam) omega``) the boost is the frame change.

    ``form="reduced"`` evaluates
    ``<(S-1) boost(p_j Phi), boost(Psi)> - <(S-1) boost(Phi), boost(p_j Psi)>``,
    in which the ``sqrt(lam) omega`` parts of ``p`` cancel analytically.
    ``form="direct"`` evaluates ``<S p_j Phi_b, Psi_b> - <S Phi_b, p_j Psi_b>``
    as written.
    """
    if lam <= 0:
        raise ConfigError("lam must be positive")
    omega = check_direction(omega, field.mean)
    g = phi.grid
    n = g.ndim
    v = np.sqrt(lam) * omega
    if config.frame_velocity is None:
        if np.any(g.cutoff < 4 * np.sqrt(lam)):
            raise ConfigError("lab-frame grid cutoff pi/dx must be at least 4 sqrt(lam)")
        lift = lambda st: boost(st, v)  # noqa: E731
        shift = np.zeros(n)
    else:
        if not np.allclose(config.frame_velocity, v, rtol=1e-12, atol=1e-12):
            raise ConfigError("frame velocity must equal sqrt(lam) omega")
        lift = lambda st: st  # noqa: E731
        shift = v
    coeffs = coeffs or coefficients_for(field)

    def measure(cfg):
        if form == "reduced":
            ins = [lift(phi)] + [lift(apply_p(phi, j)) for j in range(n)]
            outs = apply_S(WaveState.stack(ins), cfg, field, potential, coeffs)
            d = outs.psi - WaveState.stack(ins).psi
            S_minus_1 = [WaveState(g, d[i]) for i in range(n + 1)]
            psi_b = lift(psi)
            return np.array([inner(S_minus_1[j + 1], psi_b)
                             - inner(S_minus_1[0], lift(apply_p(psi, j))) for j in range(n)])
        if form == "direct":
            phi_b, psi_b = lift(phi), lift(psi)
            ins = [phi_b] + [_p_frame(phi_b, j, shift[j]) for j in range(n)]
            outs = apply_S(WaveState.stack(ins), cfg, field, potential, coeffs)
            S_phi = outs[0]
            return np.array([inner(outs[j + 1], psi_b) - inner(S_phi, _p_frame(psi_b, j, shift[j]))
                             for j in range(n)])
        raise ValueError(f"unknown form {form!r}")

    F = measure(config)
    diag = {"t_minus": config.t_minus, "t_plus": config.t_plus, "dt": config.dt, "form": form}
    if stability:
        F2 = measure(config.doubled())
        rel = float(np.linalg.norm(F2 - F) / max(np.linalg.norm(F), 1e-300))
        diag["truncation_change"] = rel
        diag["truncation_stable"] = rel <= config.stability_tol
    center = np.atleast_1d(expect_x(phi)).reshape(-1)
    spread = float(np.real(inner(phi, WaveState(g, g.radius2(center) * phi.psi))) / phi.norm2())
    return CommutatorSample(lam=lam, omega=omega, s=s, F=F, phi_norm2=float(phi.norm2()),
                            center=center, width=float(np.sqrt(spread / n)), diagnostics=diag)


def _p_frame(state, axis, shift):
    out = apply_p(state, axis)
    if shift:
        out.psi += shift * state.psi
    return out


def intertwining_residual(state, s, t_trunc, dt, field, potential, coeffs=None,
                          boundary_threshold=1e-8):
    """``||U(s+1, s) W Phi - W U0(s+1, s) Phi||`` for the Moller approximant at ``T``."""
    coeffs = coeffs or coefficients_for(field)
    W_phi = wave_operator(state, s, t_trunc, dt, field, potential, coeffs, boundary_threshold)
    plan = PropagationPlan.at_most(s, s + 1, dt, boundary_threshold=boundary_threshold)
    lhs = propagate_full(W_phi, plan, field, potential)
    rhs = wave_operator(free_propagate(state, s + 1, s, coeffs, boundary_threshold),
                        s, t_trunc, dt, field, potential, coeffs, boundary_threshold)
    return float(np.max((WaveState(lhs.grid, lhs.psi - rhs.psi)).norm()))


def s_covariance_residual(state, s, s2, half_window, dt, field, potential, coeffs=None,
                          boundary_threshold=1e-8):
    """``||S(s2) Phi - U0(s2, s) S(s) U0(s, s2) Phi||`` with windows ``s +/- half_window``."""
    coeffs = coeffs or coefficients_for(field)
    cfg1 = ScatteringConfig(s, s - half_window, s + half_window, dt,
                            boundary_threshold=boundary_threshold)
    cfg2 = ScatteringConfig(s2, s2 - half_window, s2 + half_window, dt,
                            boundary_threshold=boundary_threshold)
    lhs = apply_S(state, cfg2, field, potential, coeffs)
    rhs = free_propagate(state, s, s2, coeffs, boundary_threshold)
    rhs = apply_S(rhs, cfg1, field, potential, coeffs)
    rhs = free_propagate(rhs, s2, s, coeffs, boundary_threshold)
    return float(np.max(WaveState(lhs.grid, lhs.psi - rhs.psi).norm()))


SAMPLE_COLUMNS = ["s", "lam", "omega_angle", "omega", "center", "width"]


def append_samples_csv(path, samples):
    """Append samples to the CSV ledger (header written for a new file)."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            n = len(samples[0].F) if samples else 0
            cols = list(SAMPLE_COLUMNS)
            for j in range(n):
                cols += [f"F{j + 1}_re", f"F{j + 1}_im"]
            cols += ["truncation_change", "t_minus", "t_plus", "dt"]
            w.writerow(cols)
        for smp in samples:
            om = np.asarray(smp.omega, dtype=float)
            angle = float(np.arctan2(om[1], om[0])) if om.size >= 2 else 0.0
            row = [f"{smp.s:.17g}", f"{smp.lam:.17g}", f"{angle:.17g}",
                   " ".join(f"{v:.17g}" for v in om),
                   "" if smp.center is None else " ".join(f"{v:.17g}" for v in smp.center),
                   "" if smp.width is None else f"{smp.width:.17g}"]
            for z in smp.F:
                row += [f"{z.real:.17g}", f"{z.imag:.17g}"]
            d = smp.diagnostics
            row += [f"{d.get('truncation_change', float('nan')):.17g}",
                    f"{d.get('t_minus', float('nan')):.17g}", f"{d.get('t_plus', float('nan')):.17g}",
                    f"{d.get('dt', float('nan')):.17g}"]
            w.writerow(row)
