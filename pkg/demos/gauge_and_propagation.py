"""Gauge coefficients and the analytic free propagator for E(t) = 0.5 + cos(2 pi t).

Prints the coefficient error against the closed form, then compares the
split-step solution of the free Stark problem with the analytic propagator
at two step sizes to show second-order convergence.
"""
import numpy as np

from starkscatter.field import ElectricField, closed_form_coefficients, compute_coefficients, free_propagate
from starkscatter.grid import GridSpec, WavePacketSpec, make_gaussian
from starkscatter.potentials import ZeroPotential
from starkscatter.propagator import PropagationPlan, propagate_full


def main():
    cos = ElectricField([0.0], ((1, (1.0,), (0.0,)),))
    co = compute_coefficients(cos, 2048)
    a, b, c = closed_form_coefficients(cos, co.t)
    print(f"cos field: max |b - closed form| = {np.max(np.abs(co.b - b)):.2e}, "
          f"|c| = {np.max(np.abs(co.c - c)):.2e}, |a| = {np.max(np.abs(co.a - a)):.2e}")

    field = ElectricField([0.5], ((1, (1.0,), (0.0,)),))
    g = GridSpec((20.0,), (256,))
    phi = make_gaussian(g, WavePacketSpec((0.0,), 1.0, (1.0,)))
    exact = free_propagate(phi, 1.0, 0.0, compute_coefficients(field, 2048))
    prev = None
    for dt in (4e-3, 2e-3, 1e-3, 5e-4):
        num = propagate_full(phi, PropagationPlan(0.0, 1.0, dt), field, ZeroPotential(1))
        err = float(np.sqrt(g.cell_volume) * np.linalg.norm(num.psi - exact.psi))
        ratio = "" if prev is None else f"  ratio {prev / err:.3f}"
        print(f"dt = {dt:.0e}: L2 error {err:.3e}{ratio}")
        prev = err


if __name__ == "__main__":
    main()
