"""High-energy commutator functional for a modulated Gaussian in 2D.

Runs the reduced commutator functional at lam = 25 and 100 on a 128^2 grid
and compares the scaled transverse component with the quadrature oracle
``<R Phi, Phi> / <Phi, Phi>``, where ``R(y)`` integrates the transverse
gradient of the potential along the probe line.
"""
import numpy as np
from scipy.integrate import quad

from starkscatter.field import ElectricField
from starkscatter.grid import GridSpec, WavePacketSpec, make_gaussian
from starkscatter.potentials import ModulatedGaussian
from starkscatter.scattering import ScatteringConfig, commutator_functional


def main():
    field = ElectricField([0.0, 0.0], ((1, (1.0, 0.0), (0.0, 0.0)),))
    V = ModulatedGaussian(1.0, 1.0, (0.0, 0.0), 0.5)
    g = GridSpec((16.0, 16.0), (128, 128))
    phi = make_gaussian(g, WavePacketSpec((0.0, 1.5), 0.5))

    x2 = g.axes[1]
    dens = np.sum(np.abs(phi.psi) ** 2, axis=0)
    R = np.array([quad(lambda t: V.gradient(0.0, (np.array(t), np.array(y)))[1], -np.inf, np.inf)[0]
                  if d > 1e-16 * dens.max() else 0.0 for y, d in zip(x2, dens)])
    oracle = float(np.sum(R * dens) / np.sum(dens))
    print(f"oracle transverse value {oracle:.5f}")

    for lam in (25.0, 100.0):
        cfg = ScatteringConfig.for_energy(0.0, lam, 4.0, margin=0.5, frame_velocity=[np.sqrt(lam), 0.0])
        smp = commutator_functional(phi, phi, 0.0, lam, [1.0, 0.0], cfg, field, V)
        est = smp.scaled / smp.phi_norm2
        print(f"lam = {lam:5.0f}: transverse {est[1].real:.5f} (rel error {abs(est[1] - oracle) / abs(oracle):.3f}), "
              f"along omega {abs(est[0]):.2e}")


if __name__ == "__main__":
    main()
