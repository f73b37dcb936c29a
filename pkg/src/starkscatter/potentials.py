"""Time-periodic short-range potentials ``V(t, x)`` with analytic gradients.

Every model is period-1 in ``t`` and is evaluated on tuples of broadcastable
coordinate arrays (``grid.coords``) or on arrays of points with the
coordinate on the last axis (see :meth:`Potential.at_points`).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Potential",
    "ZeroPotential",
    "ModulatedGaussian",
    "SoftPowerLaw",
    "BumpSum",
    "ShiftedPotential",
    "MovingFramePotential",
    "FramedPotential",
    "potential_from_dict",
]


def _modulation(t, eps):
    return 1.0 + eps * np.cos(2 * np.pi * np.asarray(t, dtype=float))


class Potential:
    """Base class. Subclasses implement ``value`` and ``gradient``."""

    ndim: int

    @property
    def decay(self):
        """Decay exponent of the short-range bound (``inf`` for Gaussians)."""
        return np.inf

    def value(self, t, coords):
        raise NotImplementedError

    def gradient(self, t, coords):
        raise NotImplementedError

    def at_points(self, t, points):
        """``V(t, x)`` for ``points`` of shape ``(..., ndim)``."""
        points = np.asarray(points, dtype=float)
        return self.value(t, tuple(points[..., i] for i in range(self.ndim)))

    def gradient_at_points(self, t, points):
        points = np.asarray(points, dtype=float)
        g = self.gradient(t, tuple(points[..., i] for i in range(self.ndim)))
        return np.stack(np.broadcast_arrays(*g), axis=-1)

    @property
    def is_zero(self):
        return False

    def to_dict(self):
        raise NotImplementedError


@dataclass(frozen=True)
class ZeroPotential(Potential):
    ndim: int

    def value(self, t, coords):
        return np.zeros(np.broadcast_shapes(*(np.shape(c) for c in coords)))

    def gradient(self, t, coords):
        z = self.value(t, coords)
        return tuple(z for _ in range(self.ndim))

    @property
    def is_zero(self):
        return True

    def to_dict(self):
        return {"kind": "zero", "ndim": self.ndim}


@dataclass(frozen=True)
class ModulatedGaussian(Potential):
    """``A (1 + eps cos 2 pi t) exp(-|x - xc|^2 / w^2)``."""

    amplitude: float
    width: float
    center: tuple
    modulation: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in np.atleast_1d(self.center)))

    @property
    def ndim(self):
        return len(self.center)

    def _gauss(self, coords):
        r2 = sum((x - c) ** 2 for x, c in zip(coords, self.center))
        return np.exp(-r2 / self.width ** 2)

    def value(self, t, coords):
        return self.amplitude * _modulation(t, self.modulation) * self._gauss(coords)

    def gradient(self, t, coords):
        v = self.value(t, coords)
        return tuple(-2 * (x - c) / self.width ** 2 * v for x, c in zip(coords, self.center))

    def to_dict(self):
        return {"kind": "gaussian", "amplitude": self.amplitude, "width": self.width,
                "center": list(self.center), "modulation": self.modulation}


@dataclass(frozen=True)
class SoftPowerLaw(Potential):
    """``A (1 + eps cos 2 pi t) (1 + |x - xc|^2)^(-delta/2)``."""

    amplitude: float
    delta: float
    center: tuple
    modulation: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in np.atleast_1d(self.center)))

    @property
    def decay(self):
        return self.delta

    @property
    def ndim(self):
        return len(self.center)

    def value(self, t, coords):
        r2 = sum((x - c) ** 2 for x, c in zip(coords, self.center))
        return self.amplitude * _modulation(t, self.modulation) * (1 + r2) ** (-0.5 * self.delta)

    def gradient(self, t, coords):
        r2 = sum((x - c) ** 2 for x, c in zip(coords, self.center))
        pref = (-self.delta * self.amplitude * _modulation(t, self.modulation)
                * (1 + r2) ** (-0.5 * self.delta - 1))
        return tuple(pref * (x - c) for x, c in zip(coords, self.center))

    def to_dict(self):
        return {"kind": "powerlaw", "amplitude": self.amplitude, "decay": self.delta,
                "center": list(self.center), "modulation": self.modulation}


@dataclass(frozen=True)
class BumpSum(Potential):
    """Phantom built from Gaussian bumps ``(amplitude, center, width)``.

    All bumps share the modulation ``1 + eps cos 2 pi t``.
    """

    bumps: tuple
    modulation: float = 0.0

    def __post_init__(self):
        bumps = tuple((float(a), tuple(float(v) for v in np.atleast_1d(c)), float(w))
                      for a, c, w in self.bumps)
        if not bumps:
            raise ValueError("BumpSum needs at least one bump")
        object.__setattr__(self, "bumps", bumps)

    @property
    def ndim(self):
        return len(self.bumps[0][1])

    def _parts(self):
        return [ModulatedGaussian(a, w, c, self.modulation) for a, c, w in self.bumps]

    def value(self, t, coords):
        return sum(p.value(t, coords) for p in self._parts())

    def gradient(self, t, coords):
        grads = [p.gradient(t, coords) for p in self._parts()]
        return tuple(sum(g[i] for g in grads) for i in range(self.ndim))

    def to_dict(self):
        return {"kind": "bumps", "modulation": self.modulation,
                "bumps": [{"amplitude": a, "center": list(c), "width": w} for a, c, w in self.bumps]}


class ShiftedPotential(Potential):
    """``V(t, x + shift(t))`` for a base potential and a vector-valued ``shift``.

    With ``shift = c`` (the gauge coefficient) this is the gauge-frame
    potential ``V1(t, x) = V(t, x + c(t))``.
    """

    def __init__(self, base, shift):
        self.base = base
        self.shift = shift
        self.ndim = base.ndim

    @property
    def decay(self):
        return self.base.decay

    def _moved(self, t, coords):
        d = np.asarray(self.shift(t), dtype=float)
        return tuple(x + di for x, di in zip(coords, d))

    def value(self, t, coords):
        return self.base.value(t, self._moved(t, coords))

    def gradient(self, t, coords):
        return self.base.gradient(t, self._moved(t, coords))

    @property
    def is_zero(self):
        return self.base.is_zero


class MovingFramePotential(ShiftedPotential):
    """``V(t, x + v (t - t_ref))``: the potential seen from a frame moving at ``v``."""

    def __init__(self, base, velocity, t_ref=0.0):
        velocity = np.asarray(velocity, dtype=float)
        super().__init__(base, lambda t: velocity * (t - t_ref))
        self.velocity = velocity
        self.t_ref = t_ref


class FramedPotential(Potential):
    """``V(t, origin + basis @ u)``: a potential seen in rotated, translated coordinates.

    ``basis`` has orthonormal columns; gradients are returned in the new
    coordinates.
    """

    def __init__(self, base, origin, basis):
        self.base = base
        self.origin = np.asarray(origin, dtype=float)
        self.basis = np.asarray(basis, dtype=float)
        self.ndim = self.basis.shape[1]

    @property
    def decay(self):
        return self.base.decay

    def _lab(self, coords):
        return tuple(o + sum(self.basis[i, j] * coords[j] for j in range(self.ndim))
                     for i, o in enumerate(self.origin))

    def value(self, t, coords):
        return self.base.value(t, self._lab(coords))

    def gradient(self, t, coords):
        g = self.base.gradient(t, self._lab(coords))
        return tuple(sum(self.basis[i, j] * g[i] for i in range(len(g))) for j in range(self.ndim))

    @property
    def is_zero(self):
        return self.base.is_zero


def potential_from_dict(d):
    kind = d["kind"]
    if kind == "zero":
        return ZeroPotential(int(d["ndim"]))
    if kind == "gaussian":
        return ModulatedGaussian(float(d["amplitude"]), float(d["width"]), tuple(d["center"]),
                                 float(d.get("modulation", 0.0)))
    if kind == "powerlaw":
        return SoftPowerLaw(float(d["amplitude"]), float(d["decay"]), tuple(d["center"]),
                            float(d.get("modulation", 0.0)))
    if kind == "bumps":
        bumps = [(b["amplitude"], tuple(b["center"]), b["width"]) for b in d["bumps"]]
        return BumpSum(tuple(bumps), float(d.get("modulation", 0.0)))
    raise ValueError(f"unknown potential kind {kind!r}")
