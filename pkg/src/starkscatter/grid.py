"""Uniform periodic grids and wavefunctions on them.

States live in the position representation. Arrays may carry leading batch
axes; the trailing ``grid.ndim`` axes are always the spatial ones. All
transforms go through :mod:`scipy.fft` on those trailing axes.

Inner products conjugate the *first* argument::

    inner(a, b) = dx**n * sum(conj(a) * b)
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .errors import GridError

__all__ = [
    "GridSpec",
    "WaveState",
    "WavePacketSpec",
    "make_gaussian",
    "make_compact_momentum_packet",
    "boost",
    "translate",
    "apply_p",
    "inner",
    "expect_x",
    "expect_p",
    "expect_p2",
    "boundary_mass",
    "to_momentum",
    "save_wavefunction",
    "load_wavefunction",
]

BOUNDARY_SHELL = 4
MAGIC = b"WAVEFN01"


def _is_pow2(n):
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Cartesian grid ``x_j = -L + j*dx`` with ``dx = 2L/N`` on every axis.

    Parameters
    ----------
    half_extent : tuple of float
        Half-width ``L`` of the box per axis.
    counts : tuple of int
        Points per axis, each a power of two.
    """

    half_extent: tuple
    counts: tuple

    def __post_init__(self):
        L = tuple(float(v) for v in np.atleast_1d(self.half_extent))
        N = tuple(int(v) for v in np.atleast_1d(self.counts))
        if len(L) == 1 and len(N) > 1:
            L = L * len(N)
        if len(N) == 1 and len(L) > 1:
            N = N * len(L)
        if len(L) != len(N) or not 1 <= len(N) <= 3:
            raise GridError("grid dimension must be 1, 2 or 3")
        if not all(_is_pow2(n) for n in N):
            raise GridError(f"point counts must be powers of two, got {N}")
        if not all(v > 0 for v in L):
            raise GridError("half extents must be positive")
        object.__setattr__(self, "half_extent", L)
        object.__setattr__(self, "counts", N)

    @classmethod
    def cube(cls, ndim, half_extent, count):
        return cls((half_extent,) * ndim, (count,) * ndim)

    @property
    def ndim(self):
        return len(self.counts)

    @property
    def shape(self):
        return self.counts

    @property
    def axes_(self):
        return tuple(range(-self.ndim, 0))

    @cached_property
    def spacing(self):
        return np.array([2 * L / N for L, N in zip(self.half_extent, self.counts)])

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @cached_property
    def axes(self):
        """1-D coordinate arrays per axis."""
        return tuple(-L + dx * np.arange(N)
                     for L, dx, N in zip(self.half_extent, self.spacing, self.counts))

    @cached_property
    def coords(self):
        """Sparse broadcastable coordinate arrays (``indexing='ij'``)."""
        return tuple(np.meshgrid(*self.axes, indexing="ij", sparse=True))

    @cached_property
    def wavenumbers(self):
        """Sparse broadcastable wavenumber arrays in FFT order."""
        ks = [2 * np.pi * sfft.fftfreq(N, d=dx) for N, dx in zip(self.counts, self.spacing)]
        return tuple(np.meshgrid(*ks, indexing="ij", sparse=True))

    @cached_property
    def k2(self):
        return sum(k ** 2 for k in self.wavenumbers)

    @property
    def cutoff(self):
        """Per-axis momentum cutoff ``pi/dx``."""
        return np.pi / self.spacing

    def dot_x(self, v):
        """The array ``v . x`` on the grid."""
        v = np.asarray(v, dtype=float)
        return sum(vi * xi for vi, xi in zip(v, self.coords))

    def dot_k(self, v):
        v = np.asarray(v, dtype=float)
        return sum(vi * ki for vi, ki in zip(v, self.wavenumbers))

    def radius2(self, center=None):
        if center is None:
            center = np.zeros(self.ndim)
        return sum((x - c) ** 2 for x, c in zip(self.coords, center))

    def to_header(self):
        return {"dims": self.ndim, "extents": list(self.half_extent), "counts": list(self.counts)}


@dataclass
class WaveState:
    """Complex amplitudes ``psi`` on ``grid`` (position representation)."""

    grid: GridSpec
    psi: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=complex)
        if self.psi.shape[-self.grid.ndim:] != self.grid.shape:
            raise GridError(f"array shape {self.psi.shape} does not match grid {self.grid.shape}")

    @property
    def batch_shape(self):
        return self.psi.shape[: -self.grid.ndim]

    def norm2(self):
        return self.grid.cell_volume * np.sum(np.abs(self.psi) ** 2, axis=self.grid.axes_)

    def norm(self):
        return np.sqrt(self.norm2())

    def copy(self):
        return WaveState(self.grid, self.psi.copy())

    def replace(self, psi):
        return WaveState(self.grid, psi)

    def __getitem__(self, idx):
        if not self.batch_shape:
            raise IndexError("state has no batch axes")
        return WaveState(self.grid, self.psi[idx])

    @classmethod
    def stack(cls, states):
        grid = states[0].grid
        if any(s.grid != grid for s in states):
            raise GridError("cannot stack states on different grids")
        return cls(grid, np.stack([s.psi for s in states]))


@dataclass(frozen=True)
class WavePacketSpec:
    """Gaussian packet ``exp(-|x-x0|^2/(4 sigma^2) + i k0.x)``."""

    center: tuple
    width: float
    momentum: tuple = None

    def __post_init__(self):
        c = tuple(float(v) for v in np.atleast_1d(self.center))
        k = tuple(0.0 for _ in c)
        if self.momentum is not None:
            k = tuple(float(v) for v in np.atleast_1d(self.momentum))
        if len(k) != len(c):
            raise GridError("packet center and momentum have different dimension")
        if self.width <= 0:
            raise GridError("packet width must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "momentum", k)


def make_gaussian(grid, spec, max_boundary_mass=1e-10):
    """Normalized Gaussian packet on ``grid``.

    Raises GridError if the packet is under-resolved (``sigma < 2 dx``) or
    leaves more than ``max_boundary_mass`` in the outer shell.
    """
    if len(spec.center) != grid.ndim:
        raise GridError("packet dimension does not match grid")
    if spec.width < 2 * grid.spacing.max():
        raise GridError(f"packet width {spec.width} below 2*dx={2 * grid.spacing.max():.4g}")
    r2 = grid.radius2(spec.center)
    psi = np.exp(-r2 / (4 * spec.width ** 2) + 1j * grid.dot_x(spec.momentum))
    state = WaveState(grid, psi)
    state.psi /= state.norm()
    bm = boundary_mass(state)
    if bm > max_boundary_mass:
        raise GridError(f"packet boundary mass {bm:.3g} exceeds {max_boundary_mass:.1g}")
    k_edge = np.abs(np.asarray(spec.momentum)) + 8 / (2 * spec.width)
    if np.any(k_edge > grid.cutoff):
        raise GridError("packet momentum content exceeds the grid cutoff")
    return state


def make_compact_momentum_packet(grid, center, k_radius, momentum=None):
    """Packet whose momentum amplitude is a C-infinity bump of radius ``k_radius``.

    ``phi_hat(k) = exp(-1/(1 - r^2))`` for ``r = |k - k0|/k_radius < 1`` and zero
    outside, shifted in position to ``center``.
    """
    center = np.asarray(center, dtype=float)
    k0 = np.zeros(grid.ndim) if momentum is None else np.asarray(momentum, dtype=float)
    if np.any(np.abs(k0) + k_radius >= grid.cutoff):
        raise GridError("momentum support exceeds the grid cutoff")
    r2 = sum((k - c) ** 2 for k, c in zip(grid.wavenumbers, k0)) / k_radius ** 2
    bump = np.zeros(np.broadcast_shapes(*(k.shape for k in grid.wavenumbers)))
    inside = r2 < 1
    bump[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    phase = np.exp(-1j * grid.dot_k(center + np.asarray(grid.half_extent)))
    psi = sfft.ifftn(bump * phase, axes=grid.axes_)
    state = WaveState(grid, psi)
    state.psi /= state.norm()
    return state


def to_momentum(state):
    """Continuum-normalized momentum amplitudes in FFT order.

    With ``dk = 2 pi/(N dx)`` per axis, ``sum(|phi|^2) * prod(dk)`` equals the
    position-space norm squared.
    """
    g = state.grid
    scale = g.cell_volume / (2 * np.pi) ** (g.ndim / 2)
    return sfft.fftn(state.psi, axes=g.axes_) * scale


def translate(state, shift):
    """``exp(-i shift.p)``: ``psi(x) -> psi(x - shift)`` by a Fourier phase."""
    g = state.grid
    shift = np.asarray(shift, dtype=float)
    if not np.any(shift):
        return state.copy()
    phi = sfft.fftn(state.psi, axes=g.axes_)
    phi *= np.exp(-1j * g.dot_k(shift))
    return state.replace(sfft.ifftn(phi, axes=g.axes_, overwrite_x=True))


def boost(state, v, check=True):
    """Multiply by ``exp(i v.x)``; the momentum distribution shifts by ``v``."""
    g = state.grid
    v = np.asarray(v, dtype=float)
    if check and np.any(v):
        mean = np.atleast_2d(expect_p(state)).reshape(-1, g.ndim) + v
        if np.any(np.abs(mean) >= g.cutoff):
            raise GridError("boosted mean momentum lies beyond the grid cutoff")
    return state.replace(state.psi * np.exp(1j * g.dot_x(v)))


def apply_p(state, axis):
    """Fourier multiplier ``k_axis`` (the operator ``-i d/dx_axis``)."""
    g = state.grid
    phi = sfft.fftn(state.psi, axes=g.axes_)
    phi *= g.wavenumbers[axis]
    return state.replace(sfft.ifftn(phi, axes=g.axes_, overwrite_x=True))


def inner(a, b):
    """``<a, b>``, conjugate-linear in the first argument."""
    g = a.grid
    return g.cell_volume * np.sum(np.conj(a.psi) * b.psi, axis=g.axes_)


def expect_x(state):
    g = state.grid
    n2 = state.norm2()
    out = [g.cell_volume * np.sum(x * np.abs(state.psi) ** 2, axis=g.axes_) / n2 for x in g.coords]
    return np.stack(out, axis=-1)


def expect_p(state):
    g = state.grid
    phi2 = np.abs(sfft.fftn(state.psi, axes=g.axes_)) ** 2
    tot = np.sum(phi2, axis=g.axes_)
    return np.stack([np.sum(k * phi2, axis=g.axes_) / tot for k in g.wavenumbers], axis=-1)


def expect_p2(state):
    g = state.grid
    phi2 = np.abs(sfft.fftn(state.psi, axes=g.axes_)) ** 2
    return np.sum(g.k2 * phi2, axis=g.axes_) / np.sum(phi2, axis=g.axes_)


def boundary_mass(state, shell=BOUNDARY_SHELL):
    """Probability in the outermost ``shell`` cells of every axis (max over batch)."""
    g = state.grid
    dens = np.abs(state.psi) ** 2
    mask = np.zeros(g.shape, dtype=bool)
    for ax in range(g.ndim):
        idx = [slice(None)] * g.ndim
        idx[ax] = np.r_[0:shell, g.shape[ax] - shell:g.shape[ax]]
        mask[tuple(idx)] = True
    inside = g.cell_volume * np.sum(dens * mask, axis=g.axes_)
    return float(np.max(inside / state.norm2()))


def save_wavefunction(path, grid, values):
    """Write ``WAVEFN01``: magic, uint64-LE header length, JSON header, float64-LE data.

    Complex arrays are stored interleaved ``(re, im)``; real arrays (e.g.
    reconstructed potentials) are stored as plain float64 with
    ``"kind": "real"`` in the header.
    """
    values = np.asarray(values)
    if values.shape != grid.shape:
        raise GridError("only unbatched arrays can be saved")
    header = grid.to_header()
    if np.iscomplexobj(values):
        header["kind"] = "complex"
        data = np.ascontiguousarray(values, dtype="<c16").view("<f8")
    else:
        header["kind"] = "real"
        data = np.ascontiguousarray(values, dtype="<f8")
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(data.tobytes(order="C"))


def load_wavefunction(path):
    """Read a ``WAVEFN01`` file; returns ``(grid, array)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a WAVEFN01 file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    grid = GridSpec(tuple(header["extents"]), tuple(header["counts"]))
    data = np.frombuffer(raw[16 + hlen:], dtype="<f8")
    if header.get("kind", "complex") == "complex":
        arr = data.view("<c16").reshape(grid.shape).astype(complex)
    else:
        arr = data.reshape(grid.shape).copy()
    return grid, arr
