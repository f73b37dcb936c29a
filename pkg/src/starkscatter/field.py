"""Period-1 electric fields and the generalized Avron-Herbst gauge.

The free Hamiltonian ``H0(t) = p^2/2 - E(t).x`` is reduced to the constant
Stark Hamiltonian ``B0 = p^2/2 - E0.x`` by the unitary family

    T(t) = exp(-i a(t)) exp(-i b(t).x) exp(-i c(t).p)

with ``b' = -(E - E0)``, ``c' = -b``, ``a' = b^2/2 - E0.c``. The additive
constant in ``b`` is fixed by ``int_0^1 b = 0`` so that ``c`` is period-1.

Translation convention used throughout: ``exp(-i c.p) psi(x) = psi(x - c)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft
from scipy.integrate import cumulative_simpson, simpson, trapezoid
from scipy.interpolate import CubicSpline

from .errors import BoundaryMassError, ConfigError, GridError
from .grid import boundary_mass, translate

__all__ = [
    "ElectricField",
    "GaugeCoefficients",
    "compute_coefficients",
    "closed_form_coefficients",
    "coefficient_closed_form_errors",
    "apply_gauge_T",
    "stark_propagate",
    "free_propagate",
]

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True, eq=False)
class ElectricField:
    """``E(t) = E0 + oscillatory part``, period 1.

    The oscillatory part is either a list of harmonics ``(k, cos_amp, sin_amp)``
    contributing ``cos_amp cos(2 pi k t) + sin_amp sin(2 pi k t)``, or a table
    of ``M + 1`` uniformly spaced samples over ``[0, 1]`` (endpoint included)
    interpolated linearly.
    """

    mean: np.ndarray
    harmonics: tuple = ()
    table: np.ndarray = field(default=None, repr=False)
    periodicity_tol: float = 1e-9

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        if mean.ndim != 1 or not 1 <= mean.size <= 3:
            raise ConfigError("mean field must be a vector of length 1..3")
        n = mean.size
        harms = []
        for k, ca, sa in self.harmonics:
            if int(k) != k or k < 1:
                raise ConfigError(f"harmonic index must be a positive integer, got {k}")
            ca = np.broadcast_to(np.asarray(ca, dtype=float), (n,)).copy()
            sa = np.broadcast_to(np.asarray(sa, dtype=float), (n,)).copy()
            harms.append((int(k), ca, sa))
        table = self.table
        if table is not None:
            if harms:
                raise ConfigError("give either harmonics or a table, not both")
            table = np.asarray(table, dtype=float).reshape(len(table), -1)
            if table.shape[1] != n or table.shape[0] < 3:
                raise ConfigError("field table must have shape (M+1, n) with M >= 2")
            if np.max(np.abs(table[-1] - table[0])) > self.periodicity_tol:
                raise ConfigError("tabulated field is not periodic: endpoint mismatch")
            # the oscillatory part must average to zero so that E0 is the true mean
            avg = trapezoid(table, dx=1.0 / (len(table) - 1), axis=0)
            if np.max(np.abs(avg)) > 1e-9 * max(1.0, np.max(np.abs(table))):
                raise ConfigError(f"oscillatory table has nonzero mean {avg}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "harmonics", tuple(harms))
        object.__setattr__(self, "table", table)

    @classmethod
    def constant(cls, mean):
        return cls(mean)

    @classmethod
    def zero(cls, ndim):
        return cls(np.zeros(ndim))

    @property
    def ndim(self):
        return self.mean.size

    @property
    def is_constant(self):
        return self.table is None and not any(np.any(c) or np.any(s) for _, c, s in self.harmonics)

    def oscillatory(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (self.ndim,))
        if self.table is not None:
            M = len(self.table) - 1
            u = np.mod(t, 1.0) * M
            j = np.minimum(np.floor(u).astype(int), M - 1)
            w = (u - j)[..., None]
            out += (1 - w) * self.table[j] + w * self.table[j + 1]
        for k, ca, sa in self.harmonics:
            ph = 2 * np.pi * k * t[..., None]
            out += ca * np.cos(ph) + sa * np.sin(ph)
        return out

    def __call__(self, t):
        return self.mean + self.oscillatory(t)

    def integral(self, t0, t1):
        """``int_{t0}^{t1} E(u) du`` by composite 8-point Gauss-Legendre.

        Panels are short enough to resolve the highest harmonic (or table
        cell), so trigonometric fields integrate to roundoff.
        """
        length = t1 - t0
        if length == 0:
            return np.zeros(self.ndim)
        if self.table is not None:
            return self.mean * length + self._table_integral(t0, t1)
        kmax = max((k for k, _, _ in self.harmonics), default=0)
        panels = max(1, int(np.ceil(abs(length) * 4 * kmax)))
        edges = t0 + length * np.arange(panels + 1) / panels
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * (edges[1:] - edges[:-1])
        nodes = mid[:, None] + half[:, None] * _GL_X[None, :]
        vals = self.oscillatory(nodes)
        osc = np.einsum("p,pqn,q->n", half, vals, _GL_W)
        return self.mean * length + osc

    def _table_integral(self, t0, t1):
        return self._table_antiderivative(t1) - self._table_antiderivative(t0)

    @cached_property
    def _table_cumulative(self):
        M = len(self.table) - 1
        cells = 0.5 * (self.table[1:] + self.table[:-1]) / M
        return np.vstack([np.zeros(self.ndim), np.cumsum(cells, axis=0)])

    def _table_antiderivative(self, t):
        M = len(self.table) - 1
        period = self._table_cumulative[-1]
        n = np.floor(t)
        u = (t - n) * M
        j = min(int(np.floor(u)), M - 1)
        w = u - j
        partial = self.table[j] * w + 0.5 * (self.table[j + 1] - self.table[j]) * w ** 2
        return n * period + self._table_cumulative[j] + partial / M

    def in_basis(self, basis):
        """The field in coordinates ``x = basis @ u`` (orthonormal columns)."""
        B = np.asarray(basis, dtype=float)
        harms = tuple((k, B.T @ c, B.T @ s) for k, c, s in self.harmonics)
        table = None if self.table is None else self.table @ B
        return ElectricField(B.T @ self.mean, harms, table, self.periodicity_tol)

    def to_dict(self):
        d = {"mean": self.mean.tolist()}
        if self.harmonics:
            d["harmonics"] = [{"k": k, "cos": c.tolist(), "sin": s.tolist()} for k, c, s in self.harmonics]
        if self.table is not None:
            d["table"] = self.table.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        harms = [(h["k"], h.get("cos", 0.0), h.get("sin", 0.0)) for h in d.get("harmonics", [])]
        return cls(np.asarray(d["mean"], dtype=float), tuple(harms), d.get("table"))


@dataclass(frozen=True, eq=False)
class GaugeCoefficients:
    """Tables of ``a, b, c`` on ``t_j = j/M`` with cubic-spline interpolation.

    ``b`` and ``c`` use periodic splines and extend with period 1; ``a`` grows
    by ``a(1)`` per period.
    """

    field: ElectricField
    t: np.ndarray = field(repr=False)
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    c: np.ndarray = field(repr=False)

    @property
    def mesh_size(self):
        return len(self.t) - 1

    @property
    def mean(self):
        return self.field.mean

    @cached_property
    def _splines(self):
        sb = CubicSpline(self.t, self.b, bc_type="periodic", axis=0)
        sc = CubicSpline(self.t, self.c, bc_type="periodic", axis=0)
        sa = CubicSpline(self.t, self.a, axis=0)
        return sa, sb, sc

    def __call__(self, t):
        """Return ``(a(t), b(t), c(t))``."""
        t = np.asarray(t, dtype=float)
        n = np.floor(t)
        u = t - n
        sa, sb, sc = self._splines
        return sa(u) + n * self.a[-1], sb(u), sc(u)

    def derivatives(self, t):
        t = np.asarray(t, dtype=float)
        u = t - np.floor(t)
        sa, sb, sc = self._splines
        return sa(u, 1), sb(u, 1), sc(u, 1)

    def ode_residuals(self, t=None):
        """Max residuals ``|b'+E-E0|, |c'+b|, |a'-b^2/2+E0.c|`` (off-node by default)."""
        if t is None:
            t = 0.5 * (self.t[1:] + self.t[:-1])
        a, b, c = self(t)
        da, db, dc = self.derivatives(t)
        osc = self.field.oscillatory(t)
        r_b = np.max(np.abs(db + osc))
        r_c = np.max(np.abs(dc + b))
        r_a = np.max(np.abs(da - 0.5 * np.sum(b ** 2, axis=-1) + c @ self.mean))
        return r_a, r_b, r_c

    def write_csv(self, path):
        """Columns ``t, b_1..b_n, c_1..c_n, a``; floats with 17 significant digits."""
        n = self.field.ndim
        header = ["t"] + [f"b{i + 1}" for i in range(n)] + [f"c{i + 1}" for i in range(n)] + ["a"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for j in range(len(self.t)):
                row = [self.t[j], *self.b[j], *self.c[j], self.a[j]]
                w.writerow([f"{v:.17g}" for v in row])


def compute_coefficients(field, mesh_size=1024, periodicity_tol=1e-9):
    """Tabulate the gauge coefficients by cumulative composite Simpson.

    ``B(t) = int_0^t (E - E0)``, ``b = -B + int_0^1 B`` (zero period average),
    ``c = -int_0^t b``, ``a = int_0^t (b^2/2 - E0.c)``.
    """
    if mesh_size < 64:
        raise ConfigError("mesh_size must be at least 64")
    t = np.linspace(0.0, 1.0, mesh_size + 1)
    h = 1.0 / mesh_size
    osc = field.oscillatory(t)
    B = cumulative_simpson(osc, dx=h, axis=0, initial=0.0)
    b = -B + simpson(B, dx=h, axis=0)
    if np.max(np.abs(b[-1] - b[0])) > periodicity_tol:
        raise ConfigError("b(t) is not periodic: oscillatory part has nonzero mean")
    b[-1] = b[0]
    c = -cumulative_simpson(b, dx=h, axis=0, initial=0.0)
    if np.max(np.abs(c[-1] - c[0])) > periodicity_tol:
        raise ConfigError("c(t) failed the periodicity check")
    c[-1] = c[0]
    integrand = 0.5 * np.sum(b ** 2, axis=1) - c @ field.mean
    a = cumulative_simpson(integrand, dx=h, initial=0.0)
    return GaugeCoefficients(field, t, a, b, c)


def closed_form_coefficients(field, t):
    """Exact ``(a, b, c)`` for a field with at most one harmonic and no table.

    For ``E = E0 + C cos(w t) + S sin(w t)`` with ``w = 2 pi k``::

        b = (S cos(w t) - C sin(w t)) / w
        c = (C (1 - cos(w t)) - S sin(w t)) / w^2

    and ``a`` is the antiderivative of ``|b|^2/2 - E0.c``. Returns None for
    other fields.
    """
    if field.table is not None or len(field.harmonics) > 1:
        return None
    t = np.asarray(t, dtype=float)
    n = field.ndim
    E0 = field.mean
    if not field.harmonics:
        z = np.zeros(t.shape + (n,))
        return np.zeros(t.shape), z, z.copy()
    k, C, S = field.harmonics[0]
    w = 2 * np.pi * k
    sn, cs = np.sin(w * t)[..., None], np.cos(w * t)[..., None]
    b = (S * cs - C * sn) / w
    c = (C * (1 - cs) - S * sn) / w ** 2
    tt = t
    s2 = np.sin(2 * w * tt) / (4 * w)
    a = (C @ C * (tt / 2 - s2) + S @ S * (tt / 2 + s2) - (C @ S) * np.sin(w * tt) ** 2 / w) / (2 * w ** 2)
    a -= (E0 @ C) * (tt - np.sin(w * tt) / w) / w ** 2 - (E0 @ S) * (1 - np.cos(w * tt)) / w ** 3
    return a, b, c


def coefficient_closed_form_errors(field, coeffs):
    """Sup-norm differences between tabulated and closed-form coefficients, or None."""
    exact = closed_form_coefficients(field, coeffs.t)
    if exact is None:
        return None
    a, b, c = exact
    return {"a": float(np.max(np.abs(coeffs.a - a))), "b": float(np.max(np.abs(coeffs.b - b))),
            "c": float(np.max(np.abs(coeffs.c - c)))}


def _check_grid(state, ndim):
    if state.grid.ndim != ndim:
        raise GridError(f"state is {state.grid.ndim}-D but the field is {ndim}-D")


def apply_gauge_T(state, t, coeffs, inverse=False):
    """Apply ``T(t)`` (or ``T*(t)`` when ``inverse``)."""
    _check_grid(state, coeffs.field.ndim)
    a, b, c = coeffs(t)
    g = state.grid
    if not inverse:
        out = translate(state, c)
        out.psi *= np.exp(-1j * (a + g.dot_x(b)))
        return out
    out = state.replace(state.psi * np.exp(1j * (a + g.dot_x(b))))
    return translate(out, -c)


def _check_boundary(state, threshold, t):
    bm = boundary_mass(state)
    if bm > threshold:
        raise BoundaryMassError(f"boundary mass {bm:.3g} exceeds {threshold:.1g} at t={t:.6g}",
                                t=t, boundary_mass=bm)


def stark_propagate(state, t, mean, boundary_threshold=1e-8):
    """``exp(-i t B0)`` via the four-factor Avron-Herbst product.

    Kinetic factor, translation by ``t^2 E0 / 2``, position phase
    ``exp(i t E0.x)`` and the global phase ``exp(-i |E0|^2 t^3 / 6)``.
    """
    g = state.grid
    E0 = np.asarray(mean, dtype=float)
    _check_grid(state, E0.size)
    phi = sfft.fftn(state.psi, axes=g.axes_)
    phi *= np.exp(-1j * (0.5 * t * g.k2 + g.dot_k(0.5 * t ** 2 * E0)))
    psi = sfft.ifftn(phi, axes=g.axes_, overwrite_x=True)
    psi *= np.exp(1j * (t * g.dot_x(E0) - E0 @ E0 * t ** 3 / 6))
    out = state.replace(psi)
    _check_boundary(out, boundary_threshold, t)
    return out


def free_propagate(state, t, s, coeffs, boundary_threshold=1e-8):
    """Exact free propagator ``U0(t, s) = T(t) exp(-i (t-s) B0) T*(s)``.

    The factors are merged into one position phase, one Fourier multiplier
    and a final position phase (two FFTs) using
    ``exp(-i c.p) exp(i tau E0.x) = exp(i tau E0.(x - c)) exp(-i c.p)``.
    """
    _check_grid(state, coeffs.field.ndim)
    if t == s:
        return state.copy()
    g = state.grid
    E0 = coeffs.mean
    tau = t - s
    a_s, b_s, c_s = coeffs(s)
    a_t, b_t, c_t = coeffs(t)
    psi = state.psi * np.exp(1j * g.dot_x(b_s))
    phi = sfft.fftn(psi, axes=g.axes_, overwrite_x=True)
    shift = c_t - c_s + 0.5 * tau ** 2 * E0
    phi *= np.exp(-1j * (0.5 * tau * g.k2 + g.dot_k(shift)))
    psi = sfft.ifftn(phi, axes=g.axes_, overwrite_x=True)
    scalar = a_s - a_t - E0 @ E0 * tau ** 3 / 6 - tau * (E0 @ c_t)
    psi *= np.exp(1j * (g.dot_x(tau * E0 - b_t) + scalar))
    out = state.replace(psi)
    _check_boundary(out, boundary_threshold, t)
    return out
