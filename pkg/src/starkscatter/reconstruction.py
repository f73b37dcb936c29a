"""High-energy sweeps into X-ray transform data and filtered back-projection.

For a direction ``omega`` and a transverse offset ``y`` (measured along
``n = (-sin theta, cos theta)`` for ``omega = (cos theta, sin theta)``) the
commutator functional of a probe packet centred at ``y n`` tends, after
scaling by ``sqrt(lam)``, to

    D(omega, y) = int grad V(s, y n + t omega) dt,

smoothed by the probe density. Its component along ``n`` is the derivative
in ``y`` of the profile ``P(omega, y) = int V(s, y n + t omega) dt``, which is
integrated back and inverted by filtered back-projection.

Each measurement is done in coordinates rotated so that ``omega = e1`` and
shifted so that the probe sits at the origin; this keeps the grid no larger
than one packet needs.
"""
from __future__ import annotations

import csv
import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.integrate import cumulative_trapezoid, quad_vec

from .errors import BoundaryMassError, ConfigError, GridError, LimitedAngleError, PartialFailureError
from .field import ElectricField
from .grid import GridSpec, WavePacketSpec, make_gaussian, save_wavefunction
from .potentials import FramedPotential
from .scattering import ScatteringConfig, coefficients_for, commutator_functional

__all__ = [
    "SweepPlan",
    "ProbeSettings",
    "Sinogram",
    "ReconstructionConfig",
    "ReconstructionResult",
    "ProfileAnchorWarning",
    "direction_basis",
    "estimate_pointwise",
    "measure_sinogram",
    "assemble_profile",
    "fbp_invert",
    "oracle_xray",
    "oracle_probe_derivative",
    "oracle_sinogram",
    "sinogram_discrepancy",
    "relative_l2_error",
    "reconstruct",
    "save_result",
]

log = logging.getLogger(__name__)


class ProfileAnchorWarning(UserWarning):
    """The integrated profile does not decay at the offset-grid boundary."""


def direction_basis(theta):
    """Orthonormal ``[omega, n]`` as columns for the angle ``theta``."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class SweepPlan:
    """Directions, offsets, energies and probe family of a sweep.

    ``angles`` are in radians. With a nonzero ``mean_field`` every direction
    must satisfy ``|omega.E0| < (1 - eta) |E0|``.
    """

    angles: tuple
    offsets: tuple
    lams: tuple = (400.0,)
    s_values: tuple = (0.0,)
    probe_width: float = 0.3
    mean_field: tuple = (0.0, 0.0)
    eta: float = 0.05
    richardson: bool = False

    def __post_init__(self):
        for name in ("angles", "offsets", "lams", "s_values", "mean_field"):
            object.__setattr__(self, name, tuple(float(v) for v in np.atleast_1d(getattr(self, name))))
        y = np.asarray(self.offsets)
        if y.size < 3 or np.any(np.diff(y) <= 0):
            raise ConfigError("offsets must be increasing with at least 3 entries")
        if not np.allclose(y, -y[::-1], atol=1e-12 * max(1.0, np.abs(y).max())):
            raise ConfigError("offsets must be symmetric about 0")
        if not np.allclose(np.diff(y), y[1] - y[0], rtol=1e-9):
            raise ConfigError("offsets must be uniformly spaced")
        if any(b <= a for a, b in zip(self.lams, self.lams[1:])) or min(self.lams) <= 0:
            raise ConfigError("lambda ladder must be positive and increasing")
        if self.probe_width <= 0:
            raise ConfigError("probe width must be positive")
        E0 = np.asarray(self.mean_field)
        e = np.linalg.norm(E0)
        if e > 0:
            for th in self.angles:
                if abs(direction_basis(th)[:, 0] @ E0) >= (1 - self.eta) * e:
                    raise ConfigError(f"direction at angle {th:.6g} too close to the mean field")

    @classmethod
    def uniform(cls, n_angles, n_offsets, offset_max, span=np.pi, **kw):
        angles = span * np.arange(n_angles) / n_angles
        return cls(tuple(angles), tuple(np.linspace(-offset_max, offset_max, n_offsets)), **kw)

    @property
    def directions(self):
        return np.array([direction_basis(th)[:, 0] for th in self.angles])

    def to_dict(self):
        return {"angles": list(self.angles), "offsets": list(self.offsets), "lams": list(self.lams),
                "s_values": list(self.s_values), "probe_width": self.probe_width,
                "mean_field": list(self.mean_field), "eta": self.eta, "richardson": self.richardson}


@dataclass(frozen=True)
class ProbeSettings:
    """Numerical settings of one probe measurement.

    ``grid`` is the local grid around the probe (first axis along ``omega``).
    ``margin`` is the truncation margin added to the crossing time
    ``support / sqrt(lam)``.
    """

    grid: GridSpec = GridSpec((8.0, 8.0), (128, 128))
    support: float = 6.0
    margin: float = 0.5
    dt_max: float = 0.005
    step_length: float = 0.05
    stability: bool = False
    boundary_threshold: float = 1e-8

    def config(self, s, lam):
        v = np.array([np.sqrt(lam), 0.0])
        return ScatteringConfig.for_energy(s, lam, self.support, margin=self.margin, dt_max=self.dt_max,
                                           step_length=self.step_length, frame_velocity=v,
                                           boundary_threshold=self.boundary_threshold)

    def to_dict(self):
        return {"grid": self.grid.to_header(), "support": self.support, "margin": self.margin,
                "dt_max": self.dt_max, "step_length": self.step_length, "stability": self.stability,
                "boundary_threshold": self.boundary_threshold}


def _richardson(values, lams):
    """Extrapolate assuming the error falls like ``lam^(-1/2)``."""
    r = np.sqrt(lams[-1] / lams[-2])
    return (r * values[-1] - values[-2]) / (r - 1)


def estimate_pointwise(s, theta, y, plan, field, potential, settings=ProbeSettings()):
    """Estimate ``int grad V(s, y n + t omega) dt`` from one probe packet.

    Returns a dict with the complex estimate in ``(omega, n)`` components
    (``local``), the same rotated to lab axes (``vector``), per-lambda values,
    truncation diagnostics and a ``flag`` (None when the sample is valid).
    The estimate is ``sqrt(lam) F / <Phi, Phi>`` at the largest lambda, or its
    Richardson extrapolation across the last two ladder rungs.
    """
    B = direction_basis(theta)
    local_V = FramedPotential(potential, y * B[:, 1], B)
    local_E = field.in_basis(B)
    coeffs = coefficients_for(local_E)
    probe = make_gaussian(settings.grid, WavePacketSpec((0.0, 0.0), plan.probe_width))
    per_lam, diags = [], []
    flag = None
    for lam in plan.lams:
        cfg = settings.config(s, lam)
        try:
            smp = commutator_functional(probe, probe, s, lam, np.array([1.0, 0.0]), cfg, local_E,
                                        local_V, coeffs, stability=settings.stability)
        except BoundaryMassError as exc:
            return {"local": np.full(2, np.nan + 0j), "vector": np.full(2, np.nan + 0j),
                    "per_lam": per_lam, "diagnostics": diags, "flag": f"boundary: {exc}"}
        per_lam.append(smp.scaled / smp.phi_norm2)
        diags.append(smp.diagnostics)
        if settings.stability and not smp.diagnostics["truncation_stable"]:
            flag = flag or "truncation unstable"
    per_lam = np.array(per_lam)
    if len(plan.lams) >= 3:
        steps = np.abs(np.diff(per_lam[:, 1]))
        if np.any(steps[1:] > steps[:-1]):
            flag = flag or "non-monotone lambda convergence"
    local = _richardson(per_lam, plan.lams) if plan.richardson and len(plan.lams) >= 2 else per_lam[-1]
    return {"local": local, "vector": B @ local, "per_lam": per_lam, "diagnostics": diags, "flag": flag}


def _row_job(args):
    s, theta, y, plan, field, potential, settings = args
    return estimate_pointwise(s, theta, y, plan, field, potential, settings)


@dataclass
class Sinogram:
    """X-ray data on an (angle, offset) grid for one phase ``s``.

    ``derivative`` holds the transverse data ``D(omega, y)``, ``profile`` the
    integrated ``P(omega, y)``. ``scatter`` is the per-sample spread used as a
    noise scale (zero for oracle data) and ``valid`` masks flagged samples.
    """

    angles: np.ndarray
    offsets: np.ndarray
    derivative: np.ndarray
    profile: np.ndarray
    provenance: str
    s: float = 0.0
    scatter: np.ndarray = None
    valid: np.ndarray = None
    mean_field: tuple = (0.0, 0.0)
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=float)
        self.offsets = np.asarray(self.offsets, dtype=float)
        shape = (self.angles.size, self.offsets.size)
        self.derivative = np.asarray(self.derivative, dtype=float).reshape(shape)
        self.profile = np.asarray(self.profile, dtype=float).reshape(shape)
        self.scatter = np.zeros(shape) if self.scatter is None else np.asarray(self.scatter, float).reshape(shape)
        self.valid = np.ones(shape, bool) if self.valid is None else np.asarray(self.valid, bool).reshape(shape)
        if self.provenance not in ("measured", "oracle"):
            raise ConfigError(f"unknown provenance {self.provenance!r}")

    @property
    def valid_fraction(self):
        return float(self.valid.mean())

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "angle", "offset", "derivative", "profile", "scatter", "valid", "provenance"])
            for k, th in enumerate(self.angles):
                for m, y in enumerate(self.offsets):
                    w.writerow([f"{self.s:.17g}", f"{th:.17g}", f"{y:.17g}",
                                f"{self.derivative[k, m]:.17g}", f"{self.profile[k, m]:.17g}",
                                f"{self.scatter[k, m]:.17g}", int(self.valid[k, m]), self.provenance])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ConfigError(f"empty sinogram file {path}")
        angles = sorted({float(r["angle"]) for r in rows})
        offsets = sorted({float(r["offset"]) for r in rows})
        ka = {a: i for i, a in enumerate(angles)}
        ko = {y: i for i, y in enumerate(offsets)}
        shape = (len(angles), len(offsets))
        arrs = {c: np.zeros(shape) for c in ("derivative", "profile", "scatter", "valid")}
        for r in rows:
            i, j = ka[float(r["angle"])], ko[float(r["offset"])]
            for c in arrs:
                arrs[c][i, j] = float(r[c])
        return cls(angles, offsets, arrs["derivative"], arrs["profile"], rows[0]["provenance"],
                   s=float(rows[0]["s"]), scatter=arrs["scatter"], valid=arrs["valid"] > 0.5)


def assemble_profile(offsets, derivative, valid=None, tol=1e-2):
    """Integrate transverse-derivative samples into a profile along ``y``.

    Cumulative trapezoid from the first offset, then the linear function
    through the two end values is subtracted so the profile vanishes at both
    ends. This removes any constant bias in the derivative data. A
    :class:`ProfileAnchorWarning` is issued when the removed end value exceeds
    ``tol`` times the profile peak. Invalid samples are bridged by linear
    interpolation.
    """
    y = np.asarray(offsets, dtype=float)
    d = np.asarray(derivative, dtype=float)
    if valid is not None and not np.all(valid):
        ok = np.asarray(valid, bool)
        if ok.sum() < 2:
            raise PartialFailureError("too few valid samples in a sinogram row", valid_fraction=ok.mean())
        d = np.interp(y, y[ok], d[ok])
    Q = cumulative_trapezoid(d, y, initial=0.0)
    drift = Q[-1]
    P = Q - drift * (y - y[0]) / (y[-1] - y[0])
    peak = np.max(np.abs(P))
    if abs(drift) > tol * max(peak, 1e-300) and abs(drift) > 1e-14:
        warnings.warn(f"profile end value {drift:.3g} exceeds {tol:g} of peak {peak:.3g}; "
                      "anchored linearly", ProfileAnchorWarning, stacklevel=2)
    return P


def _ramp_filter(n_pad, d, window):
    """Frequency response of the band-limited ramp (Ram-Lak) kernel with a window."""
    n = np.concatenate([np.arange(0, n_pad // 2 + 1), np.arange(-(n_pad // 2) + 1, 0)])
    h = np.zeros(n_pad)
    h[0] = 1.0 / (4 * d * d)
    odd = n % 2 == 1
    h[odd] = -1.0 / (np.pi * n[odd] * d) ** 2
    H = np.real(sfft.fft(h)) * d
    if window == "hann":
        f = np.abs(sfft.fftfreq(n_pad)) / 0.5
        H *= 0.5 * (1 + np.cos(np.pi * f))
    elif window not in (None, "none", "ramlak"):
        raise ConfigError(f"unknown filter window {window!r}")
    return H


def _check_angles(angles, mean_field):
    if np.linalg.norm(mean_field) > 0:
        raise LimitedAngleError("limited-angle unsupported: sinograms from a nonzero mean field "
                                "cover only a cone of directions")
    K = angles.size
    if K < 8:
        raise ConfigError(f"angle set too sparse for back-projection: {K} < 8")
    d = np.diff(angles)
    step = d[0]
    if np.any(np.abs(d - step) > 1e-9) or step <= 0:
        raise LimitedAngleError("limited-angle unsupported: angles must be uniformly spaced")
    span = K * step
    if not (abs(span - np.pi) < 1e-6 or abs(span - 2 * np.pi) < 1e-6):
        raise LimitedAngleError(f"limited-angle unsupported: angles span {span:.6g}, need pi or 2 pi")


def fbp_invert(sinogram, grid, window="hann"):
    """Filtered back-projection of ``sinogram.profile`` onto a 2D ``grid``.

    Needs at least 8 uniformly spaced angles covering a half or full turn.
    Returns the reconstructed field as an array of shape ``grid.counts``.
    """
    if grid.ndim != 2:
        raise GridError("back-projection needs a 2D grid")
    angles = sinogram.angles
    _check_angles(angles, np.asarray(sinogram.mean_field, dtype=float))
    y = sinogram.offsets
    d = y[1] - y[0]
    M = y.size
    n_pad = int(2 ** np.ceil(np.log2(2 * M)))
    H = _ramp_filter(n_pad, d, window)
    P = np.zeros((angles.size, n_pad))
    P[:, :M] = sinogram.profile
    Q = np.real(sfft.ifft(sfft.fft(P, axis=1) * H, axis=1))[:, :M]
    x1, x2 = np.meshgrid(*grid.axes, indexing="ij")
    out = np.zeros(grid.counts)
    for th, q in zip(angles, Q):
        t = -np.sin(th) * x1 + np.cos(th) * x2
        out += np.interp(t, y, q, left=0.0, right=0.0)
    return out * np.pi / angles.size


def oracle_xray(potential, s, theta, offsets, epsabs=1e-12):
    """``P = int V(s, y n + t omega) dt`` and ``D = int n.grad V dt`` by quadrature.

    Adaptive quadrature over the whole line, vectorized across offsets.
    """
    B = direction_basis(theta)
    om, n = B[:, 0], B[:, 1]
    y = np.atleast_1d(np.asarray(offsets, dtype=float))
    base = y[:, None] * n

    def integrand(t):
        pts = base + t * om
        return np.concatenate([potential.at_points(s, pts),
                               potential.gradient_at_points(s, pts) @ n])

    val, _ = quad_vec(integrand, -np.inf, np.inf, epsabs=epsabs, epsrel=1e-11, limit=400)
    return val[:y.size], val[y.size:]


def oracle_probe_derivative(potential, s, theta, offsets, probe_width, order=40):
    """Oracle ``D`` smoothed by a probe density of standard deviation ``probe_width``.

    The line integral is constant along ``omega``, so the smoothing reduces
    to a 1D Gauss-Hermite convolution in the offset.
    """
    z, w = np.polynomial.hermite.hermgauss(order)
    out = []
    for y in np.atleast_1d(offsets):
        _, D = oracle_xray(potential, s, theta, y + np.sqrt(2) * probe_width * z)
        out.append(w @ D / np.sqrt(np.pi))
    return np.array(out)


def oracle_sinogram(potential, s, plan):
    """Exact sinogram (provenance ``oracle``) of ``potential`` at phase ``s``."""
    P, D = zip(*(oracle_xray(potential, s, th, plan.offsets) for th in plan.angles))
    return Sinogram(plan.angles, plan.offsets, np.array(D), np.array(P), "oracle", s=s,
                    mean_field=plan.mean_field)


def measure_sinogram(s, plan, field, potential, settings=ProbeSettings(), workers=1,
                     min_valid=0.9, progress=None):
    """Measured sinogram from commutator functionals at every (angle, offset).

    The real transverse component gives ``D``; the per-sample scatter is
    ``sqrt(Im(D_n)^2 + |D_omega|^2)``, the size of the parts that vanish in
    the high-energy limit. Flagged samples are excluded; fewer than
    ``min_valid`` valid samples raises :class:`PartialFailureError`.
    """
    jobs = [(s, th, y, plan, field, potential, settings) for th in plan.angles for y in plan.offsets]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_row_job, jobs))
    else:
        results = []
        for i, job in enumerate(jobs):
            results.append(_row_job(job))
            if progress:
                progress(i + 1, len(jobs))
    shape = (len(plan.angles), len(plan.offsets))
    local = np.array([r["local"] for r in results]).reshape(shape + (2,))
    valid = np.array([r["flag"] is None and np.all(np.isfinite(r["local"])) for r in results]).reshape(shape)
    flags = {f"{jobs[i][1]:.6g},{jobs[i][2]:.6g}": r["flag"] for i, r in enumerate(results) if r["flag"]}
    frac = float(valid.mean())
    if frac < min_valid:
        raise PartialFailureError(f"only {frac:.1%} of samples valid (need {min_valid:.0%})",
                                  valid_fraction=frac)
    D = np.where(valid, np.real(local[..., 1]), 0.0)
    scatter = np.where(valid, np.hypot(np.imag(local[..., 1]), np.abs(local[..., 0])), 0.0)
    P = np.array([assemble_profile(plan.offsets, D[k], valid[k]) for k in range(shape[0])])
    sino = Sinogram(plan.angles, plan.offsets, D, P, "measured", s=s, scatter=scatter, valid=valid,
                    mean_field=plan.mean_field, flags=flags)
    truncation = [d.get("truncation_change") for r in results for d in r["diagnostics"]]
    sino.flags["_max_truncation_change"] = max((t for t in truncation if t is not None), default=None)
    return sino


def sinogram_discrepancy(a, b):
    """Compare two measured sinograms sample by sample.

    Returns ``max |dD|``, the combined scatter at that sample, their ratio,
    and the largest per-sample ratio ``|dD| / scatter`` over all samples.
    """
    ok = a.valid & b.valid
    dD = np.where(ok, np.abs(a.derivative - b.derivative), 0.0)
    sc = np.hypot(a.scatter, b.scatter)
    i = np.unravel_index(np.argmax(dD), dD.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(ok & (sc > 0), dD / sc, np.where(dD > 0, np.inf, 0.0))
    return {"max_difference": float(dD[i]), "scatter_at_max": float(sc[i]),
            "ratio_at_max": float(dD[i] / sc[i]) if sc[i] > 0 else float("inf"),
            "max_ratio": float(np.max(ratios)), "max_scatter": float(np.max(np.where(ok, sc, 0.0)))}


def relative_l2_error(estimate, truth, grid, radius):
    """Relative L2 error over the disc ``|x| <= radius``."""
    mask = grid.radius2() <= radius ** 2
    return float(np.linalg.norm((estimate - truth)[mask]) / np.linalg.norm(truth[mask]))


@dataclass(frozen=True)
class ReconstructionConfig:
    """What to reconstruct and how.

    ``mode`` is ``"oracle"`` (exact sinograms) or ``"measured"`` (commutator
    sweeps). ``output_grid`` is the 2D grid of the reconstructed field and
    ``error_radius`` the disc on which the relative L2 error is reported.
    """

    potential: object
    field: ElectricField
    mode: str = "oracle"
    output_grid: GridSpec = GridSpec((4.0, 4.0), (64, 64))
    error_radius: float = 3.0
    window: str = "hann"
    settings: ProbeSettings = ProbeSettings()
    workers: int = 1
    min_valid: float = 0.9

    def __post_init__(self):
        if self.mode not in ("oracle", "measured"):
            raise ConfigError(f"mode must be 'oracle' or 'measured', got {self.mode!r}")
        if not 0 < self.min_valid <= 1:
            raise ConfigError("min_valid must lie in (0, 1]")


@dataclass
class ReconstructionResult:
    """Reconstructed fields per phase ``s`` with errors and diagnostics."""

    grid: GridSpec
    fields: dict
    truths: dict
    errors: dict
    sinograms: dict
    diagnostics: dict

    def metrics(self):
        return {"errors": {f"{s:.17g}": e for s, e in self.errors.items()}, **self.diagnostics}


def reconstruct(plan, config, progress=None):
    """Sweep (or read the oracle), assemble sinograms, invert and score each ``s``."""
    g = config.output_grid
    fields, truths, errors, sinos = {}, {}, {}, {}
    diag = {"mode": config.mode, "window": config.window, "n_angles": len(plan.angles),
            "n_offsets": len(plan.offsets), "error_radius": config.error_radius,
            "plan": plan.to_dict(), "valid_fraction": {}, "flags": {}}
    if config.mode == "measured":
        diag["settings"] = config.settings.to_dict()
    for s in plan.s_values:
        if config.mode == "oracle":
            sino = oracle_sinogram(config.potential, s, plan)
        else:
            sino = measure_sinogram(s, plan, config.field, config.potential, config.settings,
                                    config.workers, config.min_valid, progress)
        rec = fbp_invert(sino, g, config.window)
        truth = config.potential.value(s, g.coords)
        truth = np.broadcast_to(truth, g.counts)
        fields[s], truths[s], sinos[s] = rec, truth, sino
        errors[s] = relative_l2_error(rec, truth, g, config.error_radius)
        diag["valid_fraction"][f"{s:.17g}"] = sino.valid_fraction
        if sino.flags:
            diag["flags"][f"{s:.17g}"] = {k: v for k, v in sino.flags.items()}
        log.info("s=%g: relative L2 error %.4g", s, errors[s])
    return ReconstructionResult(g, fields, truths, errors, sinos, diag)


def save_result(result, out_dir):
    """Write fields (``WAVEFN01`` real), sinogram CSVs and ``metrics.json``."""
    paths = []
    for i, (s, rec) in enumerate(sorted(result.fields.items())):
        p = f"{out_dir}/reconstruction_{i:03d}.wfn"
        save_wavefunction(p, result.grid, rec)
        q = f"{out_dir}/sinogram_{i:03d}.csv"
        result.sinograms[s].to_csv(q)
        paths += [p, q]
    m = f"{out_dir}/metrics.json"
    with open(m, "w") as fh:
        json.dump(result.metrics(), fh, indent=2, sort_keys=True, default=_json_default)
    return paths + [m]


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")
