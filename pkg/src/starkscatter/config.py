"""Experiment configuration: TOML parsing, defaults, validation and echo.

A config file names a ``scenario`` and carries the sections that scenario
uses. Units throughout are ``hbar = m = 1`` with field period 1. Every
section is filled with its defaults on load, so the echoed config
(:func:`echo`) is complete and parses back to an identical structure.

The only environment variable consulted is ``STARKSCATTER_OUT``, which
overrides ``output_dir``.
"""
from __future__ import annotations

import copy
import os
from dataclasses import dataclass

import numpy as np
import tomli
import tomli_w

from .errors import ConfigError, GridError
from .field import ElectricField
from .grid import GridSpec, WavePacketSpec
from .potentials import potential_from_dict

__all__ = ["SCENARIOS", "ExperimentConfig", "load_config", "parse_config", "echo"]

SCENARIOS = ("coeffs", "freeprop-check", "propagate", "scatter", "sweep", "reconstruct", "invariants")

# section -> key -> default (None marks a required key)
_DEFAULTS = {
    "field": {"mean": None, "harmonics": [], "table": []},
    "potential": {"kind": "zero"},
    "grid": {"half_extent": None, "counts": None},
    "packet": {"center": None, "width": None, "momentum": []},
    "coeffs": {"mesh_size": 2048},
    "freeprop": {"t0": 0.0, "t1": 1.0, "dt": 1e-3},
    "propagation": {"t0": 0.0, "t1": 1.0, "dt": 1e-3, "check_every": 50, "diagnostics_every": 100,
                    "snapshot_every": 0},
    "scatter": {"s": 0.0, "lams": [25.0, 100.0, 400.0], "omega": None, "support": 6.0, "margin": 2.0,
                "dt_max": 0.005, "step_length": 0.05, "frame": "moving", "form": "reduced",
                "stability": True},
    "sweep": {"n_angles": 8, "n_offsets": 33, "offset_max": 4.0, "span": "half", "angles": [],
              "lams": [400.0], "s_values": [0.0], "probe_width": 0.3, "eta": 0.05, "richardson": False,
              "support": 6.0, "margin": 0.25, "dt_max": 0.005, "step_length": 0.05, "stability": False},
    "reconstruct": {"mode": "oracle", "half_extent": [4.0, 4.0], "counts": [64, 64],
                    "error_radius": 3.0, "window": "hann"},
    "invariants": {"s": 0.0, "s2": 0.5, "t_trunc": 4.0, "half_window": 2.0, "dt": 2e-3,
                   "period_steps": 1000},
    "tolerances": {"boundary_threshold": 1e-8, "stability_tol": 0.01, "min_valid": 0.9,
                   "norm_drift": 1e-10, "free_periodicity": 1e-10, "splitting_factor": 2.0},
}

# sections each scenario reads besides field/potential/tolerances
_USES = {
    "coeffs": ("coeffs",),
    "freeprop-check": ("grid", "packet", "freeprop"),
    "propagate": ("grid", "packet", "propagation"),
    "scatter": ("grid", "packet", "scatter"),
    "sweep": ("grid", "sweep"),
    "reconstruct": ("reconstruct", "sweep", "grid"),
    "invariants": ("grid", "packet", "invariants"),
}

_TOP = {"scenario": None, "output_dir": "starkscatter_out", "workers": 1, "description": ""}


def _fill(name, given):
    if not isinstance(given, dict):
        raise ConfigError(f"[{name}] must be a table")
    defaults = _DEFAULTS[name]
    if name == "potential":
        return dict(given) if given else {"kind": "zero"}
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    out = {}
    for k, d in defaults.items():
        if k in given:
            out[k] = given[k]
        elif d is None:
            raise ConfigError(f"[{name}] is missing required key {k!r}")
        else:
            out[k] = copy.deepcopy(d)
    return out


def _vec(x, name, n=None):
    try:
        v = np.asarray(x, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a list of numbers") from None
    if n is not None and v.size != n:
        raise ConfigError(f"{name} must have {n} entries, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ConfigError(f"{name} must be finite")
    return v


def _positive(x, name):
    if not isinstance(x, (int, float)) or isinstance(x, bool) or not x > 0:
        raise ConfigError(f"{name} must be a positive number")
    return x


@dataclass
class ExperimentConfig:
    """Validated experiment: the normalized dict plus the parsed physics objects."""

    data: dict
    field: ElectricField
    potential: object
    grid: GridSpec = None
    packet: WavePacketSpec = None

    @property
    def scenario(self):
        return self.data["scenario"]

    @property
    def output_dir(self):
        return os.environ.get("STARKSCATTER_OUT") or self.data["output_dir"]

    @property
    def workers(self):
        return self.data["workers"]

    def section(self, name):
        return self.data[name]

    @property
    def tol(self):
        return self.data["tolerances"]


def parse_config(raw):
    """Validate a config dict (as read from TOML) and fill defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a table")
    scenario = raw.get("scenario")
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {', '.join(SCENARIOS)}; got {scenario!r}")
    allowed = set(_TOP) | {"field", "potential", "tolerances"} | set(_USES[scenario])
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"sections/keys not used by scenario {scenario!r}: {sorted(unknown)}")
    data = {k: raw.get(k, d) for k, d in _TOP.items()}
    if not isinstance(data["workers"], int) or data["workers"] < 1:
        raise ConfigError("workers must be a positive integer")
    if "field" not in raw:
        raise ConfigError("missing [field] section")
    sections = ("field", "potential", "tolerances") + _USES[scenario]
    if scenario == "reconstruct" and "grid" not in raw:
        if raw.get("reconstruct", {}).get("mode", "oracle") == "measured":
            raise ConfigError("measured reconstruction needs a [grid] section for the probe")
        sections = tuple(s for s in sections if s != "grid")
    for name in sections:
        data[name] = _fill(name, raw.get(name, {}))

    fd = data["field"]
    mean = _vec(fd["mean"], "field.mean")
    n = mean.size
    harms = []
    for h in fd["harmonics"]:
        if not isinstance(h, dict) or set(h) - {"k", "cos", "sin"} or "k" not in h:
            raise ConfigError("field.harmonics entries need keys k, cos, sin")
        harms.append((h["k"], _vec(h.get("cos", [0.0] * n), "harmonic cos", n),
                      _vec(h.get("sin", [0.0] * n), "harmonic sin", n)))
    table = np.asarray(fd["table"], dtype=float) if fd["table"] else None
    field = ElectricField(mean, tuple(harms), table)
    if data["potential"].get("kind") == "zero":
        data["potential"] = {"kind": "zero", "ndim": int(data["potential"].get("ndim", n))}
    try:
        potential = potential_from_dict(data["potential"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [potential]: {exc}") from None
    if potential.ndim != n:
        raise ConfigError(f"potential dimension {potential.ndim} differs from field dimension {n}")

    cfg = ExperimentConfig(data, field, potential)
    try:
        _attach_grid_packet(cfg, n)
    except GridError as exc:
        raise ConfigError(str(exc)) from None
    _check_scenario(cfg)
    return cfg


def _attach_grid_packet(cfg, n):
    data = cfg.data
    if "grid" in data:
        gd = data["grid"]
        cfg.grid = GridSpec(tuple(_vec(gd["half_extent"], "grid.half_extent", n)),
                            tuple(int(c) for c in gd["counts"]))
    if "packet" in data:
        pd = data["packet"]
        mom = _vec(pd["momentum"], "packet.momentum", n) if pd["momentum"] else np.zeros(n)
        cfg.packet = WavePacketSpec(tuple(_vec(pd["center"], "packet.center", n)),
                                    _positive(pd["width"], "packet.width"), tuple(mom))


def load_config(path):
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error in {path}: {exc}") from None
    return parse_config(raw)


def echo(cfg):
    """Complete config as TOML text; ``parse_config(tomli.loads(echo(c)))`` reproduces ``c``."""
    return tomli_w.dumps(cfg.data)


# physical guards, all checked before any computation

def _kinetic_guard(grid, dt, what):
    if dt * float(np.sum(grid.cutoff ** 2)) / 2 > np.pi:
        raise ConfigError(f"{what}: dt={dt:.3g} violates the kinetic phase guard |dt| k_max^2/2 <= pi")


def _excursion(packet_width, momentum, field, duration, spread_factor=1.0):
    """Rough half-width of the region a packet visits over ``duration``."""
    sig_t = packet_width * np.sqrt(1 + (duration / (2 * packet_width ** 2)) ** 2)
    drift = np.abs(np.asarray(momentum)) * duration + 0.5 * np.abs(field.mean) * duration ** 2
    quiver = 2 * sum((np.abs(c) + np.abs(s)) / (2 * np.pi * k) ** 2 for k, c, s in field.harmonics)
    return drift + quiver + 6 * spread_factor * sig_t


def _check_domain(cfg, center, width, momentum, duration, spread_factor=1.0, what="packet"):
    g = cfg.grid
    reach = np.abs(np.asarray(center)) + _excursion(width, momentum, cfg.field, duration, spread_factor)
    if np.any(reach > np.asarray(g.half_extent)):
        raise ConfigError(f"{what}: ballistic excursion {np.max(reach):.3g} exceeds the grid half-extent "
                          f"{min(g.half_extent):.3g}; enlarge the grid or shorten the window")


def _check_scenario(cfg):
    sc = cfg.scenario
    d = cfg.data
    tol = d["tolerances"]
    for k in ("boundary_threshold", "stability_tol", "norm_drift", "free_periodicity", "splitting_factor"):
        _positive(tol[k], f"tolerances.{k}")
    if not 0 < tol["min_valid"] <= 1:
        raise ConfigError("tolerances.min_valid must lie in (0, 1]")
    try:
        if sc == "coeffs":
            if int(d["coeffs"]["mesh_size"]) < 64:
                raise ConfigError("coeffs.mesh_size must be at least 64")
        elif sc in ("freeprop-check", "propagate", "invariants"):
            sec = d["freeprop" if sc == "freeprop-check" else "propagation" if sc == "propagate" else "invariants"]
            dt = _positive(sec["dt"], f"{sc}.dt")
            _kinetic_guard(cfg.grid, dt, sc)
            if sc == "invariants":
                duration = sec["t_trunc"] + 1.0
            else:
                duration = abs(sec["t1"] - sec["t0"])
            p = cfg.packet
            _check_domain(cfg, p.center, p.width, p.momentum, duration)
        elif sc == "scatter":
            sec = d["scatter"]
            lams = _vec(sec["lams"], "scatter.lams")
            if np.any(lams <= 0) or np.any(np.diff(lams) <= 0):
                raise ConfigError("scatter.lams must be positive and increasing")
            omega = _vec(sec["omega"], "scatter.omega", cfg.grid.ndim)
            if abs(np.linalg.norm(omega) - 1) > 1e-12:
                raise ConfigError("scatter.omega must be a unit vector")
            if sec["frame"] not in ("moving", "lab") or sec["form"] not in ("reduced", "direct"):
                raise ConfigError("scatter.frame must be moving|lab and scatter.form reduced|direct")
            lam = lams.max()
            if sec["frame"] == "lab" and np.any(cfg.grid.cutoff < 4 * np.sqrt(lam)):
                raise ConfigError(f"grid cutoff {cfg.grid.cutoff.min():.3g} below 4 sqrt(max lam)="
                                  f"{4 * np.sqrt(lam):.3g}")
            dt = min(sec["dt_max"], sec["step_length"] / np.sqrt(lams.min()))
            _kinetic_guard(cfg.grid, dt, "scatter")
            half = sec["support"] / np.sqrt(lams.min()) + sec["margin"]
            duration = 2 * half if sec["stability"] else half
            p = cfg.packet
            mom = p.momentum if sec["frame"] == "moving" else np.asarray(p.momentum) + np.sqrt(lam) * omega
            _check_domain(cfg, p.center, p.width, mom, duration, 1.7, "scatter")
        if sc in ("sweep", "reconstruct"):
            sw = d["sweep"]
            if sw["span"] not in ("half", "full"):
                raise ConfigError("sweep.span must be half|full")
            rec = d.get("reconstruct")
            if sc == "sweep" or rec["mode"] == "measured":
                lam = float(np.min(sw["lams"]))
                dt = min(sw["dt_max"], sw["step_length"] / np.sqrt(lam))
                _kinetic_guard(cfg.grid, dt, "sweep")
                half = sw["support"] / np.sqrt(lam) + sw["margin"]
                duration = 2 * half if sw["stability"] else half
                _check_domain(cfg, np.zeros(cfg.grid.ndim), sw["probe_width"], np.zeros(cfg.grid.ndim),
                              duration, 1.7, "sweep probe")
                if cfg.grid.ndim != 2:
                    raise ConfigError("sweeps are two-dimensional")
            if rec is not None:
                if rec["mode"] not in ("oracle", "measured"):
                    raise ConfigError("reconstruct.mode must be oracle|measured")
                _positive(rec["error_radius"], "reconstruct.error_radius")
            build_plan(cfg)
    except GridError as exc:
        raise ConfigError(str(exc)) from None


def build_plan(cfg):
    """SweepPlan and ProbeSettings from the ``[sweep]`` section."""
    from .reconstruction import ProbeSettings, SweepPlan

    sw = cfg.data["sweep"]
    span = np.pi if sw["span"] == "half" else 2 * np.pi
    kw = dict(lams=tuple(sw["lams"]), s_values=tuple(sw["s_values"]), probe_width=sw["probe_width"],
              mean_field=tuple(cfg.field.mean), eta=sw["eta"], richardson=sw["richardson"])
    if sw["angles"]:
        plan = SweepPlan(tuple(sw["angles"]),
                         tuple(np.linspace(-sw["offset_max"], sw["offset_max"], sw["n_offsets"])), **kw)
    else:
        plan = SweepPlan.uniform(sw["n_angles"], sw["n_offsets"], sw["offset_max"], span=span, **kw)
    grid = cfg.grid if cfg.grid is not None else GridSpec((8.0, 8.0), (128, 128))
    settings = ProbeSettings(grid, support=sw["support"], margin=sw["margin"], dt_max=sw["dt_max"],
                             step_length=sw["step_length"], stability=sw["stability"],
                             boundary_threshold=cfg.tol["boundary_threshold"])
    return plan, settings
