"""Command-line harness: ``starkscatter run|report|validate``.

Exit codes: 0 success, 1 an invariant check failed, 2 invalid configuration,
3 numerical guard abort (boundary mass), 4 too many flagged samples. Every
nonzero exit writes a JSON error record to stderr and, when the output
directory is known, to ``error.json`` there.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time

import numpy as np
import scipy

from . import __version__
from .config import build_plan, echo, load_config
from .errors import BoundaryMassError, ConfigError, GridError, LimitedAngleError, PartialFailureError
from .field import coefficient_closed_form_errors, compute_coefficients, free_propagate
from .grid import GridSpec, WaveState, boundary_mass, load_wavefunction, make_gaussian, save_wavefunction
from .invariants import (free_periodicity, full_periodicity, gauge_consistency, intertwining_decay,
                         norm_drift, s_covariance)
from .potentials import ZeroPotential
from .propagator import PropagationPlan, propagate_full
from .reconstruction import (ReconstructionConfig, Sinogram, fbp_invert, measure_sinogram, reconstruct,
                             relative_l2_error, save_result)
from .scattering import ScatteringConfig, append_samples_csv, coefficients_for, commutator_functional

log = logging.getLogger("starkscatter")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_GUARD, EXIT_PARTIAL = 0, 1, 2, 3, 4


def _fmt(v):
    return f"{v:.17g}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def _json_safe(o):
    if isinstance(o, dict):
        return {str(k): _json_safe(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_json_safe(v) for v in o]
    if isinstance(o, np.ndarray):
        return _json_safe(o.tolist())
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    return o


# scenarios: each returns (per-stage diagnostics dict, list of written files, exit code)

def _scenario_coeffs(cfg, out):
    sec = cfg.section("coeffs")
    coeffs = compute_coefficients(cfg.field, int(sec["mesh_size"]))
    path = os.path.join(out, "coefficients.csv")
    coeffs.write_csv(path)
    res = coeffs.ode_residuals()
    a, b, c = coeffs(np.array([0.0, 1.0]))
    diag = {"ode_residuals": {"a": res[0], "b": res[1], "c": res[2]},
            "c_periodicity": float(np.max(np.abs(c[1] - c[0]))),
            "b_periodicity": float(np.max(np.abs(b[1] - b[0])))}
    closed = coefficient_closed_form_errors(cfg.field, coeffs)
    if closed is not None:
        diag["closed_form_sup_errors"] = closed
    return diag, [path], EXIT_OK


def _scenario_freeprop(cfg, out):
    sec = cfg.section("freeprop")
    phi = make_gaussian(cfg.grid, cfg.packet)
    coeffs = coefficients_for(cfg.field)
    exact = free_propagate(phi, sec["t1"], sec["t0"], coeffs)
    rows, errs = [], []
    for k in range(3):
        dt = sec["dt"] / 2 ** k
        plan = PropagationPlan.at_most(sec["t0"], sec["t1"], dt)
        num = propagate_full(phi, plan, cfg.field, ZeroPotential(cfg.grid.ndim))
        e = float(WaveState(cfg.grid, num.psi - exact.psi).norm())
        errs.append(e)
        rows.append([plan.dt, plan.n_steps, e])
    path = os.path.join(out, "freeprop.csv")
    _write_csv(path, ["dt", "steps", "l2_error"], rows)
    ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    return {"l2_errors": errs, "halving_ratios": ratios}, [path], EXIT_OK


def _scenario_propagate(cfg, out):
    sec = cfg.section("propagation")
    phi = make_gaussian(cfg.grid, cfg.packet)
    plan = PropagationPlan(sec["t0"], sec["t1"], sec["dt"], cfg.tol["boundary_threshold"],
                           int(sec["check_every"]))
    diag_path = os.path.join(out, "diagnostics.csv")
    snap = None
    if sec["snapshot_every"]:
        snap = os.path.join(out, "snapshots")
        os.makedirs(snap, exist_ok=True)
    final = propagate_full(phi, plan, cfg.field, cfg.potential, diagnostics_path=diag_path,
                           diagnostics_every=int(sec["diagnostics_every"]), snapshot_dir=snap,
                           snapshot_every=int(sec["snapshot_every"]) or None)
    wf = os.path.join(out, "final.wfn")
    save_wavefunction(wf, cfg.grid, final.psi)
    diag = {"final_norm": float(final.norm()), "final_boundary_mass": boundary_mass(final),
            "steps": plan.n_steps}
    return diag, [diag_path, wf], EXIT_OK


def _sample_job(args):
    cfg, lam = args
    sec = cfg.section("scatter")
    omega = np.asarray(sec["omega"], dtype=float)
    v = np.sqrt(lam) * omega if sec["frame"] == "moving" else None
    sc = ScatteringConfig.for_energy(sec["s"], lam, sec["support"], margin=sec["margin"],
                                     dt_max=sec["dt_max"], step_length=sec["step_length"],
                                     frame_velocity=v, boundary_threshold=cfg.tol["boundary_threshold"],
                                     stability_tol=cfg.tol["stability_tol"])
    phi = make_gaussian(cfg.grid, cfg.packet)
    return commutator_functional(phi, phi, sec["s"], lam, omega, sc, cfg.field, cfg.potential,
                                 form=sec["form"], stability=sec["stability"])


def _map(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def _scenario_scatter(cfg, out):
    sec = cfg.section("scatter")
    lams = [float(x) for x in sec["lams"]]
    samples = _map(_sample_job, [(cfg, lam) for lam in lams], cfg.workers)
    path = os.path.join(out, "samples.csv")
    if os.path.exists(path):
        os.remove(path)
    append_samples_csv(path, samples)
    scaled = [_json_safe(s.scaled / s.phi_norm2) for s in samples]
    diag = {"lams": lams, "scaled_F": scaled,
            "truncation_change": [s.diagnostics.get("truncation_change") for s in samples]}
    return diag, [path], EXIT_OK


def _scenario_sweep(cfg, out):
    plan, settings = build_plan(cfg)
    paths, diag = [], {"valid_fraction": {}, "flags": {}}
    for i, s in enumerate(plan.s_values):
        sino = measure_sinogram(s, plan, cfg.field, cfg.potential, settings, cfg.workers,
                                cfg.tol["min_valid"])
        p = os.path.join(out, f"sinogram_{i:03d}.csv")
        sino.to_csv(p)
        paths.append(p)
        diag["valid_fraction"][_fmt(s)] = sino.valid_fraction
        diag["flags"][_fmt(s)] = sino.flags
    return diag, paths, EXIT_OK


def _scenario_reconstruct(cfg, out):
    rec = cfg.section("reconstruct")
    plan, settings = build_plan(cfg)
    rc = ReconstructionConfig(cfg.potential, cfg.field, rec["mode"],
                              GridSpec(tuple(rec["half_extent"]), tuple(rec["counts"])),
                              rec["error_radius"], rec["window"], settings, cfg.workers,
                              cfg.tol["min_valid"])
    result = reconstruct(plan, rc)
    # reconstruction error as a function of the number of angles used
    table = {}
    for s, sino in result.sinograms.items():
        rows = []
        K = sino.angles.size
        for step in (1, 2, 4, 8):
            if K % step or K // step < 8:
                continue
            sub = Sinogram(sino.angles[::step], sino.offsets, sino.derivative[::step], sino.profile[::step],
                           sino.provenance, s=s, mean_field=sino.mean_field)
            r = fbp_invert(sub, rc.output_grid, rc.window)
            rows.append([K // step, relative_l2_error(r, result.truths[s], rc.output_grid, rc.error_radius)])
        table[_fmt(s)] = rows
    result.diagnostics["angle_count_errors"] = table
    paths = save_result(result, out)
    return _json_safe(result.metrics()), paths, EXIT_OK


def _scenario_invariants(cfg, out):
    sec = cfg.section("invariants")
    tol = cfg.tol
    phi = make_gaussian(cfg.grid, cfg.packet)
    f, V, dt = cfg.field, cfg.potential, sec["dt"]
    checks = [
        norm_drift(phi, f, V, dt, int(sec["period_steps"]), tol["norm_drift"]),
        free_periodicity(phi, sec["s"], 0.5, f, tol["free_periodicity"]),
        full_periodicity(phi, sec["s"], 0.5, dt, f, V, tol["splitting_factor"]),
        gauge_consistency(phi, sec["s"], sec["s"] + 1, dt, f, V, tol["splitting_factor"]),
        intertwining_decay(phi, sec["s"], sec["t_trunc"], dt, f, V),
        s_covariance(phi, sec["s"], sec["s2"], sec["half_window"], dt, f, V, tol["splitting_factor"]),
    ]
    path = os.path.join(out, "invariants.csv")
    _write_csv(path, ["check", "value", "tolerance", "status"], [c.row() for c in checks])
    diag = {c.name: {"value": c.value, "tolerance": c.tolerance, "passed": c.passed,
                     "details": _json_safe(c.details)} for c in checks}
    code = EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK
    return diag, [path], code


SCENARIO_RUNNERS = {
    "coeffs": _scenario_coeffs,
    "freeprop-check": _scenario_freeprop,
    "propagate": _scenario_propagate,
    "scatter": _scenario_scatter,
    "sweep": _scenario_sweep,
    "reconstruct": _scenario_reconstruct,
    "invariants": _scenario_invariants,
}


def _error_record(kind, exc, code, out=None):
    rec = {"error": kind, "message": str(exc), "exit_code": code}
    diag = getattr(exc, "diagnostics", None)
    if diag:
        rec["diagnostics"] = _json_safe(diag)
    vf = getattr(exc, "valid_fraction", None)
    if vf is not None:
        rec["valid_fraction"] = vf
    text = json.dumps(rec, sort_keys=True)
    print(text, file=sys.stderr)
    if out and os.path.isdir(out):
        with open(os.path.join(out, "error.json"), "w") as fh:
            fh.write(text + "\n")
    return code


def _versions():
    return {"starkscatter": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def cmd_validate(path):
    try:
        cfg = load_config(path)
    except (ConfigError, GridError, LimitedAngleError) as exc:
        return _error_record("validation", exc, EXIT_CONFIG)
    print(json.dumps({"valid": True, "scenario": cfg.scenario, "output_dir": cfg.output_dir}))
    return EXIT_OK


def cmd_run(path):
    try:
        cfg = load_config(path)
    except (ConfigError, GridError, LimitedAngleError) as exc:
        return _error_record("validation", exc, EXIT_CONFIG)
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    if os.path.exists(os.path.join(out, "error.json")):
        os.remove(os.path.join(out, "error.json"))
    with open(os.path.join(out, "config.toml"), "w") as fh:
        fh.write(echo(cfg))
    t0 = time.time()
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    try:
        diag, files, code = SCENARIO_RUNNERS[cfg.scenario](cfg, out)
    except BoundaryMassError as exc:
        return _error_record("numerical_guard", exc, EXIT_GUARD, out)
    except PartialFailureError as exc:
        return _error_record("partial_failure", exc, EXIT_PARTIAL, out)
    except (ConfigError, GridError, LimitedAngleError) as exc:
        return _error_record("validation", exc, EXIT_CONFIG, out)
    manifest = {
        "scenario": cfg.scenario,
        "config": cfg.data,
        "versions": _versions(),
        "started": started,
        "wall_clock_seconds": time.time() - t0,
        "outputs": sorted(os.path.relpath(f, out) for f in files),
        "diagnostics": diag,
        "exit_code": code,
        "reproducibility": "CSV outputs are byte-reproducible for identical configs; binary "
                           "wavefunction files are bitwise equal given the same FFT implementation.",
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(_json_safe(manifest), fh, indent=2, sort_keys=True)
    print(json.dumps({"scenario": cfg.scenario, "output_dir": out, "exit_code": code}))
    if code == EXIT_CHECK:
        failed = [k for k, v in diag.items() if not v["passed"]]
        return _error_record("invariant_failed", f"failed checks: {', '.join(failed)}", code, out)
    return code


# report

def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _report_samples(path, lines, out):
    rows = _read_csv(path)
    comps = sorted({k[:-3] for k in rows[0] if k.startswith("F") and k.endswith("_re")})
    curve = []
    for r in rows:
        lam = float(r["lam"])
        vals = [np.sqrt(lam) * complex(float(r[c + "_re"]), float(r[c + "_im"])) for c in comps]
        curve.append((lam, vals))
    curve.sort(key=lambda x: x[0])
    _write_csv(os.path.join(out, "lambda_convergence.csv"),
               ["lam"] + [f"sqrt_lam_{c}_{p}" for c in comps for p in ("re", "im")],
               [[lam] + [x for v in vals for x in (v.real, v.imag)] for lam, vals in curve])
    lines.append("lambda convergence of sqrt(lam) F (unnormalized):")
    lines.append("  " + "lam".rjust(10) + "".join(f"{'|' + c + '|':>16}" for c in comps) + "   step change")
    prev, steps = None, []
    for lam, vals in curve:
        mag = np.array([abs(v) for v in vals])
        change = "" if prev is None else f"{np.linalg.norm(np.array(vals) - prev):.4g}"
        if prev is not None:
            steps.append(np.linalg.norm(np.array(vals) - prev))
        lines.append(f"  {lam:10.4g}" + "".join(f"{m:16.8g}" for m in mag) + f"   {change}")
        prev = np.array(vals)
    mono = all(b <= a for a, b in zip(steps, steps[1:]))
    lines.append(f"  successive changes monotonically decreasing: {'yes' if mono else 'no'}")


def _report_sinogram(path, lines, out, k):
    sino = Sinogram.from_csv(path)
    heat = os.path.join(out, f"sinogram_heatmap_{k:03d}.csv")
    _write_csv(heat, ["angle"] + [_fmt(y) for y in sino.offsets],
               [[th] + list(row) for th, row in zip(sino.angles, sino.profile)])
    lines.append(f"sinogram {os.path.basename(path)} ({sino.provenance}): {sino.angles.size} angles x "
                 f"{sino.offsets.size} offsets, valid {sino.valid_fraction:.1%}, "
                 f"max |P| {np.max(np.abs(sino.profile)):.6g}, max scatter {np.max(sino.scatter):.3g}")


def _report_reconstruction(path, lines, out, k, metrics):
    grid, field = load_wavefunction(path)
    x = grid.axes[0]
    j = grid.counts[1] // 2
    _write_csv(os.path.join(out, f"reconstruction_slice_{k:03d}.csv"), ["x1", "x2", "value"],
               [[xi, grid.axes[1][j], field[i, j]] for i, xi in enumerate(x)])
    lines.append(f"reconstruction {os.path.basename(path)}: grid {grid.counts}, "
                 f"max {np.max(field):.6g}, min {np.min(field):.6g}")


def cmd_report(directory):
    if not os.path.isdir(directory):
        return _error_record("report", f"not a directory: {directory}", EXIT_CONFIG)
    names = sorted(os.listdir(directory))
    mpath = os.path.join(directory, "manifest.json")
    if not os.path.exists(mpath):
        return _error_record("report", f"no manifest.json in {directory}", EXIT_CONFIG)
    with open(mpath) as fh:
        manifest = json.load(fh)
    out = os.path.join(directory, "report")
    os.makedirs(out, exist_ok=True)
    lines = [f"scenario: {manifest['scenario']}",
             f"wall clock: {manifest['wall_clock_seconds']:.3f} s",
             f"versions: " + ", ".join(f"{k} {v}" for k, v in sorted(manifest["versions"].items())),
             f"exit code: {manifest['exit_code']}"]
    diag = manifest.get("diagnostics", {})
    if "samples.csv" in names:
        _report_samples(os.path.join(directory, "samples.csv"), lines, out)
    sinos = [n for n in names if n.startswith("sinogram_") and n.endswith(".csv")]
    for k, n in enumerate(sinos):
        _report_sinogram(os.path.join(directory, n), lines, out, k)
    recs = [n for n in names if n.startswith("reconstruction_") and n.endswith(".wfn")]
    for k, n in enumerate(recs):
        _report_reconstruction(os.path.join(directory, n), lines, out, k, diag)
    if "errors" in diag:
        lines.append("relative L2 error by phase s: "
                     + ", ".join(f"s={s}: {e:.4g}" for s, e in diag["errors"].items()))
    for s, rows in diag.get("angle_count_errors", {}).items():
        lines.append(f"error vs angle count (s={s}):")
        lines.append("  angles   rel L2 error")
        lines += [f"  {int(n):6d}   {e:.6g}" for n, e in rows]
    if "invariants.csv" in names:
        lines.append("invariant checks:")
        for r in _read_csv(os.path.join(directory, "invariants.csv")):
            lines.append(f"  {r['check']:28s} {float(r['value']):12.4g} <= {float(r['tolerance']):10.4g}"
                         f"  {r['status']}")
    if "coefficients.csv" in names:
        lines.append("gauge coefficients: " + json.dumps(diag.get("ode_residuals")))
        if "closed_form_sup_errors" in diag:
            lines.append("closed-form sup errors: " + json.dumps(diag["closed_form_sup_errors"]))
    if "freeprop.csv" in names:
        lines.append("free propagator L2 errors: " + ", ".join(f"{e:.4g}" for e in diag["l2_errors"]))
        lines.append("halving ratios: " + ", ".join(f"{r:.4f}" for r in diag["halving_ratios"]))
    text = "\n".join(lines) + "\n"
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="starkscatter",
                                description="Scattering by time-periodic fields: experiments and reports.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", help="run the experiment described by a TOML config")
    r.add_argument("config")
    v = sub.add_parser("validate", help="check a config without computing anything")
    v.add_argument("config")
    rep = sub.add_parser("report", help="summarize an output directory")
    rep.add_argument("directory")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.verb == "run":
        return cmd_run(args.config)
    if args.verb == "validate":
        return cmd_validate(args.config)
    return cmd_report(args.directory)


if __name__ == "__main__":
    sys.exit(main())
