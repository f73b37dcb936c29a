import json
import warnings

import numpy as np
import pytest

from starkscatter.errors import ConfigError, LimitedAngleError, PartialFailureError
from starkscatter.field import ElectricField
from starkscatter.grid import GridSpec, load_wavefunction
from starkscatter.potentials import BumpSum, ModulatedGaussian, SoftPowerLaw, ZeroPotential
from starkscatter.reconstruction import (ProbeSettings, ProfileAnchorWarning, ReconstructionConfig, Sinogram,
                                         SweepPlan, assemble_profile, direction_basis, estimate_pointwise,
                                         fbp_invert, measure_sinogram, oracle_probe_derivative,
                                         oracle_sinogram, oracle_xray, reconstruct, relative_l2_error,
                                         save_result)

VG = ModulatedGaussian(1.0, 1.0, (0.0, 0.0), 0.5)
COS2 = ElectricField([0.0, 0.0], ((1, (1.0, 0.0), (0.0, 0.0)),))
OUT = GridSpec((4.0, 4.0), (64, 64))


def _analytic(n_angles, n_offsets, offset_max=4.0, amp=1.0):
    plan = SweepPlan.uniform(n_angles, n_offsets, offset_max)
    y = np.asarray(plan.offsets)
    P = np.tile(amp * np.sqrt(np.pi) * np.exp(-y ** 2), (n_angles, 1))
    return plan, Sinogram(plan.angles, plan.offsets, 0 * P, P, "oracle")


def test_direction_basis_is_rotation():
    B = direction_basis(0.4)
    np.testing.assert_allclose(B.T @ B, np.eye(2), atol=1e-15)
    assert abs(np.linalg.det(B) - 1) < 1e-15


def test_sweep_plan_validation():
    SweepPlan.uniform(8, 5, 2.0, lams=(25, 100, 400))
    with pytest.raises(ConfigError):
        SweepPlan((0.0,), (-1.0, 0.0, 2.0))
    with pytest.raises(ConfigError):
        SweepPlan((0.0,), (-1.0, 0.0, 1.0), lams=(400, 100))
    with pytest.raises(ConfigError):
        SweepPlan((np.pi / 2,), (-1.0, 0.0, 1.0), mean_field=(0.0, 0.5))
    SweepPlan((0.0, 0.3), (-1.0, 0.0, 1.0), mean_field=(0.0, 0.5))


def test_oracle_xray_gaussian_closed_form():
    y = np.linspace(-3, 3, 13)
    for th in (0.0, 0.9):
        P, D = oracle_xray(VG, 0.0, th, y)
        np.testing.assert_allclose(P, 1.5 * np.sqrt(np.pi) * np.exp(-y ** 2), atol=1e-11)
        np.testing.assert_allclose(D, -3 * np.sqrt(np.pi) * y * np.exp(-y ** 2), atol=1e-11)
    P, D = oracle_xray(ZeroPotential(2), 0.0, 0.0, y)
    assert np.all(P == 0) and np.all(D == 0)


def test_oracle_xray_power_law_converges():
    V = SoftPowerLaw(1.0, 1.2, (0.0, 0.0))
    P, _ = oracle_xray(V, 0.0, 0.0, [0.0, 1.0])
    # int (1 + y^2 + t^2)^(-0.6) dt = sqrt(pi) Gamma(0.1) / Gamma(0.6) (1 + y^2)^(-0.1)
    from scipy.special import gamma
    exact = np.sqrt(np.pi) * gamma(0.1) / gamma(0.6) * (1 + np.array([0.0, 1.0])) ** -0.1
    np.testing.assert_allclose(P, exact, rtol=1e-8)


def test_oracle_probe_convolution_closed_form():
    sig = 0.3
    y = np.linspace(-2, 2, 9)
    w = 1 + 2 * sig ** 2
    exact = -3 * np.sqrt(np.pi) * y / w ** 1.5 * np.exp(-y ** 2 / w)
    np.testing.assert_allclose(oracle_probe_derivative(VG, 0.0, 0.0, y, sig), exact, atol=1e-10)


def test_assemble_profile_cases():
    y = np.linspace(-4, 4, 65)
    assert np.all(assemble_profile(y, np.zeros_like(y)) == 0)
    D = -3 * np.sqrt(np.pi) * y * np.exp(-y ** 2)
    P = assemble_profile(y, D)
    err = np.max(np.abs(P - 1.5 * np.sqrt(np.pi) * np.exp(-y ** 2)))
    y2 = np.linspace(-4, 4, 129)
    err2 = np.max(np.abs(assemble_profile(y2, -3 * np.sqrt(np.pi) * y2 * np.exp(-y2 ** 2))
                         - 1.5 * np.sqrt(np.pi) * np.exp(-y2 ** 2)))
    assert err < 1e-2
    assert 3.5 < err / err2 < 4.5  # trapezoid rule, second order
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assemble_profile(y, D)
    with pytest.warns(ProfileAnchorWarning):
        drifted = assemble_profile(y, D + 0.05)
    assert np.max(np.abs(drifted - P)) < 1e-12
    valid = np.ones(y.size, bool)
    valid[30] = False
    bad = D.copy()
    bad[30] = 1e3
    assert np.max(np.abs(assemble_profile(y, bad, valid) - P)) < 2e-2


def test_fbp_zero_and_gaussian_phantom():
    plan, zero = _analytic(32, 65, amp=0.0)
    assert np.all(fbp_invert(zero, OUT) == 0)
    plan, sino = _analytic(32, 65)
    rec = fbp_invert(sino, OUT)
    truth = np.exp(-OUT.radius2())
    assert relative_l2_error(rec, truth, OUT, 3.0) <= 0.05


def test_fbp_linearity():
    plan = SweepPlan.uniform(16, 33, 4.0)
    a = oracle_sinogram(ModulatedGaussian(1.0, 1.0, (0.5, 0.0)), 0.0, plan)
    b = oracle_sinogram(BumpSum(((0.7, (-0.8, 0.4), 0.6),)), 0.0, plan)
    ab = Sinogram(a.angles, a.offsets, a.derivative + b.derivative, a.profile + b.profile, "oracle")
    lhs = fbp_invert(ab, OUT)
    assert np.max(np.abs(lhs - fbp_invert(a, OUT) - fbp_invert(b, OUT))) < 1e-10 * np.max(np.abs(lhs))


def test_two_bump_centres_within_one_pixel():
    centres = ((1.2, 0.5), (-1.0, -0.9))
    V = BumpSum(((1.0, centres[0], 0.5), (1.0, centres[1], 0.5)))
    plan = SweepPlan.uniform(32, 65, 4.0)
    rec = fbp_invert(oracle_sinogram(V, 0.0, plan), OUT)
    x1, x2 = OUT.coords
    x1, x2 = np.broadcast_to(x1, OUT.counts), np.broadcast_to(x2, OUT.counts)
    for c in centres:
        near = (x1 - c[0]) ** 2 + (x2 - c[1]) ** 2 < 0.8 ** 2
        i = np.argmax(np.where(near, rec, -np.inf))
        assert abs(x1.flat[i] - c[0]) <= OUT.spacing[0] + 1e-12
        assert abs(x2.flat[i] - c[1]) <= OUT.spacing[1] + 1e-12


def test_fbp_refuses_sparse_and_limited_angles():
    _, sino = _analytic(6, 17)
    with pytest.raises(ConfigError):
        fbp_invert(sino, OUT)
    _, sino = _analytic(8, 17)
    sino.mean_field = (0.0, 0.5)
    with pytest.raises(LimitedAngleError, match="limited-angle unsupported"):
        fbp_invert(sino, OUT)
    half = Sinogram(sino.angles / 2, sino.offsets, sino.derivative, sino.profile, "oracle")
    with pytest.raises(LimitedAngleError):
        fbp_invert(half, OUT)


def test_oracle_sinogram_symmetry():
    V = BumpSum(((1.0, (0.8, 0.3), 0.7), (0.8, (-0.7, -0.5), 0.6)))
    plan = SweepPlan.uniform(16, 33, 4.0, span=2 * np.pi)
    sino = oracle_sinogram(V, 0.0, plan)
    np.testing.assert_allclose(sino.profile[8:], sino.profile[:8, ::-1], atol=1e-10)
    np.testing.assert_allclose(sino.derivative[8:], -sino.derivative[:8, ::-1], atol=1e-10)
    # derivative rows integrate to about zero
    assert np.max(np.abs(np.trapezoid(sino.derivative, sino.offsets, axis=1))) < 1e-3


def test_sinogram_csv_roundtrip(tmp_path):
    plan = SweepPlan.uniform(8, 9, 2.0)
    sino = oracle_sinogram(VG, 0.25, plan)
    sino.valid[2, 3] = False
    sino.scatter[1, 1] = 0.125
    sino.to_csv(tmp_path / "s.csv")
    back = Sinogram.from_csv(tmp_path / "s.csv")
    assert back.s == 0.25 and back.provenance == "oracle"
    for name in ("angles", "offsets", "derivative", "profile", "scatter", "valid"):
        assert np.array_equal(getattr(back, name), getattr(sino, name))


def test_relative_l2_error():
    g = GridSpec((2.0, 2.0), (16, 16))
    t = np.ones(g.counts)
    assert relative_l2_error(1.1 * t, t, g, 1.5) == pytest.approx(0.1)


def test_reconstruct_oracle_mode(tmp_path):
    plan = SweepPlan.uniform(32, 65, 4.0, s_values=(0.0, 0.5))
    res = reconstruct(plan, ReconstructionConfig(VG, COS2))
    assert res.errors[0.0] <= 0.05 and res.errors[0.5] <= 0.05
    again = reconstruct(plan, ReconstructionConfig(VG, COS2))
    assert np.array_equal(res.fields[0.5], again.fields[0.5])
    paths = save_result(res, tmp_path)
    assert len(paths) == 5
    g, rec = load_wavefunction(tmp_path / "reconstruction_001.wfn")
    assert g == OUT and np.array_equal(rec, res.fields[0.5]) and not np.iscomplexobj(rec)
    m = json.load(open(tmp_path / "metrics.json"))
    assert m["errors"]["0"] == res.errors[0.0] and m["n_angles"] == 32


def test_estimate_pointwise_zero_potential():
    plan = SweepPlan((0.0,), (-1.0, 0.0, 1.0), lams=(400.0,), probe_width=0.3)
    st = ProbeSettings(margin=0.2)
    out = estimate_pointwise(0.0, 0.3, 0.5, plan, COS2, ZeroPotential(2), st)
    assert np.max(np.abs(out["local"])) < 1e-10 and out["flag"] is None


def test_estimate_pointwise_gaussian_against_oracle():
    # one probe at lam = 400 on the default local grid
    plan = SweepPlan((0.0,), (-1.0, 0.0, 1.0), lams=(400.0,), probe_width=0.3)
    st = ProbeSettings(margin=0.25)
    y = 0.7
    out = estimate_pointwise(0.0, 0.0, y, plan, COS2, VG, st)
    ref = oracle_probe_derivative(VG, 0.0, 0.0, [y], 0.3)[0]
    assert abs(out["local"][1].real - ref) <= 0.1 * abs(ref)
    assert abs(out["local"][0]) <= 0.05 * abs(out["local"][1])
    np.testing.assert_allclose(out["vector"], direction_basis(0.0) @ out["local"])


def test_measure_sinogram_partial_failure():
    # a local grid too small for the spreading probe: every sample is flagged
    plan = SweepPlan.uniform(8, 3, 1.0, lams=(100.0,), probe_width=0.3)
    st = ProbeSettings(GridSpec((3.0, 3.0), (64, 64)), support=3.0, margin=1.0)
    with pytest.raises(PartialFailureError) as exc:
        measure_sinogram(0.0, plan, COS2, VG, st)
    assert exc.value.valid_fraction < 0.9


def test_halving_probe_width_approaches_unsmoothed_oracle():
    y = 0.7
    _, D = oracle_xray(VG, 0.0, 0.0, [y])
    errs = []
    for sig in (0.5, 0.25):
        plan = SweepPlan((0.0,), (-1.0, 0.0, 1.0), lams=(400.0,), probe_width=sig)
        out = estimate_pointwise(0.0, 0.0, y, plan, COS2, VG, ProbeSettings(margin=0.25))
        errs.append(abs(out["local"][1].real - D[0]) / abs(D[0]))
    assert errs[1] < errs[0]


def test_estimate_pointwise_is_deterministic():
    plan = SweepPlan((0.0,), (-1.0, 0.0, 1.0), lams=(400.0,), probe_width=0.3)
    st = ProbeSettings(margin=0.25)
    a = estimate_pointwise(0.0, 0.4, 0.3, plan, COS2, VG, st)
    b = estimate_pointwise(0.0, 0.4, 0.3, plan, COS2, VG, st)
    assert np.array_equal(a["local"], b["local"])
