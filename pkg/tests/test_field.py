import numpy as np
import pytest
import scipy.fft as sfft
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from starkscatter.errors import BoundaryMassError, ConfigError
from starkscatter.field import (ElectricField, apply_gauge_T, closed_form_coefficients,
                                compute_coefficients, free_propagate, stark_propagate)
from starkscatter.grid import GridSpec, WavePacketSpec, expect_p, expect_x, make_gaussian
from starkscatter.potentials import ZeroPotential
from starkscatter.propagator import PropagationPlan, propagate_full

COS1 = ElectricField([0.0], ((1, (1.0,), (0.0,)),))
G1 = GridSpec((20.0,), (256,))
G2 = GridSpec((16.0, 16.0), (64, 64))


def _dist(a, b):
    return float(np.sqrt(a.grid.cell_volume * np.sum(np.abs(a.psi - b.psi) ** 2)))


def test_zero_and_constant_fields_give_zero_coefficients():
    for f in (ElectricField.zero(2), ElectricField.constant([0.3, -1.0])):
        co = compute_coefficients(f, 128)
        assert np.all(co.a == 0) and np.all(co.b == 0) and np.all(co.c == 0)


def test_cos_field_matches_closed_form():
    co = compute_coefficients(COS1, 2048)
    t = co.t
    b = -np.sin(2 * np.pi * t) / (2 * np.pi)
    c = (1 - np.cos(2 * np.pi * t)) / (4 * np.pi ** 2)
    a = (t / 2 - np.sin(4 * np.pi * t) / (8 * np.pi)) / (8 * np.pi ** 2)
    assert np.max(np.abs(co.b[:, 0] - b)) < 1e-10
    assert np.max(np.abs(co.c[:, 0] - c)) < 1e-10
    assert np.max(np.abs(co.a - a)) < 1e-10
    # off the mesh through the interpolant
    u = np.linspace(-1.3, 2.7, 1001)
    aa, bb, cc = co(u)
    assert np.max(np.abs(bb[:, 0] + np.sin(2 * np.pi * u) / (2 * np.pi))) < 1e-10
    assert np.max(np.abs(cc[:, 0] - (1 - np.cos(2 * np.pi * u)) / (4 * np.pi ** 2))) < 1e-10
    assert np.max(np.abs(aa - (u / 2 - np.sin(4 * np.pi * u) / (8 * np.pi)) / (8 * np.pi ** 2))) < 1e-10


def test_closed_form_agrees_with_quadrature_of_definitions():
    # independent check of the general single-harmonic formulas
    f = ElectricField([0.4, -0.2], ((2, (1.0, 0.3), (-0.5, 0.7)),))
    E0 = f.mean
    t1 = 0.37

    def b_def(t):
        B = np.array([quad(lambda u: f.oscillatory(u)[i], 0, t, epsabs=1e-14)[0] for i in range(2)])
        C = np.array([quad(lambda s: quad(lambda u: f.oscillatory(u)[i], 0, s, epsabs=1e-14)[0], 0, 1,
                           epsabs=1e-13)[0] for i in range(2)])
        return -B + C

    a, b, c = closed_form_coefficients(f, np.array([t1]))
    np.testing.assert_allclose(b[0], b_def(t1), atol=1e-11)
    c_def = [-quad(lambda s: b_def(s)[i], 0, t1, epsabs=1e-13)[0] for i in range(2)]
    np.testing.assert_allclose(c[0], c_def, atol=1e-11)
    a_def = quad(lambda s: 0.5 * closed_form_coefficients(f, np.array([s]))[1][0] @
                 closed_form_coefficients(f, np.array([s]))[1][0]
                 - E0 @ closed_form_coefficients(f, np.array([s]))[2][0], 0, t1, epsabs=1e-14)[0]
    assert abs(a[0] - a_def) < 1e-11
    co = compute_coefficients(f, 2048)
    ea, eb, ec = closed_form_coefficients(f, co.t)
    assert np.max(np.abs(co.a - ea)) < 1e-10
    assert np.max(np.abs(co.b - eb)) < 1e-10
    assert np.max(np.abs(co.c - ec)) < 1e-10


def test_periodicity_and_zero_mean_of_b():
    f = ElectricField([0.2, 0.0], ((1, (1.0, 0.3), (0.0, 0.5)), (3, (0.2, 0.0), (0.0, 0.1))))
    co = compute_coefficients(f, 1024)
    from scipy.integrate import simpson
    assert np.max(np.abs(simpson(co.b, dx=1 / 1024, axis=0))) < 1e-12
    a0, b0, c0 = co(np.array([0.3]))
    a1, b1, c1 = co(np.array([1.3]))
    assert np.max(np.abs(c1 - c0)) < 1e-10
    assert np.max(np.abs(b1 - b0)) < 1e-10


def test_ode_residuals_converge_at_third_order():
    # Simpson tabulation with cubic-spline derivatives: residuals fall ~8x per doubling
    f = ElectricField([0.2, 0.0], ((1, (1.0, 0.3), (0.0, 0.5)), (3, (0.2, 0.0), (0.0, 0.1))))
    r1 = np.array(compute_coefficients(f, 256).ode_residuals())
    r2 = np.array(compute_coefficients(f, 512).ode_residuals())
    assert np.all(r1 / r2 >= 3.5)
    assert max(compute_coefficients(COS1, 2048).ode_residuals()) < 1e-8


def test_mesh_size_guard():
    with pytest.raises(ConfigError):
        compute_coefficients(COS1, 32)


def test_table_field_validation():
    t = np.linspace(0, 1, 101)
    good = np.cos(2 * np.pi * t)[:, None]
    f = ElectricField([0.0], table=good)
    assert abs(f.integral(0.0, 0.25)[0] - 1 / (2 * np.pi)) < 1e-3
    with pytest.raises(ConfigError):
        ElectricField([0.0], table=(np.cos(2 * np.pi * t) + 0.01 * t)[:, None])  # endpoint mismatch
    with pytest.raises(ConfigError):
        ElectricField([0.0], table=(np.cos(2 * np.pi * t) + 0.5)[:, None])  # nonzero mean
    with pytest.raises(ConfigError):
        ElectricField([0.0], ((1, (1.0,), (0.0,)),), table=good)


def test_field_integral_is_exact_for_harmonics():
    f = ElectricField([0.5, 0.0], ((1, (1.0, 0.0), (0.0, 2.0)), (4, (0.0, 0.3), (0.0, 0.0))))
    t0, t1 = -0.3, 1.45
    w = 2 * np.pi
    exact = np.array([0.5 * (t1 - t0) + (np.sin(w * t1) - np.sin(w * t0)) / w,
                      -2.0 * (np.cos(w * t1) - np.cos(w * t0)) / w
                      + 0.3 * (np.sin(4 * w * t1) - np.sin(4 * w * t0)) / (4 * w)])
    np.testing.assert_allclose(f.integral(t0, t1), exact, atol=1e-14)


def test_field_in_basis_rotates_vectors():
    f = ElectricField([1.0, 0.0], ((1, (0.0, 1.0), (0.0, 0.0)),))
    B = np.array([[0.0, -1.0], [1.0, 0.0]])
    g = f.in_basis(B)
    np.testing.assert_allclose(g(0.0), B.T @ f(0.0))
    np.testing.assert_allclose(g.integral(0.1, 0.6), B.T @ f.integral(0.1, 0.6), atol=1e-15)


def test_field_dict_roundtrip():
    f = ElectricField([0.5, 0.0], ((1, (1.0, 0.0), (0.0, 2.0)),))
    g = ElectricField.from_dict(f.to_dict())
    np.testing.assert_allclose(g(np.linspace(0, 1, 7)), f(np.linspace(0, 1, 7)))


def test_gauge_T_identity_unitarity_and_translation():
    phi = make_gaussian(G2, WavePacketSpec((0.0, 0.0), 1.0, (0.5, 0.0)))
    zero = compute_coefficients(ElectricField.zero(2), 64)
    assert _dist(apply_gauge_T(phi, 0.3, zero), phi) < 1e-14
    f = ElectricField([0.0, 0.0], ((1, (3.0, 1.0), (0.0, 0.0)),))
    co = compute_coefficients(f, 512)
    out = apply_gauge_T(phi, 0.37, co)
    assert abs(out.norm() - 1) < 1e-12
    assert _dist(apply_gauge_T(out, 0.37, co, inverse=True), phi) < 1e-12


def test_gauge_T_translation_sign():
    # exp(-i c.p) psi(x) = psi(x - c): a centred packet moves to +c
    phi = make_gaussian(G2, WavePacketSpec((0.0, 0.0), 1.0))

    class FixedCoeffs:
        field = ElectricField.zero(2)

        def __call__(self, t):
            return 0.0, np.zeros(2), np.array([0.5, 0.0])

    out = apply_gauge_T(phi, 0.0, FixedCoeffs())
    np.testing.assert_allclose(expect_x(out), [0.5, 0.0], atol=1e-10)


def test_stark_zero_field_is_kinetic():
    phi = make_gaussian(G1, WavePacketSpec((-2.0,), 1.0, (1.0,)))
    out = stark_propagate(phi, 1.7, [0.0])
    ref = sfft.ifft(sfft.fft(phi.psi) * np.exp(-0.5j * 1.7 * G1.k2))
    assert np.max(np.abs(out.psi - ref)) < 1e-13


def test_stark_ehrenfest():
    phi = make_gaussian(G2, WavePacketSpec((1.0, -2.0), 1.0, (0.5, 1.0)))
    E0 = np.array([0.8, -0.4])
    t = 2.0
    out = stark_propagate(phi, t, E0)
    np.testing.assert_allclose(expect_x(out), [1.0, -2.0] + t * np.array([0.5, 1.0]) + 0.5 * t * t * E0,
                               atol=1e-9)
    np.testing.assert_allclose(expect_p(out), [0.5, 1.0] + t * E0, atol=1e-9)


def test_stark_matches_split_step():
    phi = make_gaussian(G1, WavePacketSpec((0.0,), 1.0, (1.0,)))
    f = ElectricField.constant([0.7])
    exact = stark_propagate(phi, 1.0, [0.7])
    errs = [_dist(propagate_full(phi, PropagationPlan(0.0, 1.0, dt), f, ZeroPotential(1)), exact)
            for dt in (0.01, 0.005)]
    assert errs[0] < 1e-3
    assert 3.2 <= errs[0] / errs[1] <= 4.8


def test_stark_boundary_guard():
    phi = make_gaussian(G1, WavePacketSpec((0.0,), 1.0))
    with pytest.raises(BoundaryMassError) as exc:
        stark_propagate(phi, 10.0, [1.0])
    assert "boundary_mass" in exc.value.diagnostics


def test_free_propagator_basic_identities():
    phi = make_gaussian(G1, WavePacketSpec((0.0,), 1.0, (1.0,)))
    f = ElectricField([0.3], ((1, (1.0,), (0.5,)),))
    co = compute_coefficients(f, 1024)
    assert _dist(free_propagate(phi, 0.4, 0.4, co), phi) < 1e-13
    a = free_propagate(phi, 1.0 + 1.3, 1.0 + 0.2, co)
    b = free_propagate(phi, 1.3, 0.2, co)
    assert _dist(a, b) < 1e-10
    const = compute_coefficients(ElectricField.constant([0.3]), 64)
    assert _dist(free_propagate(phi, 1.1, 0.2, const), stark_propagate(phi, 0.9, [0.3])) < 1e-12


def test_free_propagator_equals_literal_composition():
    phi = make_gaussian(G2, WavePacketSpec((0.5, 0.0), 1.0, (0.0, 1.0)))
    f = ElectricField([0.2, 0.1], ((1, (1.0, 0.0), (0.0, 0.5)),))
    co = compute_coefficients(f, 1024)
    t, s = 1.3, 0.4
    lit = apply_gauge_T(phi, s, co, inverse=True)
    lit = stark_propagate(lit, t - s, f.mean)
    lit = apply_gauge_T(lit, t, co)
    assert _dist(free_propagate(phi, t, s, co), lit) < 1e-12


def test_free_propagator_matches_split_step_at_second_order():
    phi = make_gaussian(G1, WavePacketSpec((0.0,), 1.0, (1.0,)))
    f = ElectricField([0.5], ((1, (1.0,), (0.0,)),))
    exact = free_propagate(phi, 1.0, 0.0, compute_coefficients(f, 1024))
    e = [_dist(propagate_full(phi, PropagationPlan(0.0, 1.0, dt), f, ZeroPotential(1)), exact)
         for dt in (1e-2, 5e-3)]
    assert 3.2 <= e[0] / e[1] <= 4.8


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_free_propagator_group_property(t, s, r):
    phi = make_gaussian(G1, WavePacketSpec((0.0,), 1.0, (0.5,)))
    co = compute_coefficients(COS1, 1024)
    lhs = free_propagate(phi, t, r, co)
    rhs = free_propagate(free_propagate(phi, s, r, co), t, s, co)
    assert _dist(lhs, rhs) < 1e-10
