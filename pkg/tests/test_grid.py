import numpy as np
import pytest
import scipy.fft as sfft
from hypothesis import given, settings
from hypothesis import strategies as st

from starkscatter.errors import GridError
from starkscatter.grid import (GridSpec, WavePacketSpec, WaveState, apply_p, boost, boundary_mass,
                               expect_p, expect_p2, expect_x, inner, load_wavefunction,
                               make_compact_momentum_packet, make_gaussian, save_wavefunction,
                               to_momentum, translate)

G1 = GridSpec((20.0,), (256,))
G2 = GridSpec((10.0, 10.0), (64, 64))


def test_grid_layout():
    g = GridSpec((4.0, 2.0), (8, 16))
    assert g.ndim == 2
    np.testing.assert_allclose(g.spacing, [1.0, 0.25])
    assert g.axes[0][0] == -4.0 and g.axes[0][-1] == 3.0
    k = np.sort(np.ravel(g.wavenumbers[0]))
    np.testing.assert_allclose(k, np.pi / 4 * np.arange(-4, 4))
    np.testing.assert_allclose(g.cutoff, np.pi / g.spacing)


@pytest.mark.parametrize("counts", [(100,), (0,), (64, 48)])
def test_grid_rejects_non_power_of_two(counts):
    with pytest.raises(GridError):
        GridSpec((1.0,) * len(counts), counts)


def test_grid_rejects_bad_dimension():
    with pytest.raises(GridError):
        GridSpec((1.0,) * 4, (8,) * 4)


def test_gaussian_moments_at_rest():
    phi = make_gaussian(G1, WavePacketSpec((0.0,), 1.0))
    assert abs(phi.norm() - 1) < 1e-12
    assert abs(expect_x(phi)[0]) < 1e-10
    assert abs(expect_p(phi)[0]) < 1e-10


def test_gaussian_momentum_moments():
    phi = make_gaussian(G1, WavePacketSpec((0.0,), 1.0, (3.0,)))
    assert abs(expect_p(phi)[0] - 3.0) < 1e-8
    assert abs(expect_p2(phi) - (9.0 + 0.25)) < 1e-6


def test_gaussian_position_density_has_width_sigma():
    phi = make_gaussian(G1, WavePacketSpec((1.0,), 0.8))
    var = inner(phi, WaveState(G1, G1.radius2((1.0,)) * phi.psi)).real
    assert abs(var - 0.64) < 1e-10


def test_gaussian_guards():
    with pytest.raises(GridError):
        make_gaussian(G1, WavePacketSpec((0.0,), 0.1))  # below 2 dx
    with pytest.raises(GridError):
        make_gaussian(G1, WavePacketSpec((17.0,), 2.0))  # mass at the edge
    with pytest.raises(GridError):
        make_gaussian(G1, WavePacketSpec((0.0,), 1.0, (18.0,)))  # beyond the cutoff


def test_boost_shifts_momentum():
    phi = make_gaussian(G2, WavePacketSpec((0.0, 0.0), 1.0, (0.5, 0.0)))
    v = np.sqrt(25.0) * np.array([0.6, 0.8])
    b = boost(phi, v)
    np.testing.assert_allclose(expect_p(b), [0.5 + 3.0, 4.0], atol=1e-8)
    assert abs(b.norm() - 1) < 1e-12
    back = boost(b, -v)
    assert np.max(np.abs(back.psi - phi.psi)) < 1e-12
    assert np.array_equal(boost(phi, [0.0, 0.0]).psi, phi.psi)


def test_boost_beyond_cutoff_rejected():
    phi = make_gaussian(G2, WavePacketSpec((0.0, 0.0), 1.0))
    with pytest.raises(GridError):
        boost(phi, [20.0, 0.0])


def test_apply_p_expectations():
    phi = make_gaussian(G1, WavePacketSpec((0.0,), 1.0, (2.0,)))
    assert abs(inner(phi, apply_p(phi, 0)) / inner(phi, phi) - 2.0) < 1e-10
    sym = make_gaussian(G1, WavePacketSpec((0.0,), 1.0))
    assert abs(inner(sym, apply_p(sym, 0))) < 1e-13


def test_apply_p_boost_identity():
    # wide box so the non-commensurate boost sees no edge discontinuity
    g = GridSpec((16.0, 16.0), (128, 128))
    phi = make_gaussian(g, WavePacketSpec((0.5, -0.3), 1.0, (0.2, 0.1)))
    v = np.array([1.5, -2.0])
    for j in range(2):
        lhs = apply_p(boost(phi, v), j).psi
        rhs = boost(apply_p(phi, j), v).psi + v[j] * boost(phi, v).psi
        assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_inner_conventions():
    a = make_gaussian(G1, WavePacketSpec((-2.0,), 1.0, (1.0,)))
    b = make_gaussian(G1, WavePacketSpec((1.0,), 1.5, (-0.5,)))
    assert abs(inner(a, a) - 1) < 1e-12
    assert abs(inner(a, b) - np.conj(inner(b, a))) < 1e-15
    # conjugate-linear in the first slot
    assert abs(inner(a.replace(2j * a.psi), b) - (-2j) * inner(a, b)) < 1e-14
    far_a = make_gaussian(G1, WavePacketSpec((-9.0,), 0.5))
    far_b = make_gaussian(G1, WavePacketSpec((9.0,), 0.5))
    assert abs(inner(far_a, far_b)) < 1e-12


def test_parseval_and_roundtrip():
    phi = make_gaussian(G2, WavePacketSpec((0.5, -0.5), 1.0, (1.0, 2.0)))
    mom = to_momentum(phi)
    dk = np.prod(2 * np.pi / (np.array(G2.counts) * G2.spacing))
    assert abs(np.sum(np.abs(mom) ** 2) * dk - 1) < 1e-12
    back = sfft.ifftn(sfft.fftn(phi.psi))
    assert np.max(np.abs(back - phi.psi)) < 1e-12


def test_translate_convention():
    phi = make_gaussian(G2, WavePacketSpec((0.0, 0.0), 1.0))
    moved = translate(phi, [0.5, 0.0])
    np.testing.assert_allclose(expect_x(moved), [0.5, 0.0], atol=1e-10)


def test_batched_states():
    a = make_gaussian(G1, WavePacketSpec((-1.0,), 1.0))
    b = make_gaussian(G1, WavePacketSpec((2.0,), 1.0, (1.0,)))
    s = WaveState.stack([a, b])
    assert s.batch_shape == (2,)
    np.testing.assert_allclose(s.norm(), [1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(expect_x(s)[:, 0], [-1.0, 2.0], atol=1e-10)
    assert np.array_equal(s[1].psi, b.psi)
    with pytest.raises(IndexError):
        a[0]
    with pytest.raises(GridError):
        WaveState.stack([a, make_gaussian(GridSpec((20.0,), (512,)), WavePacketSpec((0.0,), 1.0))])


def test_boundary_mass_reports_edge_weight():
    psi = np.zeros(64, complex)
    psi[0] = 1.0
    psi[32] = 1.0
    assert abs(boundary_mass(WaveState(GridSpec((1.0,), (64,)), psi)) - 0.5) < 1e-12


def test_compact_momentum_packet_support():
    k0 = 13 * np.pi / 20  # a grid wavenumber, so the discrete bump is symmetric
    phi = make_compact_momentum_packet(G1, (0.0,), 1.0, (k0,))
    assert abs(phi.norm() - 1) < 1e-12
    k = np.ravel(G1.wavenumbers[0])
    amp = np.abs(sfft.fft(phi.psi))
    assert np.max(amp[np.abs(k - k0) >= 1.0]) < 1e-10 * np.max(amp)
    assert abs(expect_p(phi)[0] - k0) < 1e-8


@pytest.mark.parametrize("kind", ["complex", "real"])
def test_wavefunction_file_roundtrip(tmp_path, kind):
    g = GridSpec((3.0, 2.0), (8, 4))
    rng = np.random.default_rng(1)
    vals = rng.normal(size=g.shape)
    if kind == "complex":
        vals = vals + 1j * rng.normal(size=g.shape)
    p = tmp_path / "f.wfn"
    save_wavefunction(p, g, vals)
    raw = p.read_bytes()
    assert raw[:8] == b"WAVEFN01"
    g2, back = load_wavefunction(p)
    assert g2 == g
    assert np.array_equal(back, vals)
    assert np.iscomplexobj(back) == (kind == "complex")


def test_wavefunction_file_rejects_garbage(tmp_path):
    p = tmp_path / "bad.wfn"
    p.write_bytes(b"NOTAFILE" + bytes(16))
    with pytest.raises(ValueError):
        load_wavefunction(p)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-2, 2))
def test_translation_composes(s1, s2, k0):
    phi = make_gaussian(G1, WavePacketSpec((0.0,), 1.0, (k0,)))
    a = translate(translate(phi, [s1]), [s2])
    b = translate(phi, [s1 + s2])
    assert np.max(np.abs(a.psi - b.psi)) < 1e-11
    assert abs(a.norm() - 1) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.6, 2.0))
def test_inner_hermitian_property(c1, c2, w):
    a = make_gaussian(G1, WavePacketSpec((c1,), w, (1.0,)))
    b = make_gaussian(G1, WavePacketSpec((c2,), 1.0, (-1.0,)))
    assert abs(inner(a, b) - np.conj(inner(b, a))) < 1e-14
    assert abs(inner(a, b)) <= 1 + 1e-12
