import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irsbackcom.channel import (Scenario, ScenarioError, build_geometry, dbm_to_watts,
                                direct_path_gain, generate_channels, irs_element_gain,
                                irs_hop_amplitude, sample_rician)

from conftest import reference_scenario

C = 299792458.0


def test_wavelength_and_pitch():
    sc = reference_scenario()
    geo = build_geometry(sc)
    assert sc.wavelength == pytest.approx(C / 915e6)
    pos = geo.element_positions
    d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    # nearest-neighbour pitch is half a wavelength (about 0.1638 m)
    assert d.min() == pytest.approx(sc.wavelength / 2)
    assert d.min() == pytest.approx(0.1638, abs=1e-4)


def test_grid_n4_and_n1():
    sc = reference_scenario(N=4)
    geo = build_geometry(sc)
    assert geo.element_positions.shape == (4, 3)
    r = np.linalg.norm(geo.element_positions - sc.irs_center, axis=1)
    assert np.all(r <= sc.wavelength / math.sqrt(2) + 1e-12)
    one = build_geometry(reference_scenario(N=1))
    np.testing.assert_array_equal(one.element_positions[0], one.element_positions[0])
    np.testing.assert_allclose(one.element_positions[0], [20, 20, 0], atol=1e-12)


def test_grid_is_planar_and_normal_is_unit():
    sc = reference_scenario(irs_normal=None)
    geo = build_geometry(sc)
    assert np.linalg.norm(geo.irs_normal) == pytest.approx(1.0)
    offs = geo.element_positions - sc.irs_center
    np.testing.assert_allclose(offs @ geo.irs_normal, 0, atol=1e-12)


def test_default_normal_faces_centroid():
    sc = reference_scenario(irs_normal=None)
    geo = build_geometry(sc)
    centroid = np.mean([sc.ce_position, sc.reader_position, *sc.tag_positions], axis=0)
    u = (centroid - sc.irs_center) / np.linalg.norm(centroid - sc.irs_center)
    np.testing.assert_allclose(geo.irs_normal, u, atol=1e-12)


def test_non_square_n_rejected():
    with pytest.raises(ScenarioError):
        reference_scenario(N=10)


@pytest.mark.parametrize("bad", [dict(L=0), dict(eta=1.5), dict(conv_eps=0.0),
                                 dict(rician_k_db=float("inf")), dict(K=2)])
def test_invariants_enforced(bad):
    with pytest.raises(ScenarioError):
        reference_scenario(**bad)


def test_direct_gain_unit_distance_and_inverse_square():
    lam = 0.3
    assert direct_path_gain(1.0, 2.0, lam) == pytest.approx(lam / (4 * np.pi))
    ratio = (direct_path_gain(20.0, 2.0, lam) / direct_path_gain(10.0, 2.0, lam)) ** 2
    assert 10 * np.log10(ratio) == pytest.approx(-20 * np.log10(2), abs=1e-12)


def test_direct_gain_matches_high_precision_log():
    mpmath.mp.dps = 40
    lam = C / 915e6
    ref = 20 * mpmath.log10(mpmath.mpf(lam) / (4 * mpmath.pi) * mpmath.mpf(25) ** (-mpmath.mpf("1.05")))
    got = 20 * np.log10(direct_path_gain(25.0, 2.1, lam))
    assert got == pytest.approx(float(ref), abs=1e-10)


@pytest.mark.parametrize("d", [0.0, -1.0])
def test_direct_gain_rejects_nonpositive(d):
    with pytest.raises(ValueError):
        direct_path_gain(d, 2.0, 0.3)


def test_element_gain_reduction_q0_unit_distances():
    sc = reference_scenario(N=1, irs_q=0.0, pathloss_exponent=2.0, irs_center=[0, 0],
                        irs_normal=[1, 0, 0], ce_position=[-5, 0], reader_position=[9, 9])
    geo = build_geometry(sc)
    g = irs_element_gain([1, 0], 0, [0, 1, 0], geo, sc)
    assert g == pytest.approx(sc.wavelength / (4 * np.pi) * np.pi)


def test_element_gain_zero_at_grazing():
    sc = reference_scenario(N=1)
    geo = build_geometry(sc)
    # a point in the IRS plane (normal is -y) sees grazing incidence
    assert irs_element_gain([0, 0], 0, [30, 20], geo, sc) == 0.0


def test_element_gain_coincident_raises():
    sc = reference_scenario(N=1)
    geo = build_geometry(sc)
    with pytest.raises(ValueError):
        irs_element_gain([20, 20], 0, [25, 0], geo, sc)


def test_element_gain_matches_direct_formula_reference_geometry():
    sc = reference_scenario(N=64)
    geo = build_geometry(sc)
    n = 27
    el = geo.element_positions[n]
    tag, ce = np.array([25.0, 0, 0]), np.array([0.0, 0, 0])
    nh = np.array([0.0, -1, 0])
    r1, r2 = ce - el, tag - el
    d1, d2 = np.linalg.norm(r1), np.linalg.norm(r2)
    c1, c2 = r1 @ nh / d1, r2 @ nh / d2
    lam, q, dl = sc.wavelength, sc.irs_q, sc.pathloss_exponent
    inner = math.sqrt(math.pi ** 2 * c1 ** (2 * q) * c2 ** (2 * q) / (d1 ** dl * d2 ** dl))
    assert irs_element_gain(ce, n, tag, geo, sc) == pytest.approx(lam / (4 * math.pi) * inner,
                                                                  rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 15), st.floats(-50, 50), st.floats(-50, 15))
def test_element_gain_reciprocity(x1, y1, x2, y2):
    sc = reference_scenario(N=4)
    geo = build_geometry(sc)
    a, b = [x1, y1], [x2, y2]
    for n in range(4):
        assert irs_element_gain(a, n, b, geo, sc) == pytest.approx(
            irs_element_gain(b, n, a, geo, sc), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(1.0, 500.0), st.floats(1.0, 500.0), st.floats(1.5, 4.0))
def test_direct_gain_monotone(d1, d2, delta):
    lo, hi = sorted([d1, d2])
    assert direct_path_gain(hi, delta, 0.3) <= direct_path_gain(lo, delta, 0.3)


def test_hop_amplitude_monotone_in_distance():
    sc = reference_scenario(N=1)
    geo = build_geometry(sc)
    # same direction from the element, increasing range
    near = irs_hop_amplitude(np.array([20.0, 10, 0]), geo, sc)[0]
    far = irs_hop_amplitude(np.array([20.0, 0, 0]), geo, sc)[0]
    assert far < near


def test_rician_pure_los_limit(rng):
    los = np.exp(1j * rng.uniform(0, 2 * np.pi, (3, 5)))
    out = sample_rician(3, 5, 1e9, los, rng)
    np.testing.assert_allclose(out, los, atol=1e-3)


def test_rician_rayleigh_power(rng):
    out = sample_rician(1, 100_000, 0.0, np.ones((1, 100_000)), rng)
    assert np.mean(np.abs(out) ** 2) == pytest.approx(1.0, rel=0.02)


def test_rician_3db_los_fraction(rng):
    k = 10 ** 0.3
    los = np.exp(1j * rng.uniform(0, 2 * np.pi, (1, 100_000)))
    out = sample_rician(1, 100_000, k, los, rng)
    assert k / (k + 1) == pytest.approx(0.666, abs=1e-3)
    # the projection on the LoS part recovers sqrt(K/(K+1))
    assert np.mean(out * los.conj()).real == pytest.approx(np.sqrt(k / (k + 1)), abs=0.01)
    assert np.mean(np.abs(out) ** 2) == pytest.approx(1.0, rel=0.02)


def test_rician_shape_mismatch(rng):
    with pytest.raises(ValueError):
        sample_rician(2, 2, 1.0, np.ones((3, 2)), rng)


def test_channel_shapes():
    sc = reference_scenario(N=16, M=3, L=2, tag_positions=[[25, 0], [30, 5]])
    ch = generate_channels(sc, build_geometry(sc), np.random.default_rng(0))
    assert ch.h_CT.shape == (2, 2) and ch.H_CI.shape == (16, 2) and ch.H_CR.shape == (3, 2)
    assert ch.h_TI.shape == (2, 16) and ch.H_RI.shape == (16, 3) and ch.h_TR.shape == (2, 3)
    for arr in (ch.h_CT, ch.H_CI, ch.H_CR, ch.h_TI, ch.H_RI, ch.h_TR):
        assert np.all(np.isfinite(arr))


def test_generate_reproducible():
    sc = reference_scenario(N=16)
    geo = build_geometry(sc)
    a = generate_channels(sc, geo, np.random.default_rng(7))
    b = generate_channels(sc, geo, np.random.default_rng(7))
    for x, y in zip(vars(a).values(), vars(b).values()):
        np.testing.assert_array_equal(x, y)


def test_deterministic_cascade_equals_hop_product():
    sc = reference_scenario(N=1, L=1, M=1, rician_k_db=200.0)
    geo = build_geometry(sc)
    ch = generate_channels(sc, geo, np.random.default_rng(3))
    cascade = abs(ch.H_CI[0, 0] * ch.h_TI[0, 0])
    expect = (irs_hop_amplitude(sc.ce_position, geo, sc)[0]
              * irs_hop_amplitude(sc.tag_positions[0], geo, sc)[0])
    assert cascade == pytest.approx(expect, rel=1e-8)


def test_direct_link_mean_power():
    sc = reference_scenario(N=1)
    geo = build_geometry(sc)
    rng = np.random.default_rng(11)
    p = [np.mean(np.abs(generate_channels(sc, geo, rng).h_CT) ** 2) for _ in range(10_000 // 4)]
    ref = direct_path_gain(25.0, 2.1, sc.wavelength) ** 2
    assert np.mean(p) == pytest.approx(ref, rel=0.03)


def test_dbm_conversion():
    assert dbm_to_watts(30.0) == pytest.approx(1.0)
    assert dbm_to_watts(-110.0) == pytest.approx(1e-14)
