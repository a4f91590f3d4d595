import numpy as np
import pytest

from trapwave.errors import ConfigError, GammaTooLarge
from trapwave.geometry import ChannelSpec
from trapwave.modes import (
    EVANESCENT,
    INCOMING,
    OUTGOING,
    PROPAGATING,
    THRESHOLD,
    classify,
    cross_section_eigen,
    cutoff,
    grating_alpha,
    longitudinal_wavenumber,
    select_modes,
)

CH = ChannelSpec(0, 1.0, (0.0, 0.0), (1.0, 0.0))
CH_N = ChannelSpec(1, 1.0, (0.0, 0.0), (-1.0, 0.0), wall="neumann")
GRATING_CH = ChannelSpec(0, 2 * np.pi, (0.0, 0.0), (0.0, 1.0), wall="periodic")


def test_branch_rule():
    assert longitudinal_wavenumber(15.0, 6.0) == pytest.approx(3.0)
    assert longitudinal_wavenumber(6.0, 15.0) == pytest.approx(-3.0j)
    lam = longitudinal_wavenumber(np.array([1.0, 5.0]), np.array([2.0, 1.0]))
    np.testing.assert_allclose(lam, [-1j, 2.0])


def test_classify_relative_threshold():
    assert classify(np.pi**2, np.pi**2) == THRESHOLD
    assert classify(1e6, 1e6 + 1e-3) == THRESHOLD
    assert classify(1.0, 1.0 + 1e-6) == EVANESCENT
    assert classify(2.0, 1.0) == PROPAGATING


def test_cutoff_is_c2_smoothstep():
    R0, delta = 1.0, 0.5
    z = np.array([0.0, 1.0, 1.5, 3.0])
    eta, d1, d2 = cutoff(z, R0, delta)
    np.testing.assert_allclose(eta, [0, 0, 1, 1])
    np.testing.assert_allclose(d1, 0, atol=1e-14)
    np.testing.assert_allclose(d2, 0, atol=1e-14)
    zz = np.linspace(R0, R0 + delta, 2001)
    e, g1, _ = cutoff(zz, R0, delta)
    assert np.all(np.diff(e) >= 0)
    np.testing.assert_allclose(np.gradient(e, zz)[5:-5], g1[5:-5], atol=1e-5)


@pytest.mark.parametrize("ch", [CH, CH_N])
def test_cross_section_orthonormal(ch):
    pairs = cross_section_eigen(ch, 5)
    s, w = np.polynomial.legendre.leggauss(80)
    s = 0.5 * (s + 1)
    w = 0.5 * w
    Phi = np.array([p.phi(s) for p in pairs])
    np.testing.assert_allclose((Phi * w) @ Phi.T, np.eye(5), atol=1e-12)
    base = 1 if ch.wall == "dirichlet" else 0
    np.testing.assert_allclose([p.mu for p in pairs], [((n + base) * np.pi) ** 2 for n in range(5)])


@pytest.mark.parametrize("ch", [CH, CH_N])
def test_numeric_cross_section_matches_analytic(ch):
    exact = cross_section_eigen(ch, 3)
    num = cross_section_eigen(ch, 3, q=lambda s: np.zeros_like(s), ds=1e-3)
    for a, b in zip(exact, num):
        assert b.mu == pytest.approx(a.mu, rel=1e-5, abs=1e-6)
        s = np.linspace(0.05, 0.95, 19)
        np.testing.assert_allclose(b.phi(s), a.phi(s), atol=1e-4)
    shifted = cross_section_eigen(ch, 3, q=lambda s: np.full_like(s, 2.5), ds=1e-3)
    np.testing.assert_allclose([p.mu - 2.5 for p in shifted], [p.mu for p in num], atol=1e-9)


def test_count_must_be_positive():
    with pytest.raises(ConfigError):
        cross_section_eigen(CH, 0)


def test_propagating_flux_is_unit():
    sel = select_modes(40.0, [CH], 4.0, R0=0.0, R=2.0)
    assert sel.N == 2
    for d, sign in ((OUTGOING, 1.0), (INCOMING, -1.0)):
        for m in sel.modes(d)[:sel.N]:
            assert m.flux() == pytest.approx(sign, abs=1e-12)
        for m in sel.modes(d)[sel.N:]:
            assert m.flux() == pytest.approx(0.0, abs=1e-12)


def test_grating_flux_is_half():
    alpha = grating_alpha(1.7, np.pi / 6)
    sel = select_modes(1.7**2, [GRATING_CH], 3.0, R0=0.0, R=2.0, alpha=alpha)
    assert sel.N == 3
    # propagating orders sorted by |n + alpha|; the specular order comes second
    assert [s.n for s in sel.slots[:3]] == [1, 0, 2]
    for m in sel.modes(OUTGOING)[:sel.N]:
        assert m.flux() == pytest.approx(0.5, abs=1e-12)


def test_selection_counts_and_cap():
    sel = select_modes(15.0, [CH, CH_N], gamma=8.0)
    # Dirichlet: mu = pi^2 n^2; evanescent if |lam| < 8 i.e. mu < 79
    n_d = sum(1 for n in range(1, 10) if 15 < (n * np.pi) ** 2 < 15 + 64)
    n_n = sum(1 for n in range(0, 10) if 15 < (n * np.pi) ** 2 < 15 + 64)
    assert sel.N == 1 + 2
    assert sel.M == sel.N + n_d + n_n
    assert all(s.kind == PROPAGATING for s in sel.slots[:sel.N])
    assert all(s.kind == EVANESCENT and s.lam.imag < 0 for s in sel.slots[sel.N:])
    with pytest.raises(GammaTooLarge):
        select_modes(15.0, [CH], gamma=1e3)
    with pytest.raises(ConfigError):
        select_modes(15.0, [CH], gamma=0.0)


def test_threshold_mode_is_standing():
    sel = select_modes(np.pi**2, [CH], gamma=4.0)
    assert sel.has_threshold
    m = sel.modes(OUTGOING)[0]
    assert m.kind == THRESHOLD and m.lam == 0
    g, dg = m.longitudinal(np.array([0.0, 2.0]))
    np.testing.assert_allclose(g, (1 - np.array([0.0, 2.0])) / np.sqrt(2))
    np.testing.assert_allclose(dg, -1 / np.sqrt(2))


def test_evanescent_referenced_at_cut():
    R = 5.0
    sel = select_modes(15.0, [CH], gamma=8.0, R0=0.0, R=R)
    m = sel.modes(INCOMING)[sel.N]
    z = np.array([R])
    g, _ = m.longitudinal(z)
    assert abs(g[0]) == pytest.approx(1 / np.sqrt(abs(m.lam)))


def test_incidence_angle_validation():
    with pytest.raises(ConfigError):
        grating_alpha(1.0, np.pi / 2)


def test_square_well_matches_dense_diagonalisation():
    def q(s):
        return np.where(np.abs(s - 0.5) < 1 / 6, -10.0, 0.0)

    ds = 1 / 400
    pairs = cross_section_eigen(CH, 4, q=q, ds=ds)
    m = 399
    s = ds * np.arange(1, m + 1)
    H = (np.diag(2 / ds**2 + q(s)) - np.diag(np.ones(m - 1), 1) / ds**2
         - np.diag(np.ones(m - 1), -1) / ds**2)
    np.testing.assert_allclose([p.mu for p in pairs], np.linalg.eigvalsh(H)[:4], rtol=1e-8)


def test_wavenumber_just_above_first_threshold():
    assert longitudinal_wavenumber(np.pi**2 + 1, np.pi**2) == pytest.approx(1.0)


def test_two_channel_counts_at_gamma_10():
    a = ChannelSpec(0, 1.0, (0.0, 0.0), (-1.0, 0.0))
    b = ChannelSpec(1, 1.0, (0.0, 0.0), (1.0, 0.0))
    sel = select_modes(15.0, [a, b], gamma=10.0)
    # |Im lam| = sqrt(n^2 pi^2 - 15): 4.94 and 8.59 are included, 11.96 is not
    assert sel.N == 2
    assert sel.M == 6
    assert max(abs(s.lam.imag) for s in sel.slots) < 10
    assert select_modes(15.0, [a, b], gamma=1e-3).M == 2


def test_threshold_outgoing_vanishes_one_unit_in():
    m = select_modes(np.pi**2, [CH], gamma=4.0).modes(OUTGOING)[0]
    g, _ = m.longitudinal(np.array([1.0]))
    assert g[0] == pytest.approx(0.0, abs=1e-15)


def test_grating_alpha_values():
    assert grating_alpha(1.0, np.pi / 6) == pytest.approx(-0.5)
    assert grating_alpha(3.0, 0.0) == 0.0
    assert grating_alpha(2.0, -np.pi / 6) == pytest.approx(1.0)
