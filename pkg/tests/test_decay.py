import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bosedecay.decay import (
    CertificateError,
    DecayProfile,
    G_sequence,
    certify,
    compute_FL,
    exponential_certificate,
    fit_decay_rate,
    oracle_profile,
    p_envelope_violations,
    read_profile_csv,
    recheck_certificate,
    sector_distribution,
    tail_energy_check,
    verify_difference_inequality,
    window_monotone,
    write_profile_csv,
    write_svg,
)
from bosedecay.fock import FockBasis, vacuum
from bosedecay.hamiltonian import assemble_bogoliubov, build_hamiltonian
from bosedecay.solver import GroundState, bogoliubov_oracle, lanczos_ground_state


def geometric(a, n):
    return (1 - a) * a ** np.arange(n + 1)


def sum_k_ak(a, lo, hi):
    """Closed form of sum_{k=lo}^{hi} k a^k, factored as a^lo sum_j (lo + j) a^j to avoid cancellation."""
    w = hi - lo + 1
    g0 = (1 - a**w) / (1 - a)
    g1 = a * (1 - w * a ** (w - 1) + (w - 1) * a**w) / (1 - a) ** 2
    return a**lo * (lo * g0 + g1)


# -- profiles -----------------------------------------------------------------


def test_vacuum_profile():
    b = FockBasis(3, 6)
    prof = sector_distribution(GroundState(0.0, vacuum(b), 0.0))
    assert prof.P[0] == 1.0 and np.all(prof.P[1:] == 0)
    assert prof.valid_max == 2


def test_profile_rejects_negative():
    with pytest.raises(ValueError):
        DecayProfile([0.5, -0.1, 0.6])


@pytest.fixture(scope="module")
def bogoliubov_desk(desk):
    H = assemble_bogoliubov(desk.blocks, desk.basis, tau=desk.sol.tau)
    return H, lanczos_ground_state(H, tol=1e-10)


def test_bogoliubov_profile_has_no_odd_sectors(bogoliubov_desk):
    _, gs = bogoliubov_desk
    P = sector_distribution(gs, source="bogoliubov").P
    assert P[1::2].max() <= 1e-14
    assert P.sum() == pytest.approx(1.0, abs=1e-10)


def test_full_profile_has_odd_sector(desk):
    P = sector_distribution(desk.gs).P
    assert P[1::2].max() > 1e-14


def test_single_pair_constant_ratio(torus_small):
    sol, v = torus_small
    H, ks = build_hamiltonian(sol, v, FockBasis(2, 30), variant="bogoliubov")
    gs = lanczos_ground_state(H, tol=1e-12)
    P = sector_distribution(gs, source="bogoliubov").P
    alpha = bogoliubov_oracle(ks).alpha[0]
    for n in range(1, 6):
        assert P[2 * n] / P[0] == pytest.approx(alpha ** (2 * n), rel=1e-8)


# -- F_L ----------------------------------------------------------------------


def test_window_zero_reproduces_f():
    prof = DecayProfile(geometric(0.4, 20), valid_max=20)
    ells, F = compute_FL(prof, 0)
    np.testing.assert_array_equal(F, prof.f[ells])


def test_constant_window():
    prof = DecayProfile(np.full(21, 1 / 21), valid_max=20)
    for L in (1, 2, 3):
        ells, F = compute_FL(prof, L, np.arange(L, 21 - L))
        np.testing.assert_allclose(F, (2 * L + 1) * ells / 21, rtol=1e-13)


def test_geometric_window_closed_form():
    a = 0.35
    prof = DecayProfile(geometric(a, 40), valid_max=40)
    for L in (1, 2, 4):
        ells, F = compute_FL(prof, L, np.arange(L, 41 - L))
        ref = [(1 - a) * sum_k_ak(a, l - L, l + L) for l in ells]
        np.testing.assert_allclose(F, ref, rtol=1e-12)


def test_window_outside_range_names_ell():
    prof = DecayProfile(geometric(0.3, 10), valid_max=6)
    with pytest.raises(ValueError, match="l=5"):
        compute_FL(prof, 2, [5])


@given(st.floats(0.05, 0.9), st.integers(1, 4), st.integers(0, 3))
@settings(max_examples=40, deadline=None)
def test_window_monotone_in_L(a, L, j):
    prof = DecayProfile(geometric(a, 30), valid_max=30)
    assert window_monotone(prof, L, j)


# -- difference inequality -----------------------------------------------------


@pytest.mark.parametrize("r", [0.3, 0.7, 1.4])
@pytest.mark.parametrize("L", [1, 2, 3])
def test_geometric_sigma_closed_form(r, L):
    # f(l) = r^l exactly: P(l) = r^l / l, P(0) free
    n = 30
    ells = np.arange(n + 1)
    P = np.where(ells > 0, r ** ells / np.maximum(ells, 1), 0.0)
    prof = DecayProfile(P / P.sum(), valid_max=n)
    # windows must avoid k = 0, where f vanishes instead of following r^k
    rep = verify_difference_inequality(prof, L, (2 * L + 1, n - 2 * L))
    assert rep.sigma == pytest.approx(r**L + r**-L, rel=1e-12)
    assert rep.sigma > 2


def test_flat_f_gives_sigma_two():
    n = 24
    ells = np.arange(n + 1)
    P = np.where(ells > 0, 1.0 / np.maximum(ells, 1), 0.0)
    prof = DecayProfile(P / P.sum(), valid_max=n)
    rep = verify_difference_inequality(prof, 2, (5, n - 4))
    assert rep.sigma == pytest.approx(2.0, abs=1e-13)
    # f(0) = 0 only lowers sigma near the origin, so nothing certifies
    cert, _ = certify(prof, L_max=4)
    assert cert is None


def test_degenerate_window():
    P = np.zeros(20)
    P[0] = 1.0
    with pytest.raises(ZeroDivisionError):
        verify_difference_inequality(DecayProfile(P, valid_max=19), 2)


def test_oracle_profile_desk_has_strong_stride(desk):
    prof = oracle_profile(bogoliubov_oracle(desk.kernels, truncation=40))
    sigmas = []
    for L in range(1, 11):
        try:
            sigmas.append(verify_difference_inequality(prof, L).sigma)
        except (ValueError, ZeroDivisionError):
            pass
    assert max(sigmas) >= 2.05


# -- certificate ---------------------------------------------------------------


def test_geometric_G_certificate():
    r = 0.4
    sigma = r + 1 / r
    G = r ** np.arange(1, 11)
    cert = exponential_certificate(G, sigma)
    assert math.isinf(cert.ell0)
    for l in range(1, cert.decreasing_range[1] + 1):
        assert G[l - 1] <= G[0] / (sigma - 1) ** (l - 1)
    assert cert.verified


def test_constant_G_rejected():
    with pytest.raises(CertificateError):
        exponential_certificate(np.ones(8), 2.1)
    with pytest.raises(CertificateError):
        exponential_certificate(np.ones(8), 2.0)


@pytest.mark.parametrize("ell0", [3, 4, 5])
def test_cosh_G_certificate(ell0):
    c = 0.9
    ells = np.arange(1, 9)
    G = np.cosh(c * (ells - ell0))
    cert = exponential_certificate(G, 2 * math.cosh(c))
    assert cert.ell0 == ell0
    assert cert.decreasing_range == (1, ell0 - 1)
    assert cert.growth_range == (ell0 + 1, 8)
    r = 2 * math.cosh(c) - 1
    for l in range(ell0 + 1, 9):
        for k in range(l, 9):
            assert G[k - 1] >= r ** (k - l) * G[l - 1] * (1 - 1e-12)


def test_violation_site_reported():
    G = np.array([1.0, 0.5, 0.3, 0.25, 0.2])
    with pytest.raises(CertificateError) as err:
        exponential_certificate(G, 2.5)
    assert err.value.site is not None


def test_certify_oracle_desk_and_recheck(desk):
    prof = oracle_profile(bogoliubov_oracle(desk.kernels, truncation=40))
    cert, table = certify(prof, L_max=10)
    assert cert is not None and cert.verified and cert.sigma > 2
    assert recheck_certificate(cert, prof) == []
    assert p_envelope_violations(prof, cert) == []
    assert len(G_sequence(prof, cert.L)) == len(cert.G)
    assert [row["L"] for row in table] == list(range(1, 11))


def test_certify_returns_none_on_short_profile(desk):
    cert, table = certify(sector_distribution(desk.gs), L_max=10)
    assert cert is None
    assert all(row["sigma"] is None or row["sigma"] <= 2 for row in table)


# -- fit ----------------------------------------------------------------------


def test_fit_exact_geometric():
    a = 0.3
    prof = DecayProfile(geometric(a, 20), valid_max=20)
    fit = fit_decay_rate(prof, (2, 8), "all")
    assert fit.epsilon == pytest.approx(-math.log(a), abs=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)


def test_fit_single_pair_even_sectors(torus_small):
    from bosedecay.hamiltonian import compute_kernels

    sol, v = torus_small
    ks = compute_kernels(sol, v, 2)
    o = bogoliubov_oracle(ks, truncation=40)
    fit = fit_decay_rate(oracle_profile(o), (2, 8), "even")
    # per sector l; per pair-occupation n = l/2 the rate is twice this
    assert fit.epsilon == pytest.approx(-math.log(o.alpha[0]), rel=1e-10)
    assert 2 * fit.epsilon == pytest.approx(-2 * math.log(o.alpha[0]), rel=1e-10)
    assert list(fit.ells) == [2, 4, 6, 8]


def test_fit_needs_three_points():
    with pytest.raises(ValueError, match="at least 3"):
        fit_decay_rate(DecayProfile(geometric(0.3, 10), valid_max=10), (2, 5), "even")


def test_fit_refuses_rounding_level_sectors():
    P = geometric(0.3, 12)
    P[4] = 1e-20
    with pytest.raises(ValueError, match="resolution"):
        fit_decay_rate(DecayProfile(P, valid_max=12), (2, 8), "even")


def test_desk_fit(desk):
    fit = fit_decay_rate(sector_distribution(desk.gs), (2, 8), "even")
    assert fit.epsilon > 0 and fit.r2 >= 0.95


# -- tail ---------------------------------------------------------------------


def test_tail_empty_when_cut_reaches_M(desk):
    assert tail_energy_check(desk.H, desk.gs, desk.basis.M)["empty"]


def test_tail_empty_for_zero_potential(zero_torus):
    sol, v = zero_torus
    H, _ = build_hamiltonian(sol, v, FockBasis(4, 6), N=10)
    gs = GroundState(0.0, vacuum(H.basis), 0.0)
    for cut in (1, 3):
        assert tail_energy_check(H, gs, cut)["empty"]


def test_tail_couplings_bogoliubov(bogoliubov_desk):
    H, gs = bogoliubov_desk
    rep = tail_energy_check(H, gs, 6)
    assert rep["coupling_K3"] == 0.0
    assert rep["coupling_K2"] > 0
    assert rep["k0_ok"]


def test_tail_full_is_explained(desk):
    rep = tail_energy_check(desk.H, desk.gs, 6)
    assert rep["unexplained_coupling"] <= 1e-12
    assert rep["k0_ok"]


# -- files --------------------------------------------------------------------


def test_profile_csv_round_trip(tmp_path):
    prof = DecayProfile(geometric(0.3, 14), valid_max=10)
    p = tmp_path / "p.csv"
    write_profile_csv(p, prof, L=2)
    back = read_profile_csv(p, valid_max=10)
    np.testing.assert_allclose(back.P, prof.P, rtol=1e-11)
    lines = p.read_text().splitlines()
    assert lines[-1].endswith(",")  # F_L blank outside the window


def test_svg(tmp_path, desk):
    prof = oracle_profile(bogoliubov_oracle(desk.kernels))
    cert, _ = certify(prof)
    write_svg(tmp_path / "d.svg", prof, cert)
    text = (tmp_path / "d.svg").read_text()
    assert text.startswith("<svg") and "stroke=\"red\"" in text
