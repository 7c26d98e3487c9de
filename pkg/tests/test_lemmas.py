import dataclasses
import math

import numpy as np
import pytest

from bosedecay.fock import FockBasis, read_vector
from bosedecay.hamiltonian import assemble_blocks, build_hamiltonian, compute_kernels
from bosedecay.lemmas import (
    check_K0_gap,
    check_K1_bound,
    check_K2_bound,
    check_K2_coulomb,
    check_K3_bound,
    check_K4_bound,
    constant_drift,
    coulomb_surrogate,
    delta_sequence,
)


@pytest.fixture(scope="module")
def zero_setup(zero_torus):
    sol, v = zero_torus
    ks = compute_kernels(sol, v, 3)
    basis = FockBasis(3, 6)
    return ks, basis, assemble_blocks(ks, basis)


# -- explicit-constant bounds ----------------------------------------------------


def test_k1_constant_parseval(desk):
    # homogeneous torus: ||v^2 * phi^2||_inf = (1/L) int v^2 = sum vhat^2 / L^2
    v, L = desk.v, desk.sol.grid.length
    ref = math.sqrt(sum(c * c for c in v.fourier.values())) / L
    assert desk.kernels.k1_constant == pytest.approx(ref, rel=1e-12)


def test_k1_desk(desk):
    rep = check_K1_bound(desk.kernels, desk.basis, samples=1000, seed=0, blocks=desk.blocks)
    assert rep.violations == 0 and rep.worst_margin >= 0


def test_k1_vacuum_sector_and_zero_potential(zero_setup):
    ks, basis, blocks = zero_setup
    rep = check_K1_bound(ks, basis, samples=50, blocks=blocks)
    assert rep.violations == 0
    assert rep.worst_margin == 0.0  # every LHS and RHS vanish


def test_k1_violation_is_persisted(desk, tmp_path):
    ks = dataclasses.replace(desk.kernels, k1_constant=0.0)
    rep = check_K1_bound(ks, desk.basis, samples=20, blocks=desk.blocks)
    assert rep.violations > 0 and not rep.passed
    paths = rep.persist_failures(tmp_path)
    assert paths
    vec, header = read_vector(paths[0])
    assert header["meta"]["sector"] >= 1
    assert vec.sector_norms()[header["meta"]["sector"]] > 0


def test_k2_desk(desk):
    rep = check_K2_bound(desk.kernels, desk.basis, samples=1000, seed=0, blocks=desk.blocks)
    assert rep.violations == 0


def test_k2_zero_potential(zero_setup):
    ks, basis, blocks = zero_setup
    rep = check_K2_bound(ks, basis, samples=40, blocks=blocks)
    assert rep.violations == 0 and rep.worst_margin == 0.0


def test_k2_with_empty_lower_sector(desk):
    # xi' = 0: the bound reduces to <xi, K1 xi> >= 0
    b = desk.basis
    K1 = desk.blocks["K1"]
    rng = np.random.default_rng(1)
    for ell in range(2, b.M + 1):
        sl = b.sector_slice(ell)
        x = rng.standard_normal(b.sector_dim(ell))
        assert np.vdot(x, K1[sl, sl] @ x).real >= -1e-12


def test_gap_desk(desk):
    rep = check_K0_gap(desk.H, samples=1000, seed=0)
    assert rep.violations == 0
    mins = rep.extra["sector_minimum"]
    assert mins[0] == 0.0
    assert mins[1] == pytest.approx(desk.sol.tau, abs=1e-14)


def test_replay_determinism(desk):
    a = check_K2_bound(desk.kernels, desk.basis, samples=200, seed=5, blocks=desk.blocks)
    b = check_K2_bound(desk.kernels, desk.basis, samples=200, seed=5, blocks=desk.blocks)
    assert a.to_json() == b.to_json()


# -- C-form bounds ----------------------------------------------------------------


def test_k3_constant_stable(desk):
    a = check_K3_bound(desk.kernels, desk.basis, samples=500, seed=0, blocks=desk.blocks)
    b = check_K3_bound(desk.kernels, desk.basis, samples=2000, seed=1, blocks=desk.blocks)
    assert 0 < a.empirical_constant < math.inf
    assert constant_drift(a, b) <= 0.10


def test_k4_constant_stable(desk):
    a = check_K4_bound(desk.kernels, desk.basis, samples=500, seed=0, blocks=desk.blocks)
    b = check_K4_bound(desk.kernels, desk.basis, samples=2000, seed=1, blocks=desk.blocks)
    assert 0 < a.empirical_constant < math.inf
    assert constant_drift(a, b) <= 0.10


@pytest.mark.parametrize("check", [check_K3_bound, check_K4_bound])
def test_doubling_dN_does_not_inflate_constant(desk, check):
    small = check(desk.kernels, desk.basis, delta=0.14, samples=500, seed=0, blocks=desk.blocks)
    large = check(desk.kernels, desk.basis, delta=0.28, samples=500, seed=0, blocks=desk.blocks)
    assert large.empirical_constant <= 1.10 * small.empirical_constant


def test_k3_low_sectors_vanish(desk):
    b = desk.basis
    K3 = desk.blocks["K3"]
    # K3 maps sector 0 to sector 1 with c(0) only through a+ a+ a: zero on the vacuum
    assert np.all(K3[b.sector_slice(1), b.sector_slice(0)].toarray() == 0)


def test_k4_low_sectors_vanish(desk):
    b = desk.basis
    K4 = desk.blocks["K4"]
    for ell in (0, 1):
        sl = b.sector_slice(ell)
        assert abs(K4[sl, sl]).max() == 0 if K4[sl, sl].nnz else True


def test_c_form_zero_potential(zero_setup):
    ks, basis, blocks = zero_setup
    assert check_K3_bound(ks, basis, delta=0.2, N=30, samples=20, blocks=blocks).empirical_constant == 0
    assert check_K4_bound(ks, basis, delta=0.2, N=30, samples=20, blocks=blocks).empirical_constant == 0


def test_c_form_needs_two_sectors(desk):
    with pytest.raises(ValueError):
        check_K4_bound(desk.kernels, desk.basis, delta=0.01, N=50, samples=5, blocks=desk.blocks)


# -- Coulomb split -------------------------------------------------------------


@pytest.fixture(scope="module")
def surrogate():
    return coulomb_surrogate(1.0, kappa_min=0.125, n=512)


def test_delta_decreases_when_kappa_halves(surrogate):
    d = delta_sequence(1.0, [1.0, 0.5, 0.25, 0.125], surrogate)
    assert all(b < a for a, b in zip(d, d[1:]))


def test_k2_coulomb_desk(surrogate):
    rep = check_K2_coulomb(1.0, (1.0, 0.5, 0.25, 0.125), M=6, samples=500, seed=0, surrogate=surrogate)
    assert rep.violations == 0
    assert rep.extra["yukawa_violations"] == 0
    assert rep.extra["remainder_violations"] == 0
    assert rep.parameters["kappa"] == 0.125


def test_k2_coulomb_large_eps_is_positive_type_form(surrogate):
    d = delta_sequence(1.0, [1.0], surrogate)[0]
    rep = check_K2_coulomb(1.0, (1.0,), eps=2 * d, M=4, samples=100, seed=2, surrogate=surrogate)
    assert rep.parameters["kappa"] == 1.0
    assert rep.parameters["nu"] == pytest.approx(1.0 + d)
    assert rep.violations == 0 and rep.extra["yukawa_violations"] == 0


def test_k2_coulomb_unreachable_eps(surrogate):
    with pytest.raises(ValueError, match="no kappa"):
        check_K2_coulomb(1.0, (1.0, 0.5), eps=1e-6, M=4, samples=5, surrogate=surrogate)


def test_surrogate_kernels_real_and_psd(surrogate):
    K1, K2 = surrogate.kernels(surrogate.kernel_matrix("coulomb"))
    assert np.array_equal(K1, K2)
    assert np.linalg.eigvalsh(K1).min() >= -1e-12
