import math

import numpy as np
import pytest

from bosedecay.config import build_model, load_shipped
from bosedecay.fock import FockBasis
from bosedecay.hamiltonian import assemble_blocks, assemble_full, compute_kernels
from bosedecay.hartree import HartreeProblem, quadratic_trap, solve_hartree
from bosedecay.potentials import Grid1D, make_bounded_potential


def gaussian_coeffs(k_max=6, scale=2 * math.pi, width=2.0):
    return {k: scale * math.exp(-k * k / width**2) for k in range(-k_max, k_max + 1)}


@pytest.fixture(scope="session")
def desk_cfg():
    return load_shipped()


@pytest.fixture(scope="session")
def desk(desk_cfg):
    """Shipped configuration solved through the ground state (M=14)."""
    from bosedecay.solver import lanczos_ground_state

    problem, v = build_model(desk_cfg)
    mb = desk_cfg["many_body"]
    sol = solve_hartree(problem, tol=1e-10, n_modes=mb["m"])
    ks = compute_kernels(sol, v, mb["m"])
    basis = FockBasis(mb["m"], mb["M"])
    blocks = assemble_blocks(ks, basis)
    H = assemble_full(mb["N"], blocks, basis, tau=sol.tau, momenta=ks.momenta)
    gs = lanczos_ground_state(H, tol=1e-10, seed=0)

    class Desk:
        pass

    d = Desk()
    d.cfg, d.problem, d.v, d.sol, d.kernels = desk_cfg, problem, v, sol, ks
    d.basis, d.blocks, d.H, d.gs = basis, blocks, H, gs
    return d


@pytest.fixture(scope="session")
def torus_small():
    grid = Grid1D(16, 2 * math.pi)
    v = make_bounded_potential(gaussian_coeffs(4), grid)
    sol = solve_hartree(HartreeProblem(grid, np.zeros(grid.n), v), n_modes=4)
    return sol, v


@pytest.fixture(scope="session")
def trap_small():
    grid = Grid1D(48, 6.0, boundary="hard-wall")
    v = make_bounded_potential({-2: 0.5, -1: 1.0, 0: 2.0, 1: 1.0, 2: 0.5}, grid)
    sol = solve_hartree(HartreeProblem(grid, quadratic_trap(grid, 1.0), v), n_modes=4)
    return sol, v


@pytest.fixture(scope="session")
def zero_torus():
    grid = Grid1D(16, 2 * math.pi)
    v = make_bounded_potential({0: 0.0}, grid)
    sol = solve_hartree(HartreeProblem(grid, np.zeros(grid.n), v), n_modes=4)
    return sol, v


def small_doc(**many_body):
    """Shipped config shrunk for fast end-to-end runs (plain dict, not yet validated)."""
    import json

    doc = json.loads(json.dumps(load_shipped()))
    doc["many_body"].update({"m": 4, "M": 8, **many_body})
    dec = doc["analyses"]["decay"]
    dec.update(stability_M=10, fit_range=[2, 6], oracle_truncation=24)
    doc["analyses"]["lemmas"].update(samples=40, drift_samples=[30, 60])
    doc["analyses"]["coulomb"].update(samples=20, M=3)
    return doc
