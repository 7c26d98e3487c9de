"""Hartree minimizer, mean-field one-body operator and excitation modes.

The Hartree functional per particle is

    E[u] = <u, (-Lap + V_ext) u> + 1/2 <u, (v * |u|^2) u>

over L2-normalized real ``u``. It is minimized by a semi-implicit
imaginary-time flow: each step applies ``(1 + dt (H[u] - e_min))^{-1}``
to ``u`` and renormalizes, with ``dt`` halved whenever the energy would go
up. Large accepted steps turn the flow into inverse iteration on the
self-consistent operator, so convergence is fast once the density settles.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ._validation import ConvergenceError, check_grid_function, check_int, check_positive
from .potentials import Grid1D, PairPotential, convolve_with_density, interaction_matrix

log = logging.getLogger(__name__)


def laplacian(grid):
    """Matrix of ``-d^2/dx^2``: spectral on periodic grids, 3-point on hard walls."""
    n, h = grid.n, grid.spacing
    if grid.periodic:
        q = 2 * np.pi * np.fft.fftfreq(n, d=h)
        cols = np.fft.ifft(q[:, None] ** 2 * np.fft.fft(np.eye(n), axis=0), axis=0).real
        return 0.5 * (cols + cols.T)
    main = np.full(n, 2.0)
    # cell-centred Dirichlet walls: ghost value is minus the first interior value
    main[0] = main[-1] = 3.0
    off = np.full(n - 1, -1.0)
    return (np.diag(main) + np.diag(off, 1) + np.diag(off, -1)) / h**2


def momentum_operator(grid):
    """Spectral matrix of ``-i d/dx`` on a periodic grid (Nyquist mode dropped)."""
    n, h = grid.n, grid.spacing
    q = 2 * np.pi * np.fft.fftfreq(n, d=h)
    if n % 2 == 0:
        q[n // 2] = 0.0
    P = np.fft.ifft(q[:, None] * np.fft.fft(np.eye(n), axis=0), axis=0)
    return 0.5 * (P + P.conj().T)


@dataclass
class HartreeProblem:
    """Grid, external potential and pair interaction of a Hartree problem.

    The functional is normalized per particle, so nothing here depends on
    the particle number.
    """

    grid: Grid1D
    v_ext: np.ndarray
    potential: PairPotential

    def __post_init__(self):
        self.v_ext = check_grid_function(self.v_ext, self.grid, "v_ext")
        if not self.potential.is_bounded:
            raise ValueError("the Hartree solver handles bounded pair potentials only")

    @property
    def homogeneous(self):
        return self.grid.periodic and np.ptp(self.v_ext) == 0.0

    def kinetic(self):
        return laplacian(self.grid) + np.diag(self.v_ext)

    def energy(self, u):
        w = self.grid.spacing
        one_body = w * u @ (self.kinetic() @ u)
        dens = u * u
        pair = 0.5 * w * dens @ convolve_with_density(self.potential, dens, self.grid, method="quadrature")
        return float(one_body + pair)


@dataclass
class HartreeSolution:
    """Result of :func:`solve_hartree` plus the excitation-mode data."""

    problem: HartreeProblem
    phi: np.ndarray
    e_H: float
    mu: float
    h_matrix: np.ndarray
    tau: float
    eigenvalues: np.ndarray
    modes: np.ndarray
    momenta: np.ndarray = None
    energies: list = field(default_factory=list)
    residuals: list = field(default_factory=list)

    @property
    def grid(self):
        return self.problem.grid

    @property
    def n_modes(self):
        return self.modes.shape[1]

    @property
    def iterations(self):
        return len(self.energies) - 1


def _normalize(u, grid):
    return u / np.sqrt(grid.integrate(np.abs(u) ** 2))


def _fix_sign(u):
    return -u if u.sum() < 0 else u


def self_consistent_operator(problem, u):
    """``-Lap + V_ext + v * u^2`` as a dense matrix."""
    mf = convolve_with_density(problem.potential, u * u, problem.grid, method="quadrature")
    return problem.kinetic() + np.diag(mf)


def stationarity_residual(problem, u):
    H = self_consistent_operator(problem, u)
    Hu = H @ u
    mu = problem.grid.spacing * u @ Hu
    r = Hu - mu * u
    return float(np.sqrt(problem.grid.integrate(r * r))), float(mu)


def solve_hartree(problem, tol=1e-10, max_iter=500, init="linear", seed=0, dt=1.0, n_modes=None,
                  momentum_basis=None):
    """Minimize the Hartree functional and build the excitation modes.

    Parameters
    ----------
    problem : HartreeProblem
    tol : float
        Target for the stationarity residual ``||H[phi] phi - mu phi||``.
    max_iter : int
        Accepted-step budget; :class:`ConvergenceError` when exhausted.
    init : {'linear', 'random'}
        Start from the ground state of ``-Lap + V_ext`` or from a seeded
        random positive profile.
    n_modes : int, optional
        Number of excitation modes to keep (default: all ``n - 1``).
    momentum_basis : bool, optional
        Rotate degenerate mode clusters into momentum eigenstates. Defaults
        to True on periodic grids.

    Returns
    -------
    HartreeSolution
    """
    check_positive(tol, "tol")
    check_int(max_iter, "max_iter", minimum=1)
    grid = problem.grid
    T = problem.kinetic()
    if init == "linear":
        _, vecs = sla.eigh(T, subset_by_index=[0, 0])
        u = vecs[:, 0]
    elif init == "random":
        u = 0.5 + np.random.default_rng(seed).random(grid.n)
    else:
        raise ValueError(f"unknown init {init!r}")
    u = _fix_sign(_normalize(u, grid))

    energies = [problem.energy(u)]
    res, mu = stationarity_residual(problem, u)
    residuals = [res]
    step = dt
    eye = np.eye(grid.n)
    while residuals[-1] > tol:
        if len(energies) > max_iter:
            raise ConvergenceError(
                f"Hartree flow did not reach tol={tol:g} in {max_iter} steps", residual=residuals[-1],
                history=residuals,
            )
        H = self_consistent_operator(problem, u)
        e_min = sla.eigh(H, eigvals_only=True, subset_by_index=[0, 0])[0]
        while True:
            trial = np.linalg.solve(eye + step * (H - e_min * eye), u)
            trial = _fix_sign(_normalize(trial, grid))
            e_trial = problem.energy(trial)
            if e_trial <= energies[-1] + 1e-14 * max(1.0, abs(energies[-1])):
                break
            step *= 0.5
            if step < 1e-12:
                raise ConvergenceError("backtracking collapsed the imaginary-time step",
                                       residual=residuals[-1], history=residuals)
        u = trial
        energies.append(e_trial)
        res, mu = stationarity_residual(problem, u)
        residuals.append(res)
        step = min(step * 2.0, 1e6)

    if np.any(u <= 0):
        raise ArithmeticError("Hartree minimizer is not positive; is the external potential confining?")
    h = mean_field_operator(problem, u)
    if momentum_basis is None:
        momentum_basis = grid.periodic
    m = grid.n - 1 if n_modes is None else n_modes
    tau, eigenvalues, modes, momenta = spectral_gap(h, u, grid, m, momentum_basis=momentum_basis)
    log.info("Hartree converged in %d steps: e_H=%.12g tau=%.6g", len(energies) - 1, energies[-1], tau)
    return HartreeSolution(problem=problem, phi=u, e_H=energies[-1], mu=mu, h_matrix=h, tau=tau,
                           eigenvalues=eigenvalues, modes=modes, momenta=momenta,
                           energies=energies, residuals=residuals)


def mean_field_operator(problem, phi):
    """``h = -Lap + V_ext + v * phi^2 - <phi, (...) phi>``; annihilates its own expectation."""
    grid = problem.grid
    norm = grid.integrate(phi * phi)
    if abs(norm - 1) > 1e-10:
        raise ValueError(f"phi must be normalized, got ||phi||^2 = {norm:.15g}")
    H = self_consistent_operator(problem, phi)
    H = 0.5 * (H + H.T)
    c = grid.spacing * phi @ H @ phi
    return H - c * np.eye(grid.n)


def _rotate_to_momentum(grid, vals, vecs, rtol=1e-8):
    """Within each degenerate cluster diagonalize ``-i d/dx``; returns complex modes and momenta."""
    P = momentum_operator(grid)
    w = grid.spacing
    out = vecs.astype(complex)
    momenta = np.zeros(len(vals), dtype=int)
    scale = max(1.0, np.max(np.abs(vals)))
    start = 0
    while start < len(vals):
        stop = start + 1
        while stop < len(vals) and abs(vals[stop] - vals[start]) <= rtol * scale:
            stop += 1
        Y = vecs[:, start:stop]
        Pc = w * Y.T @ P @ Y
        q, Z = np.linalg.eigh(0.5 * (Pc + Pc.conj().T))
        order = np.lexsort((-q, np.round(np.abs(q), 8)))
        block = Y @ Z[:, order]
        for j in range(block.shape[1]):
            col = block[:, j]
            pivot = col[0] if abs(col[0]) > 1e-8 else col[np.argmax(np.abs(col))]
            block[:, j] = col * (abs(pivot) / pivot)
        out[:, start:stop] = block
        momenta[start:stop] = np.rint(q[order] * grid.length / (2 * np.pi)).astype(int)
        start = stop
    return out, momenta


def spectral_gap(h, phi, grid, m, momentum_basis=False):
    """Diagonalize ``q h q`` on the orthogonal complement of ``phi``.

    Returns ``(tau, eigenvalues, modes, momenta)`` where ``tau`` is the
    smallest eigenvalue, ``modes`` holds the ``m`` lowest eigenvectors as
    columns (normalized in the grid inner product) and ``momenta`` the
    integer momentum labels when ``momentum_basis`` is set (else None).
    """
    n = grid.n
    check_int(m, "m", minimum=1, maximum=n - 1)
    w = grid.spacing
    phit = np.sqrt(w) * np.asarray(phi, dtype=float)
    B = sla.null_space(phit[None, :])
    hc = B.T @ h @ B
    vals, Y = np.linalg.eigh(0.5 * (hc + hc.T))
    tau = float(vals[0])
    if tau <= 0:
        raise ArithmeticError(f"q h q has no positive gap (tau = {tau:.6g})")
    vecs = (B @ Y) / np.sqrt(w)
    momenta = None
    if momentum_basis:
        if not grid.periodic:
            raise ValueError("a momentum basis needs a periodic grid")
        # keep whole degenerate clusters while rotating, truncate afterwards
        vecs, momenta = _rotate_to_momentum(grid, vals, vecs)
        if m < len(vals) and abs(vals[m] - vals[m - 1]) <= 1e-8 * max(1.0, abs(vals[m])):
            log.warning("mode truncation m=%d splits a degenerate cluster", m)
        momenta = momenta[:m]
    return tau, vals[:m], vecs[:, :m], momenta


def grid_refinement_delta(make_problem, n, **solve_kw):
    """``|e_H(2n) - e_H(n)|`` for a problem factory ``make_problem(n)`` (a report, not a check)."""
    coarse = solve_hartree(make_problem(n), **solve_kw)
    fine = solve_hartree(make_problem(2 * n), **solve_kw)
    return abs(fine.e_H - coarse.e_H)


def quadratic_trap(grid, omega=1.0):
    """The shipped confining potential ``omega^2 (x - L/2)^2`` (our choice, not canonical)."""
    return omega**2 * (grid.x - 0.5 * grid.length) ** 2
