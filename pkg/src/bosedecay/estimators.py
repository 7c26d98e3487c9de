"""Estimator-style wrappers (``fit`` / ``transform`` / ``get_params``).

The physics is deterministic given its hyperparameters, so ``fit`` takes no
training data in the usual sense: ``HartreeMeanField.fit`` ignores ``X``,
``ExcitationGroundState.fit`` consumes an upstream mean-field result and
``DecayAnalyzer.fit`` consumes sector weights. Fitted state lives in
trailing-underscore attributes, as usual.
"""

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .decay import DecayProfile, certify, compute_FL, fit_decay_rate, sector_distribution
from .fock import FockBasis
from .hamiltonian import build_hamiltonian
from .hartree import HartreeProblem, quadratic_trap, solve_hartree
from .potentials import Grid1D, make_bounded_potential
from .solver import lanczos_ground_state


def _gaussian_fourier(k_max=6, width=2.0):
    return [[k, 2 * math.pi * math.exp(-k * k / width**2)] for k in range(-k_max, k_max + 1)]


class HartreeMeanField(BaseEstimator, TransformerMixin):
    """Hartree minimizer and its excitation modes.

    Parameters
    ----------
    geometry : {'torus', 'trap'}
    length : float
        Torus circumference or box length.
    n_grid : int
    fourier : list of [k, vhat] or None
        Fourier coefficients of the pair potential; ``None`` gives a
        Gaussian of positive type.
    omega : float
        Trap frequency (ignored on the torus).
    n_modes : int
    tol, max_iter
        Hartree stopping rule.
    """

    def __init__(self, geometry="torus", length=2 * math.pi, n_grid=32, fourier=None, omega=1.0, n_modes=6,
                 tol=1e-10, max_iter=500):
        self.geometry = geometry
        self.length = length
        self.n_grid = n_grid
        self.fourier = fourier
        self.omega = omega
        self.n_modes = n_modes
        self.tol = tol
        self.max_iter = max_iter

    @classmethod
    def from_config(cls, cfg):
        mod = cfg["model"]
        return cls(geometry=mod["geometry"], length=mod["L"], n_grid=mod["n"],
                   fourier=mod["potential"]["fourier"], omega=mod.get("V_ext", {}).get("omega", 1.0),
                   n_modes=cfg["many_body"]["m"], tol=cfg["hartree"]["tol"], max_iter=cfg["hartree"]["max_iter"])

    def fit(self, X=None, y=None):
        boundary = "periodic" if self.geometry == "torus" else "hard-wall"
        grid = Grid1D(self.n_grid, self.length, boundary=boundary)
        coeffs = self.fourier if self.fourier is not None else _gaussian_fourier()
        v = make_bounded_potential({int(k): c for k, c in coeffs}, grid)
        V = np.zeros(grid.n) if self.geometry == "torus" else quadratic_trap(grid, self.omega)
        self.potential_ = v
        self.solution_ = solve_hartree(HartreeProblem(grid, V, v), tol=self.tol, max_iter=self.max_iter,
                                       n_modes=self.n_modes)
        self.phi_ = self.solution_.phi
        self.e_H_ = self.solution_.e_H
        self.mu_ = self.solution_.mu
        self.tau_ = self.solution_.tau
        self.mode_energies_ = self.solution_.eigenvalues
        return self

    def transform(self, X):
        """Coefficients of grid functions (rows of ``X``) in the excitation modes."""
        check_is_fitted(self, "solution_")
        X = np.atleast_2d(np.asarray(X))
        if X.shape[1] != self.n_grid:
            raise ValueError(f"expected rows of length {self.n_grid}, got {X.shape[1]}")
        U = self.solution_.modes
        return self.solution_.grid.spacing * X @ U.conj()


class ExcitationGroundState(BaseEstimator):
    """Ground state of the truncated excitation Hamiltonian.

    ``fit`` accepts a fitted :class:`HartreeMeanField` or a ``HartreeSolution``.
    """

    def __init__(self, N=50, M=14, variant="full", kernel_method="auto", tol=1e-10, seed=0, max_iter=2000):
        self.N = N
        self.M = M
        self.variant = variant
        self.kernel_method = kernel_method
        self.tol = tol
        self.seed = seed
        self.max_iter = max_iter

    def fit(self, X, y=None):
        if isinstance(X, HartreeMeanField):
            check_is_fitted(X, "solution_")
            sol, v = X.solution_, X.potential_
        elif hasattr(X, "phi") and hasattr(X, "problem"):
            sol, v = X, X.problem.potential
        else:
            raise TypeError("fit expects a fitted HartreeMeanField or a HartreeSolution")
        basis = FockBasis(sol.n_modes, self.M)
        H, ks = build_hamiltonian(sol, v, basis, N=self.N, variant=self.variant, method=self.kernel_method)
        gs = lanczos_ground_state(H, tol=self.tol, seed=self.seed, max_iter=self.max_iter)
        self.kernels_ = ks
        self.hamiltonian_ = H
        self.ground_state_ = gs
        self.energy_ = gs.energy
        self.sector_weights_ = sector_distribution(gs, source=self.variant).P
        return self

    def profile(self):
        check_is_fitted(self, "ground_state_")
        return sector_distribution(self.ground_state_, source=self.variant)


class DecayAnalyzer(BaseEstimator, TransformerMixin):
    """Exponential fit and windowed-difference certificate of sector weights.

    ``fit`` takes a 1-D array of ``P(l)``, a :class:`DecayProfile` or a
    fitted :class:`ExcitationGroundState`. ``transform`` maps rows of ``P``
    to the window sums ``F_L`` at ``l = 0..valid_max`` (NaN outside).
    """

    def __init__(self, fit_range=(2, 8), parity="even", L_max=10, sigma_min=2.0, L=2, margin=4):
        self.fit_range = fit_range
        self.parity = parity
        self.L_max = L_max
        self.sigma_min = sigma_min
        self.L = L
        self.margin = margin

    def _profile(self, X):
        if isinstance(X, DecayProfile):
            return X
        if isinstance(X, ExcitationGroundState):
            return X.profile()
        P = np.asarray(X, dtype=float)
        if P.ndim == 2 and P.shape[0] == 1:
            P = P[0]
        if P.ndim != 1:
            raise ValueError("expected a single row of sector weights")
        return DecayProfile(P, source="external", valid_max=max(len(P) - 1 - self.margin, 0))

    def fit(self, X, y=None):
        prof = self._profile(X)
        self.profile_ = prof
        self.fit_ = fit_decay_rate(prof, tuple(self.fit_range), self.parity)
        self.epsilon_ = self.fit_.epsilon
        self.r2_ = self.fit_.r2
        self.certificate_, self.table_ = certify(prof, self.L_max, self.sigma_min)
        return self

    def transform(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(X.shape, np.nan)
        for i, row in enumerate(X):
            prof = DecayProfile(row, source="external", valid_max=max(len(row) - 1 - self.margin, 0))
            ells, vals = compute_FL(prof, self.L)
            out[i, ells] = vals
        return out
