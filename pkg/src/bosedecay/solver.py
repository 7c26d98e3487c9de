"""Ground states of the excitation Hamiltonian.

Lanczos with full reorthogonalization for the sparse problem, dense
diagonalization as the small-instance oracle, and the closed-form
Bogoliubov diagonalization of the quadratic part on a homogeneous torus.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from ._validation import ConvergenceError, check_int, check_positive
from .fock import FockVector, write_vector

log = logging.getLogger(__name__)

DENSE_LIMIT = 5000


@dataclass
class GroundState:
    """Lowest eigenpair of an excitation Hamiltonian.

    ``energy`` is ``E_N - N e_H`` for the full Hamiltonian.
    """

    energy: float
    vector: FockVector
    residual: float
    meta: dict = field(default_factory=dict)

    @property
    def basis(self):
        return self.vector.basis

    def save(self, path):
        meta = {"energy": self.energy, "residual": self.residual}
        meta.update({k: v for k, v in self.meta.items() if k != "ritz_history"})
        write_vector(path, self.vector, meta)


def _unwrap(H, basis=None):
    if hasattr(H, "matrix"):
        return H.matrix, H.basis
    return sp.csr_matrix(H), basis


def _fix_phase(x):
    k = 0 if abs(x[0]) > 1e-8 else int(np.argmax(np.abs(x)))
    return x * (abs(x[k]) / x[k])


def _hermiticity_defect(A):
    d = A - A.conj().T
    return float(np.max(np.abs(d.data), initial=0.0)) if sp.issparse(d) else float(np.max(np.abs(d)))


def lanczos_ground_state(H, tol=1e-10, seed=0, max_iter=2000, krylov=150, noise=1e-3, basis=None):
    """Lowest eigenpair by restarted Lanczos with full reorthogonalization.

    Parameters
    ----------
    H : ExcitationHamiltonian or sparse matrix
        With a bare matrix pass ``basis`` to get a :class:`FockVector` back.
    tol : float
        Target for the true residual ``||H x - E x||``.
    seed : int
        Seeds the noise added to the vacuum start vector.
    max_iter : int
        Total matrix-vector product budget.
    krylov : int
        Krylov dimension per cycle; the cycle restarts from the current Ritz
        vector when it is exhausted.

    Returns
    -------
    GroundState
    """
    check_positive(tol, "tol")
    check_int(max_iter, "max_iter", minimum=1)
    A, basis = _unwrap(H, basis)
    n = A.shape[0]
    defect = _hermiticity_defect(A)
    if defect > 1e-10:
        raise ValueError(f"Lanczos needs a Hermitian operator (defect {defect:.3g})")
    dtype = np.result_type(A.dtype, float)
    rng = np.random.default_rng(seed)
    x = noise * rng.standard_normal(n).astype(dtype)
    x[0] += 1.0
    x /= np.linalg.norm(x)

    if n == 1:
        e = float(np.real(A[0, 0]))
        return _result(e, np.ones(1, dtype=dtype), 0.0, basis, {"iterations": 1, "seed": seed, "tol": tol})

    history = []
    matvecs = 0
    krylov = min(krylov, n)
    theta = None
    while True:
        V = np.zeros((krylov + 1, n), dtype=dtype)
        alphas, betas = [], []
        V[0] = x
        converged = False
        for j in range(krylov):
            w = A @ V[j]
            matvecs += 1
            a = float(np.real(np.vdot(V[j], w)))
            w = w - a * V[j] - (betas[-1] * V[j - 1] if j else 0.0)
            for _ in range(2):
                w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
            b = float(np.linalg.norm(w))
            alphas.append(a)
            ritz, S = sla.eigh_tridiagonal(np.array(alphas), np.array(betas)) if j else (np.array([a]), np.ones((1, 1)))
            theta = float(ritz[0])
            est = abs(b * S[-1, 0])
            history.append(theta)
            invariant = b <= 1e-14 * max(1.0, abs(theta))
            if est <= 0.1 * tol or invariant or j == krylov - 1 or matvecs >= max_iter:
                x = S[:, 0] @ V[: j + 1]
                x /= np.linalg.norm(x)
                r = A @ x - theta * x
                res = float(np.linalg.norm(r))
                second = float(ritz[1]) if len(ritz) > 1 else None
                if res <= tol:
                    converged = True
                    break
                if invariant or est <= 0.1 * tol:
                    # the Ritz estimate lied (rounding); restart from x
                    break
                if matvecs >= max_iter:
                    raise ConvergenceError(
                        f"Lanczos did not reach tol={tol:g} in {max_iter} products", residual=res,
                        history=history)
            betas.append(b)
            V[j + 1] = w / b
        if converged:
            break
        if matvecs >= max_iter:
            raise ConvergenceError(f"Lanczos did not reach tol={tol:g} in {max_iter} products",
                                   residual=res, history=history)
        log.debug("Lanczos restart after %d products, residual %.3g", matvecs, res)
    meta = {"iterations": matvecs, "seed": seed, "tol": tol, "ritz_history": history, "second_ritz": second}
    return _result(theta, x, res, basis, meta)


def _result(energy, x, res, basis, meta):
    x = _fix_phase(x)
    if basis is None:
        raise ValueError("a basis is needed to wrap the ground-state vector")
    if not np.iscomplexobj(x) or np.max(np.abs(x.imag), initial=0.0) == 0.0:
        x = np.real(x)
    return GroundState(energy=float(energy), vector=FockVector(basis, x), residual=float(res), meta=meta)


def dense_ground_state(H, basis=None):
    """Full eigendecomposition oracle (dimension at most 5000)."""
    A, basis = _unwrap(H, basis)
    n = A.shape[0]
    if n > DENSE_LIMIT:
        raise MemoryError(f"dense oracle limited to dimension {DENSE_LIMIT}, got {n}")
    dense = A.toarray()
    vals, vecs = np.linalg.eigh(0.5 * (dense + dense.conj().T))
    x = vecs[:, 0]
    res = float(np.linalg.norm(dense @ x - vals[0] * x))
    meta = {"iterations": 0, "seed": None, "tol": None,
            "second_ritz": float(vals[1]) if n > 1 else None}
    return _result(vals[0], x, res, basis, meta)


# ---------------------------------------------------------------------------
# Bogoliubov oracle
# ---------------------------------------------------------------------------


@dataclass
class BogoliubovOracle:
    """Closed-form ground state data of the quadratic Hamiltonian.

    Attributes
    ----------
    pairs : list of (p, i, j)
        Momentum ``p > 0`` and the mode indices of ``+p`` and ``-p``.
    alpha : ndarray
        Squeezing ratio ``alpha_p = B / (A + omega)`` per pair.
    pair_energies : ndarray
        ``omega_p - A_p`` per pair (each <= 0).
    energy : float
    P : ndarray
        Sector distribution ``P(l)``, ``l = 0..truncation``.
    deficit : float
        ``1 - sum(P)``, the mass cut off by the truncation.
    """

    pairs: list
    A: np.ndarray
    B: np.ndarray
    alpha: np.ndarray
    pair_energies: np.ndarray
    energy: float
    P: np.ndarray
    deficit: float


def pair_distribution(alpha, truncation):
    """``P(2n) = (1 - alpha^2) alpha^(2n)``, zero on odd sectors."""
    P = np.zeros(truncation + 1)
    a2 = alpha * alpha
    ells = np.arange(0, truncation + 1, 2)
    P[ells] = (1 - a2) * a2 ** (ells // 2)
    return P


def bogoliubov_oracle(kernels, mode_momenta=None, truncation=40, mode_energies=None):
    """Diagonalize the quadratic Hamiltonian pair by pair.

    Each pair ``(p, -p)`` contributes ``A (n_p + n_-p) + B (a+_p a+_-p + h.c.)``
    with ``A = eps_p + K1[p, p]`` and ``B = K2[p, -p]``; its ground state is a
    two-mode squeezed vacuum with energy ``sqrt(A^2 - B^2) - A`` and
    ``P(2n) = (1 - alpha^2) alpha^(2n)``, ``alpha = B / (A + sqrt(A^2 - B^2))``.
    """
    check_int(truncation, "truncation", minimum=0)
    p = np.asarray(kernels.momenta if mode_momenta is None else mode_momenta)
    eps = np.asarray(kernels.mode_energies if mode_energies is None else mode_energies, dtype=float)
    K1, K2 = kernels.K1, kernels.K2
    m = len(p)
    if m != kernels.m:
        raise ValueError("one momentum label per mode is required")
    off = K1 - np.diag(np.diag(K1))
    if np.max(np.abs(off), initial=0.0) > 1e-10:
        raise ValueError("the oracle needs a diagonal K1 (homogeneous torus)")
    index = {int(q): i for i, q in enumerate(p)}
    if len(index) != m or 0 in index:
        raise ValueError("momentum labels must be distinct and nonzero")
    pairs = []
    for q in sorted(k for k in index if k > 0):
        if -q not in index:
            raise ValueError(f"mode with momentum {q} has no partner {-q}")
        pairs.append((q, index[q], index[-q]))
    if 2 * len(pairs) != m:
        raise ValueError("every negative momentum needs a positive partner")
    allowed = np.zeros_like(K2, dtype=bool)
    for _, i, j in pairs:
        allowed[i, j] = allowed[j, i] = True
    if np.max(np.abs(np.where(allowed, 0.0, K2)), initial=0.0) > 1e-10:
        raise ValueError("K2 couples modes outside the (p, -p) pairs")

    A, B, alpha, energies = [], [], [], []
    for q, i, j in pairs:
        a_i, a_j = eps[i] + np.real(K1[i, i]), eps[j] + np.real(K1[j, j])
        if abs(a_i - a_j) > 1e-10 * max(1.0, abs(a_i)):
            raise ValueError(f"pair p={q} is not balanced: A_p={a_i:.12g}, A_-p={a_j:.12g}")
        b = 0.5 * (K2[i, j] + K2[j, i])
        b = float(np.real(b)) if np.isrealobj(b) or abs(np.imag(b)) < 1e-14 else b
        if abs(b) >= a_i:
            raise ValueError(f"pair p={q} is unstable: |B|={abs(b):.6g} >= A={a_i:.6g}")
        omega = math.sqrt(a_i * a_i - abs(b) ** 2)
        A.append(a_i)
        B.append(abs(b))
        alpha.append(abs(b) / (a_i + omega))
        energies.append(omega - a_i)

    P = np.zeros(truncation + 1)
    P[0] = 1.0
    for al in alpha:
        P = np.convolve(P, pair_distribution(al, truncation))[: truncation + 1]
    return BogoliubovOracle(pairs=pairs, A=np.array(A), B=np.array(B), alpha=np.array(alpha),
                            pair_energies=np.array(energies), energy=float(np.sum(energies)), P=P,
                            deficit=float(1.0 - P.sum()))
