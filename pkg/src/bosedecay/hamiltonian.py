"""Kernels of the excitation Hamiltonian and its sparse Fock-space assembly.

With ``K(x, y) = phi(x) v(x - y) phi(y)`` and the mean-field subtracted
interaction

    W(x, y) = v(x - y) - (v*phi^2)(x) - (v*phi^2)(y) + <phi, (v*phi^2) phi>,

the mode-basis kernels are (``u_i`` orthonormal modes, ``q = 1 - |phi><phi|``)

    K1[i, j]       = <u_i, q K q u_j>
    K2[i, j]       = <u_i (x) u_j, (q (x) q) K>
    K3[i, j, k]    = integral conj(u_i u_j)(y1, y2) W(y1, y2) phi(y1) u_k(y2)
    K4[i, j, k, l] = integral conj(u_i u_j)(y1, y2) W(y1, y2) u_k(y1) u_l(y2)

and the Fock operators are ``K1 a+a``, ``1/2 K2 a+a+``, ``K3 a+a+a`` and
``1/2 K4 a+a+aa``. Number-dependent coefficients act on the ket sector.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._validation import check_int
from .fock import FockBasis
from .potentials import convolve_with_density, interaction_matrix, square_convolution_supnorm

log = logging.getLogger(__name__)

K4_THRESHOLD = 1e-14
FOURIER_TOL = 1e-9
SHIFTS = {"K0": 0, "K1": 0, "K2": 2, "K3": 1, "K4": 0}


@dataclass
class KernelSet:
    """Mode-basis kernels plus the scalars the lemma checks need."""

    K1: np.ndarray
    K2: np.ndarray
    K3: np.ndarray
    K4: np.ndarray
    W: np.ndarray
    mode_energies: np.ndarray
    momenta: np.ndarray = None
    v_origin: float = 0.0
    k1_constant: float = 0.0
    method: str = "quadrature"
    period: float = None

    @property
    def m(self):
        return self.K1.shape[0]

    @property
    def is_complex(self):
        return np.iscomplexobj(self.K1)

    def K4_entries(self, threshold=K4_THRESHOLD):
        """Sparse view ``[(i, j, k, l, value), ...]`` of K4."""
        idx = np.argwhere(np.abs(self.K4) > threshold)
        return [(*map(int, t), self.K4[tuple(t)]) for t in idx]

    def check_symmetries(self, atol=1e-12):
        scale = max(1.0, float(np.max(np.abs(self.K1), initial=0.0)))
        problems = []
        if np.max(np.abs(self.K1 - self.K1.conj().T), initial=0.0) > atol * scale:
            problems.append("K1 is not Hermitian")
        if np.max(np.abs(self.K2 - self.K2.T), initial=0.0) > atol * scale:
            problems.append("K2 is not symmetric")
        if np.max(np.abs(self.K4 - self.K4.transpose(1, 0, 3, 2)), initial=0.0) > atol * scale:
            problems.append("K4 is not symmetric under the joint swap (12)(34)")
        return problems


def _maybe_real(arr, scale, tol=1e-12):
    if np.iscomplexobj(arr) and np.max(np.abs(arr.imag), initial=0.0) <= tol * max(scale, 1.0):
        return np.ascontiguousarray(arr.real)
    return arr


def _quadrature_kernels(sol, v, m):
    grid = sol.grid
    w = grid.spacing
    phi = sol.phi
    U = sol.modes[:, :m]
    # q acts on the modes; they are orthogonal to phi up to rounding
    U = U - np.outer(phi, w * phi @ U)
    Ub = U.conj()
    V = interaction_matrix(v, grid)
    K = phi[:, None] * V * phi[None, :]
    A = convolve_with_density(v, phi * phi, grid, method="quadrature")
    c = w * phi @ (A * phi)
    W = V - A[:, None] - A[None, :] + c
    K1 = w * w * Ub.T @ K @ U
    K2 = w * w * Ub.T @ K @ Ub
    # K3[i,j,k] = sum_ab w^2 conj(U_ai) phi_a W_ab conj(U_bj) U_bk
    left = w * Ub.T @ (phi[:, None] * W)  # (m, n)
    K3 = w * np.einsum("ib,bj,bk->ijk", left, Ub, U, optimize=True)
    F = (Ub[:, :, None] * U[:, None, :]).reshape(grid.n, m * m)  # F[a, (i,k)]
    K4 = (w * w * F.T @ W @ F).reshape(m, m, m, m).transpose(0, 2, 1, 3)
    return K1, K2, K3, K4, W


def _fourier_kernels(sol, v, m):
    L = sol.grid.length
    p = np.asarray(sol.momenta[:m])
    vh = v.coefficient
    K1 = np.diag([vh(pi) / L for pi in p]).astype(float)
    K2 = np.array([[vh(pi) / L if pj == -pi else 0.0 for pj in p] for pi in p])
    K3 = np.zeros((m, m, m))
    K4 = np.zeros((m, m, m, m))
    for i, pi in enumerate(p):
        for j, pj in enumerate(p):
            for k, pk in enumerate(p):
                if pk == pi + pj:
                    K3[i, j, k] = vh(pi) / L
                for l, pl in enumerate(p):
                    val = vh(pi - pk) / L if pi + pj == pk + pl else 0.0
                    if i == k and j == l:
                        val -= vh(0) / L
                    K4[i, j, k, l] = val
    return K1, K2, K3, K4


def compute_kernels(sol, v, m=None, method="auto"):
    """Kernel set in the first ``m`` excitation modes of ``sol``.

    ``method='quadrature'`` integrates on the grid. ``method='auto'`` also
    evaluates the closed-form plane-wave kernels when ``sol`` is a
    homogeneous torus with momentum-labelled modes, requires both routes to
    agree to 1e-9 and returns the closed form.
    """
    m = sol.n_modes if m is None else check_int(m, "m", minimum=1, maximum=sol.n_modes)
    if not v.is_bounded:
        raise ValueError("compute_kernels needs a bounded potential; Coulomb enters via the lemma checks")
    grid = sol.grid
    w = grid.spacing
    U = sol.modes[:, :m]
    gram = w * U.conj().T @ U
    if np.max(np.abs(gram - np.eye(m))) > 1e-10:
        raise ValueError("excitation modes are not orthonormal")
    if np.max(np.abs(w * sol.phi @ U)) > 1e-10:
        raise ValueError("excitation modes are not orthogonal to phi")

    K1, K2, K3, K4, W = _quadrature_kernels(sol, v, m)
    used = "quadrature"
    fourier_ok = sol.problem.homogeneous and sol.momenta is not None
    if method == "fourier" and not fourier_ok:
        raise ValueError("the Fourier fast path needs a homogeneous torus with momentum modes")
    if method in ("auto", "fourier") and fourier_ok:
        exact = _fourier_kernels(sol, v, m)
        for name, a, b in zip(("K1", "K2", "K3", "K4"), (K1, K2, K3, K4), exact):
            dev = np.abs(a - b)
            if dev.size and dev.max() > FOURIER_TOL:
                where = np.unravel_index(np.argmax(dev), dev.shape)
                raise ArithmeticError(
                    f"{name}: quadrature and Fourier kernels differ by {dev.max():.3g} at {where}")
        K1, K2, K3, K4 = exact
        used = "fourier"
    elif method not in ("auto", "quadrature", "fourier"):
        raise ValueError(f"unknown kernel method {method!r}")

    scale = max(float(np.max(np.abs(K1), initial=0.0)), float(np.max(np.abs(K4), initial=0.0)))
    K1, K2, K3, K4 = (_maybe_real(a, scale) for a in (K1, K2, K3, K4))
    K4 = np.where(np.abs(K4) > K4_THRESHOLD, K4, 0.0)
    ks = KernelSet(
        K1=K1, K2=K2, K3=K3, K4=K4, W=W,
        mode_energies=np.asarray(sol.eigenvalues[:m], dtype=float),
        momenta=None if sol.momenta is None else np.asarray(sol.momenta[:m]),
        v_origin=v.value_at_origin(),
        k1_constant=math.sqrt(square_convolution_supnorm(v, sol.phi, grid)),
        method=used,
        period=v.period,
    )
    problems = ks.check_symmetries()
    if problems:
        raise ArithmeticError("; ".join(problems))
    return ks


# ---------------------------------------------------------------------------
# Fock-space assembly
# ---------------------------------------------------------------------------


def _as_dtype(kernels):
    return complex if kernels.is_complex else float


def _pair_products(ops):
    m = len(ops)
    return {(i, j): (ops[i] @ ops[j]).tocsr() for i in range(m) for j in range(i, m)}


def _combine(terms, shape, dtype):
    out = sp.csr_matrix(shape, dtype=dtype)
    for coeff, mat in terms:
        if coeff != 0:
            out = out + coeff * mat
    return out


def check_shift_signature(op, basis, shift, name="block"):
    """Raise if a nonzero entry of ``op`` does not move the sector by exactly ``shift``."""
    coo = op.tocoo()
    nz = coo.data != 0
    bad = basis.sector[coo.row[nz]] - basis.sector[coo.col[nz]] != shift
    if np.any(bad):
        k = np.argmax(bad)
        raise AssertionError(
            f"{name}: entry ({coo.row[nz][k]}, {coo.col[nz][k]}) shifts the sector by "
            f"{basis.sector[coo.row[nz][k]] - basis.sector[coo.col[nz][k]]}, expected {shift}")


def assemble_blocks(kernels, basis, mode_energies=None):
    """Sparse ``{'K0', ..., 'K4'}`` in the Fock basis; each block's sector shift is verified."""
    m = kernels.m
    if basis.m != m:
        raise ValueError(f"basis has {basis.m} modes, kernels have {m}")
    eps = kernels.mode_energies if mode_energies is None else np.asarray(mode_energies)
    dtype = _as_dtype(kernels)
    shape = (basis.dim, basis.dim)
    a = [basis.annihilator(j).astype(dtype) for j in range(m)]
    ad = [basis.creator(j).astype(dtype) for j in range(m)]
    C = _pair_products(ad)  # a+_i a+_j, i <= j
    D = _pair_products(a)   # a_k a_l, k <= l

    blocks = {"K0": sp.diags((basis.states @ eps).astype(dtype), format="csr")}

    K1 = kernels.K1
    blocks["K1"] = _combine(
        [(1.0, _combine([(K1[i, j], ad[i]) for i in range(m)], shape, dtype) @ a[j]) for j in range(m)],
        shape, dtype)

    K2 = kernels.K2
    blocks["K2"] = _combine(
        [(0.5 * (K2[i, j] + K2[j, i]) if i != j else 0.5 * K2[i, i], C[i, j]) for (i, j) in C],
        shape, dtype)

    K3 = kernels.K3
    k3_terms = []
    for k in range(m):
        left = _combine([((K3[i, j, k] + K3[j, i, k]) if i != j else K3[i, i, k], C[i, j]) for (i, j) in C],
                        shape, dtype)
        k3_terms.append((1.0, left @ a[k]))
    blocks["K3"] = _combine(k3_terms, shape, dtype)

    K4 = kernels.K4
    k4_terms = []
    for (k, l) in D:
        coeffs = []
        for (i, j) in C:
            c = 0.0
            for (ii, jj) in {(i, j), (j, i)}:
                for (kk, ll) in {(k, l), (l, k)}:
                    c += K4[ii, jj, kk, ll]
            coeffs.append((0.5 * c, C[i, j]))
        if any(abs(c) > K4_THRESHOLD for c, _ in coeffs):
            k4_terms.append((1.0, _combine(coeffs, shape, dtype) @ D[k, l]))
    blocks["K4"] = _combine(k4_terms, shape, dtype)

    for name, op in blocks.items():
        op.eliminate_zeros()
        check_shift_signature(op, basis, SHIFTS[name], name)
    return blocks


def coefficient_functions(N):
    """The number-dependent prefactors ``(a, b, c)`` as vectorized callables."""
    def a(ell):
        return N - np.asarray(ell, dtype=float)

    def b(ell):
        ell = np.asarray(ell, dtype=float)
        return np.sqrt(np.clip((N - ell) * (N - ell - 1), 0.0, None))

    def c(ell):
        return np.sqrt(np.clip(N - np.asarray(ell, dtype=float), 0.0, None))

    return a, b, c


@dataclass
class ExcitationHamiltonian:
    """Assembled excitation Hamiltonian (``variant='full'``) or its quadratic part."""

    basis: FockBasis
    blocks: dict
    matrix: sp.csr_matrix
    variant: str
    N: int = None
    tau: float = None
    momenta: np.ndarray = None
    parts: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.basis.dim

    @property
    def coeffs(self):
        return coefficient_functions(self.N) if self.N is not None else None

    def hermiticity_defect(self):
        diff = self.matrix - self.matrix.conj().T
        return float(np.max(np.abs(diff.data), initial=0.0))

    def momentum_commutator_norm(self):
        """``max |[H, P]|`` entry for the total momentum ``P`` (requires momentum labels)."""
        if self.momenta is None:
            raise ValueError("modes carry no momentum labels")
        ptot = self.basis.states @ np.asarray(self.momenta)
        coo = self.matrix.tocoo()
        return float(np.max(np.abs(coo.data * (ptot[coo.col] - ptot[coo.row])), initial=0.0))

    def coupling(self, name):
        """The block as it enters the matrix, including coefficients and the 1/(N-1) factor."""
        return self.parts[name]


def _scale_columns(op, values):
    return (op @ sp.diags(values, format="csr")).tocsr()


def assemble_full(N, blocks, basis, tau=None, momenta=None):
    """``H = K0 + (N-1)^-1 [K1 a(N) + (K2 b(N) + h.c.) + (K3 c(N) + h.c.) + K4]``.

    The number functions are evaluated on the sector the block acts on
    (the ket), so the ``l-2 -> l`` element of the ``K2`` term carries
    ``b(l-2)`` and its adjoint ``b(l)``.
    """
    N = check_int(N, "N", minimum=2)
    if N <= basis.M:
        raise ValueError(f"need N > M (particle number {N} must exceed the cutoff {basis.M})")
    a, b, c = coefficient_functions(N)
    ell = basis.sector
    g = 1.0 / (N - 1)
    parts = {
        "K0": blocks["K0"],
        "K1": g * _scale_columns(blocks["K1"], a(ell)),
        "K2": g * _scale_columns(blocks["K2"], b(ell)),
        "K3": g * _scale_columns(blocks["K3"], c(ell)),
        "K4": g * blocks["K4"],
    }
    H = (parts["K0"] + parts["K1"] + parts["K2"] + parts["K2"].conj().T
         + parts["K3"] + parts["K3"].conj().T + parts["K4"]).tocsr()
    H.eliminate_zeros()
    ham = ExcitationHamiltonian(basis=basis, blocks=blocks, matrix=H, variant="full", N=N, tau=tau,
                                momenta=momenta, parts=parts)
    defect = ham.hermiticity_defect()
    if defect > 1e-12:
        raise ArithmeticError(f"assembled Hamiltonian is not Hermitian (defect {defect:.3g})")
    return ham


def assemble_bogoliubov(blocks, basis, tau=None, momenta=None):
    """Quadratic approximation ``K0 + K1 + K2 + K2^dagger`` (no N dependence)."""
    parts = {"K0": blocks["K0"], "K1": blocks["K1"], "K2": blocks["K2"],
             "K3": sp.csr_matrix(blocks["K3"].shape, dtype=blocks["K3"].dtype),
             "K4": sp.csr_matrix(blocks["K4"].shape, dtype=blocks["K4"].dtype)}
    H = (blocks["K0"] + blocks["K1"] + blocks["K2"] + blocks["K2"].conj().T).tocsr()
    H.eliminate_zeros()
    ham = ExcitationHamiltonian(basis=basis, blocks=blocks, matrix=H, variant="bogoliubov", tau=tau,
                                momenta=momenta, parts=parts)
    defect = ham.hermiticity_defect()
    if defect > 1e-12:
        raise ArithmeticError(f"Bogoliubov Hamiltonian is not Hermitian (defect {defect:.3g})")
    return ham


def build_hamiltonian(sol, v, basis, N=None, variant="full", method="auto"):
    """Kernels, blocks and assembly in one call."""
    kernels = compute_kernels(sol, v, basis.m, method=method)
    blocks = assemble_blocks(kernels, basis)
    momenta = kernels.momenta
    if variant == "full":
        ham = assemble_full(N, blocks, basis, tau=sol.tau, momenta=momenta)
    elif variant == "bogoliubov":
        ham = assemble_bogoliubov(blocks, basis, tau=sol.tau, momenta=momenta)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return ham, kernels


def write_operator(path, op, header=None):
    """Coordinate text format: a ``# {json}`` header line then ``row col value`` lines."""
    import json

    coo = op.tocoo()
    head = {"shape": list(op.shape), "nnz": int(coo.nnz), "dtype": str(op.dtype)}
    head.update(header or {})
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(head, sort_keys=True) + "\n")
        if np.iscomplexobj(coo.data):
            for k in order:
                z = coo.data[k]
                fh.write(f"{coo.row[k]} {coo.col[k]} {z.real:.17g} {z.imag:.17g}\n")
        else:
            for k in order:
                fh.write(f"{coo.row[k]} {coo.col[k]} {coo.data[k]:.17g}\n")


def read_operator(path):
    import json

    with open(path) as fh:
        head = json.loads(fh.readline()[1:])
        data = np.loadtxt(fh, ndmin=2)
    shape = tuple(head["shape"])
    if data.size == 0:
        return sp.csr_matrix(shape), head
    vals = data[:, 2] + 1j * data[:, 3] if data.shape[1] == 4 else data[:, 2]
    op = sp.csr_matrix((vals, (data[:, 0].astype(int), data[:, 1].astype(int))), shape=shape)
    return op, head


def sector_minimum(op, basis, sectors, dense_limit=3000):
    """Smallest eigenvalue of a sector-preserving block on each requested sector."""
    from scipy.sparse.linalg import eigsh

    out = {}
    for ell in sectors:
        sl = basis.sector_slice(ell)
        B = op[sl, sl]
        if B.shape[0] <= dense_limit:
            out[int(ell)] = float(np.linalg.eigvalsh(B.toarray())[0])
        else:
            out[int(ell)] = float(eigsh(B, k=1, which="SA", tol=1e-12)[0][0])
    return out
