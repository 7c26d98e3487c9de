"""Sampling checks of the operator inequalities behind the decay estimate.

Explicit-constant bounds (K1, K2 for positive-type potentials, the K0 gap
and the Coulomb split) must hold with zero violations: each is an operator
inequality that survives compression to the truncated Fock space. Bounds
stated with an unspecified constant (K3, K4) report the smallest constant
consistent with the samples.

All blocks here are the bare operators ``K1 ... K4`` without the
``1/(N-1)`` factor or number functions.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_int, check_positive
from .fock import FockVector, random_sector_vector, write_vector
from .hamiltonian import KernelSet, assemble_blocks
from .potentials import radial_grid, residual_supnorm, yukawa_split

log = logging.getLogger(__name__)

VIOLATION_TOL = 1e-10
RATIO_RANGE = (0.1, 10.0)


@dataclass
class LemmaReport:
    """Outcome of one sampling check.

    ``worst_margin`` is ``min(RHS - LHS)`` over samples; ``empirical_constant``
    is the smallest constant consistent with every sample (C-form bounds).
    """

    lemma_id: str
    samples: int
    violations: int = 0
    worst_margin: float = math.inf
    empirical_constant: float = None
    parameters: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return self.violations == 0

    def to_dict(self):
        return {
            "lemma_id": self.lemma_id,
            "samples": self.samples,
            "violations": self.violations,
            "worst_margin": self.worst_margin,
            "empirical_constant": self.empirical_constant,
            "parameters": self.parameters,
            **self.extra,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True, default=float)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def persist_failures(self, directory):
        """Write every recorded failing sample as a Fock vector file; returns the paths."""
        import os

        paths = []
        for i, (vec, meta) in enumerate(self.failures):
            p = os.path.join(directory, f"{self.lemma_id}_failure_{i}.bdfv")
            write_vector(p, vec, meta)
            paths.append(p)
        return paths


class _Sampler:
    """Seeded sector vectors plus cached sector-to-sector sub-blocks."""

    def __init__(self, basis, seed, dtype=float):
        self.basis = basis
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype
        self._cache = {}

    def block(self, name, op, row, col):
        key = (name, row, col)
        if key not in self._cache:
            b = self.basis
            self._cache[key] = op[b.sector_slice(row), b.sector_slice(col)].tocsr()
        return self._cache[key]

    def vector(self, ell, norm=1.0):
        n = self.basis.sector_dim(ell)
        x = self.rng.standard_normal(n)
        if np.issubdtype(self.dtype, np.complexfloating):
            x = x + 1j * self.rng.standard_normal(n)
        return norm * x / np.linalg.norm(x)

    def ratio(self, lo=RATIO_RANGE[0], hi=RATIO_RANGE[1]):
        return math.exp(self.rng.uniform(math.log(lo), math.log(hi)))

    def embed(self, ell, x):
        full = np.zeros(self.basis.dim, dtype=x.dtype)
        full[self.basis.sector_slice(ell)] = x
        return FockVector(self.basis, full)


def _qf(B, x, y=None):
    y = x if y is None else y
    return complex(np.vdot(x, B @ y))


def _blocks(kernels, basis, blocks):
    return assemble_blocks(kernels, basis) if blocks is None else blocks


def _record(report, margin, sampler, payload, meta):
    report.worst_margin = min(report.worst_margin, margin)
    if margin < -VIOLATION_TOL:
        report.violations += 1
        if len(report.failures) < 10:
            for ell, x in payload:
                report.failures.append((sampler.embed(ell, x), dict(meta, sector=ell)))


def check_K1_bound(kernels, basis, sol=None, samples=1000, seed=0, blocks=None):
    """``|<xi, K1 xi>| <= ||v^2 * phi^2||_inf^(1/2) l ||xi||^2`` on random sector vectors."""
    check_int(samples, "samples", minimum=1)
    blocks = _blocks(kernels, basis, blocks)
    const = kernels.k1_constant
    s = _Sampler(basis, seed, kernels.K1.dtype)
    rep = LemmaReport("k1", samples, parameters={"m": basis.m, "M": basis.M, "seed": seed, "constant": const})
    for i in range(samples):
        ell = int(s.rng.integers(0, basis.M + 1))
        x = s.vector(ell, s.ratio())
        lhs = abs(_qf(s.block("K1", blocks["K1"], ell, ell), x))
        rhs = const * ell * float(np.vdot(x, x).real)
        _record(rep, rhs - lhs, s, [(ell, x)], {"sample": i})
    return rep


def _k2_terms(s, blocks, ell, x, y):
    K1l = s.block("K1", blocks["K1"], ell, ell)
    K1m = s.block("K1", blocks["K1"], ell - 2, ell - 2)
    K2 = s.block("K2", blocks["K2"], ell, ell - 2)
    return abs(_qf(K2, x, y)), _qf(K1l, x).real, _qf(K1m, y).real


def check_K2_bound(kernels, basis, sol=None, samples=1000, seed=0, blocks=None):
    """``4|<xi, K2 xi'>| <= <xi, K1 xi> + <xi', K1 xi'> + v(0) ||xi'||^2``.

    ``xi`` lives in sector ``l``, ``xi'`` in ``l-2``; norms are drawn with a
    log-uniform ratio in ``[0.1, 10]``. Odd-numbered samples test the adjoint
    form with the roles of the sectors exchanged, i.e. the pair
    ``(l+2, l)`` read through ``K2^dagger``.
    """
    check_int(samples, "samples", minimum=1)
    if basis.M < 2:
        raise ValueError("need M >= 2")
    blocks = _blocks(kernels, basis, blocks)
    v0 = kernels.v_origin
    s = _Sampler(basis, seed, kernels.K1.dtype)
    rep = LemmaReport("k2", samples, parameters={"m": basis.m, "M": basis.M, "seed": seed, "v0": v0})
    K2_adjoint = blocks["K2"].conj().T.tocsr()
    for i in range(samples):
        ell = int(s.rng.integers(2, basis.M + 1))
        x = s.vector(ell)
        y = s.vector(ell - 2, s.ratio())
        if i % 2:
            K2d = s.block("K2d", K2_adjoint, ell - 2, ell)
            lhs = 4 * abs(_qf(K2d, y, x))
            _, g, gp = _k2_terms(s, blocks, ell, x, y)
        else:
            t, g, gp = _k2_terms(s, blocks, ell, x, y)
            lhs = 4 * t
        rhs = g + gp + v0 * float(np.vdot(y, y).real)
        _record(rep, rhs - lhs, s, [(ell, x), (ell - 2, y)], {"sample": i})
    return rep


def check_K0_gap(H, tau=None, samples=1000, seed=0):
    """``K0 >= tau N``: per-sector diagonal minimum plus random sector vectors."""
    tau = H.tau if tau is None else tau
    check_positive(tau, "tau")
    basis = H.basis
    K0 = H.blocks["K0"]
    diag = K0.diagonal().real
    rep = LemmaReport("gap", samples, parameters={"m": basis.m, "M": basis.M, "seed": seed, "tau": tau})
    sector_min = []
    for ell in range(basis.M + 1):
        d = float(diag[basis.sector_slice(ell)].min())
        sector_min.append(d)
        rep.worst_margin = min(rep.worst_margin, d - tau * ell)
        if d - tau * ell < -VIOLATION_TOL:
            rep.violations += 1
    rep.extra["sector_minimum"] = sector_min
    s = _Sampler(basis, seed)
    for i in range(samples):
        ell = int(s.rng.integers(0, basis.M + 1))
        x = s.vector(ell)
        lhs = _qf(s.block("K0", K0, ell, ell), x).real
        _record(rep, lhs - tau * ell, s, [(ell, x)], {"sample": i})
    rep.samples = samples
    return rep


def _max_sector(basis, delta, N):
    dN = delta * N
    top = min(basis.M, int(math.floor(dN + 1e-12)))
    if top < 2:
        raise ValueError(f"delta N = {dN:g} leaves no sector with l >= 2")
    return dN, top


def _power_refine(B, x, steps, hermitian=False):
    for _ in range(steps):
        x = B @ x if hermitian else B.conj().T @ (B @ x)
        nrm = np.linalg.norm(x)
        if nrm == 0:
            break
        x = x / nrm
    return x


def check_K3_bound(kernels, basis, sol=None, delta=0.28, N=50, samples=1000, seed=0, blocks=None,
                   power_steps=6):
    """Smallest ``C`` with ``|<xi, K3 xi'>| <= sqrt(dN) (C l ||xi||^2 + (l-1) ||xi'||^2)``.

    ``xi'`` is drawn in sector ``l-1``, refined by a few power steps of
    ``K3^dagger K3`` and paired with the aligned ``xi = K3 xi' / ||K3 xi'||``
    so the samples concentrate near the supremum. Rescaling ``xi'`` turns a
    sample with unit vectors and overlap ``t`` into the per-sample constant
    ``t^2 / (4 dN l (l-1))``. The best fit with one common constant on both
    terms, ``t / (2 sqrt(dN l (l-1)))``, is reported as ``symmetric_constant``.
    """
    check_int(samples, "samples", minimum=1)
    dN, top = _max_sector(basis, delta, N)
    blocks = _blocks(kernels, basis, blocks)
    s = _Sampler(basis, seed, kernels.K1.dtype)
    rep = LemmaReport("k3", samples, parameters={"m": basis.m, "M": basis.M, "seed": seed, "delta": delta,
                                                 "N": N, "power_steps": power_steps})
    best = sym = 0.0
    per_sector = {}
    for i in range(samples):
        ell = int(s.rng.integers(2, top + 1))
        B = s.block("K3", blocks["K3"], ell, ell - 1)
        y = _power_refine(B, s.vector(ell - 1), power_steps)
        t = float(np.linalg.norm(B @ y))
        c = t * t / (4 * dN * ell * (ell - 1))
        best = max(best, c)
        sym = max(sym, t / (2 * math.sqrt(dN * ell * (ell - 1))))
        per_sector[ell] = max(per_sector.get(ell, 0.0), c)
    rep.empirical_constant = best
    rep.worst_margin = 0.0
    rep.extra["symmetric_constant"] = sym
    rep.extra["per_sector"] = {str(k): v for k, v in sorted(per_sector.items())}
    return rep


def check_K4_bound(kernels, basis, delta=0.28, N=50, samples=1000, seed=0, blocks=None, power_steps=6):
    """Smallest ``C`` with ``|<xi, K4 xi>| <= C dN l ||xi||^2``.

    Samples are refined by power steps of ``K4`` on the sector, which
    pushes them towards the eigenvector of largest modulus.
    """
    check_int(samples, "samples", minimum=1)
    dN, top = _max_sector(basis, delta, N)
    blocks = _blocks(kernels, basis, blocks)
    s = _Sampler(basis, seed, kernels.K1.dtype)
    rep = LemmaReport("k4", samples, parameters={"m": basis.m, "M": basis.M, "seed": seed, "delta": delta,
                                                 "N": N, "power_steps": power_steps})
    best = 0.0
    per_sector = {}
    for i in range(samples):
        ell = int(s.rng.integers(2, top + 1))
        B = s.block("K4", blocks["K4"], ell, ell)
        x = _power_refine(B, s.vector(ell), power_steps, hermitian=True)
        c = abs(_qf(B, x)) / (dN * ell)
        best = max(best, c)
        per_sector[ell] = max(per_sector.get(ell, 0.0), c)
    rep.empirical_constant = best
    rep.worst_margin = 0.0
    rep.extra["per_sector"] = {str(k): v for k, v in sorted(per_sector.items())}
    return rep


def constant_drift(small, large):
    """Relative change of the empirical constant between two reports."""
    a, b = small.empirical_constant, large.empirical_constant
    if max(a, b) == 0:
        return 0.0
    return abs(b - a) / max(a, b)


# ---------------------------------------------------------------------------
# Coulomb surrogate
# ---------------------------------------------------------------------------


def radial_coulomb(lam, r):
    """Sphere-averaged ``lam/|x-y|`` between shells of radii ``r`` and ``r'``."""
    return lam / np.maximum(r[:, None], r[None, :])


def radial_yukawa(lam, kappa, r):
    """Sphere-averaged ``lam exp(-|x-y|/kappa)/|x-y|``."""
    mu = 1.0 / kappa
    a, b = r[:, None], r[None, :]
    return lam * np.exp(-mu * np.abs(a - b)) * (-np.expm1(-2 * mu * np.minimum(a, b))) / (2 * mu * a * b)


@dataclass
class CoulombSurrogate:
    """Radial (s-wave) restriction of the 3D Coulomb problem.

    ``phi`` is a normalized Gaussian on a logarithmic radial grid and the
    modes are the next ``m`` radial functions ``r^(2j) phi``
    orthonormalized against ``phi``. Restricted to radial functions the
    sphere-averaged kernels are the exact 3D interactions, so the split
    ``v = v_kappa + v_perp`` carries over unchanged.
    """

    lam: float
    grid: object
    phi: np.ndarray
    modes: np.ndarray

    @property
    def m(self):
        return self.modes.shape[1]

    def kernels(self, V):
        """``(K1, K2)`` for the radial interaction matrix ``V``."""
        w = self.grid.volume_weights
        U = self.modes * w[:, None]
        K = self.phi[:, None] * V * self.phi[None, :]
        K1 = U.T @ K @ U
        K1 = 0.5 * (K1 + K1.T)
        # real modes: the pairing kernel has the same matrix elements
        return K1, K1.copy()

    def kernel_matrix(self, kind, kappa=None):
        r = self.grid.r
        if kind == "coulomb":
            return radial_coulomb(self.lam, r)
        if kind == "perp":
            return radial_yukawa(self.lam, kappa, r)
        if kind == "kappa":
            return radial_coulomb(self.lam, r) - radial_yukawa(self.lam, kappa, r)
        raise ValueError(kind)

    def hilbert_schmidt(self, V):
        """``(integral phi^2 V^2 phi^2)^(1/2)``: bounds the operator norm of the kernel."""
        w = self.grid.volume_weights
        rho = self.phi**2 * w
        return math.sqrt(float(rho @ (V * V) @ rho))

    def kernel_set(self, V, v_origin):
        K1, K2 = self.kernels(V)
        m = self.m
        return KernelSet(K1=K1, K2=K2, K3=np.zeros((m, m, m)), K4=np.zeros((m,) * 4), W=None,
                         mode_energies=np.zeros(m), v_origin=v_origin, method="radial")


def coulomb_surrogate(lam=1.0, width=1.0, m=3, n=512, kappa_min=0.125, r_max=None):
    check_positive(lam, "lam")
    check_positive(width, "width")
    r_max = 10.0 * width if r_max is None else r_max
    grid = radial_grid(kappa_min, r_max, n)
    phi = grid.normalize(np.exp(-grid.r**2 / (2 * width**2)))
    sw = np.sqrt(grid.volume_weights)
    cols = np.stack([(grid.r / width) ** (2 * j) * phi for j in range(m + 1)], axis=1)
    Q, R = np.linalg.qr(sw[:, None] * cols)
    Q = Q * np.sign(np.diag(R))[None, :]
    basis = Q / sw[:, None]
    return CoulombSurrogate(lam=lam, grid=grid, phi=basis[:, 0] * np.sign(basis[0, 0]), modes=basis[:, 1:])


def delta_sequence(lam, kappas, surrogate):
    """``delta(kappa) = ||(v_perp)^2 * phi^2||_inf^(1/2)``; must decrease with kappa."""
    deltas = [math.sqrt(residual_supnorm(lam, k, surrogate.phi, surrogate.grid)) for k in kappas]
    order = np.argsort(kappas)[::-1]
    ds = np.array(deltas)[order]
    if np.any(np.diff(ds) >= 0):
        raise ArithmeticError(f"delta(kappa) is not strictly decreasing as kappa decreases: {deltas}")
    return deltas


def check_K2_coulomb(lam=1.0, kappas=(1.0, 0.5, 0.25, 0.125), eps=None, M=6, samples=500, seed=0,
                     surrogate=None):
    """Split-based bound for the Coulomb pairing term on the radial surrogate.

    With ``g(l) = <xi^(l), K1 xi^(l)>`` and ``f(l) = l ||xi^(l)||^2`` the check is

        4|<xi, K2 xi'>| <= g(l) + g(l-2) + nu ||xi'||^2 + eps (f(l) + f(l-2))

    where ``kappa`` is the largest value in ``kappas`` with ``2 delta(kappa) <= eps``
    and ``nu = lam/kappa + delta(kappa)``. Both ingredients are checked too:
    the positive-type bound for ``v_kappa`` with ``v_kappa(0) = lam/kappa`` and
    ``|<xi, (K2 - K2_kappa) xi'>| <= delta l ||xi|| ||xi'||``.
    """
    from .fock import FockBasis

    sur = coulomb_surrogate(lam, kappa_min=min(kappas)) if surrogate is None else surrogate
    for k in kappas:
        yukawa_split(lam, k, sur.grid.r)
    deltas = delta_sequence(lam, kappas, sur)
    if eps is None:
        eps = 2 * deltas[int(np.argmin(kappas))]
    admissible = [(k, d) for k, d in zip(kappas, deltas) if 2 * d <= eps * (1 + 1e-12)]
    if not admissible:
        raise ValueError(f"no kappa in {list(kappas)} reaches 2 delta <= eps = {eps:g}")
    kappa, delta = max(admissible)
    nu = lam / kappa + delta
    V = sur.kernel_matrix("coulomb")
    Vk = sur.kernel_matrix("kappa", kappa)
    hs_perp = sur.hilbert_schmidt(sur.kernel_matrix("perp", kappa))
    basis = FockBasis(sur.m, M)
    full = assemble_blocks(sur.kernel_set(V, math.inf), basis)
    split = assemble_blocks(sur.kernel_set(Vk, lam / kappa), basis)
    s = _Sampler(basis, seed)
    rep = LemmaReport("k2c", samples, parameters={"lambda": lam, "kappa": kappa, "epsilon": eps, "nu": nu,
                                                  "delta": delta, "m": sur.m, "M": M, "seed": seed})
    rep.extra.update({"kappas": list(kappas), "deltas": deltas, "hilbert_schmidt_perp": hs_perp,
                      "yukawa_violations": 0, "remainder_violations": 0,
                      "yukawa_worst_margin": math.inf, "remainder_worst_margin": math.inf})
    for i in range(samples):
        ell = int(s.rng.integers(2, M + 1))
        x = s.vector(ell)
        y = s.vector(ell - 2, s.ratio())
        a2, b2 = float(np.vdot(x, x).real), float(np.vdot(y, y).real)
        t, g, gp = _k2_terms(s, full, ell, x, y)
        tk, gk, gkp = _k2_terms(s, split, ell, x, y)
        rhs = g + gp + nu * b2 + eps * (ell * a2 + (ell - 2) * b2)
        _record(rep, rhs - 4 * t, s, [(ell, x), (ell - 2, y)], {"sample": i})
        m1 = gk + gkp + (lam / kappa) * b2 - 4 * tk
        K2 = s.block("K2", full["K2"], ell, ell - 2)
        K2k = s.block("K2k", split["K2"], ell, ell - 2)
        rem = abs(_qf(K2, x, y) - _qf(K2k, x, y))
        m2 = delta * ell * math.sqrt(a2 * b2) - rem
        for key, mm in (("yukawa", m1), ("remainder", m2)):
            rep.extra[f"{key}_worst_margin"] = min(rep.extra[f"{key}_worst_margin"], mm)
            if mm < -VIOLATION_TOL:
                rep.extra[f"{key}_violations"] += 1
    return rep
