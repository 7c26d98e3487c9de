"""Truncated bosonic Fock space over ``m`` excitation modes.

States are occupation vectors ``(n_1, ..., n_m)`` with total occupation
``sum n_j <= M``, ordered by sector ``l = sum n_j`` and lexicographically
inside a sector. Ladder operators are sparse CSR matrices in that basis;
the creation operator is the transpose of the annihilation operator, i.e.
the compression of ``a_j^*`` to the truncated space.
"""

import json
import struct
from dataclasses import dataclass
from functools import cached_property
from math import comb

import numpy as np
import scipy.sparse as sp

from ._validation import check_int

ORDERING = "sector-lex"
_MAGIC = b"BDFV"


def _compositions(total, parts):
    """All ``parts``-tuples of non-negative ints summing to ``total``, lexicographic."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


class FockBasis:
    """Occupation-number basis with a total-occupation cutoff.

    Parameters
    ----------
    m : int
        Number of modes.
    M : int
        Cutoff on the total occupation.
    max_dim : int
        Memory guard; a ``MemoryError`` naming the dimension is raised when
        ``binomial(M + m, m)`` exceeds it.
    """

    def __init__(self, m, M, max_dim=2_000_000):
        self.m = check_int(m, "m", minimum=1)
        self.M = check_int(M, "M", minimum=0)
        dim = comb(M + m, m)
        if dim > max_dim:
            raise MemoryError(f"Fock basis dimension {dim} exceeds the budget {max_dim}")
        states = [s for ell in range(M + 1) for s in _compositions(ell, m)]
        self.states = np.array(states, dtype=np.int64).reshape(dim, m)
        self.sector = self.states.sum(axis=1)
        self.sector_offsets = np.searchsorted(self.sector, np.arange(M + 2))
        self._radix = np.int64(M + 1) ** np.arange(m, dtype=np.int64)
        keys = self.states @ self._radix
        self._order = np.argsort(keys)
        self._sorted_keys = keys[self._order]

    def __len__(self):
        return len(self.states)

    @property
    def dim(self):
        return len(self.states)

    def __repr__(self):
        return f"FockBasis(m={self.m}, M={self.M}, dim={self.dim})"

    def sector_slice(self, ell):
        return slice(self.sector_offsets[ell], self.sector_offsets[ell + 1])

    def sector_dim(self, ell):
        return int(self.sector_offsets[ell + 1] - self.sector_offsets[ell])

    def index(self, occupations):
        """Positions of occupation vectors (rows of a 2D array, or one tuple); -1 when absent."""
        occ = np.atleast_2d(np.asarray(occupations, dtype=np.int64))
        valid = np.all(occ >= 0, axis=1) & (occ.sum(axis=1) <= self.M)
        keys = occ @ self._radix
        pos = np.searchsorted(self._sorted_keys, keys)
        pos = np.clip(pos, 0, self.dim - 1)
        found = valid & (self._sorted_keys[pos] == keys)
        out = np.where(found, self._order[pos], -1)
        return int(out[0]) if np.ndim(occupations) == 1 else out

    @cached_property
    def _annihilators(self):
        return [self._build_annihilator(j) for j in range(self.m)]

    def _build_annihilator(self, j):
        occ = self.states[:, j]
        cols = np.nonzero(occ > 0)[0]
        lowered = self.states[cols].copy()
        lowered[:, j] -= 1
        rows = self.index(lowered)
        vals = np.sqrt(occ[cols].astype(float))
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.dim, self.dim))

    def annihilator(self, j):
        return self._annihilators[j]

    def creator(self, j):
        return self._annihilators[j].T.tocsr()

    def number_operator(self):
        return sp.diags(self.sector.astype(float), format="csr")

    def momentum_operator(self, momenta):
        """Diagonal total momentum ``sum_j p_j n_j`` for integer mode labels."""
        momenta = np.asarray(momenta)
        if momenta.shape != (self.m,):
            raise ValueError("need one momentum label per mode")
        return sp.diags((self.states @ momenta).astype(float), format="csr")

    def sector_table(self):
        """Rows ``(l, offset, dimension)``."""
        return [(ell, int(self.sector_offsets[ell]), self.sector_dim(ell)) for ell in range(self.M + 1)]

    def write_sector_table(self, path):
        with open(path, "w") as fh:
            fh.write("sector,offset,dimension\n")
            for row in self.sector_table():
                fh.write("%d,%d,%d\n" % row)


def build_basis(m, M, max_dim=2_000_000):
    return FockBasis(m, M, max_dim=max_dim)


def ladder_elements(basis, j, kind):
    """Sparse ``a_j`` (``kind='annihilate'``) or ``a_j^*`` (``kind='create'``)."""
    check_int(j, "j", minimum=0, maximum=basis.m - 1)
    if kind == "annihilate":
        return basis.annihilator(j)
    if kind == "create":
        return basis.creator(j)
    raise ValueError(f"kind must be 'create' or 'annihilate', got {kind!r}")


@dataclass
class FockVector:
    """Amplitudes over a :class:`FockBasis`."""

    basis: FockBasis
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes)
        if self.amplitudes.shape != (self.basis.dim,):
            raise ValueError("amplitude vector does not match the basis dimension")

    def norm(self):
        return float(np.linalg.norm(self.amplitudes))

    def sector(self, ell):
        return self.amplitudes[self.basis.sector_slice(ell)]

    def sector_norms(self):
        """``||x^(l)||^2`` for ``l = 0..M``."""
        sq = np.abs(self.amplitudes) ** 2
        return np.add.reduceat(sq, self.basis.sector_offsets[:-1]) if self.basis.dim else sq

    def save(self, path, meta=None):
        write_vector(path, self, meta)


def sector_project(x, ell):
    """Copy of ``x`` with every amplitude outside sector ``ell`` set to zero."""
    check_int(ell, "ell", minimum=0, maximum=x.basis.M)
    out = np.zeros_like(x.amplitudes)
    sl = x.basis.sector_slice(ell)
    out[sl] = x.amplitudes[sl]
    return FockVector(x.basis, out)


def vacuum(basis, dtype=float):
    amp = np.zeros(basis.dim, dtype=dtype)
    amp[0] = 1.0
    return FockVector(basis, amp)


def random_sector_vector(basis, ell, rng, dtype=float):
    """Standard-normal amplitudes in sector ``ell`` (zero elsewhere), normalized."""
    amp = np.zeros(basis.dim, dtype=dtype)
    sl = basis.sector_slice(ell)
    block = rng.standard_normal(basis.sector_dim(ell))
    if np.iscomplexobj(amp):
        block = block + 1j * rng.standard_normal(basis.sector_dim(ell))
    amp[sl] = block / np.linalg.norm(block)
    return amp


def write_vector(path, vec, meta=None):
    """Binary vector file: magic, uint32 header length, JSON header, raw little-endian data."""
    amp = np.ascontiguousarray(vec.amplitudes)
    dtype = "complex128" if np.iscomplexobj(amp) else "float64"
    header = {"m": vec.basis.m, "M": vec.basis.M, "ordering": ORDERING, "dim": vec.basis.dim, "dtype": dtype}
    if meta:
        header["meta"] = meta
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(amp.astype("<" + ("c16" if dtype == "complex128" else "f8")).tobytes())


def read_vector(path, basis=None):
    """Inverse of :func:`write_vector`; returns ``(FockVector, header)``."""
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path} is not a Fock vector file")
        (size,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(size))
        raw = fh.read()
    if header.get("ordering") != ORDERING:
        raise ValueError(f"unsupported basis ordering {header.get('ordering')!r}")
    dtype = "<c16" if header["dtype"] == "complex128" else "<f8"
    amp = np.frombuffer(raw, dtype=dtype).copy()
    if basis is None:
        basis = FockBasis(header["m"], header["M"])
    elif (basis.m, basis.M) != (header["m"], header["M"]):
        raise ValueError("vector file was written for a different basis")
    return FockVector(basis, amp), header
