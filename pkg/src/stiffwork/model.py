"""Spin-1/2 ladder and chain models in the S^z bit basis.

Bit convention: bit value 1 is spin up (S^z = +1/2). For the ladder, spin
(i, r) with i = 1..L along the leg and r = 1, 2 the leg index sits on bit
2(i-1) + (r-1); the attached system spin is the highest bit, 2L. For the
chain, site i sits on bit i-1 and the system spin on bit L.

All operators are returned as ``scipy.sparse.csr_matrix`` with complex
values, even though every matrix element is real in this basis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

#: Largest Hilbert-space dimension handled by exact diagonalization.
ED_DIM_GUARD = 32768


class StructuralError(ValueError):
    """An operator would leave the requested basis or sector."""


@dataclass(frozen=True)
class ModelSpec:
    """Static description of a ladder or chain model.

    ``sector`` is the total magnetization M_tot; ``None`` means the full
    2^N dimensional space.
    """

    topology: str
    L: int
    J: float = 1.0
    kappa: float = 0.2
    B: float = 0.5
    sector: float | None = None

    def __post_init__(self):
        if self.topology not in ("ladder", "chain"):
            raise ValueError(f"topology must be 'ladder' or 'chain', got {self.topology!r}")
        if self.topology == "ladder" and self.L < 0:
            raise ValueError("ladder needs L >= 0 (L = 0 is the isolated system spin)")
        if self.topology == "chain" and self.L < 1:
            raise ValueError("chain needs L >= 1")
        if self.sector is not None:
            n_up = self.N / 2 + self.sector
            if abs(n_up - round(n_up)) > 1e-12 or not 0 <= round(n_up) <= self.N:
                raise ValueError(
                    f"sector M_tot={self.sector} not attainable for N={self.N} spins"
                )

    @classmethod
    def ladder(cls, L, kappa=0.2, B=0.5, sector=None, J=1.0):
        return cls("ladder", L, J=J, kappa=kappa, B=B, sector=sector)

    @classmethod
    def chain(cls, L, sector=None, J=1.0):
        # the chain has a uniform coupling to the extra site and no static field
        return cls("chain", L, J=J, kappa=1.0, B=0.0, sector=sector)

    @property
    def N(self) -> int:
        return 2 * self.L + 1 if self.topology == "ladder" else self.L + 1

    @property
    def sys_bit(self) -> int:
        return self.N - 1

    @property
    def n_up(self) -> int | None:
        if self.sector is None:
            return None
        return int(round(self.N / 2 + self.sector))

    def with_sector(self, sector):
        return ModelSpec(self.topology, self.L, self.J, self.kappa, self.B, sector)


def ladder_bit(i: int, r: int) -> int:
    """Bit index of ladder spin (i, r), both 1-based."""
    return 2 * (i - 1) + (r - 1)


def bonds(spec: ModelSpec, include_coupling=True):
    """Heisenberg bonds ``(bit_a, bit_b, coupling)`` of H' (+ kappa H'')."""
    J = spec.J
    out = []
    if spec.topology == "ladder":
        L = spec.L
        for r in (1, 2):
            for i in range(1, L):
                out.append((ladder_bit(i, r), ladder_bit(i + 1, r), J))
        for i in range(1, L + 1):
            out.append((ladder_bit(i, 1), ladder_bit(i, 2), J))
        if include_coupling and L > 0:
            out.append((ladder_bit(L, 1), spec.sys_bit, spec.kappa * J))
            out.append((ladder_bit(L, 2), spec.sys_bit, spec.kappa * J))
    else:
        L = spec.L
        for i in range(L - 1):
            out.append((i, i + 1, J))
        if include_coupling:
            out.append((L - 1, spec.sys_bit, spec.kappa * J))
    return out


@dataclass
class BasisIndex:
    """Bijection between admissible N-bit configurations and dense indices."""

    N: int
    n_up: int | None = None
    states: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        full = np.arange(1 << self.N, dtype=np.int64)
        if self.n_up is None:
            self.states = full
        else:
            self.states = full[popcount(full) == self.n_up]

    @property
    def dim(self) -> int:
        return len(self.states)

    @property
    def sector(self):
        return None if self.n_up is None else self.n_up - self.N / 2

    def index(self, configs) -> np.ndarray:
        """Dense indices of bit configurations; raises if any is not in the basis."""
        configs = np.asarray(configs, dtype=np.int64)
        if self.n_up is None:
            if configs.size and (configs.min() < 0 or configs.max() >= self.dim):
                raise StructuralError("configuration outside the 2^N space")
            return configs
        idx = np.searchsorted(self.states, configs)
        idx_c = np.minimum(idx, self.dim - 1)
        if configs.size and np.any(self.states[idx_c] != configs):
            raise StructuralError(
                f"operator leaves the magnetization sector n_up={self.n_up}"
            )
        return idx_c

    def bits(self, which: int) -> np.ndarray:
        return (self.states >> which) & 1


def popcount(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    count = np.zeros(x.shape, dtype=np.int64)
    while np.any(x):
        count += x & 1
        x = x >> 1
    return count


def basis_for(spec: ModelSpec) -> BasisIndex:
    return BasisIndex(spec.N, spec.n_up)


def _heisenberg(basis: BasisIndex, bond_list, diag=None):
    dim = basis.dim
    diag = np.zeros(dim) if diag is None else diag
    rows, cols, vals = [], [], []
    for a, b, J in bond_list:
        sa = basis.bits(a)
        sb = basis.bits(b)
        same = sa == sb
        diag += np.where(same, J / 4, -J / 4)
        src = np.nonzero(~same)[0]
        dst = basis.index(basis.states[src] ^ ((1 << a) | (1 << b)))
        rows.append(dst)
        cols.append(src)
        vals.append(np.full(len(src), J / 2))
    rows.append(np.arange(dim))
    cols.append(np.arange(dim))
    vals.append(diag)
    m = sp.coo_matrix(
        (np.concatenate(vals).astype(complex), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    ).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return m


def build_static_hamiltonian(spec: ModelSpec) -> sp.csr_matrix:
    """H0 = H' + kappa H'' + B S^z_sys on the (sector-restricted) basis."""
    basis = basis_for(spec)
    diag = spec.B * (basis.bits(spec.sys_bit) - 0.5)
    h = _heisenberg(basis, bonds(spec), diag=diag.astype(float))
    _check_real_symmetric(h, "H0")
    return h


def build_bath_hamiltonian(spec: ModelSpec, n_up=None) -> sp.csr_matrix:
    """H' of the N-1 bath spins alone (ladder legs and rungs, or the chain)."""
    basis = BasisIndex(spec.N - 1, n_up)
    h = _heisenberg(basis, bonds(spec, include_coupling=False))
    _check_real_symmetric(h, "H'")
    return h


def build_drive_operator(spec: ModelSpec) -> sp.csr_matrix:
    """S^x of the system spin. The lambda sin(nu t) factor lives in the protocol."""
    if spec.sector is not None:
        raise StructuralError(
            "S^x_sys changes the total magnetization by one; build it on the "
            "full space (sector=None)"
        )
    basis = basis_for(spec)
    src = np.arange(basis.dim)
    dst = basis.index(basis.states ^ (1 << spec.sys_bit))
    m = sp.csr_matrix((np.full(basis.dim, 0.5, dtype=complex), (dst, src)), shape=(basis.dim,) * 2)
    m.sort_indices()
    return m


def build_observable(spec: ModelSpec, which: str) -> sp.csr_matrix:
    basis = basis_for(spec)
    if which == "sz_sys":
        d = basis.bits(spec.sys_bit) - 0.5
    elif which == "m_total":
        d = popcount(basis.states) - spec.N / 2
    else:
        raise ValueError(f"unknown observable {which!r}; use 'sz_sys' or 'm_total'")
    return sp.diags(d.astype(complex), format="csr")


def apply(op: sp.spmatrix, state: np.ndarray) -> np.ndarray:
    """Matrix-vector (or matrix-block) product with a dimension check."""
    if op.shape[1] != state.shape[0]:
        raise ValueError(f"dimension mismatch: operator {op.shape}, state {state.shape}")
    return op @ state


def is_hermitian(op: sp.spmatrix, atol=1e-12) -> bool:
    diff = op - op.getH()
    return diff.nnz == 0 or np.abs(diff.data).max() <= atol


def _check_real_symmetric(m, name):
    if m.nnz and np.abs(m.data.imag).max() != 0:
        raise StructuralError(f"{name} has imaginary matrix elements")
    if not is_hermitian(m):
        raise StructuralError(f"{name} is not Hermitian")


def commutator_norm(a: sp.spmatrix, b: sp.spmatrix) -> float:
    c = a @ b - b @ a
    return 0.0 if c.nnz == 0 else float(np.abs(c.data).max())


def row_sum_norm(m: sp.spmatrix) -> float:
    """Max absolute row sum; an upper bound on the spectral radius."""
    return float(np.abs(m).sum(axis=1).max())


# --- exact diagonalization -------------------------------------------------


@dataclass
class EigenBlock:
    indices: np.ndarray  # positions in the full basis
    energies: np.ndarray
    vectors: np.ndarray  # real, len(indices) x len(energies)


class Eigensystem:
    """Eigen-decomposition of a real symmetric sparse H0, block by block.

    Blocks are the connected components of the sparsity graph (the
    magnetization sectors for the models here), so the N = 15 full space
    is diagonalized as sixteen independent dense problems.
    """

    def __init__(self, blocks, dim):
        self.blocks = blocks
        self.dim = dim
        e = np.concatenate([b.energies for b in blocks])
        which = np.concatenate([np.full(len(b.energies), k) for k, b in enumerate(blocks)])
        col = np.concatenate([np.arange(len(b.energies)) for b in blocks])
        order = np.argsort(e, kind="stable")
        self.energies = e[order]
        self._block_of = which[order]
        self._col_of = col[order]

    def select(self, lo, hi) -> np.ndarray:
        """Positions (in the sorted spectrum) of eigenvalues in [lo, hi)."""
        a = np.searchsorted(self.energies, lo, side="left")
        b = np.searchsorted(self.energies, hi, side="left")
        return np.arange(a, b)

    def window(self, E, delta) -> np.ndarray:
        return self.select(E - delta / 2, E + delta / 2)

    def vectors(self, positions) -> np.ndarray:
        """Eigenvectors (columns, full basis) for sorted-spectrum positions."""
        positions = np.asarray(positions)
        out = np.zeros((self.dim, len(positions)))
        for k, pos in enumerate(positions):
            blk = self.blocks[self._block_of[pos]]
            out[blk.indices, k] = blk.vectors[:, self._col_of[pos]]
        return out

    def overlaps(self, psi: np.ndarray) -> np.ndarray:
        """|<n|psi>|^2 for every eigenstate, ordered like ``energies``.

        ``psi`` may be a vector or a dim x k block (returns len(energies) x k).
        """
        parts = []
        for blk in self.blocks:
            c = blk.vectors.T @ psi[blk.indices]
            parts.append(np.abs(c) ** 2)
        w = np.concatenate(parts)
        order = np.argsort(np.concatenate([b.energies for b in self.blocks]), kind="stable")
        return w[order]

    def block_vectors(self, positions):
        """Group sorted-spectrum positions by block: yields (block, columns, positions)."""
        positions = np.asarray(positions)
        for k, blk in enumerate(self.blocks):
            mask = self._block_of[positions] == k
            if np.any(mask):
                yield blk, self._col_of[positions[mask]], positions[mask]


def diagonalize(h0: sp.spmatrix, guard=ED_DIM_GUARD) -> Eigensystem:
    """Exact eigensystem of a real symmetric H0, split into its connected blocks."""
    dim = h0.shape[0]
    if dim > guard:
        raise ValueError(
            f"dimension {dim} exceeds the exact-diagonalization guard {guard}; "
            "use the typicality path"
        )
    hr = sp.csr_matrix(h0.real)
    n_comp, labels = connected_components(hr, directed=False)
    blocks = []
    for c in range(n_comp):
        idx = np.nonzero(labels == c)[0]
        sub = hr[idx][:, idx].toarray()
        e, v = np.linalg.eigh(sub)
        blocks.append(EigenBlock(idx, e, v))
    return Eigensystem(blocks, dim)


@lru_cache(maxsize=4)
def eigensystem(spec: ModelSpec) -> Eigensystem:
    """Cached exact eigensystem of H0 for a model."""
    return diagonalize(build_static_hamiltonian(spec))
