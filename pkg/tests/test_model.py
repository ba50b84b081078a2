from math import comb

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from stiffwork.model import (
    ModelSpec,
    StructuralError,
    basis_for,
    bonds,
    build_bath_hamiltonian,
    build_drive_operator,
    build_observable,
    build_static_hamiltonian,
    commutator_norm,
    diagonalize,
    is_hermitian,
    ladder_bit,
    row_sum_norm,
)

SX = np.array([[0, 1], [1, 0]]) / 2
SY = np.array([[0, -1j], [1j, 0]]) / 2
SZ = np.array([[1, 0], [0, -1]]) / 2  # index 0 = up


def kron_site(op, site, n):
    """Dense single-site operator; site 0 is the lowest bit (rightmost factor)."""
    out = np.eye(1)
    for s in reversed(range(n)):
        out = np.kron(out, op if s == site else np.eye(2))
    return out


def dense_reference(spec):
    """Kronecker-product H0 in the standard up = |0> convention."""
    n = spec.N
    h = np.zeros((2**n, 2**n), dtype=complex)
    for a, b, J in bonds(spec):
        for s in (SX, SY, SZ):
            h += J * kron_site(s, a, n) @ kron_site(s, b, n)
    h += spec.B * kron_site(SZ, spec.sys_bit, n)
    # |0> is up in the Kronecker basis but bit value 1 is up in ours: flip every bit
    perm = (2**n - 1) - np.arange(2**n)
    return h[np.ix_(perm, perm)]


def test_two_site_spectrum():
    spec = ModelSpec.chain(1)
    e = np.linalg.eigvalsh(build_static_hamiltonian(spec).toarray())
    assert np.allclose(e, [-0.75, 0.25, 0.25, 0.25], atol=1e-10)


def test_single_spin_field():
    spec = ModelSpec.ladder(0, B=0.7)
    h = build_static_hamiltonian(spec).toarray()
    assert np.allclose(np.diag(h).real, [-0.35, 0.35], atol=1e-12)


@pytest.mark.parametrize("spec", [ModelSpec.ladder(2, kappa=0.6), ModelSpec.chain(4),
                                  ModelSpec.ladder(1, kappa=0.2, B=0.3)])
def test_matches_kronecker_reference(spec):
    h = build_static_hamiltonian(spec).toarray()
    assert np.abs(h - dense_reference(spec)).max() < 1e-12


def test_bit_layout():
    assert ladder_bit(1, 1) == 0 and ladder_bit(1, 2) == 1 and ladder_bit(3, 2) == 5
    assert ModelSpec.ladder(3).sys_bit == 6
    assert ModelSpec.chain(5).sys_bit == 5


def test_drive_flips_system_spin():
    spec = ModelSpec.ladder(1)
    v = build_drive_operator(spec)
    up = 1 << spec.sys_bit
    assert v[up, 0] == 0.5 and v[0, up] == 0.5
    assert np.allclose((v @ v).toarray(), 0.25 * np.eye(v.shape[0]))


def test_drive_requires_full_space():
    with pytest.raises(StructuralError):
        build_drive_operator(ModelSpec.ladder(2, sector=0.5))


def test_sector_dimension_and_spectrum():
    full = ModelSpec.ladder(2, kappa=0.6)
    e_full = diagonalize(build_static_hamiltonian(full)).energies
    parts = []
    for n_up in range(full.N + 1):
        s = full.with_sector(n_up - full.N / 2)
        h = build_static_hamiltonian(s)
        assert h.shape[0] == comb(full.N, n_up)
        parts.append(np.linalg.eigvalsh(h.toarray()))
    assert np.allclose(np.sort(np.concatenate(parts)), e_full, atol=1e-10)


def test_unattainable_sector():
    with pytest.raises(ValueError):
        ModelSpec.chain(3, sector=0.5)  # N = 4 needs integer M_tot


def test_observables():
    spec = ModelSpec.chain(2)
    sz = build_observable(spec, "sz_sys").diagonal().real
    m = build_observable(spec, "m_total").diagonal().real
    assert sz[1 << spec.sys_bit] == 0.5 and sz[0] == -0.5
    assert m[0] == -1.5 and m[-1] == 1.5
    with pytest.raises(ValueError):
        build_observable(spec, "sx")


def test_bath_hamiltonian_excludes_system_spin():
    spec = ModelSpec.ladder(2)
    hb = build_bath_hamiltonian(spec)
    assert hb.shape[0] == 2 ** (spec.N - 1)
    h0 = build_static_hamiltonian(ModelSpec.ladder(2, kappa=0.0, B=0.0)).toarray()
    # with kappa = B = 0 the full H0 is H' on the bath tensored with the identity
    assert np.allclose(h0, np.kron(np.eye(2), hb.toarray()))


def test_row_sum_norm_bounds_spectrum():
    h = build_static_hamiltonian(ModelSpec.ladder(2))
    e = np.linalg.eigvalsh(h.toarray())
    assert np.abs(e).max() <= row_sum_norm(h) + 1e-12


@settings(max_examples=25, deadline=None)
@given(topology=st.sampled_from(["ladder", "chain"]), L=st.integers(1, 4),
       kappa=st.floats(0, 2), B=st.floats(-1, 1))
def test_hamiltonian_invariants(topology, L, kappa, B):
    spec = (ModelSpec.ladder(L, kappa=kappa, B=B) if topology == "ladder"
            else ModelSpec.chain(L + 1))
    h = build_static_hamiltonian(spec)
    assert is_hermitian(h, atol=1e-10)
    assert commutator_norm(h, build_observable(spec, "m_total")) < 1e-10
    v = build_drive_operator(spec)
    assert is_hermitian(v, atol=1e-12)
    # [M_tot, S^x_sys] = i S^y_sys, whose square is -1/4
    m = build_observable(spec, "m_total")
    c = (m @ v - v @ m).toarray()
    assert np.allclose(c @ c, -0.25 * np.eye(h.shape[0]), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(L=st.integers(1, 3), n_up=st.integers(0, 7))
def test_sector_basis_is_sorted_and_closed(L, n_up):
    spec = ModelSpec.ladder(L)
    if n_up > spec.N:
        return
    s = spec.with_sector(n_up - spec.N / 2)
    b = basis_for(s)
    assert np.all(np.diff(b.states) > 0)
    h = build_static_hamiltonian(s)
    assert h.shape == (comb(spec.N, n_up),) * 2
    assert isinstance(h, sp.csr_matrix)
