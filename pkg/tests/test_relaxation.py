import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm, null_space

from stiffwork.model import ModelSpec, build_observable, build_static_hamiltonian, eigensystem
from stiffwork.relaxation import (
    NoDecayError,
    Trajectory,
    canonical_equilibrium,
    diagonal_ensemble,
    half_time,
    long_time_average,
    relax_trajectory,
    relaxation_time,
)
from stiffwork.state_prep import EnergyWindow, product_state, product_window_states


def synthetic(f, t_max=60.0, n=1201):
    t = np.linspace(0, t_max, n)
    return Trajectory(t, f(t))


def test_half_time_of_exponential():
    tr = synthetic(lambda t: 0.4 * np.exp(-t / 5.0))
    assert half_time(tr.times, tr.values) == pytest.approx(5 * math.log(2), abs=1e-3)


def test_exponential_classified():
    tr = synthetic(lambda t: 0.45 * np.exp(-0.2 * t) - 0.05)
    fit = relaxation_time(tr)
    assert fit.exponential and fit.residual < 1e-6
    assert fit.exp_fit[1] == pytest.approx(0.2, rel=1e-6)


def test_damped_oscillation_not_exponential():
    tr = synthetic(lambda t: 0.45 * np.exp(-0.1 * t) * np.cos(1.3 * t))
    assert not relaxation_time(tr).exponential


def test_no_decay():
    tr = synthetic(lambda t: 0.3 + 0 * t)
    with pytest.raises(NoDecayError):
        relaxation_time(tr)


def test_long_time_average_uses_tail():
    tr = synthetic(lambda t: np.where(t > 40, 0.1, 0.4))
    assert long_time_average(tr) == pytest.approx(0.1)


def test_trajectory_range_guard():
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0]), np.array([0.6]))


def test_canonical_value_matches_dense_trace():
    spec = ModelSpec.ladder(2, kappa=0.6)
    h = build_static_hamiltonian(spec).toarray()
    o = build_observable(spec, "sz_sys")
    beta = 0.8
    rho = expm(-beta * h)
    ref = np.trace(rho @ o.toarray()).real / np.trace(rho).real
    assert canonical_equilibrium(eigensystem(spec), beta, o) == pytest.approx(ref, abs=1e-12)


def test_canonical_rejects_offdiagonal_observable():
    spec = ModelSpec.chain(2)
    with pytest.raises(ValueError):
        canonical_equilibrium(eigensystem(spec), 1.0, sp.csr_matrix(np.ones((8, 8))))


def test_relaxation_run_in_sector():
    spec = ModelSpec.ladder(3, kappa=0.6, sector=-0.5)
    h0 = build_static_hamiltonian(spec)
    prep = product_state(spec, EnergyWindow(-1.2, 0.3), "up", 0)
    tr = relax_trajectory(h0, prep, 10.0, build_observable(spec, "sz_sys"), dt=0.02)
    assert tr.values[0] == pytest.approx(0.5)
    assert tr.meta["norm_drift"] < 1e-8
    assert tr.values.min() < 0.45


def commutant_average(h, o, psi):
    """<psi|O_bar|psi>, O_bar the Hilbert-Schmidt projection of O onto operators commuting with H."""
    d = h.shape[0]
    lv = np.kron(np.eye(d), h) - np.kron(h.T, np.eye(d))
    ns = null_space(lv)
    obar = (ns @ (ns.conj().T @ o.reshape(-1, order="F"))).reshape(d, d, order="F")
    return float(np.real(psi.conj() @ obar @ psi))


def degenerate_h(rng, levels, mult):
    d = np.repeat(levels, mult)
    q, _ = np.linalg.qr(rng.standard_normal((len(d), len(d))))
    return q @ np.diag(d) @ q.T


def test_diagonal_ensemble_keeps_degenerate_coherences():
    rng = np.random.default_rng(3)
    h = degenerate_h(rng, np.array([-1.0, 0.0, 0.7, 2.0]), [3, 1, 4, 2])
    a = rng.standard_normal((10, 10))
    o = a + a.T
    psi = rng.standard_normal(10) + 1j * rng.standard_normal(10)
    psi /= np.linalg.norm(psi)
    got = diagonal_ensemble(sp.csr_matrix(h), psi, sp.csr_matrix(o))
    assert got == pytest.approx(commutant_average(h, o, psi), abs=1e-10)
    # dropping the degenerate cross terms changes the answer
    e, v = np.linalg.eigh(h)
    c = v.T @ psi
    assert abs(got - np.sum(np.abs(c) ** 2 * np.diag(v.T @ o @ v))) > 1e-3


def test_diagonal_ensemble_on_chain_matches_commutant_projection():
    spec = ModelSpec.chain(3)
    h = build_static_hamiltonian(spec)
    o = build_observable(spec, "sz_sys")
    rng = np.random.default_rng(0)
    psi = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    psi /= np.linalg.norm(psi)
    ref = commutant_average(h.toarray().real, o.toarray().real, psi)
    assert diagonal_ensemble(eigensystem(spec), psi, o) == pytest.approx(ref, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), mult=st.lists(st.integers(1, 4), min_size=1, max_size=4))
def test_diagonal_ensemble_conserved_quantities(seed, mult):
    rng = np.random.default_rng(seed)
    h = degenerate_h(rng, np.arange(len(mult)) * 0.9, mult)
    psi = rng.standard_normal(len(h)) + 1j * rng.standard_normal(len(h))
    psi /= np.linalg.norm(psi)
    for o in (h, h @ h):
        ref = float(np.real(psi.conj() @ o @ psi))
        assert diagonal_ensemble(sp.csr_matrix(h), psi, sp.csr_matrix(o)) == pytest.approx(ref, abs=1e-9)


def test_diagonal_ensemble_rejects_block_coupling():
    spec = ModelSpec.chain(2)
    with pytest.raises(ValueError, match="couples blocks"):
        diagonal_ensemble(eigensystem(spec), np.ones(8) / np.sqrt(8), sp.csr_matrix(np.ones((8, 8))))


def test_diagonal_ensemble_of_window_mixture():
    spec = ModelSpec.ladder(2, kappa=0.6)
    h = build_static_hamiltonian(spec)
    o = build_observable(spec, "sz_sys")
    cols = product_window_states(spec, EnergyWindow(-1.0, 2.0), "up")
    assert cols.shape[1] > 1
    ref = np.mean([commutant_average(h.toarray().real, o.toarray().real, c) for c in cols.T])
    assert diagonal_ensemble(eigensystem(spec), cols, o) == pytest.approx(ref, abs=1e-10)
