"""Fourth-order propagation of H(t) = H0 + lambda sin(nu t) V.

Each step freezes the Hamiltonian at the step midpoint and applies the
truncated Taylor expansion of exp(-i H dt) through fourth order:

    nu_1 = -i dt H phi,  nu_k = (-i dt / k) H nu_{k-1}  (k = 2, 3, 4)
    psi(t + dt) = phi + nu_1 + nu_2 + nu_3 + nu_4

For a time-independent H this coincides with classical RK4. The state is
never renormalized; norm drift is monitored and reported.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

#: Largest dimension for the dense propagator oracle.
ORACLE_DIM_GUARD = 4096


class IntegrationError(RuntimeError):
    """Norm drift exceeded the budget; the step size is too large."""


@dataclass(frozen=True)
class DriveProtocol:
    """lambda sin(nu t) driving over ``half_periods`` half periods.

    Odd ``half_periods`` make the protocol time-symmetric, H(T - t) = H(t).
    """

    lam: float
    nu: float
    half_periods: int
    direction: str = "forward"

    def __post_init__(self):
        if self.half_periods < 1:
            raise ValueError("half_periods must be a positive integer")
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        if self.direction not in ("forward", "backward"):
            raise ValueError("direction must be 'forward' or 'backward'")

    @property
    def T(self) -> float:
        return self.half_periods * math.pi / self.nu

    @property
    def time_symmetric(self) -> bool:
        return self.half_periods % 2 == 1

    def amplitude(self, t):
        """Prefactor of V at time t, honouring the direction."""
        if self.direction == "backward":
            t = self.T - t
        return self.lam * np.sin(self.nu * t)

    def reversed(self) -> "DriveProtocol":
        other = "backward" if self.direction == "forward" else "forward"
        return DriveProtocol(self.lam, self.nu, self.half_periods, other)


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1 or self.dt <= 0:
            raise ValueError("need n_steps >= 1 and dt > 0")

    @classmethod
    def for_duration(cls, T, dt):
        """Grid with n_steps * dt == T, dt rounded down from the request."""
        n = max(1, math.ceil(T / dt - 1e-9))
        return cls(T / n, n)

    @property
    def T(self) -> float:
        return self.dt * self.n_steps

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.dt / factor, self.n_steps * factor)


@dataclass
class PropagationResult:
    state: np.ndarray
    norm_drift: float
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    samples: dict = field(default_factory=dict)


def taylor4_step(matvec, phi, a):
    """phi + sum_{k=1..4} a^k/k! M^k phi, built stage by stage."""
    out = phi.copy()
    nu = phi
    for k in (1, 2, 3, 4):
        nu = (a / k) * matvec(nu)
        out += nu
    return out


class _SharedPattern:
    """H0 - shift and V stored on one sparsity pattern so H(t) is a data update."""

    def __init__(self, h0, v, shift):
        dim = h0.shape[0]
        ch, cv = h0.tocoo(), v.tocoo()
        rows = np.concatenate([ch.row, cv.row, np.arange(dim)])
        cols = np.concatenate([ch.col, cv.col, np.arange(dim)])
        zh, zv, zd = np.zeros(ch.nnz), np.zeros(cv.nnz), np.zeros(dim)
        hdata = np.concatenate([ch.data, zv, zd - shift]).astype(complex)
        vdata = np.concatenate([zh, cv.data, zd]).astype(complex)
        mh = sp.csr_matrix((hdata, (rows, cols)), shape=h0.shape)
        mv = sp.csr_matrix((vdata, (rows, cols)), shape=h0.shape)
        mh.sort_indices()
        mv.sort_indices()
        if not (np.array_equal(mh.indptr, mv.indptr) and np.array_equal(mh.indices, mv.indices)):
            raise AssertionError("sparsity patterns diverged")
        self.work = mh.copy()
        self.hdata = mh.data.copy()
        self.vdata = mv.data.copy()

    def at(self, f):
        np.multiply(self.vdata, f, out=self.work.data)
        self.work.data += self.hdata
        return self.work


def default_sample_every(n_steps, max_samples=2000):
    return max(1, math.ceil(n_steps / max_samples))


def propagate(
    h0,
    v,
    proto: DriveProtocol,
    grid: TimeGrid,
    psi0,
    observables=None,
    sample_every=None,
    shift=0.0,
    norm_budget=1e-6,
):
    """Integrate i d/dt psi = H(t) psi over the protocol.

    Parameters
    ----------
    h0, v : sparse matrices
        Static Hamiltonian and drive operator (V enters as lambda sin(nu t) V).
    grid : TimeGrid
        Must span the protocol duration, ``grid.T == proto.T``.
    psi0 : ndarray
        Initial state, or a dim x k block of states propagated together.
    observables : dict name -> sparse matrix, optional
        Expectation values (real part) are recorded every ``sample_every``
        steps, including t = 0 and t = T.
    shift : float
        Energy origin; H0 - shift is integrated. Only a global phase
        exp(i shift T) changes, while the Taylor truncation error for states
        near ``shift`` drops sharply.
    norm_budget : float
        Maximum tolerated |<psi|psi>(T) - <psi|psi>(0)| per column.
    """
    if h0.shape != v.shape or h0.shape[1] != psi0.shape[0]:
        raise ValueError(f"dimension mismatch: H0 {h0.shape}, V {v.shape}, psi {psi0.shape}")
    if abs(grid.T - proto.T) > 1e-9 * max(1.0, proto.T):
        raise ValueError(f"grid spans T={grid.T}, protocol needs T={proto.T}")
    shared = _SharedPattern(h0, v, shift)
    return _run(shared, proto.amplitude, grid, psi0, observables, sample_every, norm_budget)


def evolve_static(h0, t_total, dt, psi0, shift=0.0, observables=None, sample_every=None,
                  norm_budget=1e-6):
    """Free evolution under a time-independent H0 (the lambda = 0 special case)."""
    grid = TimeGrid.for_duration(t_total, dt)
    zero = sp.csr_matrix(h0.shape, dtype=complex)
    shared = _SharedPattern(h0, zero, shift)
    return _run(shared, lambda t: 0.0, grid, psi0, observables, sample_every, norm_budget)


def _expect(op, psi):
    val = np.einsum("i...,i...->...", psi.conj(), op @ psi)
    return val.real


def _run(shared, amplitude, grid, psi0, observables, sample_every, norm_budget):
    psi = np.array(psi0, dtype=complex)
    norm0 = np.sum(np.abs(psi) ** 2, axis=0)
    observables = observables or {}
    every = sample_every or default_sample_every(grid.n_steps)
    times, samples = [], {k: [] for k in observables}

    def record(t):
        times.append(t)
        for k, op in observables.items():
            samples[k].append(_expect(op, psi))

    if observables:
        record(0.0)
    a = -1j * grid.dt
    for n in range(grid.n_steps):
        t_mid = (n + 0.5) * grid.dt
        h = shared.at(amplitude(t_mid))
        psi = taylor4_step(h.dot, psi, a)
        if observables and ((n + 1) % every == 0 or n + 1 == grid.n_steps):
            record((n + 1) * grid.dt)
    drift = float(np.max(np.abs(np.sum(np.abs(psi) ** 2, axis=0) - norm0)))
    if drift > norm_budget:
        raise IntegrationError(
            f"norm drift {drift:.3e} exceeds budget {norm_budget:.1e}; reduce dt "
            f"(currently {grid.dt:.4g})"
        )
    return PropagationResult(
        psi, drift, np.array(times), {k: np.array(v) for k, v in samples.items()}
    )


def dense_propagator_oracle(h0, v, proto: DriveProtocol, grid: TimeGrid, psi0=None):
    """Product of exact exponentials of the midpoint-frozen Hamiltonians.

    Returns the full propagator, or the propagated state when ``psi0`` is given.
    """
    dim = h0.shape[0]
    if dim > ORACLE_DIM_GUARD:
        raise ValueError(f"dense oracle limited to dim <= {ORACLE_DIM_GUARD}, got {dim}")
    h = h0.toarray()
    vd = v.toarray()
    real = not (np.any(h.imag) or np.any(vd.imag))
    if real:
        h, vd = h.real, vd.real
    u = np.eye(dim, dtype=complex) if psi0 is None else np.asarray(psi0, dtype=complex).copy()
    for n in range(grid.n_steps):
        hm = h + proto.amplitude((n + 0.5) * grid.dt) * vd
        w, q = np.linalg.eigh(hm)
        u = (q * np.exp(-1j * w * grid.dt)) @ (q.conj().T @ u)
    return u
