"""Initial states: random microcanonical windows, Gaussian-filtered typical
states and bath-window x spin product states."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .model import (
    Eigensystem,
    ModelSpec,
    basis_for,
    build_bath_hamiltonian,
    build_static_hamiltonian,
    diagonalize,
    popcount,
)
from .propagator import taylor4_step

DEFAULT_DELTA = 0.07
DEFAULT_SIGMA = 1 / math.sqrt(1000)


class EmptyWindowError(ValueError):
    pass


@dataclass(frozen=True)
class EnergyWindow:
    E: float
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("window width must be positive")

    @property
    def lo(self):
        return self.E - self.delta / 2

    @property
    def hi(self):
        return self.E + self.delta / 2


@dataclass
class PreparedState:
    state: np.ndarray
    achieved_mean: float
    achieved_std: float
    method: str
    n_window: int | None = None


def random_state(dim, rng) -> np.ndarray:
    """Haar-random pure state (normalized complex Gaussian vector)."""
    psi = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return psi / np.linalg.norm(psi)


def energy_stats(h0, psi):
    hpsi = h0 @ psi
    mean = float(np.vdot(psi, hpsi).real)
    var = float(np.vdot(hpsi, hpsi).real) - mean**2
    return mean, math.sqrt(max(var, 0.0))


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def window_positions(eig: Eigensystem, win: EnergyWindow) -> np.ndarray:
    pos = eig.window(win.E, win.delta)
    if len(pos) == 0:
        nearest = eig.energies[np.argmin(np.abs(eig.energies - win.E))]
        raise EmptyWindowError(
            f"no eigenvalue in [{win.lo:.4f}, {win.hi:.4f}); nearest is {nearest:.4f}"
        )
    return pos


def microcanonical_pure(eig: Eigensystem, win: EnergyWindow, rng_seed) -> PreparedState:
    """Random superposition of the eigenstates inside the window.

    Coefficients are i.i.d. complex normal, i.e. Haar-distributed within the
    window subspace.
    """
    pos = window_positions(eig, win)
    rng = _rng(rng_seed)
    c = rng.standard_normal(len(pos)) + 1j * rng.standard_normal(len(pos))
    c /= np.linalg.norm(c)
    psi = eig.vectors(pos) @ c
    w = np.abs(c) ** 2
    e = eig.energies[pos]
    mean = float(w @ e)
    std = math.sqrt(max(float(w @ (e - mean) ** 2), 0.0))
    return PreparedState(psi, mean, std, "exact_window", len(pos))


def spectral_bounds(h0, tol=1e-6):
    """Extremal eigenvalues via Lanczos (dense for small matrices)."""
    if h0.shape[0] <= 256:
        e = np.linalg.eigvalsh(h0.toarray())
        return float(e[0]), float(e[-1])
    lo = eigsh(h0, k=1, which="SA", tol=tol, return_eigenvectors=False)[0]
    hi = eigsh(h0, k=1, which="LA", tol=tol, return_eigenvectors=False)[0]
    return float(lo), float(hi)


def filter_steps(h0, E, sigma, z_max=1.0):
    """Number of imaginary-time steps so that every stage stays in the stable
    region of the fourth-order Taylor factor."""
    lo, hi = spectral_bounds(h0)
    span = 1.01 * max(abs(hi - E), abs(lo - E)) + 1e-12
    tau = 1 / (4 * sigma**2)
    return max(2000, math.ceil(tau * span**2 / z_max))


def gaussian_filter_state(h0, E, sigma=DEFAULT_SIGMA, rng_seed=None, n_steps=None,
                          phi=None) -> PreparedState:
    """exp(-(H0 - E)^2 / (4 sigma^2)) |phi> / norm for a Haar-random |phi>.

    Realized as imaginary-time evolution under (H0 - E)^2 up to total
    "time" 1 / (4 sigma^2) with the fourth-order Taylor stepper.
    """
    dim = h0.shape[0]
    if phi is None:
        phi = random_state(dim, _rng(rng_seed))
    if n_steps is None:
        n_steps = filter_steps(h0, E, sigma)
    shifted = (h0 - E * sp.identity(dim, format="csr")).tocsr()

    def square(x):
        return shifted @ (shifted @ x)

    dtau = 1 / (4 * sigma**2) / n_steps
    psi = np.asarray(phi, dtype=complex)
    for _ in range(n_steps):
        psi = taylor4_step(square, psi, -dtau)
    norm = np.linalg.norm(psi)
    if not np.isfinite(norm) or norm < 1e-100:
        raise ValueError(
            f"filtered state has vanishing norm {norm:.3e}; E={E} lies outside the spectrum"
        )
    psi = psi / norm
    mean, std = energy_stats(h0, psi)
    return PreparedState(psi, mean, std, "gaussian_filter")


@lru_cache(maxsize=8)
def bath_eigensystem(spec: ModelSpec, n_up_bath):
    return diagonalize(build_bath_hamiltonian(spec, n_up_bath))


def _bath_embedding(spec: ModelSpec, m: str):
    """Bath eigensystem for system spin ``m`` and the row map bath basis -> spec basis."""
    if m not in ("up", "down"):
        raise ValueError("m must be 'up' or 'down'")
    up = m == "up"
    nb = spec.N - 1
    n_up_bath = None if spec.n_up is None else spec.n_up - int(up)
    if n_up_bath is not None and not 0 <= n_up_bath <= nb:
        raise ValueError(f"system spin {m} incompatible with sector {spec.sector}")
    bath_states = np.arange(1 << nb, dtype=np.int64)
    if n_up_bath is not None:
        bath_states = bath_states[popcount(bath_states) == n_up_bath]
    full = bath_states | (int(up) << spec.sys_bit)
    basis = basis_for(spec)
    return bath_eigensystem(spec, n_up_bath), basis.index(full), basis.dim


def product_state(spec: ModelSpec, bath_win: EnergyWindow, m: str, rng_seed) -> PreparedState:
    """(random bath window state) x |m> on the system spin.

    With ``spec.sector`` set, the bath is restricted to the magnetization
    that completes the requested total, and the state lives on the sector
    basis of ``spec``.
    """
    eig, rows, dim = _bath_embedding(spec, m)
    bath = microcanonical_pure(eig, bath_win, rng_seed)
    psi = np.zeros(dim, dtype=complex)
    psi[rows] = bath.state
    h0 = build_static_hamiltonian(spec)
    mean, std = energy_stats(h0, psi)
    return PreparedState(psi, mean, std, "product", bath.n_window)


def product_window_states(spec: ModelSpec, bath_win: EnergyWindow, m: str) -> np.ndarray:
    """Columns |b> x |m> for every bath eigenstate b in the window.

    Their equal-weight mixture is the normalized pi_bath x pi_m state.
    """
    eig, rows, dim = _bath_embedding(spec, m)
    vecs = eig.vectors(window_positions(eig, bath_win))
    out = np.zeros((dim, vecs.shape[1]))
    out[rows] = vecs
    return out
