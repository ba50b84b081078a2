"""Densities of states, energy distributions and exponential DOS fits.

Energy bins are centred on integer multiples of the graining g, i.e. bin k
covers [(k - 1/2) g, (k + 1/2) g). Every grained quantity in the package
uses this convention, so grids of equal graining always line up.

The Fourier path estimates a density from an autocorrelation
c(t) = <phi|exp(-iHt)|phi> sampled at t_k = k dt, |k| <= M, M dt = Theta:

    rho(E) = dt/(2 pi) sum_k w(t_k) exp(i E t_k) c(t_k),  w(t) = exp(-4 (t/Theta)^2)

with c(-t) = c(t)^*. Equivalently rho is the exact spectrum convolved with
the discrete kernel K(x) = dt/(2 pi) sum_k w(t_k) cos(x t_k); see
:func:`kernel_density`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .io import write_csv
from .model import Eigensystem, diagonalize
from .propagator import IntegrationError, _SharedPattern, taylor4_step
from .state_prep import spectral_bounds

DOS_GRAINING = 0.09


@dataclass
class DosEstimate:
    grid: np.ndarray
    values: np.ndarray
    graining: float
    method: str
    n_samples: int | None = None
    clipped_mass: float = 0.0

    def integral(self) -> float:
        return float(np.sum(self.values) * self.graining)

    def to_csv(self, path, meta=None):
        m = {"method": self.method, "graining": self.graining}
        if self.n_samples is not None:
            m["n_samples"] = self.n_samples
        m.update(meta or {})
        write_csv(path, {"energy": self.grid, "density": self.values}, m)


@dataclass
class EnergyDistribution:
    grid: np.ndarray
    values: np.ndarray
    graining: float
    source: str = ""
    clipped_mass: float = 0.0

    def integral(self) -> float:
        return float(np.sum(self.values) * self.graining)

    def mean(self) -> float:
        return float(np.sum(self.grid * self.values) * self.graining)

    def std(self) -> float:
        m = self.mean()
        return math.sqrt(max(float(np.sum((self.grid - m) ** 2 * self.values) * self.graining), 0))

    def to_csv(self, path, meta=None):
        m = {"source": self.source, "graining": self.graining}
        m.update(meta or {})
        write_csv(path, {"energy": self.grid, "density": self.values}, m)


@dataclass(frozen=True)
class ExponentialFit:
    """ln Omega(E) = logZ + beta E on a window."""

    beta: float
    logZ: float
    window: tuple
    residual: float

    @property
    def free_energy(self) -> float:
        return -self.logZ / self.beta

    def log_omega(self, E):
        return self.logZ + self.beta * np.asarray(E)


def bin_index(E, g):
    return np.floor(np.asarray(E) / g + 0.5).astype(np.int64)


def grained_histogram(energies, weights, g, k_range=None):
    """Grained density of point masses; returns (bin centres, density)."""
    k = bin_index(energies, g)
    if k_range is None:
        k_range = (int(k.min()), int(k.max()))
    k0, k1 = k_range
    keep = (k >= k0) & (k <= k1)
    counts = np.bincount(k[keep] - k0, weights=np.asarray(weights)[keep], minlength=k1 - k0 + 1)
    return np.arange(k0, k1 + 1) * g, counts / g


def dos_exact(h0_or_eig, graining=DOS_GRAINING, kernel="histogram", theta=None,
              dt=0.02) -> DosEstimate:
    """Normalized eigenvalue density, Omega(E) = d^-1 sum_n delta(E - E_n).

    ``kernel="histogram"`` bins the eigenvalues; ``kernel="fourier"`` smooths
    them with the discrete kernel of the typicality path (same ``theta`` and
    ``dt``), for like-for-like comparison.
    """
    eig = h0_or_eig if isinstance(h0_or_eig, Eigensystem) else diagonalize(h0_or_eig)
    e = eig.energies
    w = np.full(len(e), 1.0 / len(e))
    if kernel == "histogram":
        grid, vals = grained_histogram(e, w, graining)
        return DosEstimate(grid, vals, graining, "exact")
    theta = theta or np.pi / graining
    bounds = (e[0], e[-1])
    grid = _grid_for(bounds, graining, theta)
    vals = kernel_density(e, w, grid, time_axis(theta, dt), theta, 0.5 * sum(bounds))
    vals, clipped = _clip_renormalize(vals, graining)
    return DosEstimate(grid, vals, graining, "exact", clipped_mass=clipped)


def taper(t, theta):
    return np.exp(-4.0 * (np.asarray(t) / theta) ** 2)


def fourier_density(times, corr, grid, theta, shift=0.0):
    """Direct discrete Fourier sum of a one-sided autocorrelation (t >= 0).

    ``corr`` is <phi|exp(-i(H - shift)t)|phi> at ``times`` = 0, dt, 2dt, ...
    """
    times = np.asarray(times)
    dt = times[1] - times[0]
    w = taper(times, theta)
    x = np.asarray(grid) - shift
    phase = np.exp(1j * np.outer(x, times[1:]))
    body = 2 * np.real(phase @ (w[1:] * corr[1:]))
    return dt / (2 * np.pi) * (w[0] * corr[0].real + body)


def exact_autocorrelation(energies, weights, times, shift=0.0, chunk=4096):
    """sum_n p_n exp(-i (E_n - shift) t) evaluated on ``times``."""
    e = np.asarray(energies) - shift
    p = np.asarray(weights)
    out = np.zeros(len(times), dtype=complex)
    for s in range(0, len(e), chunk):
        out += np.exp(-1j * np.outer(times, e[s:s + chunk])) @ p[s:s + chunk]
    return out


def kernel_density(energies, weights, grid, times, theta, shift=0.0):
    """Spectrum convolved with the same discrete kernel the Fourier path uses."""
    corr = exact_autocorrelation(energies, weights, times, shift)
    return fourier_density(times, corr, grid, theta, shift)


def _clip_renormalize(values, g):
    neg = values < 0
    clipped = float(-values[neg].sum() * g)
    values = np.where(neg, 0.0, values)
    total = values.sum() * g
    return values / total, clipped


def default_dt(h0, shift, z=0.1, bounds=None):
    lo, hi = bounds or spectral_bounds(h0)
    span = max(abs(hi - shift), abs(lo - shift))
    return min(0.05, z / span)


def check_nyquist(bounds, shift, dt):
    lo, hi = bounds
    span = max(abs(hi - shift), abs(lo - shift))
    if span >= np.pi / dt:
        raise ValueError(
            f"Nyquist violation: spectrum reaches {span:.3f} from the origin but "
            f"dt={dt} resolves only |E| < pi/dt = {np.pi / dt:.3f}"
        )


def time_axis(theta, dt):
    """0, dt', ..., Theta with dt' <= dt dividing Theta."""
    n = max(1, math.ceil(theta / dt - 1e-9))
    return np.arange(n + 1) * (theta / n)


def autocorrelation(h0, states, theta, dt, shift=0.0, norm_budget=1e-5):
    """Column-averaged <phi|exp(-i(H - shift)t)|phi> on t = 0, dt, ..., Theta."""
    states = np.asarray(states, dtype=complex)
    if states.ndim == 1:
        states = states[:, None]
    times = time_axis(theta, dt)
    n = len(times) - 1
    dt = times[1]
    corr = np.empty(n + 1, dtype=complex)
    psi = states.copy()
    corr[0] = np.mean(np.sum(states.conj() * psi, axis=0))
    shared = _SharedPattern(h0, sp.csr_matrix(h0.shape, dtype=complex), shift)
    h = shared.at(0.0)
    a = -1j * dt
    norm0 = np.sum(np.abs(states) ** 2, axis=0)
    for k in range(1, n + 1):
        psi = taylor4_step(h.dot, psi, a)
        corr[k] = np.mean(np.sum(states.conj() * psi, axis=0))
    drift = float(np.max(np.abs(np.sum(np.abs(psi) ** 2, axis=0) - norm0)))
    if drift > norm_budget:
        raise IntegrationError(f"norm drift {drift:.2e} during autocorrelation; reduce dt")
    return times, corr


def dos_typicality(h0, theta=None, dt=None, n_samples=None, rng_seed=0,
                   graining=DOS_GRAINING) -> DosEstimate:
    """DOS from the Fourier transform of random-state autocorrelations."""
    dim = h0.shape[0]
    theta = theta or np.pi / graining
    if n_samples is None:
        n_samples = 10 if dim >= 1 << 16 else 30
    bounds = spectral_bounds(h0)
    shift = 0.5 * (bounds[0] + bounds[1])
    dt = dt or default_dt(h0, shift, bounds=bounds)
    check_nyquist(bounds, shift, dt)
    rng = np.random.default_rng(rng_seed)
    phi = rng.standard_normal((dim, n_samples)) + 1j * rng.standard_normal((dim, n_samples))
    phi /= np.linalg.norm(phi, axis=0)
    times, corr = autocorrelation(h0, phi, theta, dt, shift)
    grid = _grid_for(bounds, graining, theta)
    vals, clipped = _clip_renormalize(fourier_density(times, corr, grid, theta, shift), graining)
    return DosEstimate(grid, vals, graining, "typicality", n_samples, clipped)


def _grid_for(bounds, g, theta):
    pad = 6 * 2.9 / theta + g
    k0 = int(np.floor((bounds[0] - pad) / g))
    k1 = int(np.ceil((bounds[1] + pad) / g))
    return np.arange(k0, k1 + 1) * g


def energy_distribution(h0, state, theta=None, dt=None, graining=0.07, eig=None,
                        kernel="histogram", source="") -> EnergyDistribution:
    """Grained p(E) of a pure state.

    With ``eig`` the exact overlaps |<E_n|psi>|^2 are used, grained either as
    a plain histogram or with the Fourier kernel (``kernel="fourier"``, for
    like-for-like comparison with the Fourier path). Without ``eig`` the
    distribution comes from the Fourier transform of <psi|psi(t)>.
    """
    theta = theta or np.pi / graining
    psi = np.asarray(state, dtype=complex)
    norm = float(np.vdot(psi, psi).real)
    if eig is not None:
        w = eig.overlaps(psi) / norm
        if kernel == "histogram":
            grid, vals = grained_histogram(eig.energies, w, graining)
            return EnergyDistribution(grid, vals, graining, source)
        bounds = (eig.energies[0], eig.energies[-1])
        dt = dt or default_dt(None, 0.5 * sum(bounds), bounds=bounds)
        times = time_axis(theta, dt)
        grid = _grid_for(bounds, graining, theta)
        vals, clipped = _clip_renormalize(kernel_density(eig.energies, w, grid, times, theta), graining)
        return EnergyDistribution(grid, vals, graining, source, clipped)
    bounds = spectral_bounds(h0)
    shift = float(np.vdot(psi, h0 @ psi).real) / norm
    dt = dt or default_dt(h0, shift, bounds=bounds)
    check_nyquist(bounds, shift, dt)
    times, corr = autocorrelation(h0, psi / math.sqrt(norm), theta, dt, shift)
    grid = _grid_for(bounds, graining, theta)
    vals, clipped = _clip_renormalize(fourier_density(times, corr, grid, theta, shift), graining)
    return EnergyDistribution(grid, vals, graining, source, clipped)


def fit_exponential(dos, window) -> ExponentialFit:
    """Least-squares line through (E, ln Omega) for grid points in the window."""
    lo, hi = window
    m = (dos.grid >= lo - 1e-12) & (dos.grid <= hi + 1e-12)
    if not np.any(m):
        raise ValueError(f"no DOS bins inside window {window}")
    vals = dos.values[m]
    if np.any(vals <= 0):
        bad = dos.grid[m][vals <= 0]
        raise ValueError(f"nonpositive DOS bins in fit window at E = {bad}")
    E = dos.grid[m]
    A = np.column_stack([np.ones_like(E), E])
    (logZ, beta), *_ = np.linalg.lstsq(A, np.log(vals), rcond=None)
    residual = float(np.max(np.abs(np.log(vals) - (logZ + beta * E))))
    return ExponentialFit(float(beta), float(logZ), (float(lo), float(hi)), residual)


def preset_fit_window(topology, N, Delta=2.5):
    """Intermediate-energy fit window: E0 = -0.2 N (ladder), -0.18 N (chain)."""
    E0 = (-0.2 if topology == "ladder" else -0.18) * N
    return (E0 - Delta / 2, E0 + Delta / 2)
