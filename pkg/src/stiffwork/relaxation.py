"""Free relaxation of the system spin from bath-window product states."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import curve_fit

from .io import write_csv
from .model import Eigensystem, diagonalize
from .propagator import evolve_static

EXP_RESIDUAL_THRESHOLD = 0.05
RELAX_DT = 0.02


class NoDecayError(ValueError):
    """The trajectory never relaxes halfway to its long-time average."""


@dataclass
class Trajectory:
    times: np.ndarray
    values: np.ndarray
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.abs(self.values) > 0.5 + 1e-9):
            raise ValueError("<S^z_sys> left [-1/2, 1/2]; integration is inaccurate")

    def to_csv(self, path, meta=None):
        m = {"label": self.label}
        m.update(self.meta)
        m.update(meta or {})
        write_csv(path, {"t": self.times, "value": self.values}, m)


@dataclass
class RelaxationFit:
    tau_R: float
    long_time_average: float
    exp_fit: tuple | None = None  # (amplitude, rate, offset)
    residual: float | None = None

    @property
    def exponential(self) -> bool:
        return self.residual is not None and self.residual < EXP_RESIDUAL_THRESHOLD


def relax_trajectory(h0, prep, t_max, observable, dt=RELAX_DT, sample_every=None,
                     extra=None, label="") -> Trajectory:
    """Sample <O>(t) under H0 alone, starting from ``prep``.

    ``extra`` maps names to further observables whose samples are stored in
    ``meta["samples"]``.
    """
    obs = {"o": observable}
    obs.update(extra or {})
    psi0 = prep.state if hasattr(prep, "state") else prep
    shift = float(np.vdot(psi0, h0 @ psi0).real)
    res = evolve_static(h0, t_max, dt, psi0, shift=shift, observables=obs,
                        sample_every=sample_every)
    samples = {k: v for k, v in res.samples.items() if k != "o"}
    return Trajectory(res.times, res.samples["o"], label,
                      {"norm_drift": res.norm_drift, "samples": samples})


def long_time_average(traj: Trajectory, fraction=1 / 3) -> float:
    n = len(traj.values)
    return float(np.mean(traj.values[n - max(1, int(round(n * fraction))):]))


def half_time(times, centred):
    """First time |centred| falls to half its initial value (linear interpolation)."""
    a0 = abs(centred[0])
    if a0 == 0:
        raise NoDecayError("trajectory starts at its long-time average")
    below = np.nonzero(np.abs(centred) <= a0 / 2)[0]
    if len(below) == 0:
        raise NoDecayError("trajectory never relaxes halfway to its long-time average")
    j = below[0]
    y0, y1 = abs(centred[j - 1]), abs(centred[j])
    t0, t1 = times[j - 1], times[j]
    return float(t0 + (y0 - a0 / 2) / (y0 - y1) * (t1 - t0)) if y0 != y1 else float(t1)


def _exp(t, A, rate, c):
    return A * np.exp(-rate * t) + c


def relaxation_time(traj: Trajectory, fit=True) -> RelaxationFit:
    """Half-decay time of the centred signal and an optional exponential fit.

    The residual is the RMS deviation of the fit normalized by |amplitude|.
    """
    c = long_time_average(traj)
    tau = half_time(traj.times, traj.values - c)
    if not fit:
        return RelaxationFit(tau, c)
    A0 = traj.values[0] - c
    p0 = (A0, math.log(2) / tau, c)
    try:
        popt, _ = curve_fit(_exp, traj.times, traj.values, p0=p0, maxfev=20000)
    except RuntimeError:
        return RelaxationFit(tau, c, None, float("inf"))
    rms = float(np.sqrt(np.mean((_exp(traj.times, *popt) - traj.values) ** 2)))
    return RelaxationFit(tau, c, tuple(float(x) for x in popt), rms / abs(popt[0]))


def diagonal_ensemble(h0_or_eig, psi, observable, tol=1e-9) -> float:
    """Infinite-time average of <psi(t)|O|psi(t)> under H0.

    Sum over eigenvalues E of <psi|P_E O P_E|psi>. A dim x k block ``psi``
    stands for the equal-weight mixture of its (normalized) columns. Levels
    closer than ``tol`` within a block share one projector, so degenerate
    subspaces keep their non-dephasing cross terms. ``O`` must not couple blocks of H0,
    since degenerate levels in different blocks would not dephase either.
    """
    eig = h0_or_eig if isinstance(h0_or_eig, Eigensystem) else diagonalize(h0_or_eig)
    psi = np.asarray(psi)
    if psi.ndim == 1:
        psi = psi[:, None]
    obs = sp.coo_matrix(observable)
    label = np.empty(eig.dim, dtype=int)
    for k, blk in enumerate(eig.blocks):
        label[blk.indices] = k
    cross = label[obs.row] != label[obs.col]
    if np.any(np.abs(obs.data[cross]) > 0):
        raise ValueError("observable couples blocks of H0")
    obs = obs.tocsr()
    total = 0.0
    for blk in eig.blocks:
        idx = blk.indices
        c = blk.vectors.T @ psi[idx]
        ov = obs[idx][:, idx] @ blk.vectors
        edges = np.flatnonzero(np.diff(blk.energies) > tol) + 1
        for cols in np.split(np.arange(len(blk.energies)), edges):
            sub = blk.vectors[:, cols].T @ ov[:, cols]
            total += float(np.real(np.sum(np.conj(c[cols]) * (sub @ c[cols]))))
    return total / psi.shape[1]


def canonical_equilibrium(h0_or_eig, beta, observable) -> float:
    """Tr{exp(-beta H0) O} / Tr{exp(-beta H0)} for an observable diagonal in the bit basis."""
    eig = h0_or_eig if isinstance(h0_or_eig, Eigensystem) else diagonalize(h0_or_eig)
    o = np.asarray(observable.diagonal()).real
    off = sp.csr_matrix(observable) - sp.diags(observable.diagonal())
    if off.nnz and np.abs(off.data).max() > 0:
        raise ValueError("observable must be diagonal in the bit basis")
    e_all, o_all = [], []
    for blk in eig.blocks:
        e_all.append(blk.energies)
        o_all.append((blk.vectors**2).T @ o[blk.indices])
    e = np.concatenate(e_all)
    on = np.concatenate(o_all)
    w = np.exp(-beta * (e - e.min()))
    return float(w @ on / w.sum())
