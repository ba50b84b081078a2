"""Work pdfs, stiffness quantifiers and fluctuation-relation checks.

A work pdf is built in two stages. :func:`transition_weights` propagates the
initial state (a pure state or a block of window eigenstates) and records the
discrete two-point-measurement distribution, i.e. the weights
|<E_n|U(T)|psi>|^2 on the final eigenvalues E_n. :func:`grain` bins those
weights into a density. Final-energy bins are centred on multiples of the
graining, and W is measured from the initial energy rounded to the nearest
bin centre, so every pdf of one graining shares one W lattice.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .io import write_csv
from .model import Eigensystem
from .propagator import DriveProtocol, TimeGrid, propagate
from .spectral import ExponentialFit, bin_index, energy_distribution, grained_histogram
from .state_prep import (
    DEFAULT_DELTA,
    EmptyWindowError,
    EnergyWindow,
    PreparedState,
    microcanonical_pure,
    window_positions,
)

#: Time step for work-pdf propagation (with the energy origin at the initial energy).
WORK_DT = 0.02
MIN_WINDOW_STATES = 10


def protocol_id(proto: DriveProtocol) -> str:
    return f"{proto.direction}:lam={proto.lam:g}:nu={proto.nu:g}:k={proto.half_periods}"


@dataclass
class DiscreteWork:
    """Ungrained work distribution sum_n w_n delta(W + E_i - E_n)."""

    initial_E: float
    energies: np.ndarray
    weights: np.ndarray
    protocol: str = ""
    method: str = ""
    n_window: int | None = None
    norm_drift: float = 0.0


@dataclass
class WorkPdf:
    initial_E: float
    w_grid: np.ndarray
    density: np.ndarray
    graining: float
    protocol: str = ""
    method: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def offset(self) -> float:
        """Absolute final energy of the W = 0 bin."""
        return float(bin_index(self.initial_E, self.graining) * self.graining)

    def integral(self) -> float:
        return float(self.density.sum() * self.graining)

    def mean(self) -> float:
        return float((self.w_grid * self.density).sum() * self.graining)

    def at(self, W) -> float:
        k = int(np.rint(W / self.graining))
        j = np.searchsorted(self._k(), k)
        if j < len(self.w_grid) and self._k()[j] == k:
            return float(self.density[j])
        return 0.0

    def _k(self):
        return np.rint(self.w_grid / self.graining).astype(np.int64)

    def to_csv(self, path, meta=None):
        m = {"initial_E": self.initial_E, "graining": self.graining,
             "protocol": self.protocol, "method": self.method}
        m.update(self.meta)
        m.update(meta or {})
        write_csv(path, {"W": self.w_grid, "density": self.density}, m)


@dataclass
class StiffnessReport:
    E0: float
    Delta: float
    chi_values: dict
    chi_bar: float
    chi_min: float
    chi_max: float
    meta: dict = field(default_factory=dict)

    def to_csv(self, path, meta=None):
        m = {"E0": self.E0, "Delta": self.Delta, "chi_bar": self.chi_bar,
             "chi_min": self.chi_min, "chi_max": self.chi_max}
        m.update(meta or {})
        E = np.array(list(self.chi_values))
        write_csv(path, {"E_prime": E, "chi": np.array([self.chi_values[e] for e in E])}, m)


@dataclass(frozen=True)
class JrEstimate:
    value: float
    beta: float
    rhs_reference: float = 1.0

    @property
    def deviation(self) -> float:
        return (self.value - self.rhs_reference) / self.rhs_reference


@dataclass(frozen=True)
class MixtureWeights:
    centers: tuple
    weights: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(self.centers) or len(w) == 0:
            raise ValueError("need one weight per center")
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError(f"weights must be nonnegative and sum to 1, got sum {w.sum()}")

    @classmethod
    def uniform(cls, centers):
        n = len(centers)
        return cls(tuple(float(c) for c in centers), tuple([1.0 / n] * n))


@dataclass
class CrooksReport:
    W: np.ndarray
    residual: np.ndarray
    log_ratio: np.ndarray
    floor: float
    reference: str = "fit"

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.residual)))


@dataclass
class ProbeResult:
    mean: float
    variance: float
    bound: float
    n_window: int
    samples: np.ndarray


# --- construction ------------------------------------------------------------


def _initial_block(init, eig):
    """(psi0, initial_E, n_window, method) for a prepared state or exact window."""
    if isinstance(init, PreparedState):
        return init.state, init.achieved_mean, init.n_window, init.method
    if isinstance(init, EnergyWindow):
        if eig is None:
            raise ValueError("the exact mixed-window path needs the eigensystem")
        pos = window_positions(eig, init)
        return eig.vectors(pos).astype(complex), init.E, len(pos), "exact_mixed"
    raise TypeError(f"unsupported initial state {type(init).__name__}")


def transition_weights(h0, v, proto, init, eig=None, dt=WORK_DT, norm_budget=1e-6):
    """Propagate and return the discrete final-energy weights.

    ``init`` is a :class:`PreparedState` (pure state) or an
    :class:`EnergyWindow` (equal-weight mixture of its eigenstates, computed
    exactly by propagating every window eigenstate).
    """
    psi0, E_i, n_window, method = _initial_block(init, eig)
    if eig is None:
        raise ValueError("final-state weights need the eigensystem; use work_pdf without eig")
    if n_window is not None and n_window < MIN_WINDOW_STATES:
        warnings.warn(
            f"initial window holds {n_window} eigenstates; the graining is comparable "
            "to the level spacing", stacklevel=2
        )
    grid = TimeGrid.for_duration(proto.T, dt)
    res = propagate(h0, v, proto, grid, psi0, shift=E_i, norm_budget=norm_budget)
    w = eig.overlaps(res.state)
    if w.ndim == 2:
        w = w.mean(axis=1)
    return DiscreteWork(E_i, eig.energies, w, protocol_id(proto), method, n_window,
                        res.norm_drift)


def grain(dw: DiscreteWork, graining=DEFAULT_DELTA) -> WorkPdf:
    """Bin a discrete work distribution into a density on the W lattice."""
    E_ref, dens = grained_histogram(dw.energies, dw.weights, graining)
    total = dens.sum() * graining
    k_i = int(bin_index(dw.initial_E, graining))
    meta = {"rounding": abs(dw.initial_E - k_i * graining), "mass": total,
            "norm_drift": dw.norm_drift}
    if dw.n_window is not None:
        meta["n_window"] = dw.n_window
    return WorkPdf(dw.initial_E, E_ref - k_i * graining, dens / total, graining,
                   dw.protocol, dw.method, meta)


def work_pdf(h0, v, proto, init, graining=DEFAULT_DELTA, eig=None, dt=WORK_DT,
             norm_budget=1e-6) -> WorkPdf:
    """Grained work pdf p_E(W).

    With ``eig`` the final-state weights come from the exact eigenbasis;
    without it (pure states only) the final energy distribution is obtained
    from the Fourier transform of the final state's autocorrelation.
    """
    if eig is not None:
        return grain(transition_weights(h0, v, proto, init, eig, dt, norm_budget), graining)
    if not isinstance(init, PreparedState):
        raise ValueError("the exact mixed-window path needs the eigensystem")
    grid = TimeGrid.for_duration(proto.T, dt)
    E_i = init.achieved_mean
    res = propagate(h0, v, proto, grid, init.state, shift=E_i, norm_budget=norm_budget)
    dist = energy_distribution(h0, res.state, graining=graining)
    k_i = int(bin_index(E_i, graining))
    meta = {"rounding": abs(E_i - k_i * graining), "clipped_mass": dist.clipped_mass,
            "norm_drift": res.norm_drift}
    return WorkPdf(E_i, dist.grid - k_i * graining, dist.values, graining,
                   protocol_id(proto), init.method + "+fourier", meta)


# --- comparison ----------------------------------------------------------------


def resample(p: WorkPdf, graining) -> WorkPdf:
    """Bin-average onto a coarser lattice.

    Fine-bin mass is split between coarse bins in proportion to overlap in
    absolute final energy; coarse bins follow the usual centring rule.
    """
    g, G = p.graining, graining
    if G < g - 1e-12:
        raise ValueError("resampling only goes to a coarser graining")
    if abs(G - g) < 1e-12:
        return p
    lo = p.w_grid + p.offset - g / 2
    hi = lo + g
    mass = p.density * g
    k0 = int(np.floor(lo.min() / G + 0.5))
    k1 = int(np.floor(hi.max() / G + 0.5))
    centers = np.arange(k0, k1 + 1) * G
    out = np.zeros(len(centers))
    for j, c in enumerate(centers):
        a, b = c - G / 2, c + G / 2
        ov = np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0, None)
        out[j] = np.sum(mass * ov / g)
    k_i = int(bin_index(p.initial_E, G))
    meta = dict(p.meta, resampled_from=g)
    return WorkPdf(p.initial_E, centers - k_i * G, out / G, G, p.protocol, p.method, meta)


def align(pdfs):
    """Put pdfs of equal graining on their common W lattice (zero padded)."""
    g = pdfs[0].graining
    if any(abs(p.graining - g) > 1e-12 for p in pdfs):
        raise ValueError("grid mismatch: pdfs have different graining; resample first")
    ks = [p._k() for p in pdfs]
    for p, k in zip(pdfs, ks):
        if np.max(np.abs(p.w_grid - k * g)) > 1e-9 * max(1.0, g):
            raise ValueError("grid mismatch: W bins are not on the graining lattice")
    k0 = min(int(k.min()) for k in ks)
    k1 = max(int(k.max()) for k in ks)
    out = np.zeros((len(pdfs), k1 - k0 + 1))
    for row, p, k in zip(out, pdfs, ks):
        row[k - k0] = p.density
    return np.arange(k0, k1 + 1) * g, out


def chi(p: WorkPdf, q: WorkPdf) -> float:
    """Integrated squared difference of two work pdfs."""
    G = max(p.graining, q.graining)
    _, d = align([resample(p, G), resample(q, G)])
    return float(np.sum((d[0] - d[1]) ** 2) * G)


def self_norm(p: WorkPdf) -> float:
    """Integral of p^2, the natural scale for chi."""
    return float(np.sum(p.density**2) * p.graining)


def chi_bar(center: WorkPdf, pdfs: dict, E0=None, Delta=2.5, meta=None) -> StiffnessReport:
    """Mean of chi(p_E0, p_E') over the sampled E' (uniform weights)."""
    if len(pdfs) < 5:
        raise ValueError(f"chi_bar needs at least 5 sample energies, got {len(pdfs)}")
    E0 = center.initial_E if E0 is None else E0
    vals = {float(E): chi(center, p) for E, p in pdfs.items()}
    arr = np.array(list(vals.values()))
    return StiffnessReport(E0, Delta, vals, float(arr.mean()), float(arr.min()),
                           float(arr.max()), dict(meta or {}))


def sample_energies(E0, Delta=2.5, n=11):
    return np.linspace(E0 - Delta / 2, E0 + Delta / 2, n)


def nearest_nonempty(eig: Eigensystem, E, delta):
    """E itself if its window holds a state, else the nearest eigenvalue."""
    if len(eig.window(E, delta)):
        return float(E)
    return float(eig.energies[np.argmin(np.abs(eig.energies - E))])


def stiffness_scan(h0, v, proto, eig, E0, Delta=2.5, n_samples=11, graining=DEFAULT_DELTA,
                   mode="pure", seeds=None, dt=WORK_DT) -> StiffnessReport:
    """chi_bar over ``n_samples`` energies spanning [E0 - Delta/2, E0 + Delta/2].

    ``mode="pure"`` uses one Haar-random window state per energy (``seeds``
    holds one seed per job, the centre first); ``mode="window"`` uses the
    exact mixed window. An empty window is moved to the nearest eigenvalue;
    the moves are recorded in the report metadata.
    """
    energies = [E0] + list(sample_energies(E0, Delta, n_samples))
    if seeds is None:
        seeds = [np.random.SeedSequence(0, spawn_key=(j,)) for j in range(len(energies))]
    moved = {}
    pdfs = []
    for E, seed in zip(energies, seeds):
        Eu = nearest_nonempty(eig, E, graining)
        if Eu != E:
            moved[float(E)] = Eu
        win = EnergyWindow(Eu, graining)
        if mode == "pure":
            init = microcanonical_pure(eig, win, np.random.default_rng(seed))
        elif mode == "window":
            init = win
        else:
            raise ValueError("mode must be 'pure' or 'window'")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pdfs.append(work_pdf(h0, v, proto, init, graining, eig=eig, dt=dt))
    sampled = {float(E): p for E, p in zip(energies[1:], pdfs[1:])}
    return chi_bar(pdfs[0], sampled, E0, Delta, {"moved": moved, "mode": mode})


# --- fluctuation relations -----------------------------------------------------


def jarzynski_estimate(p: WorkPdf, beta, rhs=1.0) -> JrEstimate:
    """<exp(-beta W)> as a discrete sum over the bins."""
    value = float(np.sum(p.density * np.exp(-beta * p.w_grid)) * p.graining)
    return JrEstimate(value, float(beta), float(rhs))


def log_omega_ratio(dos, E, W) -> float:
    """ln Omega(E+W) / Omega(E) from an exponential fit (beta W) or a grained DOS.

    A :class:`DosEstimate` is read at the bins containing E and E + W, so with
    the same graining as the work windows it gives the ratio of window counts.
    """
    if isinstance(dos, ExponentialFit):
        return dos.beta * W
    k0 = int(round(dos.grid[0] / dos.graining))
    i, j = (int(bin_index(x, dos.graining)) - k0 for x in (E, E + W))
    if min(i, j) < 0 or max(i, j) >= len(dos.values) or min(dos.values[i], dos.values[j]) <= 0:
        raise ValueError(f"DOS empty or undefined at E = {E:g} or E + W = {E + W:g}")
    return math.log(dos.values[j] / dos.values[i])


def crooks_check(forward: WorkPdf, backward: dict, dos, floor=0.01) -> CrooksReport:
    """Residuals of p_E(W) / p~_{E+W}(-W) = Omega(E+W) / Omega(E).

    ``backward`` maps W to the backward-protocol pdf started at E + W. The
    density ratio comes from ``dos``: an :class:`ExponentialFit` (beta W) or
    a grained :class:`DosEstimate` (see :func:`log_omega_ratio`). Bins below
    ``floor`` times the peak of either pdf are skipped.
    """
    peak = forward.density.max()
    Ws, res, lr = [], [], []
    for W, q in sorted(backward.items()):
        pf = forward.at(W)
        pb = q.at(-W)
        if pf < floor * peak or pb < floor * q.density.max() or pb <= 0:
            continue
        Ws.append(W)
        lr.append(math.log(pf / pb))
        res.append(lr[-1] - log_omega_ratio(dos, forward.offset, W))
    if not Ws:
        raise ValueError("no admissible bins above the floor")
    ref = "fit" if isinstance(dos, ExponentialFit) else dos.method
    return CrooksReport(np.array(Ws), np.array(res), np.array(lr), floor, ref)


def crooks_scan(h0, v, proto, eig, E, dos, graining=DEFAULT_DELTA, floor=0.01, dt=WORK_DT):
    """Forward exact-window pdf at E and backward pdfs at every E + W it reaches.

    E is snapped to the bin lattice so that E + W lands on window centres.
    ``dos`` is passed on to :func:`crooks_check`.
    """
    E = float(bin_index(E, graining) * graining)
    fwd = work_pdf(h0, v, proto, EnergyWindow(E, graining), graining, eig=eig, dt=dt)
    back = proto.reversed()
    peak = fwd.density.max()
    backward = {}
    for W, pW in zip(fwd.w_grid, fwd.density):
        if pW < floor * peak:
            continue
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                backward[float(W)] = work_pdf(h0, v, back, EnergyWindow(E + W, graining),
                                              graining, eig=eig, dt=dt)
        except EmptyWindowError:
            continue
    return fwd, backward, crooks_check(fwd, backward, dos, floor)


def mixture_work_pdf(pdfs: dict, K: MixtureWeights) -> WorkPdf:
    """p(W) = sum_n K(E_n) p_{E_n}(W)."""
    if set(map(float, pdfs)) != set(map(float, K.centers)):
        raise ValueError("mixture weights and pdfs refer to different energies")
    comps = [pdfs[c] for c in K.centers]
    grid, d = align(comps)
    w = np.asarray(K.weights)
    E = float(np.dot(w, [p.initial_E for p in comps]))
    return WorkPdf(E, grid, w @ d, comps[0].graining, comps[0].protocol, "mixture",
                   {"n_components": len(comps)})


def typicality_variance_probe(h0, v, proto, eig, win: EnergyWindow, n_seeds=20, W=0.0,
                              graining=None, rng_seed=0, dt=WORK_DT) -> ProbeResult:
    """Spread of the bin probability delta * p_E(W) over Haar-random window states.

    Returns the sample mean and (unbiased) variance across seeds together
    with the bound 1 / (Tr pi + 1).
    """
    if n_seeds < 10:
        raise ValueError("the variance probe needs at least 10 seeds")
    graining = graining or win.delta
    n = len(window_positions(eig, win))
    ss = np.random.SeedSequence(rng_seed)
    vals = []
    for child in ss.spawn(n_seeds):
        prep = microcanonical_pure(eig, win, np.random.default_rng(child))
        dw = transition_weights(h0, v, proto, prep, eig, dt)
        # the final window is placed relative to the window centre, not the
        # state's own mean energy, so every seed probes the same projector
        sel = eig.select(win.E + W - graining / 2, win.E + W + graining / 2)
        vals.append(float(dw.weights[sel].sum()))
    vals = np.array(vals)
    return ProbeResult(float(vals.mean()), float(vals.var(ddof=1)), 1.0 / (n + 1), n, vals)
