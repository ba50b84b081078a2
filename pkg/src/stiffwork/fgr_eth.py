"""The driving operator in the energy eigenbasis: windowed Fermi-golden-rule
rates, their stiffness, the coarse-grained ETH map g(E', E) and cell-wise
statistics of the off-diagonal matrix elements.

Matrix elements V_if are never stored as a whole. For every pair of
eigensystem blocks (magnetization sectors) that V couples, the block of
V_if restricted to the partition's energy range is formed and immediately
reduced onto window pairs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .io import write_csv
from .model import Eigensystem
from .propagator import TimeGrid, _run, _SharedPattern

ZERO_TOL = 1e-10
MIN_CELL = 10


@dataclass(frozen=True)
class WindowPartition:
    """Contiguous windows [lo + k delta, lo + (k+1) delta), k = 0..n-1."""

    lo: float
    delta: float
    n: int

    def __post_init__(self):
        if self.delta <= 0 or self.n < 1:
            raise ValueError("need delta > 0 and at least one window")

    @classmethod
    def covering(cls, lo, hi, delta, anchor=0.0):
        """Windows centred on anchor + k delta that cover [lo, hi]."""
        k0 = math.floor((lo - anchor) / delta + 0.5)
        k1 = math.floor((hi - anchor) / delta + 0.5)
        return cls(anchor + (k0 - 0.5) * delta, delta, k1 - k0 + 1)

    @property
    def hi(self):
        return self.lo + self.n * self.delta

    @property
    def centers(self):
        return self.lo + (np.arange(self.n) + 0.5) * self.delta

    def label(self, energies):
        """Window index of each energy, -1 outside the partition."""
        k = np.floor((np.asarray(energies) - self.lo) / self.delta).astype(np.int64)
        return np.where((k >= 0) & (k < self.n), k, -1)

    def counts(self, eig: Eigensystem):
        k = self.label(eig.energies)
        return np.bincount(k[k >= 0], minlength=self.n)

    def index_of(self, E):
        return int(np.floor((E - self.lo) / self.delta))


@dataclass
class WindowSums:
    """Window-pair reductions of V_if (rows i: source window, cols f: target)."""

    part: WindowPartition
    counts: np.ndarray
    sum_v: np.ndarray
    sum_v2: np.ndarray
    sum_abs: np.ndarray
    n_allowed: np.ndarray
    n_zero_allowed: np.ndarray
    diag_sum: np.ndarray


@dataclass
class RateMatrix:
    """gamma[j, k]: rate from window j to window k for V itself (lambda = 1)."""

    part: WindowPartition
    gamma: np.ndarray
    counts: np.ndarray
    convention: str = "rates for V; multiply by lambda^2 for lambda V"

    def to_csv(self, path, meta=None):
        _grid_csv(path, self.part, self.gamma, "gamma", meta)


@dataclass
class CoarseMatrix:
    """g[k, j] = g(E'_k, E_j)."""

    part: WindowPartition
    g: np.ndarray
    counts: np.ndarray

    def to_csv(self, path, meta=None):
        _grid_csv(path, self.part, self.g, "g", meta)


@dataclass
class EthStats:
    part: WindowPartition
    mean: np.ndarray
    variance: np.ndarray
    zero_fraction: np.ndarray
    n_elements: np.ndarray
    diagonal_profile: np.ndarray
    counts: np.ndarray | None = None

    @property
    def reliable(self):
        return self.n_elements >= MIN_CELL

    def total_zero_fraction(self):
        n = self.n_elements.sum()
        return float(np.nansum(self.zero_fraction * self.n_elements) / n) if n else float("nan")

    def all_pairs_zero_fraction(self):
        """Zero fraction over every eigenstate pair of the partition, counting
        elements that magnetization conservation forbids as zeros."""
        if self.counts is None:
            raise ValueError("window counts were not recorded")
        total = float(np.sum(self.counts)) ** 2
        zeros = np.nansum(self.zero_fraction * self.n_elements) + total - self.n_elements.sum()
        return float(zeros / total) if total else float("nan")

    def to_csv(self, path, meta=None):
        c = self.part.centers
        E, Ep = np.meshgrid(c, c, indexing="ij")
        rows = {"E": [], "E_prime": [], "stat": [], "value": []}
        for name, arr in (("mean", self.mean), ("variance", self.variance),
                          ("zero_fraction", self.zero_fraction), ("n", self.n_elements)):
            rows["E"].append(E.ravel())
            rows["E_prime"].append(Ep.ravel())
            rows["stat"].append(np.full(E.size, name))
            rows["value"].append(arr.ravel().astype(float))
        write_csv(path, {k: np.concatenate(v) for k, v in rows.items()}, meta)


@dataclass
class StiffnessResidual:
    omegas: np.ndarray
    spreads: np.ndarray
    n_sources: np.ndarray

    @property
    def max_spread(self) -> float:
        return float(np.nanmax(self.spreads))


def _grid_csv(path, part, mat, name, meta):
    c = part.centers
    E, Ep = np.meshgrid(c, c, indexing="ij")
    write_csv(path, {"E": E.ravel(), "E_prime": Ep.ravel(), name: mat.ravel()},
              dict({"delta": part.delta}, **(meta or {})))


def window_sums(eig: Eigensystem, v, part: WindowPartition) -> WindowSums:
    """Reduce the eigenbasis matrix of ``v`` onto window pairs of ``part``."""
    W = part.n
    out = {k: np.zeros((W, W)) for k in ("sum_v", "sum_v2", "sum_abs", "n_allowed", "n_zero")}
    diag = np.zeros(W)
    v = v.tocsr()
    sel = []
    for blk in eig.blocks:
        lab = part.label(blk.energies)
        cols = np.nonzero(lab >= 0)[0]
        onehot = np.zeros((len(cols), W))
        onehot[np.arange(len(cols)), lab[cols]] = 1.0
        sel.append((cols, onehot))
    for a, ba in enumerate(eig.blocks):
        ca, Ha = sel[a]
        if not len(ca):
            continue
        va = v[ba.indices]
        Xa = ba.vectors[:, ca]
        for b, bb in enumerate(eig.blocks):
            cb, Hb = sel[b]
            if not len(cb):
                continue
            sub = va[:, bb.indices]
            if sub.nnz == 0:
                continue
            M = Xa.T @ (sub @ bb.vectors[:, cb])
            if np.iscomplexobj(M):
                M = M.real if not np.any(M.imag) else M
            absM = np.abs(M)
            out["sum_v"] += Ha.T @ M.real @ Hb
            out["sum_v2"] += Ha.T @ (absM**2) @ Hb
            out["sum_abs"] += Ha.T @ absM @ Hb
            out["n_allowed"] += np.outer(Ha.sum(0), Hb.sum(0))
            out["n_zero"] += Ha.T @ (absM < ZERO_TOL).astype(float) @ Hb
            if a == b:
                diag += Ha.T @ np.diag(M).real
    counts = part.counts(eig)
    return WindowSums(part, counts, out["sum_v"], out["sum_v2"], out["sum_abs"],
                      out["n_allowed"], out["n_zero"], diag)


def fgr_rates(eig: Eigensystem, v, part: WindowPartition, sums: WindowSums | None = None
              ) -> RateMatrix:
    """gamma_{E->E'} = 2 pi / (delta N(E)) sum_{i in E, f in E'} |V_if|^2.

    Rows of empty source windows are NaN.
    """
    s = sums or window_sums(eig, v, part)
    if s.counts.sum() == 0:
        raise ValueError(f"no eigenstates in [{part.lo:.3f}, {part.hi:.3f})")
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = 2 * np.pi * s.sum_v2 / (part.delta * s.counts[:, None])
    gamma[s.counts == 0] = np.nan
    return RateMatrix(part, gamma, s.counts)


def rate_stiffness(rm: RateMatrix, window, omega_max=1.5) -> StiffnessResidual:
    """Relative spread (std / mean) of gamma_{E -> E - omega} over source windows E
    inside ``window``, for each lattice omega with |omega| <= omega_max."""
    part = rm.part
    c = part.centers
    src = np.nonzero((c >= window[0]) & (c <= window[1]) & (rm.counts > 0))[0]
    if len(src) < 3:
        raise ValueError("rate stiffness needs at least 3 source windows")
    m = int(round(omega_max / part.delta))
    omegas, spreads, ns = [], [], []
    for s in range(-m, m + 1):
        tgt = src - s
        ok = (tgt >= 0) & (tgt < part.n)
        vals = rm.gamma[src[ok], tgt[ok]]
        vals = vals[np.isfinite(vals)]
        omegas.append(s * part.delta)
        ns.append(len(vals))
        if len(vals) >= 3 and vals.mean() > 0:
            spreads.append(vals.std() / vals.mean())
        else:
            spreads.append(np.nan)
    return StiffnessResidual(np.array(omegas), np.array(spreads), np.array(ns))


def mean_rate_profile(rm: RateMatrix, window, omega_max=1.5):
    """gamma(omega) averaged over source windows inside ``window``."""
    part = rm.part
    c = part.centers
    src = np.nonzero((c >= window[0]) & (c <= window[1]) & (rm.counts > 0))[0]
    m = int(round(omega_max / part.delta))
    omegas = np.arange(-m, m + 1) * part.delta
    prof = np.full(len(omegas), np.nan)
    for j, s in enumerate(range(-m, m + 1)):
        tgt = src - s
        ok = (tgt >= 0) & (tgt < part.n)
        vals = rm.gamma[src[ok], tgt[ok]]
        vals = vals[np.isfinite(vals)]
        if len(vals):
            prof[j] = vals.mean()
    return omegas, prof


def detailed_balance_residual(rm: RateMatrix, beta, window, omega_max=1.5):
    """d(omega) = ln gamma(omega) - ln gamma(-omega) + beta omega for omega > 0.

    With an exponential DOS and |f_V|^2 even in omega this vanishes.
    """
    omegas, prof = mean_rate_profile(rm, window, omega_max)
    m = len(omegas) // 2
    w = omegas[m + 1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.log(prof[m + 1:]) - np.log(prof[m - 1::-1]) + beta * w
    return w, d


def _midpoint_count(counts, j, k):
    """N at the window midway between j and k, interpolating half-integer positions."""
    s = j + k
    if s % 2 == 0:
        return float(counts[s // 2])
    return 0.5 * (counts[s // 2] + counts[s // 2 + 1])


def coarse_grained_map(eig: Eigensystem, v, part: WindowPartition,
                       sums: WindowSums | None = None) -> CoarseMatrix:
    """g(E', E) = sum_{i in E, f in E'} |V_if| sqrt(N_mid) / (N_E' N_E)."""
    s = sums or window_sums(eig, v, part)
    n = part.n
    g = np.full((n, n), np.nan)
    N = s.counts
    for k in range(n):
        for j in range(n):
            if N[k] and N[j]:
                g[k, j] = s.sum_abs[j, k] * math.sqrt(_midpoint_count(N, j, k)) / (N[k] * N[j])
    return CoarseMatrix(part, g, N)


def antidiagonal_spread(cm: CoarseMatrix, window, omega_max=1.5):
    """Relative spread of g along fixed omega = E - E' for E inside ``window``."""
    rm = RateMatrix(cm.part, cm.g.T.copy(), cm.counts)
    return rate_stiffness(rm, window, omega_max)


def rates_from_coarse_map(cm: CoarseMatrix) -> np.ndarray:
    """gamma reconstructed from g, assuming Gaussian R (E|R| = sqrt(2/pi))."""
    N = cm.counts
    n = cm.part.n
    out = np.full((n, n), np.nan)
    for j in range(n):
        for k in range(n):
            if N[j] and N[k]:
                mid = _midpoint_count(N, j, k)
                out[j, k] = np.pi**2 * cm.g[k, j] ** 2 * N[k] / (cm.part.delta * mid)
    return out


def eth_offdiagonal_stats(eig: Eigensystem, v, part: WindowPartition,
                          sums: WindowSums | None = None) -> EthStats:
    """Cell-wise mean, variance and zero fraction of V_if.

    Only elements between blocks that ``v`` couples are counted, so matrix
    elements forced to vanish by magnetization conservation do not enter the
    zero fraction.
    """
    s = sums or window_sums(eig, v, part)
    n = s.n_allowed
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = s.sum_v / n
        var = s.sum_v2 / n - mean**2
        zf = s.n_zero_allowed / n
        diag = s.diag_sum / s.counts
    return EthStats(part, mean, var, zf, n, diag, s.counts)


def analysis_partition(E0, Delta, omega_max, delta):
    """Partition covering the stiffness window plus transitions of reach omega_max."""
    return WindowPartition.covering(E0 - Delta / 2 - omega_max, E0 + Delta / 2 + omega_max,
                                    delta)


# --- FGR against direct propagation ---------------------------------------------


@dataclass
class DrivenSlope:
    """Probability moved by at least nu / 2 away from window j, versus time."""

    times: np.ndarray
    moved: np.ndarray
    slope: float
    predicted: float

    @property
    def ratio(self) -> float:
        return self.slope / self.predicted


def driven_fgr_slope(h0, v, eig: Eigensystem, rm: RateMatrix, j, lam, nu, half_periods,
                     dt=0.02, norm_budget=1e-6) -> DrivenSlope:
    """Short-time transition slope under lam sin(nu t) V compared with the FGR rates.

    The equal-weight mixture of window ``j`` eigenstates is propagated and,
    at every listed number of half periods, the weight on eigenstates more
    than nu / 2 from the window centre is recorded. A line is fitted through
    these points. The golden rule predicts the slope
    (lam^2 / 4) (gamma_{j -> j+s} + gamma_{j -> j-s}) with s = nu / delta,
    since sin(nu t) splits into two components of amplitude lam / 2.
    """
    part = rm.part
    s = nu / part.delta
    if abs(s - round(s)) > 1e-9:
        raise ValueError(f"nu = {nu} must be a multiple of the window width {part.delta}")
    s = int(round(s))
    if j - s < 0 or j + s >= part.n:
        raise ValueError("window j +- nu lies outside the partition")
    predicted = lam**2 / 4 * (rm.gamma[j, j + s] + rm.gamma[j, j - s])
    c = part.centers[j]
    pos = eig.select(c - part.delta / 2, c + part.delta / 2)
    if not len(pos):
        raise ValueError(f"window {j} holds no eigenstates")
    psi = eig.vectors(pos).astype(complex)
    far = np.abs(eig.energies - c) > nu / 2
    shared = _SharedPattern(h0, v, c)
    marks = sorted(set(int(n) for n in half_periods))
    times, moved = [], []
    done = 0
    for n in marks:
        t0 = done * math.pi / nu
        seg = TimeGrid.for_duration((n - done) * math.pi / nu, dt)
        psi = _run(shared, lambda t, t0=t0: lam * math.sin(nu * (t + t0)), seg, psi, None,
                   None, norm_budget).state
        done = n
        times.append(n * math.pi / nu)
        moved.append(float(eig.overlaps(psi)[far].mean(axis=1).sum()))
    times, moved = np.array(times), np.array(moved)
    slope = float(np.polyfit(times, moved, 1)[0])
    return DrivenSlope(times, moved, slope, float(predicted))
