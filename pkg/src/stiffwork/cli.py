"""Command-line driver: ``stiffwork <kind> --config FILE [--preset NAME] ...``.

Configuration is INI text with sections ``[model]``, ``[protocol]``,
``[analysis]`` and ``[run]``. Values are layered: preset, then config file,
then command-line flags (and the ``STIFFWORK_WORKERS`` environment variable
for the worker count, which sits between the file and ``--workers``).

Exit codes: 0 success, 2 invalid configuration or unusable input window,
3 numeric budget breach (norm drift during propagation).
"""
from __future__ import annotations

import argparse
import configparser
import json
import math
import multiprocessing as mp
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy

from . import __version__
from .fgr_eth import (
    analysis_partition,
    antidiagonal_spread,
    coarse_grained_map,
    detailed_balance_residual,
    eth_offdiagonal_stats,
    fgr_rates,
    rate_stiffness,
    window_sums,
)
from .io import atomic_write_text, stable_hash, write_csv
from .model import ED_DIM_GUARD, ModelSpec, build_drive_operator, build_observable, build_static_hamiltonian, eigensystem
from .propagator import DriveProtocol, IntegrationError
from .relaxation import (
    NoDecayError,
    canonical_equilibrium,
    diagonal_ensemble,
    relax_trajectory,
    relaxation_time,
)
from .spectral import dos_exact, dos_typicality, fit_exponential
from .state_prep import (
    EmptyWindowError,
    EnergyWindow,
    microcanonical_pure,
    product_state,
    product_window_states,
)
from .work_stats import (
    MixtureWeights,
    crooks_check,
    crooks_scan,
    jarzynski_estimate,
    mixture_work_pdf,
    sample_energies,
    stiffness_scan,
    work_pdf,
)

KINDS = ("dos", "relax", "drive", "stiffness", "jr", "crooks", "fgr", "eth")
WORKERS_ENV = "STIFFWORK_WORKERS"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
#: Largest N for the typicality DOS (dense blocks of random states).
MAX_TYPICALITY_N = 22


class ConfigError(ValueError):
    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    # model
    topology: str = "ladder"
    L: int = 6
    kappa: float = 0.2
    B: float = 0.5
    sector: str = "none"
    # protocol
    lam: float = 0.26
    nu: float = 0.5
    half_periods: int = 13
    dt: float = 0.02
    # analysis
    delta: float = 0.07
    Delta: float = 2.5
    E0: str = "auto"
    graining: float = 0.09
    theta: float = 0.0
    n_samples: int = 0
    n_energies: int = 11
    mode: str = "pure"
    method: str = "auto"
    sizes: str = ""
    n_seeds: int = 20
    t_max: float = 300.0
    floor: float = 0.01
    omega_max: float = 1.5
    fgr_delta: float = 0.07
    relax_sector: str = "-0.5"
    force: bool = False
    # run
    seed: int = 0
    workers: int = 1
    out: str = "results"

    SECTIONS = {
        "model": ("topology", "L", "kappa", "B", "sector"),
        "protocol": ("lam", "nu", "half_periods", "dt"),
        "analysis": ("delta", "Delta", "E0", "graining", "theta", "n_samples", "n_energies",
                     "mode", "method", "sizes", "n_seeds", "t_max", "floor", "omega_max",
                     "fgr_delta", "relax_sector", "force"),
        "run": ("seed", "workers", "out"),
    }
    ALIASES = {"lambda": "lam"}

    # --- derived -----------------------------------------------------------

    def sector_value(self, text=None):
        text = (self.sector if text is None else text).strip().lower()
        return None if text in ("none", "") else float(text)

    def spec(self, L=None, sector=None) -> ModelSpec:
        L = self.L if L is None else L
        if self.topology == "chain":
            return ModelSpec.chain(L, sector=sector)
        return ModelSpec.ladder(L, kappa=self.kappa, B=self.B, sector=sector)

    def protocol(self) -> DriveProtocol:
        return DriveProtocol(self.lam, self.nu, self.half_periods)

    def E0_for(self, N) -> float:
        if self.E0.strip().lower() == "auto":
            return (-0.2 if self.topology == "ladder" else -0.18) * N
        return float(self.E0)

    def size_list(self):
        if not self.sizes.strip():
            return [self.L]
        return [int(s) for s in self.sizes.replace(" ", "").split(",") if s]

    def theta_value(self, graining):
        return self.theta if self.theta > 0 else math.pi / graining

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def digest(self):
        d = self.as_dict()
        d.pop("workers")
        d.pop("out")
        return stable_hash(d)

    # --- validation --------------------------------------------------------

    def validate(self, kind):
        if kind not in KINDS:
            raise ConfigError("kind", f"unknown kind {kind!r}; choose from {', '.join(KINDS)}")
        if self.topology not in ("ladder", "chain"):
            raise ConfigError("model.topology", "must be 'ladder' or 'chain'")
        ed_bits = ED_DIM_GUARD.bit_length() - 1
        for L in self.size_list():
            if L < (0 if self.topology == "ladder" else 1):
                raise ConfigError("model.L", f"L={L} too small for the {self.topology}")
            N = 2 * L + 1 if self.topology == "ladder" else L + 1
            if kind != "dos" and N > ed_bits:
                raise ConfigError(
                    "model.L", f"N={N} exceeds the exact-diagonalization guard "
                    f"(dim 2^{N} > {ED_DIM_GUARD}); only 'dos' has a typicality path")
            if N > MAX_TYPICALITY_N:
                raise ConfigError("model.L", f"N={N} exceeds the memory limit N <= {MAX_TYPICALITY_N}")
        for name in ("kappa", "B"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"model.{name}", "must be finite")
        try:
            sector = self.sector_value()
            relax_sector = self.sector_value(self.relax_sector)
        except ValueError:
            raise ConfigError("model.sector", "must be 'none' or a half-integer") from None
        if sector is not None and kind in ("drive", "stiffness", "jr", "crooks", "fgr", "eth"):
            raise ConfigError("model.sector",
                              "the drive S^x_sys changes M_tot; driven kinds need sector = none")
        for L in self.size_list():
            for s, nm in ((sector, "model.sector"), (relax_sector, "analysis.relax_sector")):
                try:
                    self.spec(L, s)
                except ValueError as e:
                    raise ConfigError(nm, str(e)) from None
        if not self.lam >= 0:
            raise ConfigError("protocol.lam", "drive amplitude must be >= 0")
        if not self.nu > 0:
            raise ConfigError("protocol.nu", "frequency must be positive")
        if self.half_periods < 1:
            raise ConfigError("protocol.half_periods", "must be a positive integer")
        if not 0 < self.dt <= 0.1:
            raise ConfigError("protocol.dt", "time step must lie in (0, 0.1]")
        for name in ("delta", "Delta", "graining", "t_max", "fgr_delta", "omega_max"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"analysis.{name}", "must be positive")
        if self.theta < 0:
            raise ConfigError("analysis.theta", "must be >= 0 (0 selects pi / graining)")
        if self.theta > 0 and math.pi / self.theta > self.graining + 1e-12:
            raise ConfigError("analysis.theta", "resolution pi/theta exceeds the graining")
        if self.E0.strip().lower() != "auto":
            try:
                float(self.E0)
            except ValueError:
                raise ConfigError("analysis.E0", "must be 'auto' or a number") from None
        if self.n_samples < 0:
            raise ConfigError("analysis.n_samples", "must be >= 0 (0 selects the default)")
        if kind == "stiffness" and self.n_energies < 5:
            raise ConfigError("analysis.n_energies", "chi_bar needs at least 5 sample energies")
        if self.mode not in ("pure", "window"):
            raise ConfigError("analysis.mode", "must be 'pure' or 'window'")
        if self.method not in ("auto", "exact", "typicality"):
            raise ConfigError("analysis.method", "must be auto, exact or typicality")
        if not 0 < self.floor < 1:
            raise ConfigError("analysis.floor", "must lie in (0, 1)")
        if self.n_seeds < 1:
            raise ConfigError("analysis.n_seeds", "must be positive")
        if self.seed < 0:
            raise ConfigError("run.seed", "must be a nonnegative integer")
        if self.workers < 1:
            raise ConfigError("run.workers", "must be >= 1")


PRESETS = {
    "ladder-weak-weak": dict(topology="ladder", kappa=0.2, lam=0.26, nu=0.5, half_periods=13),
    "ladder-weak-strong": dict(topology="ladder", kappa=0.2, lam=2.5, nu=0.5, half_periods=1),
    "ladder-strong-weak": dict(topology="ladder", kappa=0.6, lam=0.26, nu=0.5, half_periods=13),
    "ladder-strong-strong": dict(topology="ladder", kappa=0.6, lam=2.5, nu=0.5, half_periods=1),
    "chain-strong": dict(topology="chain", L=12, kappa=1.0, B=0.0, lam=3.85, nu=0.75,
                         half_periods=1),
}


def preset(name) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return _coerce(ExperimentConfig(), PRESETS[name], "preset")


def _coerce(cfg, values: dict, where):
    types = {f.name: f.type for f in fields(cfg)}
    for key, raw in values.items():
        key = ExperimentConfig.ALIASES.get(key, key)
        if key not in types:
            raise ConfigError(f"{where}.{key}", "unknown field")
        t = types[key]
        try:
            if t in ("bool", bool):
                val = raw if isinstance(raw, bool) else str(raw).strip().lower() in ("1", "true", "yes", "on")
            elif t in ("int", int):
                f = float(raw)
                if not math.isfinite(f) or f != int(f):
                    raise ValueError
                val = int(f)
            elif t in ("float", float):
                val = float(raw)
            else:
                val = str(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}.{key}", f"cannot interpret {raw!r} as {t}") from None
        setattr(cfg, key, val)
    return cfg


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as e:
        raise ConfigError("config", str(e)) from None
    for section in cp.sections():
        if section not in ExperimentConfig.SECTIONS:
            raise ConfigError(section, "unknown section")
        allowed = ExperimentConfig.SECTIONS[section]
        for key, raw in cp.items(section):
            k = ExperimentConfig.ALIASES.get(key, key)
            if k not in allowed:
                raise ConfigError(f"{section}.{key}", "unknown field for this section")
            _coerce(cfg, {k: raw}, section)
    return cfg


# --- seeding and workers ---------------------------------------------------------


def job_seed(master, job):
    """Counter-based per-job seed: independent of scheduling and worker count."""
    return np.random.SeedSequence(master, spawn_key=(job,))


_SHARED = {}


def _call(args):
    fn, job = args
    return fn(_SHARED, job)


def parallel_map(fn, jobs, workers, shared):
    """Apply fn(shared, job) to each job; results in job order."""
    _SHARED.clear()
    _SHARED.update(shared)
    if workers <= 1 or len(jobs) <= 1:
        return [fn(_SHARED, j) for j in jobs]
    ctx = mp.get_context("fork")
    with ctx.Pool(min(workers, len(jobs))) as pool:
        return pool.map(_call, [(fn, j) for j in jobs])


# --- experiments -------------------------------------------------------------------


class Run:
    def __init__(self, kind, cfg: ExperimentConfig):
        self.kind = kind
        self.cfg = cfg
        self.out = cfg.out
        self.files = []
        self.walls = {}
        self.seeds = []
        self.digest = cfg.digest()

    def meta(self, **extra):
        m = {"kind": self.kind, "config_hash": self.digest, "seed": self.cfg.seed,
             "topology": self.cfg.topology}
        m.update(extra)
        return m

    def path(self, name):
        p = os.path.join(self.out, name)
        self.files.append(name)
        return p

    def plot(self, name, columns: dict, meta=None):
        head = "".join(f"# {k} = {v}\n" for k, v in (meta or {}).items())
        head += "# " + " ".join(columns) + "\n"
        rows = zip(*[np.asarray(c) for c in columns.values()])
        body = "".join(" ".join(repr(float(x)) for x in r) + "\n" for r in rows)
        atomic_write_text(self.path(os.path.join("plots", name)), head + body)

    def timed(self, key, fn, *a, **k):
        t = time.perf_counter()
        r = fn(*a, **k)
        self.walls[key] = round(time.perf_counter() - t, 3)
        return r

    def manifest(self):
        m = {
            "kind": self.kind,
            "config_hash": self.digest,
            "config": self.cfg.as_dict(),
            "seeds": self.seeds,
            "versions": {"stiffwork": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "python": platform.python_version()},
            "files": self.files,
            "wall_times": self.walls,
        }
        atomic_write_text(os.path.join(self.out, "manifest.json"),
                          json.dumps(m, indent=2, sort_keys=True) + "\n")
        return m


def _fit_window(cfg, N):
    E0 = cfg.E0_for(N)
    return E0, (E0 - cfg.Delta / 2, E0 + cfg.Delta / 2)


def _dos(run, spec):
    cfg = run.cfg
    h0 = build_static_hamiltonian(spec)
    method = cfg.method
    if method == "auto":
        method = "exact" if h0.shape[0] <= ED_DIM_GUARD and spec.N <= 13 else "typicality"
    if method == "exact":
        dos = run.timed(f"dos_N{spec.N}", dos_exact, eigensystem(spec), cfg.graining)
    else:
        seed = job_seed(cfg.seed, 0)
        run.seeds.append({"job": 0, "entropy": cfg.seed, "spawn_key": [0]})
        dos = run.timed(f"dos_N{spec.N}", dos_typicality, h0, cfg.theta_value(cfg.graining),
                        None, cfg.n_samples or None, np.random.default_rng(seed), cfg.graining)
    return dos


def kind_dos(run):
    cfg = run.cfg
    spec = cfg.spec(sector=cfg.sector_value())
    dos = _dos(run, spec)
    E0, win = _fit_window(cfg, spec.N)
    fit = fit_exponential(dos, win)
    meta = run.meta(N=spec.N, method=dos.method, graining=dos.graining)
    dos.to_csv(run.path("dos.csv"), meta)
    write_csv(run.path("fit.csv"),
              {"beta": [fit.beta], "logZ": [fit.logZ], "E_lo": [win[0]], "E_hi": [win[1]],
               "residual": [fit.residual], "free_energy": [fit.free_energy]}, meta)
    run.plot("dos.dat", {"E": dos.grid, "log_omega": np.log(np.maximum(dos.values, 1e-300)),
                         "fit": fit.log_omega(dos.grid)}, meta)
    return {"beta": fit.beta}


def kind_relax(run):
    cfg = run.cfg
    sector = cfg.sector_value(cfg.relax_sector)
    spec = cfg.spec(sector=sector)
    h0 = build_static_hamiltonian(spec)
    sz = build_observable(spec, "sz_sys")
    full = cfg.spec()
    E0, win = _fit_window(cfg, full.N)
    beta = fit_exponential(dos_exact(eigensystem(full), cfg.graining), win).beta
    canon = canonical_equilibrium(eigensystem(spec), beta, sz)
    rows = {"m": [], "tau_R": [], "long_time": [], "infinite_time": [], "residual": [],
            "exponential": []}
    for j, m in enumerate(("up", "down")):
        run.seeds.append({"job": j, "entropy": cfg.seed, "spawn_key": [j]})
        # bath energy offset by the Zeeman energy so both starts share total energy E0
        bath_E = E0 - spec.B * (0.5 if m == "up" else -0.5)
        bath_win = EnergyWindow(bath_E, cfg.delta)
        prep = product_state(spec, bath_win, m, np.random.default_rng(job_seed(cfg.seed, j)))
        traj = run.timed(f"relax_{m}", relax_trajectory, h0, prep, cfg.t_max, sz, cfg.dt,
                         label=m)
        meta = run.meta(N=spec.N, sector=sector, m=m, bath_E=bath_E, norm_drift=traj.meta["norm_drift"])
        traj.to_csv(run.path(f"trajectory_{m}.csv"), meta)
        run.plot(f"trajectory_{m}.dat", {"t": traj.times, "sz": traj.values}, meta)
        try:
            fit = relaxation_time(traj)
            rows["tau_R"].append(fit.tau_R)
            rows["long_time"].append(fit.long_time_average)
            rows["residual"].append(fit.residual if fit.residual is not None else float("nan"))
            rows["exponential"].append(int(fit.exponential))
        except NoDecayError:
            rows["tau_R"].append(float("nan"))
            rows["long_time"].append(float(np.mean(traj.values[-len(traj.values) // 3:])))
            rows["residual"].append(float("nan"))
            rows["exponential"].append(0)
        # infinite-time value of the mixed bath-window x spin state
        rows["infinite_time"].append(
            diagonal_ensemble(eigensystem(spec), product_window_states(spec, bath_win, m), sz))
        rows["m"].append(1 if m == "up" else -1)
    write_csv(run.path("relaxation.csv"), rows,
              run.meta(N=spec.N, beta=beta, canonical=canon, sector=sector))
    return {"canonical": canon}


def _drive_setup(cfg, L=None):
    spec = cfg.spec(L)
    return spec, build_static_hamiltonian(spec), build_drive_operator(spec), eigensystem(spec)


def _check_window(cfg, eig, E, delta):
    n = len(eig.window(E, delta))
    if n == 0:
        raise EmptyWindowError(f"window at E={E:.4f} (delta={delta}) holds no eigenstate")
    if n < 10 and not cfg.force:
        raise ConfigError("analysis.E0", f"window at E={E:.4f} holds only {n} eigenstates "
                          "(< 10); set analysis.force = true to proceed")
    return n


def kind_drive(run):
    cfg = run.cfg
    spec, h0, v, eig = _drive_setup(cfg)
    E0, _ = _fit_window(cfg, spec.N)
    n = _check_window(cfg, eig, E0, cfg.delta)
    win = EnergyWindow(E0, cfg.delta)
    if cfg.mode == "pure":
        run.seeds.append({"job": 0, "entropy": cfg.seed, "spawn_key": [0]})
        init = microcanonical_pure(eig, win, np.random.default_rng(job_seed(cfg.seed, 0)))
    else:
        init = win
    pdf = run.timed("work_pdf", work_pdf, h0, v, cfg.protocol(), init, cfg.delta, eig, cfg.dt)
    meta = run.meta(N=spec.N, n_window=n)
    pdf.to_csv(run.path("workpdf.csv"), meta)
    run.plot("workpdf.dat", {"W": pdf.w_grid, "p": pdf.density}, meta)
    return {"mean_work": pdf.mean()}


def _stiffness_job(shared, job):
    cfg = shared["cfg"]
    L = job
    spec, h0, v, eig = _drive_setup(cfg, L)
    E0 = cfg.E0_for(spec.N)
    n_jobs = cfg.n_energies + 1
    seeds = [job_seed(cfg.seed, 1000 * L + j) for j in range(n_jobs)]
    rep = stiffness_scan(h0, v, cfg.protocol(), eig, E0, cfg.Delta, cfg.n_energies, cfg.delta,
                         cfg.mode, seeds, cfg.dt)
    return spec.N, rep


def kind_stiffness(run):
    cfg = run.cfg
    sizes = cfg.size_list()
    for L in sizes:
        for j in range(cfg.n_energies + 1):
            run.seeds.append({"job": 1000 * L + j, "entropy": cfg.seed,
                              "spawn_key": [1000 * L + j]})
    results = run.timed("stiffness", parallel_map, _stiffness_job, sizes, cfg.workers,
                        {"cfg": cfg})
    table = {"N": [], "chi_bar": [], "chi_min": [], "chi_max": []}
    for N, rep in results:
        rep.to_csv(run.path(f"stiffness_N{N}.csv"),
                   run.meta(N=N, mode=cfg.mode, moved=json.dumps(rep.meta["moved"])))
        table["N"].append(N)
        table["chi_bar"].append(rep.chi_bar)
        table["chi_min"].append(rep.chi_min)
        table["chi_max"].append(rep.chi_max)
    write_csv(run.path("chi_bar.csv"), table, run.meta())
    run.plot("chi_bar.dat", table, run.meta())
    return {"chi_bar": table["chi_bar"]}


def kind_jr(run):
    cfg = run.cfg
    spec, h0, v, eig = _drive_setup(cfg)
    E0, win = _fit_window(cfg, spec.N)
    fit = fit_exponential(dos_exact(eig, cfg.graining), win)
    centers = sample_energies(E0, cfg.Delta, 5)
    pdfs = {}
    rows = {"E": [], "value": [], "deviation": []}
    for E in centers:
        _check_window(cfg, eig, E, cfg.delta)
        p = run.timed(f"pdf_{E:.3f}", work_pdf, h0, v, cfg.protocol(),
                      EnergyWindow(float(E), cfg.delta), cfg.delta, eig, cfg.dt)
        pdfs[float(E)] = p
        est = jarzynski_estimate(p, fit.beta)
        rows["E"].append(float(E))
        rows["value"].append(est.value)
        rows["deviation"].append(est.deviation)
    mix = mixture_work_pdf(pdfs, MixtureWeights.uniform(list(pdfs)))
    est = jarzynski_estimate(mix, fit.beta)
    rows["E"].append(float("nan"))
    rows["value"].append(est.value)
    rows["deviation"].append(est.deviation)
    meta = run.meta(N=spec.N, beta=fit.beta, rhs=1.0, model_hash=stable_hash(asdict(spec)))
    write_csv(run.path("jr.csv"), rows, meta)
    mix.to_csv(run.path("workpdf_mixture.csv"), meta)
    return {"mixture_deviation": est.deviation}


def kind_crooks(run):
    cfg = run.cfg
    spec, h0, v, eig = _drive_setup(cfg)
    E0, win = _fit_window(cfg, spec.N)
    fit = fit_exponential(dos_exact(eig, cfg.graining), win)
    _check_window(cfg, eig, E0, cfg.delta)
    fwd, back, rep = run.timed("crooks", crooks_scan, h0, v, cfg.protocol(), eig, E0, fit,
                               cfg.delta, cfg.floor, cfg.dt)
    # same pdfs against the window-count DOS at the work graining
    counts = crooks_check(fwd, back, dos_exact(eig, cfg.delta), cfg.floor)
    meta = run.meta(N=spec.N, beta=fit.beta, floor=cfg.floor)
    fwd.to_csv(run.path("workpdf_forward.csv"), meta)
    write_csv(run.path("crooks.csv"),
              {"W": rep.W, "log_ratio": rep.log_ratio, "residual_fit": rep.residual,
               "residual_counts": counts.residual}, meta)
    run.plot("crooks.dat", {"W": rep.W, "log_ratio": rep.log_ratio,
                            "beta_W": fit.beta * rep.W}, meta)
    return {"max_residual_fit": rep.max_abs, "max_residual_counts": counts.max_abs}


def _fgr_common(cfg):
    spec = cfg.spec()
    eig = eigensystem(spec)
    v = build_drive_operator(spec)
    E0, win = _fit_window(cfg, spec.N)
    part = analysis_partition(E0, cfg.Delta, cfg.omega_max, cfg.fgr_delta)
    return spec, eig, v, win, part


def kind_fgr(run):
    cfg = run.cfg
    spec, eig, v, win, part = _fgr_common(cfg)
    fit = fit_exponential(dos_exact(eig, cfg.graining), win)
    sums = run.timed("window_sums", window_sums, eig, v, part)
    rm = fgr_rates(eig, v, part, sums)
    st = rate_stiffness(rm, win, cfg.omega_max)
    w, d = detailed_balance_residual(rm, fit.beta, win, cfg.omega_max)
    meta = run.meta(N=spec.N, delta=part.delta, beta=fit.beta)
    rm.to_csv(run.path("rates.csv"), meta)
    write_csv(run.path("rate_stiffness.csv"),
              {"omega": st.omegas, "spread": st.spreads, "n_sources": st.n_sources},
              dict(meta, max_spread=st.max_spread))
    write_csv(run.path("detailed_balance.csv"), {"omega": w, "residual": d}, meta)
    return {"max_spread": st.max_spread}


def kind_eth(run):
    cfg = run.cfg
    spec, eig, v, win, part = _fgr_common(cfg)
    sums = run.timed("window_sums", window_sums, eig, v, part)
    cm = coarse_grained_map(eig, v, part, sums)
    stats = eth_offdiagonal_stats(eig, v, part, sums)
    spread = antidiagonal_spread(cm, win, cfg.omega_max)
    meta = run.meta(N=spec.N, delta=part.delta,
                    zero_fraction=stats.total_zero_fraction(),
                    zero_fraction_all_pairs=stats.all_pairs_zero_fraction(), g_max_spread=spread.max_spread)
    cm.to_csv(run.path("coarse_map.csv"), meta)
    stats.to_csv(run.path("eth_stats.csv"), meta)
    return {"zero_fraction": stats.total_zero_fraction()}


RUNNERS = {"dos": kind_dos, "relax": kind_relax, "drive": kind_drive,
           "stiffness": kind_stiffness, "jr": kind_jr, "crooks": kind_crooks,
           "fgr": kind_fgr, "eth": kind_eth}


def run(kind, cfg: ExperimentConfig):
    """Validate, execute and persist one experiment; returns the manifest dict."""
    cfg.validate(kind)
    r = Run(kind, cfg)
    os.makedirs(os.path.join(cfg.out, "plots"), exist_ok=True)
    summary = RUNNERS[kind](r)
    m = r.manifest()
    m["summary"] = summary
    return m


def build_config(kind, config_path=None, preset_name=None, seed=None, workers=None, out=None,
                 environ=None):
    environ = os.environ if environ is None else environ
    cfg = preset(preset_name) if preset_name else ExperimentConfig()
    if config_path:
        cfg = load_config(config_path, cfg)
    if environ.get(WORKERS_ENV):
        _coerce(cfg, {"workers": environ[WORKERS_ENV]}, "env")
    if seed is not None:
        cfg.seed = seed
    if workers is not None:
        cfg.workers = workers
    if out is not None:
        cfg.out = out
    cfg.validate(kind)
    return cfg


def main(argv=None):
    ap = argparse.ArgumentParser(prog="stiffwork", description=__doc__.splitlines()[0])
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", help="INI configuration file")
    ap.add_argument("--preset", help=f"one of: {', '.join(PRESETS)}")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--workers", type=int)
    ap.add_argument("--out")
    args = ap.parse_args(argv)
    if not args.config and not args.preset:
        print("error: give --config and/or --preset", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = build_config(args.kind, args.config, args.preset, args.seed, args.workers,
                           args.out)
        m = run(args.kind, cfg)
    except (ConfigError, EmptyWindowError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationError as e:
        print(f"numeric budget breach: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps({"kind": args.kind, "out": cfg.out, "summary": m["summary"]},
                     default=float))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
